//! Downstream evaluation: cross-modal localization, retrieval, latent export.
//!
//! Both tasks score an (x, y) segment pair with the same two-term distance:
//! a posterior distance between the encoded segments plus the Euclidean
//! distance between the pairs generated from the two posterior means.
//! Inference is deterministic; nothing is sampled.

mod cml;
mod export;
mod retrieval;

use serde::{Deserialize, Serialize};

pub use cml::{
    chance_accuracy, evaluate_cml, localize, localize_table, CmlQuery, CmlRecord, Direction, DistanceTable, QueryLen,
};
pub use export::{
    export_latents, mean_kl_per_dim, mean_paired_w2, pca_power_iteration, ExportOptions, Pca,
};
pub use retrieval::{
    build_retrieval_database, evaluate_retrieval, expected_random_mrr, mean_reciprocal_rank, random_ranking_mrr,
    RetrievalItem, RetrievalMode, RetrievalRecord,
};

use crate::error::{Error, Result};
use crate::losses::{wasserstein_latent_sampled, LatentDistance};
use crate::model::{LatentGaussian, Modality, ModelParams};

/// What the evaluation protocols need from a trained model.
pub trait CrossModalEmbedder {
    fn posterior(&self, m: Modality, x: &[f64]) -> Result<LatentGaussian>;
    /// Full `d_a + d_v` pair generated from a latent.
    fn generate(&self, z: &[f64]) -> Result<Vec<f64>>;
}

impl CrossModalEmbedder for ModelParams {
    fn posterior(&self, m: Modality, x: &[f64]) -> Result<LatentGaussian> {
        self.encode(m, x)
    }

    fn generate(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.generate_full(z)
    }
}

/// Cached posterior and generated pair for one segment of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEmbedding {
    pub posterior: LatentGaussian,
    pub generated: Vec<f64>,
}

pub fn embed<E: CrossModalEmbedder + ?Sized>(model: &E, m: Modality, x: &[f64]) -> Result<SegmentEmbedding> {
    let posterior = model.posterior(m, x)?;
    let generated = model.generate(&posterior.mean)?;
    Ok(SegmentEmbedding { posterior, generated })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub latent_distance: LatentDistance,
}

/// Posterior distance plus generated-pair distance.
pub fn embedding_distance(a: &SegmentEmbedding, b: &SegmentEmbedding, opts: InferenceOptions) -> Result<f64> {
    let w = opts.latent_distance.eval(&a.posterior, &b.posterior)?;
    let gen = wasserstein_latent_sampled(&a.generated, &b.generated)
        .map_err(|_| Error::shape("generated pair", a.generated.len(), b.generated.len()))?;
    Ok(w + gen)
}

/// Localization distance between an audio segment and a visual segment.
pub fn cml_distance<E: CrossModalEmbedder + ?Sized>(
    model: &E,
    audio_seg: &[f64],
    visual_seg: &[f64],
    opts: InferenceOptions,
) -> Result<f64> {
    let a = embed(model, Modality::Audio, audio_seg)?;
    let v = embed(model, Modality::Visual, visual_seg)?;
    embedding_distance(&a, &v, opts)
}

/// Per-query outcomes of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueryRecords {
    Cml(Vec<CmlRecord>),
    Retrieval(Vec<RetrievalRecord>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub metric: String,
    pub value: f64,
    /// Expected metric of an uninformed predictor on the same queries.
    pub chance: Option<f64>,
    pub num_queries: usize,
    /// Queries that could not be scored (no relevant candidate).
    pub num_flagged: usize,
    pub records: QueryRecords,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl TaskReport {
    /// JSON object with the metric also exposed under its own name
    /// (`"accuracy"` or `"mrr"`).
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.insert(self.metric.clone(), serde_json::json!(self.value));
        }
        v
    }

    /// Header plus one line per query.
    pub fn records_csv(&self) -> String {
        let mut out = String::new();
        match &self.records {
            QueryRecords::Cml(rs) => {
                out.push_str("query_id,video_id,direction,query_len,true_start,predicted_start,correct\n");
                for r in rs {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{}\n",
                        r.query_id,
                        r.video_id,
                        r.direction.as_str(),
                        r.query_len,
                        r.true_start,
                        r.predicted_start,
                        r.correct as u8
                    ));
                }
            }
            QueryRecords::Retrieval(rs) => {
                out.push_str("query_id,video_id,category,first_relevant_rank,reciprocal_rank,flagged\n");
                for r in rs {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        r.query_id,
                        r.video_id,
                        r.category,
                        r.first_relevant_rank.map(|x| x.to_string()).unwrap_or_default(),
                        fmt_sig9(r.reciprocal_rank),
                        r.flagged as u8
                    ));
                }
            }
        }
        out
    }
}

/// Formats like C's `%.9g`: nine significant digits, trailing zeros dropped.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        trim_zeros(&s).to_string()
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
