//! Intra- and cross-modal retrieval scored by mean reciprocal rank.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{embed, embedding_distance, CrossModalEmbedder, InferenceOptions, QueryRecords, TaskReport};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::synthdata::VideoSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalItem {
    pub video_id: usize,
    pub category: usize,
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
}

impl RetrievalItem {
    fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

/// Query modality, then database modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RetrievalMode {
    #[serde(rename = "a-a")]
    AA,
    #[serde(rename = "a-v")]
    AV,
    #[serde(rename = "v-a")]
    VA,
    #[serde(rename = "v-v")]
    VV,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 4] = [RetrievalMode::AA, RetrievalMode::AV, RetrievalMode::VA, RetrievalMode::VV];

    pub fn modalities(self) -> (Modality, Modality) {
        use Modality::*;
        match self {
            RetrievalMode::AA => (Audio, Audio),
            RetrievalMode::AV => (Audio, Visual),
            RetrievalMode::VA => (Visual, Audio),
            RetrievalMode::VV => (Visual, Visual),
        }
    }

    pub fn is_intra_modal(self) -> bool {
        let (q, c) = self.modalities();
        q == c
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::AA => "a-a",
            RetrievalMode::AV => "a-v",
            RetrievalMode::VA => "v-a",
            RetrievalMode::VV => "v-v",
        }
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        RetrievalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown retrieval mode {s:?} (a-a, a-v, v-a, v-v)")))
    }
}

/// One randomly chosen event segment pair per video.
pub fn build_retrieval_database(videos: &[(usize, &VideoSequence)], seed: u64) -> Vec<RetrievalItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos
        .iter()
        .map(|&(video_id, v)| {
            let seg = &v.segments[rng.random_range(v.event_start..v.event_end)];
            RetrievalItem {
                video_id,
                category: v.category,
                audio: seg.audio.clone(),
                visual: seg.visual.clone(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query_id: usize,
    pub video_id: usize,
    pub category: usize,
    /// 1-based rank of the first same-category candidate.
    pub first_relevant_rank: Option<usize>,
    pub reciprocal_rank: f64,
    /// No same-category candidate existed.
    pub flagged: bool,
}

/// Mean of `1 / rank`, counting missing ranks as zero.
pub fn mean_reciprocal_rank(ranks: &[Option<usize>]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|r| r.map_or(0.0, |r| 1.0 / r as f64)).sum::<f64>() / ranks.len() as f64
}

/// Candidate indices for `query`, ordered by ascending score (ties by index).
fn first_relevant_rank(categories: &[usize], query: usize, order: &[usize]) -> Option<usize> {
    order
        .iter()
        .position(|&c| categories[c] == categories[query])
        .map(|p| p + 1)
}

pub fn evaluate_retrieval<E: CrossModalEmbedder + ?Sized>(
    model: &E,
    database: &[RetrievalItem],
    mode: RetrievalMode,
    opts: InferenceOptions,
) -> Result<TaskReport> {
    if database.len() < 2 {
        return Err(Error::Contract(format!(
            "retrieval database needs at least 2 items, got {}",
            database.len()
        )));
    }
    let (qm, cm) = mode.modalities();
    let queries = database.iter().map(|it| embed(model, qm, it.features(qm))).collect::<Result<Vec<_>>>()?;
    let candidates = if qm == cm {
        queries.clone()
    } else {
        database.iter().map(|it| embed(model, cm, it.features(cm))).collect::<Result<Vec<_>>>()?
    };
    let categories: Vec<usize> = database.iter().map(|it| it.category).collect();

    let mut records = Vec::with_capacity(database.len());
    for (qi, q) in queries.iter().enumerate() {
        let mut scored = Vec::with_capacity(candidates.len());
        for (ci, c) in candidates.iter().enumerate() {
            if mode.is_intra_modal() && ci == qi {
                continue;
            }
            scored.push((embedding_distance(q, c, opts)?, ci));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let order: Vec<usize> = scored.into_iter().map(|(_, c)| c).collect();
        let rank = first_relevant_rank(&categories, qi, &order);
        records.push(RetrievalRecord {
            query_id: qi,
            video_id: database[qi].video_id,
            category: database[qi].category,
            first_relevant_rank: rank,
            reciprocal_rank: rank.map_or(0.0, |r| 1.0 / r as f64),
            flagged: rank.is_none(),
        });
    }
    let ranks: Vec<Option<usize>> = records.iter().map(|r| r.first_relevant_rank).collect();
    Ok(TaskReport {
        task: format!("retrieval-{}", mode.as_str()),
        metric: "mrr".into(),
        value: mean_reciprocal_rank(&ranks),
        chance: Some(expected_random_mrr(&categories, mode.is_intra_modal())),
        num_queries: records.len(),
        num_flagged: records.iter().filter(|r| r.flagged).count(),
        records: QueryRecords::Retrieval(records),
        config: serde_json::Value::Null,
    })
}

/// Monte-Carlo MRR of uniformly random candidate orderings.
pub fn random_ranking_mrr(categories: &[usize], intra_modal: bool, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = categories.len();
    let mut total = 0.0;
    for _ in 0..trials {
        let mut ranks = Vec::with_capacity(n);
        for q in 0..n {
            let mut order: Vec<usize> = (0..n).filter(|&c| !(intra_modal && c == q)).collect();
            order.shuffle(&mut rng);
            ranks.push(first_relevant_rank(categories, q, &order));
        }
        total += mean_reciprocal_rank(&ranks);
    }
    total / trials.max(1) as f64
}

/// Exact expectation of [`random_ranking_mrr`]. With `m` relevant among `n`
/// candidates, the first relevant one sits at rank `r` with probability
/// `C(n - r, m - 1) / C(n, m)`.
pub fn expected_random_mrr(categories: &[usize], intra_modal: bool) -> f64 {
    let n_items = categories.len();
    if n_items == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for q in 0..n_items {
        let n = if intra_modal { n_items - 1 } else { n_items };
        let same = categories.iter().filter(|&&c| c == categories[q]).count();
        let m = if intra_modal { same - 1 } else { same };
        if m == 0 {
            continue;
        }
        // P(first at r) computed as a running product to avoid big binomials.
        let mut p_none_before = 1.0;
        let mut e = 0.0;
        for r in 1..=(n - m + 1) {
            let remaining = (n - r + 1) as f64;
            let p_here = p_none_before * m as f64 / remaining;
            e += p_here / r as f64;
            p_none_before *= (remaining - m as f64) / remaining;
        }
        total += e;
    }
    total / n_items as f64
}
