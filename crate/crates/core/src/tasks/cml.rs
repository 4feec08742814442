//! Cross-modal localization by sliding-window matching.
//!
//! A query of `l` consecutive segments in one modality is slid over the
//! `T`-segment sequence of the other modality. The start `t` (1-based) with
//! the smallest cumulative distance `sum_s D(target[t+s-1], query[s])` wins;
//! ties go to the smallest `t`.

use serde::{Deserialize, Serialize};

use super::{embed, embedding_distance, CrossModalEmbedder, InferenceOptions, QueryRecords, SegmentEmbedding, TaskReport};
use crate::error::{Error, Result};
use crate::model::Modality;
use crate::synthdata::VideoSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Audio query, visual target.
    A2V,
    /// Visual query, audio target.
    V2A,
}

impl Direction {
    pub fn query_modality(self) -> Modality {
        match self {
            Direction::A2V => Modality::Audio,
            Direction::V2A => Modality::Visual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::A2V => "a2v",
            Direction::V2A => "v2a",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2v" => Ok(Direction::A2V),
            "v2a" => Ok(Direction::V2A),
            other => Err(Error::Config(format!("unknown direction {other:?} (expected a2v or v2a)"))),
        }
    }
}

/// How many query segments to take from each video's event.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryLen {
    /// The whole labeled event.
    #[default]
    Event,
    /// The first `n` event segments; videos with shorter events are skipped.
    Fixed(usize),
}

impl std::str::FromStr for QueryLen {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "event" {
            return Ok(QueryLen::Event);
        }
        let n = s
            .strip_prefix("fixed:")
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("query length {s:?} must be `event` or `fixed:N` with N > 0")))?;
        Ok(QueryLen::Fixed(n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmlQuery {
    pub direction: Direction,
    pub query_segments: Vec<Vec<f64>>,
    pub target_sequence: Vec<Vec<f64>>,
    /// 1-based start of the query inside the target sequence.
    pub true_start: usize,
}

impl CmlQuery {
    /// Builds the query for one video, or `None` when its event is shorter
    /// than a fixed query length.
    pub fn from_video(video: &VideoSequence, direction: Direction, len: QueryLen) -> Option<Self> {
        let l = match len {
            QueryLen::Event => video.event_len(),
            QueryLen::Fixed(n) if n <= video.event_len() => n,
            QueryLen::Fixed(_) => return None,
        };
        let qm = direction.query_modality();
        let start = video.event_start;
        Some(CmlQuery {
            direction,
            query_segments: video.segments[start..start + l]
                .iter()
                .map(|s| s.features(qm).to_vec())
                .collect(),
            target_sequence: video.segments.iter().map(|s| s.features(qm.other()).to_vec()).collect(),
            true_start: start + 1,
        })
    }
}

/// `entries[s * target_len + t]` = distance between query segment `s` and
/// target segment `t` (both 0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    pub query_len: usize,
    pub target_len: usize,
    pub entries: Vec<f64>,
}

impl DistanceTable {
    pub fn new(query_len: usize, target_len: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != query_len * target_len {
            return Err(Error::shape("distance table", query_len * target_len, entries.len()));
        }
        Ok(DistanceTable {
            query_len,
            target_len,
            entries,
        })
    }

    pub fn get(&self, s: usize, t: usize) -> f64 {
        self.entries[s * self.target_len + t]
    }
}

/// Minimizing window start, 1-based.
pub fn localize_table(table: &DistanceTable) -> Result<usize> {
    let (l, t_len) = (table.query_len, table.target_len);
    if l == 0 || l > t_len {
        return Err(Error::Contract(format!("query length {l} must lie in 1..={t_len}")));
    }
    let mut best = (f64::INFINITY, 1);
    for t in 0..=t_len - l {
        let cost: f64 = (0..l).map(|s| table.get(s, t + s)).sum();
        if cost.is_nan() {
            return Err(Error::NonFinite(format!("window cost at t={}", t + 1)));
        }
        if cost < best.0 {
            best = (cost, t + 1);
        }
    }
    Ok(best.1)
}

fn table_from_embeddings(
    query: &[SegmentEmbedding],
    target: &[SegmentEmbedding],
    opts: InferenceOptions,
) -> Result<DistanceTable> {
    let mut entries = Vec::with_capacity(query.len() * target.len());
    for q in query {
        for t in target {
            entries.push(embedding_distance(t, q, opts)?);
        }
    }
    DistanceTable::new(query.len(), target.len(), entries)
}

pub fn localize<E: CrossModalEmbedder + ?Sized>(model: &E, query: &CmlQuery, opts: InferenceOptions) -> Result<usize> {
    let l = query.query_segments.len();
    if l == 0 || l > query.target_sequence.len() {
        return Err(Error::Contract(format!(
            "query length {l} must lie in 1..={}",
            query.target_sequence.len()
        )));
    }
    let qm = query.direction.query_modality();
    let q = query.query_segments.iter().map(|x| embed(model, qm, x)).collect::<Result<Vec<_>>>()?;
    let t = query.target_sequence.iter().map(|x| embed(model, qm.other(), x)).collect::<Result<Vec<_>>>()?;
    localize_table(&table_from_embeddings(&q, &t, opts)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmlRecord {
    pub query_id: usize,
    pub video_id: usize,
    pub direction: Direction,
    pub query_len: usize,
    pub true_start: usize,
    pub predicted_start: usize,
    pub correct: bool,
}

/// Mean of `1 / (T - l + 1)` over query lengths.
pub fn chance_accuracy(target_len: usize, query_lens: &[usize]) -> f64 {
    if query_lens.is_empty() {
        return 0.0;
    }
    query_lens.iter().map(|&l| 1.0 / (target_len - l + 1) as f64).sum::<f64>() / query_lens.len() as f64
}

/// Exact-match accuracy over `videos`, given as `(video_id, video)`.
pub fn evaluate_cml<E: CrossModalEmbedder + ?Sized>(
    model: &E,
    videos: &[(usize, &VideoSequence)],
    direction: Direction,
    len: QueryLen,
    opts: InferenceOptions,
) -> Result<TaskReport> {
    if videos.is_empty() {
        return Err(Error::Contract("localization needs at least one video".into()));
    }
    let mut records = Vec::new();
    let mut lens = Vec::new();
    let mut target_len = 0;
    for &(video_id, video) in videos {
        let Some(query) = CmlQuery::from_video(video, direction, len) else { continue };
        target_len = query.target_sequence.len();
        let predicted = localize(model, &query, opts)?;
        lens.push(query.query_segments.len());
        records.push(CmlRecord {
            query_id: records.len(),
            video_id,
            direction,
            query_len: query.query_segments.len(),
            true_start: query.true_start,
            predicted_start: predicted,
            correct: predicted == query.true_start,
        });
    }
    let correct = records.iter().filter(|r| r.correct).count();
    let value = if records.is_empty() { 0.0 } else { correct as f64 / records.len() as f64 };
    Ok(TaskReport {
        task: format!("cml-{}", direction.as_str()),
        metric: "accuracy".into(),
        value,
        chance: Some(chance_accuracy(target_len, &lens)),
        num_queries: records.len(),
        num_flagged: videos.len() - records.len(),
        records: QueryRecords::Cml(records),
        config: serde_json::Value::Null,
    })
}
