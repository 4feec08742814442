//! Synthetic paired audio/visual feature sequences with known event
//! categories and boundaries.
//!
//! Each category owns a concept vector in a small shared space. Two fixed
//! random linear maps lift shared-space points to audio and visual features.
//! Event segments lift independently perturbed copies of the video's concept
//! through both maps, so the two modalities agree; background segments lift
//! independent draws per modality, so they carry no cross-modal signal.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio::{self, f32_round};
use crate::error::{Error, Result};
use crate::model::Modality;

/// One 1-second segment: synchronized audio and visual feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPair {
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
    pub is_event: bool,
}

impl SegmentPair {
    pub fn features(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub segments: Vec<SegmentPair>,
    pub category: usize,
    /// First event segment, 0-based.
    pub event_start: usize,
    /// One past the last event segment.
    pub event_end: usize,
}

impl VideoSequence {
    pub fn event_len(&self) -> usize {
        self.event_end - self.event_start
    }

    pub fn event_segments(&self) -> &[SegmentPair] {
        &self.segments[self.event_start..self.event_end]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub num_categories: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub shared_latent_dim: usize,
    pub segments_per_video: usize,
    /// Per-segment perturbation of the concept inside events.
    pub noise_std: f64,
    /// Spread of background draws in the shared space.
    pub background_scale: f64,
    /// Spread of category concepts in the shared space.
    pub concept_scale: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 200,
            num_categories: 8,
            audio_dim: 16,
            visual_dim: 64,
            shared_latent_dim: 6,
            segments_per_video: 10,
            noise_std: 0.3,
            background_scale: 0.5,
            concept_scale: 2.0,
            test_fraction: 0.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_videos", self.num_videos),
            ("audio_dim", self.audio_dim),
            ("visual_dim", self.visual_dim),
            ("shared_latent_dim", self.shared_latent_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_categories < 2 {
            return Err(Error::Config(format!(
                "need at least 2 categories, got {}",
                self.num_categories
            )));
        }
        if self.segments_per_video < 2 {
            return Err(Error::Config("segments_per_video must be at least 2".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("noise_std must be finite and nonnegative".into()));
        }
        for (name, v) in [("background_scale", self.background_scale), ("concept_scale", self.concept_scale)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Video indices of each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

impl Splits {
    /// Seeded shuffle of `0..n`; the first `round(n * test_fraction)` go to test.
    pub fn seeded(n: usize, test_fraction: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
        let n_test = ((n as f64) * test_fraction).round() as usize;
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Splits { train, test }
    }

    pub fn get(&self, s: Split) -> &[usize] {
        match s {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// Disjoint and exhaustive over `0..n`.
    pub fn validate(&self, n: usize) -> std::result::Result<(), String> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(format!("split index {i} out of range for {n} videos"));
            }
            if seen[i] {
                return Err(format!("video {i} assigned twice"));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(format!("video {i} is in no split"));
        }
        Ok(())
    }
}

/// Mixed into the dataset seed so the split stream differs from generation.
const SPLIT_STREAM: u64 = 0x5eed_5917;

/// On-disk `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub num_videos: usize,
    #[serde(rename = "T")]
    pub segments_per_video: usize,
    #[serde(rename = "K")]
    pub num_categories: usize,
    #[serde(rename = "d_a")]
    pub audio_dim: usize,
    #[serde(rename = "d_v")]
    pub visual_dim: usize,
    pub seed: u64,
    pub splits: Splits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// Free-form provenance (tool version, resolved run configuration).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

/// One entry of `labels.json`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabel {
    pub category: usize,
    pub event_start: usize,
    pub event_end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub videos: Vec<VideoSequence>,
}

impl Dataset {
    pub fn split_videos(&self, s: Split) -> Vec<&VideoSequence> {
        self.manifest.splits.get(s).iter().map(|&i| &self.videos[i]).collect()
    }

    /// Segment pairs of a split in video then segment order. Background
    /// segments are dropped unless `include_background`; note that dropping
    /// them consults the event boundaries.
    pub fn segment_pairs(&self, s: Split, include_background: bool) -> Vec<SegmentPair> {
        self.split_videos(s)
            .into_iter()
            .flat_map(|v| v.segments.iter())
            .filter(|p| include_background || p.is_event)
            .cloned()
            .collect()
    }

    pub fn labels(&self) -> Vec<VideoLabel> {
        self.videos
            .iter()
            .map(|v| VideoLabel {
                category: v.category,
                event_start: v.event_start,
                event_end: v.event_end,
            })
            .collect()
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `rows x cols` map applied as `m . u`.
struct LinearMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LinearMap {
    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Self {
        let dist = Normal::new(0.0, (1.0 / cols as f64).sqrt()).expect("valid std");
        LinearMap {
            rows,
            cols,
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                f32_round(row.iter().zip(u).map(|(a, b)| a * b).sum())
            })
            .collect()
    }
}

/// All `(start, end)` with `end - start >= 2` inside `0..t`.
pub fn valid_spans(t: usize) -> Vec<(usize, usize)> {
    (0..t)
        .flat_map(|s| (s + 2..=t).map(move |e| (s, e)))
        .collect()
}

/// Deterministic per seed. Feature values are rounded to `f32` so a saved
/// dataset loads back bit-identical.
pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let l = config.shared_latent_dim;
    let map_a = LinearMap::random(&mut rng, config.audio_dim, l);
    let map_v = LinearMap::random(&mut rng, config.visual_dim, l);
    let concepts: Vec<Vec<f64>> = (0..config.num_categories)
        .map(|_| gaussian_vec(&mut rng, l, config.concept_scale))
        .collect();
    let spans = valid_spans(config.segments_per_video);

    let mut videos = Vec::with_capacity(config.num_videos);
    for _ in 0..config.num_videos {
        let category = rng.random_range(0..config.num_categories);
        let (event_start, event_end) = spans[rng.random_range(0..spans.len())];
        let segments = (0..config.segments_per_video)
            .map(|t| {
                let is_event = (event_start..event_end).contains(&t);
                let (ua, uv) = if is_event {
                    let c = &concepts[category];
                    let na = gaussian_vec(&mut rng, l, config.noise_std);
                    let nv = gaussian_vec(&mut rng, l, config.noise_std);
                    (
                        c.iter().zip(&na).map(|(a, b)| a + b).collect::<Vec<_>>(),
                        c.iter().zip(&nv).map(|(a, b)| a + b).collect::<Vec<_>>(),
                    )
                } else {
                    (
                        gaussian_vec(&mut rng, l, config.background_scale),
                        gaussian_vec(&mut rng, l, config.background_scale),
                    )
                };
                SegmentPair {
                    audio: map_a.apply(&ua),
                    visual: map_v.apply(&uv),
                    is_event,
                }
            })
            .collect();
        videos.push(VideoSequence {
            segments,
            category,
            event_start,
            event_end,
        });
    }

    let manifest = Manifest {
        num_videos: config.num_videos,
        segments_per_video: config.segments_per_video,
        num_categories: config.num_categories,
        audio_dim: config.audio_dim,
        visual_dim: config.visual_dim,
        seed: config.seed,
        splits: Splits::seeded(config.num_videos, config.test_fraction, config.seed),
        synth: Some(config.clone()),
        metadata: serde_json::Value::Null,
    };
    Ok(Dataset { manifest, videos })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const AUDIO_FILE: &str = "audio.f32";
pub const VISUAL_FILE: &str = "visual.f32";
pub const LABELS_FILE: &str = "labels.json";

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    binio::write_json(&dir.join(MANIFEST_FILE), &dataset.manifest)?;
    let all = || dataset.videos.iter().flat_map(|v| v.segments.iter());
    binio::write_f32(&dir.join(AUDIO_FILE), all().flat_map(|s| s.audio.iter().copied()))?;
    binio::write_f32(&dir.join(VISUAL_FILE), all().flat_map(|s| s.visual.iter().copied()))?;
    binio::write_json(&dir.join(LABELS_FILE), &dataset.labels())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = binio::read_json(&manifest_path)?;
    let (n, t, k) = (manifest.num_videos, manifest.segments_per_video, manifest.num_categories);
    if manifest.audio_dim == 0 || manifest.visual_dim == 0 || t == 0 || n == 0 {
        return Err(Error::format(&manifest_path, "dimensions must be positive"));
    }
    manifest
        .splits
        .validate(n)
        .map_err(|r| Error::format(&manifest_path, r))?;

    let labels_path = dir.join(LABELS_FILE);
    let labels: Vec<VideoLabel> = binio::read_json(&labels_path)?;
    if labels.len() != n {
        return Err(Error::format(
            &labels_path,
            format!("{} labels for {} videos", labels.len(), n),
        ));
    }
    for (i, l) in labels.iter().enumerate() {
        if l.category >= k {
            return Err(Error::format(
                &labels_path,
                format!("video {i}: category {} outside [0, {k})", l.category),
            ));
        }
        if l.event_start >= l.event_end || l.event_end > t {
            return Err(Error::format(
                &labels_path,
                format!("video {i}: event span {}..{} invalid for T={t}", l.event_start, l.event_end),
            ));
        }
    }

    let load = |file: &str, dim: usize| -> Result<Vec<f64>> {
        let path = dir.join(file);
        let v = binio::read_f32(&path)?;
        if v.len() != n * t * dim {
            return Err(Error::corrupt(
                &path,
                format!("expected {} values ({n} videos x {t} segments x {dim}), found {}", n * t * dim, v.len()),
            ));
        }
        Ok(v)
    };
    let audio = load(AUDIO_FILE, manifest.audio_dim)?;
    let visual = load(VISUAL_FILE, manifest.visual_dim)?;

    let (da, dv) = (manifest.audio_dim, manifest.visual_dim);
    let videos = labels
        .iter()
        .enumerate()
        .map(|(i, l)| VideoSequence {
            segments: (0..t)
                .map(|s| {
                    let row = i * t + s;
                    SegmentPair {
                        audio: audio[row * da..(row + 1) * da].to_vec(),
                        visual: visual[row * dv..(row + 1) * dv].to_vec(),
                        is_event: (l.event_start..l.event_end).contains(&s),
                    }
                })
                .collect(),
            category: l.category,
            event_start: l.event_start,
            event_end: l.event_end,
        })
        .collect();
    Ok(Dataset { manifest, videos })
}
