use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fmt_sig9, CrossModalEmbedder};
use crate::error::{Error, Result};
use crate::losses::{gaussian_w2_closed_form, kl_standard_normal};
use crate::model::Modality;
use crate::synthdata::VideoSequence;

/// Principal axes found by power iteration with deflation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit vectors, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component.
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Each component runs at most `max_iter` iterations and stops early once
/// successive unit vectors differ by less than `tol`. Components are signed
/// so their largest-magnitude entry is positive.
pub fn pca_power_iteration(points: &[Vec<f64>], components: usize, max_iter: usize, tol: f64, seed: u64) -> Result<Pca> {
    let n = points.len();
    let d = points.first().map(Vec::len).unwrap_or(0);
    if n == 0 || d == 0 {
        return Err(Error::Contract("PCA needs at least one nonempty point".into()));
    }
    if let Some(bad) = points.iter().position(|p| p.len() != d) {
        return Err(Error::shape(format!("PCA point {bad}"), d, points[bad].len()));
    }
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        for i in 0..d {
            let ci = p[i] - mean[i];
            for j in 0..d {
                cov[i][j] += ci * (p[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut comps = Vec::new();
    let mut vars = Vec::new();
    for _ in 0..components.min(d) {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n0 = norm(&v);
        v.iter_mut().for_each(|x| *x /= n0);
        for _ in 0..max_iter {
            let mut w = mat_vec(&cov, &v);
            let nw = norm(&w);
            if nw == 0.0 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= nw);
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            if delta < tol {
                break;
            }
        }
        let lambda = dot(&v, &mat_vec(&cov, &v)).max(0.0);
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        comps.push(v);
        vars.push(lambda);
    }
    Ok(Pca {
        mean,
        components: comps,
        variances: vars,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[derive(Default)]
pub struct ExportOptions {
    /// Export background segments too (the default keeps event segments only).
    pub include_background: bool,
    pub pca_seed: u64,
}


struct Row {
    video_id: usize,
    segment: usize,
    modality: Modality,
    category: usize,
    is_event: bool,
    mean: Vec<f64>,
}

/// Writes one CSV row per (segment, modality) with the posterior mean and
/// its 2-D PCA projection; returns the number of data rows.
pub fn export_latents<E: CrossModalEmbedder + ?Sized>(
    model: &E,
    videos: &[(usize, &VideoSequence)],
    path: &Path,
    opts: ExportOptions,
) -> Result<usize> {
    let mut rows = Vec::new();
    for &(video_id, v) in videos {
        for (t, seg) in v.segments.iter().enumerate() {
            if !seg.is_event && !opts.include_background {
                continue;
            }
            for m in [Modality::Audio, Modality::Visual] {
                rows.push(Row {
                    video_id,
                    segment: t,
                    modality: m,
                    category: v.category,
                    is_event: seg.is_event,
                    mean: model.posterior(m, seg.features(m))?.mean,
                });
            }
        }
    }
    let latent_dim = rows.first().map_or(0, |r| r.mean.len());

    let mut out = String::from("video_id,segment_index,modality,category,is_event");
    for k in 1..=latent_dim {
        out.push_str(&format!(",mean_{k}"));
    }
    out.push_str(",pca_x,pca_y\n");

    if !rows.is_empty() {
        let means: Vec<Vec<f64>> = rows.iter().map(|r| r.mean.clone()).collect();
        let pca = pca_power_iteration(&means, 2, 100, 1e-9, opts.pca_seed)?;
        for r in &rows {
            let mut proj = pca.project(&r.mean);
            proj.resize(2, 0.0);
            out.push_str(&format!(
                "{},{},{},{},{}",
                r.video_id,
                r.segment,
                r.modality.as_str(),
                r.category,
                r.is_event as u8
            ));
            for x in r.mean.iter().chain(&proj) {
                out.push(',');
                out.push_str(&fmt_sig9(*x));
            }
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

/// Mean KL to the prior per latent dimension, over event segments of `m`.
/// Values near zero mean the posterior has collapsed onto the prior.
pub fn mean_kl_per_dim<E: CrossModalEmbedder + ?Sized>(
    model: &E,
    videos: &[(usize, &VideoSequence)],
    m: Modality,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, v) in videos {
        for seg in v.event_segments() {
            let q = model.posterior(m, seg.features(m))?;
            total += kl_standard_normal(&q) / q.dim() as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("no event segments".into()));
    }
    Ok(total / count as f64)
}

/// Mean closed-form W2 between the audio and visual posteriors of each
/// event segment.
pub fn mean_paired_w2<E: CrossModalEmbedder + ?Sized>(model: &E, videos: &[(usize, &VideoSequence)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, v) in videos {
        for seg in v.event_segments() {
            let qa = model.posterior(Modality::Audio, &seg.audio)?;
            let qv = model.posterior(Modality::Visual, &seg.visual)?;
            total += gaussian_w2_closed_form(&qa, &qv)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Contract("no event segments".into()));
    }
    Ok(total / count as f64)
}
