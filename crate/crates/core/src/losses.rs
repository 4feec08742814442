//! Reconstruction, KL and Wasserstein terms, and their weighted total.
//!
//! Each term exists twice: as a plain function on values (used at inference
//! and as a test reference) and as a graph recording (used for training).
//! Graph versions operate on `batch x dim` nodes and average over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GeneratedPair, LatentGaussian};
use crate::ndmath::{Graph, Var};
use crate::synthdata::SegmentPair;

/// Weights of the three loss terms, with the KL weight dropping from
/// `lambda2` to `lambda2_late` once `epoch >= switch_epoch`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda2_late: f64,
    pub switch_epoch: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 1.0,
            lambda2_late: 0.01,
            switch_epoch: 10,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda2_late];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }

    /// KL weight in effect during `epoch` (counted from zero).
    pub fn kl_weight(&self, epoch: usize) -> f64 {
        if epoch < self.switch_epoch {
            self.lambda2
        } else {
            self.lambda2_late
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub kl: f64,
    pub w_latent: f64,
    pub total: f64,
    pub epoch: usize,
}

/// Weighted sum of already-computed components.
pub fn total_loss(mse: f64, kl: f64, w_latent: f64, weights: &LossWeights, epoch: usize) -> LossBreakdown {
    LossBreakdown {
        mse,
        kl,
        w_latent,
        total: weights.lambda1 * mse + weights.kl_weight(epoch) * kl + weights.lambda3 * w_latent,
        epoch,
    }
}

/// Mean squared error over the generated slots. With both slots present
/// this is the mean over all `d_a + d_v` elements.
pub fn mse_loss(x_hat: &GeneratedPair, x: &SegmentPair) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (hat, truth, name) in [
        (x_hat.audio_hat.as_deref(), x.audio.as_slice(), "audio"),
        (x_hat.visual_hat.as_deref(), x.visual.as_slice(), "visual"),
    ] {
        let Some(hat) = hat else { continue };
        if hat.len() != truth.len() {
            return Err(Error::shape(format!("mse {name} slot"), truth.len(), hat.len()));
        }
        sum += hat.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += hat.len();
    }
    if count == 0 {
        return Err(Error::Contract("mse_loss on a pair with no generated slots".into()));
    }
    Ok(sum / count as f64)
}

/// Closed-form `KL(N(mean, diag(exp(logvar))) || N(0, I))`.
pub fn kl_standard_normal(g: &LatentGaussian) -> f64 {
    0.5 * g
        .mean
        .iter()
        .zip(&g.logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Euclidean distance between two latent samples.
pub fn wasserstein_latent_sampled(z_a: &[f64], z_v: &[f64]) -> Result<f64> {
    if z_a.len() != z_v.len() {
        return Err(Error::shape("wasserstein_latent_sampled", z_a.len(), z_v.len()));
    }
    Ok(z_a.iter().zip(z_v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// 2-Wasserstein distance between diagonal Gaussians:
/// `W2^2 = |mu1 - mu2|^2 + sum_d (sigma1_d - sigma2_d)^2`.
pub fn gaussian_w2_closed_form(g1: &LatentGaussian, g2: &LatentGaussian) -> Result<f64> {
    if g1.dim() != g2.dim() {
        return Err(Error::shape("gaussian_w2_closed_form", g1.dim(), g2.dim()));
    }
    let mut sq = 0.0;
    for d in 0..g1.dim() {
        let dm = g1.mean[d] - g2.mean[d];
        let ds = (0.5 * g1.logvar[d]).exp() - (0.5 * g2.logvar[d]).exp();
        sq += dm * dm + ds * ds;
    }
    Ok(sq.sqrt())
}

/// Posterior distance used at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentDistance {
    /// Closed-form W2 on `(mean, sigma)`.
    #[default]
    ClosedFormW2,
    /// Euclidean distance between means; variances ignored.
    MeanOnly,
}

impl LatentDistance {
    pub fn eval(self, g1: &LatentGaussian, g2: &LatentGaussian) -> Result<f64> {
        match self {
            LatentDistance::ClosedFormW2 => gaussian_w2_closed_form(g1, g2),
            LatentDistance::MeanOnly => wasserstein_latent_sampled(&g1.mean, &g2.mean),
        }
    }
}

/// Batch mean of the per-sample MSE between `pred` and `target`.
pub fn mse_graph(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// Batch mean of the per-sample KL to the standard normal.
pub fn kl_graph(g: &mut Graph, mean: Var, logvar: Var) -> Result<Var> {
    let rows = g.value(mean).dims2().0;
    let m2 = g.square(mean);
    let var = g.exp(logvar);
    let a = g.add(m2, var)?;
    let b = g.sub(a, logvar)?;
    let c = g.add_scalar(b, -1.0);
    let s = g.sum(c);
    Ok(g.scale(s, 0.5 / rows as f64))
}

/// Batch mean of per-sample `|z_a - z_v|_2`.
pub fn wasserstein_sampled_graph(g: &mut Graph, z_a: Var, z_v: Var) -> Result<Var> {
    let diff = g.sub(z_a, z_v)?;
    let sq = g.square(diff);
    let per_row = g.sum_cols(sq);
    let dist = g.sqrt(per_row);
    Ok(g.mean(dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Modality;
    use crate::ndmath::Tensor;
    use proptest::prelude::*;

    fn gauss(mean: &[f64], logvar: &[f64]) -> LatentGaussian {
        LatentGaussian::new(mean.to_vec(), logvar.to_vec()).unwrap()
    }

    fn pair(a: &[f64], v: &[f64]) -> SegmentPair {
        SegmentPair {
            audio: a.to_vec(),
            visual: v.to_vec(),
            is_event: true,
        }
    }

    fn full(a: &[f64], v: &[f64]) -> GeneratedPair {
        GeneratedPair {
            audio_hat: Some(a.to_vec()),
            visual_hat: Some(v.to_vec()),
            source: Modality::Audio,
        }
    }

    #[test]
    fn mse_examples() {
        let x = pair(&[0.2, -0.4], &[1.0, 2.0, 3.0]);
        assert_eq!(mse_loss(&full(&[0.2, -0.4], &[1.0, 2.0, 3.0]), &x).unwrap(), 0.0);
        assert_eq!(mse_loss(&full(&[1.0], &[1.0]), &pair(&[0.0], &[0.0])).unwrap(), 1.0);

        let hat = full(&[0.5, 0.1], &[-1.0, 2.5, 0.0]);
        // (0.3^2 + 0.5^2 + 2^2 + 0.5^2 + 3^2) / 5
        let expect = (0.09 + 0.25 + 4.0 + 0.25 + 9.0) / 5.0;
        assert!((mse_loss(&hat, &x).unwrap() - expect).abs() < 1e-12);

        let mut wrong = hat.clone();
        wrong.visual_hat = Some(vec![0.0; 2]);
        assert!(mse_loss(&wrong, &x).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_standard_normal(&gauss(&[0.0; 4], &[0.0; 4])), 0.0);
        assert!((kl_standard_normal(&gauss(&[1.0], &[0.0])) - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((kl_standard_normal(&gauss(&[0.0], &[1.0])) - 0.5 * (e - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn sampled_distance_examples() {
        assert_eq!(wasserstein_latent_sampled(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein_latent_sampled(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(wasserstein_latent_sampled(&[0.0], &[3.0, 4.0]).is_err());
    }

    #[test]
    fn w2_examples() {
        let g = gauss(&[0.3, -1.0], &[0.2, -0.7]);
        assert_eq!(gaussian_w2_closed_form(&g, &g).unwrap(), 0.0);
        let p = gauss(&[0.0], &[-10.0]);
        let q = gauss(&[3.0], &[-10.0]);
        assert!((gaussian_w2_closed_form(&p, &q).unwrap() - 3.0).abs() < 1e-12);
        let s1 = gauss(&[0.0], &[0.0]);
        let s2 = gauss(&[0.0], &[4f64.ln()]);
        assert!((gaussian_w2_closed_form(&s1, &s2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_only_ignores_variance() {
        let a = gauss(&[0.0, 0.0], &[0.0, 3.0]);
        let b = gauss(&[3.0, 4.0], &[-3.0, 1.0]);
        assert_eq!(LatentDistance::MeanOnly.eval(&a, &b).unwrap(), 5.0);
    }

    #[test]
    fn total_loss_weight_schedule() {
        let w = LossWeights::default();
        assert!((total_loss(1.0, 2.0, 3.0, &w, 0).total - 4.2).abs() < 1e-12);
        assert!((total_loss(1.0, 2.0, 3.0, &w, 9).total - 4.2).abs() < 1e-12);
        assert!((total_loss(1.0, 2.0, 3.0, &w, 10).total - 4.02).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &w, 3).total, 0.0);
    }

    #[test]
    fn graph_terms_match_value_terms() {
        let means = [[0.3, -0.5], [1.2, 0.1]];
        let logvars = [[0.4, -1.0], [0.0, 2.0]];
        let mut g = Graph::new();
        let m = g.leaf(Tensor::from_rows(&means).unwrap());
        let lv = g.leaf(Tensor::from_rows(&logvars).unwrap());
        let kl = kl_graph(&mut g, m, lv).unwrap();
        let expect_kl = (0..2)
            .map(|r| kl_standard_normal(&gauss(&means[r], &logvars[r])))
            .sum::<f64>()
            / 2.0;
        assert!((g.value(kl).data()[0] - expect_kl).abs() < 1e-12);

        let w = wasserstein_sampled_graph(&mut g, m, lv).unwrap();
        let expect_w = (0..2)
            .map(|r| wasserstein_latent_sampled(&means[r], &logvars[r]).unwrap())
            .sum::<f64>()
            / 2.0;
        assert!((g.value(w).data()[0] - expect_w).abs() < 1e-12);
    }

    fn arb_gauss(dim: usize) -> impl Strategy<Value = LatentGaussian> {
        (
            proptest::collection::vec(-3.0..3.0f64, dim),
            proptest::collection::vec(LOGVAR, dim),
        )
            .prop_map(|(m, lv)| LatentGaussian::new(m, lv).unwrap())
    }

    const LOGVAR: std::ops::Range<f64> = -10.0..10.0;

    proptest! {
        #[test]
        fn kl_is_nonnegative(g in arb_gauss(3)) {
            prop_assert!(kl_standard_normal(&g) >= 0.0);
        }

        #[test]
        fn w2_is_symmetric_and_triangular(a in arb_gauss(3), b in arb_gauss(3), c in arb_gauss(3)) {
            let ab = gaussian_w2_closed_form(&a, &b).unwrap();
            let ba = gaussian_w2_closed_form(&b, &a).unwrap();
            let bc = gaussian_w2_closed_form(&b, &c).unwrap();
            let ac = gaussian_w2_closed_form(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn sampled_distance_is_a_metric(
            x in proptest::collection::vec(-5.0..5.0f64, 4),
            y in proptest::collection::vec(-5.0..5.0f64, 4),
            z in proptest::collection::vec(-5.0..5.0f64, 4),
        ) {
            let d = |a: &[f64], b: &[f64]| wasserstein_latent_sampled(a, b).unwrap();
            prop_assert_eq!(d(&x, &x), 0.0);
            prop_assert_eq!(d(&x, &y), d(&y, &x));
            prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
            if x != y {
                prop_assert!(d(&x, &y) > 0.0);
            }
        }

        #[test]
        fn total_is_piecewise_linear(mse in 0.0..10.0f64, kl in 0.0..10.0f64, w in 0.0..10.0f64, epoch in 0usize..30) {
            let weights = LossWeights::default();
            let b = total_loss(mse, kl, w, &weights, epoch);
            let l2 = if epoch < 10 { 0.1 } else { 0.01 };
            prop_assert!((b.total - (mse + l2 * kl + w)).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_zero_only_at_prior() {
        assert_eq!(kl_standard_normal(&gauss(&[0.0], &[0.0])), 0.0);
        for (m, lv) in [(1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            assert!(kl_standard_normal(&gauss(&[m], &[lv])) > 0.0);
        }
    }
}
