//! Library results against independent computations.

use msvae::model::{Arch, DecoderMode, Modality, ModelParams};
use msvae::ndmath::{mlp_forward, Activation, MlpSpec, ParamTape, Tensor};
use msvae::tasks::{expected_random_mrr, random_ranking_mrr};
use proptest::prelude::*;

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Expected MRR of random orderings from the hypergeometric law of the
/// first relevant position.
fn expected_mrr_closed_form(categories: &[usize], intra: bool) -> f64 {
    let n_all = categories.len() as u64;
    let mut total = 0.0;
    for &c in categories {
        let same = categories.iter().filter(|&&x| x == c).count() as u64;
        let (n, m) = if intra { (n_all - 1, same - 1) } else { (n_all, same) };
        if m == 0 {
            continue;
        }
        let norm = binomial(n, m);
        total += (1..=n - m + 1).map(|r| binomial(n - r, m - 1) / norm / r as f64).sum::<f64>();
    }
    total / n_all as f64
}

#[test]
fn random_mrr_monte_carlo_matches_expectation() {
    // 40 items in 8 balanced categories
    let categories: Vec<usize> = (0..40).map(|i| i % 8).collect();
    for intra in [false, true] {
        let exact = expected_mrr_closed_form(&categories, intra);
        assert!((expected_random_mrr(&categories, intra) - exact).abs() < 1e-12);
        let mc = random_ranking_mrr(&categories, intra, 2000, 3);
        assert!((mc - exact).abs() < 0.02, "intra={intra}: {mc} vs {exact}");
    }
}

proptest! {
    #[test]
    fn exact_random_mrr_matches_closed_form(cats in prop::collection::vec(0usize..4, 2..25), intra: bool) {
        let a = expected_random_mrr(&cats, intra);
        let b = expected_mrr_closed_form(&cats, intra);
        prop_assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn two_layer_mlp_by_hand() {
    // x=[1,-1]; h = tanh([[0.5,0.25],[-1,2]] x + [0.1,0]) ; y = [3,-2] h + 0.5
    let spec = MlpSpec::chain(&[2, 2, 1], Activation::Tanh);
    let mut t = ParamTape::new();
    t.push("layer0.weight", Tensor::from_rows(&[vec![0.5, 0.25], vec![-1.0, 2.0]]).unwrap()).unwrap();
    t.push("layer0.bias", Tensor::vector(vec![0.1, 0.0])).unwrap();
    t.push("layer1.weight", Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap()).unwrap();
    t.push("layer1.bias", Tensor::vector(vec![0.5])).unwrap();
    let y = mlp_forward(t.params(), &[1.0, -1.0], &spec).unwrap();
    let expect = 3.0 * 0.35f64.tanh() - 2.0 * (-3.0f64).tanh() + 0.5;
    assert!((y[0] - expect).abs() < 1e-12);
}

#[test]
fn encoder_output_halves_are_mean_and_logvar() {
    let arch = Arch::new(2, 3).with_latent_dim(2).with_hidden(vec![4], vec![4]);
    let m = ModelParams::init(arch, DecoderMode::Shared, 1).unwrap();
    let x = [0.3, -0.8];
    let spec = m.arch.encoder_spec(Modality::Audio);
    let raw = mlp_forward(m.audio_encoder.params(), &x, &spec).unwrap();
    let q = m.encode(Modality::Audio, &x).unwrap();
    assert_eq!(q.mean, raw[..2].to_vec());
    assert_eq!(q.logvar, raw[2..].to_vec());
}
