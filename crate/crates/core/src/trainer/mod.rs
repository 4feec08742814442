//! Mini-batch training of the cross-modal VAE.
//!
//! Each batch runs one pass per input modality. A pass encodes that
//! modality, samples a latent, decodes it and scores the reconstruction
//! against the true pair. The two passes' MSE and KL terms are summed, the
//! latent distance between the two samples is added, and one Adam step is
//! taken. Labels never enter this module: it sees feature vectors only.

mod checkpoint;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, load_header, save_checkpoint, CheckpointHeader, ManifestEntry, HEADER_FILE, PARAMS_FILE};

use crate::error::{Error, Result};
use crate::losses::{self, total_loss, LossBreakdown, LossWeights};
use crate::model::{reparameterize_graph, Arch, BoundModel, DecoderMode, Modality, ModelParams};
use crate::ndmath::{AdamConfig, AdamState, Graph, Tensor, Var};
use crate::synthdata::SegmentPair;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassMode {
    /// Audio and visual passes in every batch.
    #[default]
    BothPerBatch,
    /// Even epochs use the audio pass, odd epochs the visual pass; the latent
    /// distance is taken to the other modality's current posterior mean.
    AlternateEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub decoder_mode: DecoderMode,
    pub wasserstein_enabled: bool,
    pub pass_mode: PassMode,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 7,
            weights: LossWeights::default(),
            decoder_mode: DecoderMode::Shared,
            wasserstein_enabled: true,
            pass_mode: PassMode::BothPerBatch,
            latent_dim: 8,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        self.weights.validate()
    }

    /// Loss weights actually applied: `lambda3` is zeroed when the latent
    /// distance term is disabled.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            lambda3: if self.wasserstein_enabled { self.weights.lambda3 } else { 0.0 },
            ..self.weights
        }
    }

    pub fn arch(&self, audio_dim: usize, visual_dim: usize) -> Arch {
        Arch::new(audio_dim, visual_dim)
            .with_latent_dim(self.latent_dim)
            .with_hidden(self.encoder_hidden.clone(), self.decoder_hidden.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

/// A stacked mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub audio: Tensor,
    pub visual: Tensor,
}

impl Batch {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a SegmentPair>) -> Result<Self> {
        let (a, v): (Vec<&[f64]>, Vec<&[f64]>) = pairs.into_iter().map(|p| (&p.audio[..], &p.visual[..])).unzip();
        if a.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        Ok(Batch {
            audio: Tensor::from_rows(&a)?,
            visual: Tensor::from_rows(&v)?,
        })
    }

    pub fn len(&self) -> usize {
        self.audio.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

/// Which passes an objective evaluation runs.
#[derive(Clone, Debug)]
pub enum Passes {
    Both,
    /// One pass; the latent distance targets a fixed `batch x latent` anchor
    /// (the other modality's posterior means).
    Single { modality: Modality, anchor: Tensor },
}

/// Standard-normal draws for each pass, `batch x latent_dim`.
#[derive(Clone, Debug)]
pub struct PassNoise {
    pub audio: Tensor,
    pub visual: Tensor,
}

impl PassNoise {
    pub fn sample<R: Rng>(rng: &mut R, rows: usize, latent_dim: usize) -> Self {
        let mut draw = || {
            let d = (0..rows * latent_dim).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::matrix(rows, latent_dim, d).expect("positive dims")
        };
        let audio = draw();
        let visual = draw();
        PassNoise { audio, visual }
    }

    pub fn zeros(rows: usize, latent_dim: usize) -> Self {
        PassNoise {
            audio: Tensor::zeros(&[rows, latent_dim]),
            visual: Tensor::zeros(&[rows, latent_dim]),
        }
    }

    fn get(&self, m: Modality) -> &Tensor {
        match m {
            Modality::Audio => &self.audio,
            Modality::Visual => &self.visual,
        }
    }
}

/// A recorded batch objective.
pub struct Objective {
    graph: Graph,
    loss: Var,
    bound: BoundModel,
    pub breakdown: LossBreakdown,
}

impl Objective {
    pub fn value(&self) -> f64 {
        self.graph.value(self.loss).data()[0]
    }

    /// Backpropagates and writes the gradients into `model`.
    pub fn write_gradients(&self, model: &mut ModelParams) -> Result<()> {
        let grads = self.graph.backward(self.loss)?;
        model.write_grads(&grads, &self.bound)
    }
}

/// Records the weighted loss for one batch.
///
/// `weights.lambda3 == 0` removes the latent distance from the graph
/// entirely, so it contributes no gradient.
pub fn batch_objective(
    model: &ModelParams,
    batch: &Batch,
    noise: &PassNoise,
    passes: &Passes,
    weights: &LossWeights,
    epoch: usize,
) -> Result<Objective> {
    let arch = &model.arch;
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let xa = g.leaf(batch.audio.clone());
    let xv = g.leaf(batch.visual.clone());
    let x_pair = g.concat_cols(xa, xv)?;

    let run_pass = |g: &mut Graph, m: Modality| -> Result<(Var, Var, Var)> {
        let x = match m {
            Modality::Audio => xa,
            Modality::Visual => xv,
        };
        let (mean, logvar) = model.encode_graph(g, &bound, m, x)?;
        let eps = g.leaf(noise.get(m).clone());
        let z = reparameterize_graph(g, mean, logvar, eps)?;
        let out = model.decode_graph(g, &bound, z, m)?;
        let target = match model.mode() {
            DecoderMode::Shared => x_pair,
            DecoderMode::Separate => match m.other() {
                Modality::Audio => xa,
                Modality::Visual => xv,
            },
        };
        let mse = losses::mse_graph(g, out, target)?;
        let kl = losses::kl_graph(g, mean, logvar)?;
        Ok((mse, kl, z))
    };

    let (mse, kl, w) = match passes {
        Passes::Both => {
            let (mse_a, kl_a, z_a) = run_pass(&mut g, Modality::Audio)?;
            let (mse_v, kl_v, z_v) = run_pass(&mut g, Modality::Visual)?;
            let mse = g.add(mse_a, mse_v)?;
            let kl = g.add(kl_a, kl_v)?;
            let w = losses::wasserstein_sampled_graph(&mut g, z_a, z_v)?;
            (mse, kl, w)
        }
        Passes::Single { modality, anchor } => {
            if anchor.dims2() != (batch.len(), arch.latent_dim) {
                return Err(Error::shape(
                    "latent anchor",
                    format!("{:?}", (batch.len(), arch.latent_dim)),
                    format!("{:?}", anchor.dims2()),
                ));
            }
            let (mse, kl, z) = run_pass(&mut g, *modality)?;
            let anchor = g.leaf(anchor.clone());
            let w = losses::wasserstein_sampled_graph(&mut g, z, anchor)?;
            (mse, kl, w)
        }
    };

    let l2 = weights.kl_weight(epoch);
    let mut loss = g.scale(mse, weights.lambda1);
    let kl_term = g.scale(kl, l2);
    loss = g.add(loss, kl_term)?;
    if weights.lambda3 != 0.0 {
        let w_term = g.scale(w, weights.lambda3);
        loss = g.add(loss, w_term)?;
    }

    let item = |v: Var| g.value(v).data()[0];
    let breakdown = total_loss(item(mse), item(kl), item(w), weights, epoch);
    Ok(Objective {
        graph: g,
        loss,
        bound,
        breakdown,
    })
}

fn posterior_means(model: &ModelParams, batch: &Batch, m: Modality) -> Result<Tensor> {
    let x = batch.get(m);
    let rows = (0..batch.len())
        .map(|r| model.encode(m, x.row(r)).map(|q| q.mean))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<TrainLogEntry>,
}

/// Trains a freshly initialised model on `pairs`.
///
/// Deterministic given `config.seed`: initialisation, shuffling and noise
/// all come from one seeded stream consumed in a fixed order.
pub fn train(pairs: &[SegmentPair], config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(pairs, config, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch.
pub fn train_with_observer(
    pairs: &[SegmentPair],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&TrainLogEntry),
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = pairs
        .first()
        .ok_or_else(|| Error::Contract("training set is empty".into()))?;
    let (da, dv) = (first.audio.len(), first.visual.len());
    for (i, p) in pairs.iter().enumerate() {
        if p.audio.len() != da || p.visual.len() != dv {
            return Err(Error::shape(
                format!("training pair {i}"),
                format!("({da}, {dv})"),
                format!("({}, {})", p.audio.len(), p.visual.len()),
            ));
        }
    }

    let mut model = ModelParams::init(config.arch(da, dv), config.decoder_mode, config.seed)?;
    let adam_cfg = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut optimizers: Vec<AdamState> = model.tapes().into_iter().map(|t| AdamState::new(t, adam_cfg)).collect();
    let weights = config.effective_weights();
    let latent = config.latent_dim;

    // Separate stream from the one used by initialisation.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = Batch::from_pairs(chunk.iter().map(|&i| &pairs[i]))?;
            let noise = PassNoise::sample(&mut rng, batch.len(), latent);
            let passes = match config.pass_mode {
                PassMode::BothPerBatch => Passes::Both,
                PassMode::AlternateEpochs => {
                    let modality = if epoch % 2 == 0 { Modality::Audio } else { Modality::Visual };
                    Passes::Single {
                        modality,
                        anchor: posterior_means(&model, &batch, modality.other())?,
                    }
                }
            };
            let obj = batch_objective(&model, &batch, &noise, &passes, &weights, epoch)?;
            if !obj.value().is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {epoch} batch {b}: {:?}",
                    obj.breakdown
                )));
            }
            obj.write_gradients(&mut model)?;
            for (opt, tape) in optimizers.iter_mut().zip(model.tapes_mut()) {
                opt.step(tape).map_err(|e| match e {
                    Error::NonFinite(s) => Error::NonFinite(format!("epoch {epoch} batch {b}: {s}")),
                    other => other,
                })?;
            }
            let n = batch.len() as f64;
            sums[0] += obj.breakdown.mse * n;
            sums[1] += obj.breakdown.kl * n;
            sums[2] += obj.breakdown.w_latent * n;
        }
        let n = pairs.len() as f64;
        let entry = TrainLogEntry {
            epoch,
            loss: total_loss(sums[0] / n, sums[1] / n, sums[2] / n, &weights, epoch),
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);
    }

    Ok(TrainOutcome { params: model, log })
}
