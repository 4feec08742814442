//! Two modality encoders and a decoder that generates the full
//! (audio, visual) pair from either latent.
//!
//! In [`DecoderMode::Shared`] a single network maps `z` to the concatenated
//! `d_a + d_v` pair. [`DecoderMode::Separate`] is the ablation with one
//! decoder per modality: a latent is always routed through the decoder of
//! the *other* modality, so an audio latent generates visual features and
//! vice versa.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{self, mlp_forward, mlp_graph, Activation, Gradients, Graph, MlpSpec, ParamTape, Var};

/// Log-variances are clamped to `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Audio => Modality::Visual,
            Modality::Visual => Modality::Audio,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    #[default]
    Shared,
    Separate,
}

impl std::str::FromStr for DecoderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(DecoderMode::Shared),
            "separate" => Ok(DecoderMode::Separate),
            other => Err(Error::Config(format!("unknown decoder mode {other:?}"))),
        }
    }
}

/// Layer sizes of the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Arch {
    /// Default widths: one hidden layer of 64 tanh units everywhere, latent of 8.
    pub fn new(audio_dim: usize, visual_dim: usize) -> Self {
        Arch {
            audio_dim,
            visual_dim,
            latent_dim: 8,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
            activation: Activation::Tanh,
        }
    }

    pub fn with_latent_dim(mut self, latent_dim: usize) -> Self {
        self.latent_dim = latent_dim;
        self
    }

    pub fn with_hidden(mut self, encoder: Vec<usize>, decoder: Vec<usize>) -> Self {
        self.encoder_hidden = encoder;
        self.decoder_hidden = decoder;
        self
    }

    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Audio => self.audio_dim,
            Modality::Visual => self.visual_dim,
        }
    }

    pub fn pair_dim(&self) -> usize {
        self.audio_dim + self.visual_dim
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.audio_dim, self.visual_dim, self.latent_dim];
        if all.iter().chain(&self.encoder_hidden).chain(&self.decoder_hidden).any(|&d| d == 0) {
            return Err(Error::Config(format!("architecture dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    fn chain(&self, input: usize, hidden: &[usize], output: usize) -> MlpSpec {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        MlpSpec::chain(&widths, self.activation)
    }

    pub fn encoder_spec(&self, m: Modality) -> MlpSpec {
        self.chain(self.input_dim(m), &self.encoder_hidden, 2 * self.latent_dim)
    }

    pub fn shared_decoder_spec(&self) -> MlpSpec {
        self.chain(self.latent_dim, &self.decoder_hidden, self.pair_dim())
    }

    /// Separate-mode decoder producing features of modality `target`.
    pub fn modality_decoder_spec(&self, target: Modality) -> MlpSpec {
        self.chain(self.latent_dim, &self.decoder_hidden, self.input_dim(target))
    }
}

/// Diagonal Gaussian posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentGaussian {
    /// Clamps `logvar` into the admissible range.
    pub fn new(mean: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mean.len() != logvar.len() {
            return Err(Error::shape("LatentGaussian logvar", mean.len(), logvar.len()));
        }
        if mean.iter().chain(&logvar).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent posterior parameters".into()));
        }
        let logvar = logvar.into_iter().map(|v| v.clamp(-LOGVAR_BOUND, LOGVAR_BOUND)).collect();
        Ok(LatentGaussian { mean, logvar })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.logvar.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// `z = mean + exp(logvar / 2) * eps`.
pub fn reparameterize(g: &LatentGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != g.dim() {
        return Err(Error::shape("reparameterize noise", g.dim(), eps.len()));
    }
    Ok(g.mean
        .iter()
        .zip(g.std())
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Decoder output. A slot is `None` when the decoder did not produce it
/// (separate mode generates one modality per call).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPair {
    pub audio_hat: Option<Vec<f64>>,
    pub visual_hat: Option<Vec<f64>>,
    pub source: Modality,
}

impl GeneratedPair {
    pub fn slot(&self, m: Modality) -> Option<&[f64]> {
        match m {
            Modality::Audio => self.audio_hat.as_deref(),
            Modality::Visual => self.visual_hat.as_deref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoders {
    Shared(ParamTape),
    Separate { audio: ParamTape, visual: ParamTape },
}

/// All network weights plus the architecture they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub audio_encoder: ParamTape,
    pub visual_encoder: ParamTape,
    pub decoders: Decoders,
}

/// Graph leaves for every parameter of a [`ModelParams`].
pub struct BoundModel {
    audio_encoder: Vec<Var>,
    visual_encoder: Vec<Var>,
    decoders: Vec<Vec<Var>>,
}

impl ModelParams {
    /// Seeded Glorot initialisation.
    pub fn init(arch: Arch, mode: DecoderMode, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut audio_encoder = ParamTape::new();
        arch.encoder_spec(Modality::Audio)
            .init_into(&mut audio_encoder, "audio_encoder", &mut rng)?;
        let mut visual_encoder = ParamTape::new();
        arch.encoder_spec(Modality::Visual)
            .init_into(&mut visual_encoder, "visual_encoder", &mut rng)?;
        let decoders = match mode {
            DecoderMode::Shared => {
                let mut t = ParamTape::new();
                arch.shared_decoder_spec().init_into(&mut t, "decoder", &mut rng)?;
                Decoders::Shared(t)
            }
            DecoderMode::Separate => {
                let mut audio = ParamTape::new();
                arch.modality_decoder_spec(Modality::Audio)
                    .init_into(&mut audio, "audio_decoder", &mut rng)?;
                let mut visual = ParamTape::new();
                arch.modality_decoder_spec(Modality::Visual)
                    .init_into(&mut visual, "visual_decoder", &mut rng)?;
                Decoders::Separate { audio, visual }
            }
        };
        Ok(ModelParams {
            arch,
            audio_encoder,
            visual_encoder,
            decoders,
        })
    }

    pub fn mode(&self) -> DecoderMode {
        match self.decoders {
            Decoders::Shared(_) => DecoderMode::Shared,
            Decoders::Separate { .. } => DecoderMode::Separate,
        }
    }

    pub fn encoder(&self, m: Modality) -> &ParamTape {
        match m {
            Modality::Audio => &self.audio_encoder,
            Modality::Visual => &self.visual_encoder,
        }
    }

    /// Every tape in serialization order: audio encoder, visual encoder, decoder(s).
    pub fn tapes(&self) -> Vec<&ParamTape> {
        let mut v = vec![&self.audio_encoder, &self.visual_encoder];
        match &self.decoders {
            Decoders::Shared(t) => v.push(t),
            Decoders::Separate { audio, visual } => v.extend([audio, visual]),
        }
        v
    }

    pub fn tapes_mut(&mut self) -> Vec<&mut ParamTape> {
        let mut v = vec![&mut self.audio_encoder, &mut self.visual_encoder];
        match &mut self.decoders {
            Decoders::Shared(t) => v.push(t),
            Decoders::Separate { audio, visual } => v.extend([audio, visual]),
        }
        v
    }

    /// Concatenates all tapes into one, keeping names and order.
    pub fn to_tape(&self) -> ParamTape {
        let mut out = ParamTape::new();
        for t in self.tapes() {
            for (i, (name, p)) in t.iter().enumerate() {
                let idx = out.push(name, p.clone()).expect("component prefixes keep names unique");
                out.set_grad(idx, t.grad(i).clone()).expect("same shape");
            }
        }
        out
    }

    /// Inverse of [`ModelParams::to_tape`]: copies values by position into a
    /// model of the same architecture and mode. Names are checked.
    pub fn with_values_from(&self, flat: &ParamTape) -> Result<Self> {
        let mut m = self.clone();
        let mut k = 0;
        for t in m.tapes_mut() {
            for i in 0..t.len() {
                if k >= flat.len() || flat.name(k) != t.name(i) {
                    return Err(Error::Contract(format!(
                        "parameter {} missing or out of order in flat tape",
                        t.name(i)
                    )));
                }
                if flat.param(k).shape() != t.param(i).shape() {
                    return Err(Error::shape(
                        t.name(i).to_string(),
                        format!("{:?}", t.param(i).shape()),
                        format!("{:?}", flat.param(k).shape()),
                    ));
                }
                *t.param_mut(i) = flat.param(k).clone();
                k += 1;
            }
        }
        if k != flat.len() {
            return Err(Error::shape("flat tape length", k, flat.len()));
        }
        Ok(m)
    }

    pub fn num_scalars(&self) -> usize {
        self.tapes().iter().map(|t| t.num_scalars()).sum()
    }

    fn check_input(&self, m: Modality, x: &[f64]) -> Result<()> {
        let want = self.arch.input_dim(m);
        if x.len() != want {
            return Err(Error::shape(format!("{} input", m.as_str()), want, x.len()));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::shape("latent", self.arch.latent_dim, z.len()));
        }
        Ok(())
    }

    pub fn encode(&self, m: Modality, x: &[f64]) -> Result<LatentGaussian> {
        self.check_input(m, x)?;
        let out = mlp_forward(self.encoder(m).params(), x, &self.arch.encoder_spec(m))?;
        let l = self.arch.latent_dim;
        LatentGaussian::new(out[..l].to_vec(), out[l..].to_vec())
    }

    /// Decodes `z`. Shared mode fills both slots and ignores `source`;
    /// separate mode needs the modality `z` came from and fills the other slot.
    pub fn decode(&self, z: &[f64], source: Option<Modality>) -> Result<GeneratedPair> {
        self.check_latent(z)?;
        match &self.decoders {
            Decoders::Shared(t) => {
                let out = mlp_forward(t.params(), z, &self.arch.shared_decoder_spec())?;
                let (a, v) = out.split_at(self.arch.audio_dim);
                Ok(GeneratedPair {
                    audio_hat: Some(a.to_vec()),
                    visual_hat: Some(v.to_vec()),
                    source: source.unwrap_or(Modality::Audio),
                })
            }
            Decoders::Separate { audio, visual } => {
                let source = source.ok_or_else(|| {
                    Error::Contract("separate-decoder decode requires a source modality".into())
                })?;
                let target = source.other();
                let tape = if target == Modality::Audio { audio } else { visual };
                let out = mlp_forward(tape.params(), z, &self.arch.modality_decoder_spec(target))?;
                let mut pair = GeneratedPair {
                    audio_hat: None,
                    visual_hat: None,
                    source,
                };
                match target {
                    Modality::Audio => pair.audio_hat = Some(out),
                    Modality::Visual => pair.visual_hat = Some(out),
                }
                Ok(pair)
            }
        }
    }

    /// Full `d_a + d_v` generation used at inference. Separate mode runs
    /// both modality decoders on `z`.
    pub fn generate_full(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        match &self.decoders {
            Decoders::Shared(t) => mlp_forward(t.params(), z, &self.arch.shared_decoder_spec()),
            Decoders::Separate { audio, visual } => {
                let mut out =
                    mlp_forward(audio.params(), z, &self.arch.modality_decoder_spec(Modality::Audio))?;
                out.extend(mlp_forward(
                    visual.params(),
                    z,
                    &self.arch.modality_decoder_spec(Modality::Visual),
                )?);
                Ok(out)
            }
        }
    }

    /// `decode(reparameterize(encode(x), eps))`, returning the posterior too.
    pub fn generate_pair(
        &self,
        m: Modality,
        x: &[f64],
        eps: &[f64],
    ) -> Result<(GeneratedPair, LatentGaussian)> {
        let q = self.encode(m, x)?;
        let z = reparameterize(&q, eps)?;
        Ok((self.decode(&z, Some(m))?, q))
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let decoders = match &self.decoders {
            Decoders::Shared(t) => vec![ndmath::bind(g, t)],
            Decoders::Separate { audio, visual } => vec![ndmath::bind(g, audio), ndmath::bind(g, visual)],
        };
        BoundModel {
            audio_encoder: ndmath::bind(g, &self.audio_encoder),
            visual_encoder: ndmath::bind(g, &self.visual_encoder),
            decoders,
        }
    }

    /// Records the encoder on a `batch x d_m` input; returns `(mean, logvar)`
    /// nodes with the logvar already clamped.
    pub fn encode_graph(&self, g: &mut Graph, b: &BoundModel, m: Modality, x: Var) -> Result<(Var, Var)> {
        let vars = match m {
            Modality::Audio => &b.audio_encoder,
            Modality::Visual => &b.visual_encoder,
        };
        let width = g.value(x).dims2().1;
        if width != self.arch.input_dim(m) {
            return Err(Error::shape(format!("{} input", m.as_str()), self.arch.input_dim(m), width));
        }
        let out = mlp_graph(g, vars, x, &self.arch.encoder_spec(m))?;
        let l = self.arch.latent_dim;
        let mean = g.slice_cols(out, 0, l)?;
        let raw = g.slice_cols(out, l, 2 * l)?;
        let logvar = g.clamp(raw, -LOGVAR_BOUND, LOGVAR_BOUND);
        Ok((mean, logvar))
    }

    /// Records the decoder for latents from `source`. The output covers the
    /// full pair in shared mode and only `source.other()` in separate mode.
    pub fn decode_graph(&self, g: &mut Graph, b: &BoundModel, z: Var, source: Modality) -> Result<Var> {
        match self.mode() {
            DecoderMode::Shared => mlp_graph(g, &b.decoders[0], z, &self.arch.shared_decoder_spec()),
            DecoderMode::Separate => {
                let target = source.other();
                let idx = if target == Modality::Audio { 0 } else { 1 };
                mlp_graph(g, &b.decoders[idx], z, &self.arch.modality_decoder_spec(target))
            }
        }
    }

    /// Copies adjoints of the bound leaves into each tape's gradient slots.
    pub fn write_grads(&mut self, grads: &Gradients, b: &BoundModel) -> Result<()> {
        ndmath::write_grads(&mut self.audio_encoder, grads, &b.audio_encoder)?;
        ndmath::write_grads(&mut self.visual_encoder, grads, &b.visual_encoder)?;
        match &mut self.decoders {
            Decoders::Shared(t) => ndmath::write_grads(t, grads, &b.decoders[0]),
            Decoders::Separate { audio, visual } => {
                ndmath::write_grads(audio, grads, &b.decoders[0])?;
                ndmath::write_grads(visual, grads, &b.decoders[1])
            }
        }
    }
}

/// Records `mean + exp(logvar / 2) * eps` on the graph.
pub fn reparameterize_graph(g: &mut Graph, mean: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, eps)?;
    g.add(mean, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Tensor;

    fn small_arch() -> Arch {
        Arch::new(3, 5).with_latent_dim(2).with_hidden(vec![4], vec![4])
    }

    fn zero_last_layer(t: &mut ParamTape) {
        let n = t.len();
        for i in [n - 2, n - 1] {
            t.param_mut(i).data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_final_encoder_layer_gives_standard_normal() {
        let mut m = ModelParams::init(small_arch(), DecoderMode::Shared, 1).unwrap();
        zero_last_layer(&mut m.audio_encoder);
        let q = m.encode(Modality::Audio, &[0.4, -2.0, 1.0]).unwrap();
        assert_eq!(q.mean, vec![0.0, 0.0]);
        assert_eq!(q.logvar, vec![0.0, 0.0]);
        assert_eq!(q.std(), vec![1.0, 1.0]);
    }

    #[test]
    fn wrong_input_length_is_shape_error() {
        let m = ModelParams::init(small_arch(), DecoderMode::Shared, 1).unwrap();
        assert!(matches!(m.encode(Modality::Visual, &[1.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(m.decode(&[0.0; 3], None), Err(Error::Shape { .. })));
    }

    #[test]
    fn reparameterize_examples() {
        let g = LatentGaussian::new(vec![1.0], vec![4f64.ln()]).unwrap();
        assert!((reparameterize(&g, &[0.5]).unwrap()[0] - 2.0).abs() < 1e-15);
        let g = LatentGaussian::new(vec![0.3, -0.2], vec![0.7, -1.0]).unwrap();
        assert_eq!(reparameterize(&g, &[0.0, 0.0]).unwrap(), g.mean);
        let std = LatentGaussian::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert_eq!(reparameterize(&std, &[1.5, -0.25]).unwrap(), vec![1.5, -0.25]);
        assert!(reparameterize(&std, &[1.0]).is_err());
    }

    #[test]
    fn logvar_is_clamped() {
        let g = LatentGaussian::new(vec![0.0, 0.0], vec![50.0, -50.0]).unwrap();
        assert_eq!(g.logvar, vec![LOGVAR_BOUND, -LOGVAR_BOUND]);
    }

    #[test]
    fn zero_decoder_generates_zeros() {
        let mut m = ModelParams::init(small_arch(), DecoderMode::Shared, 2).unwrap();
        if let Decoders::Shared(t) = &mut m.decoders {
            zero_last_layer(t);
        }
        let pair = m.decode(&[0.3, 0.9], None).unwrap();
        assert_eq!(pair.audio_hat, Some(vec![0.0; 3]));
        assert_eq!(pair.visual_hat, Some(vec![0.0; 5]));
    }

    #[test]
    fn shared_mode_generates_both_modalities() {
        let m = ModelParams::init(small_arch(), DecoderMode::Shared, 3).unwrap();
        for (mo, x) in [(Modality::Audio, vec![0.1; 3]), (Modality::Visual, vec![0.1; 5])] {
            let (pair, _) = m.generate_pair(mo, &x, &[0.2, -0.1]).unwrap();
            assert_eq!(pair.audio_hat.map(|v| v.len()), Some(3));
            assert_eq!(pair.visual_hat.map(|v| v.len()), Some(5));
        }
    }

    #[test]
    fn separate_mode_generates_counterpart_only() {
        let m = ModelParams::init(small_arch(), DecoderMode::Separate, 3).unwrap();
        let (pair, _) = m.generate_pair(Modality::Audio, &[0.1; 3], &[0.0, 0.0]).unwrap();
        assert!(pair.audio_hat.is_none());
        assert_eq!(pair.visual_hat.map(|v| v.len()), Some(5));
        assert!(matches!(m.decode(&[0.0, 0.0], None), Err(Error::Contract(_))));
        assert_eq!(m.generate_full(&[0.0, 0.0]).unwrap().len(), 8);
    }

    #[test]
    fn zero_noise_path_is_deterministic() {
        let m = ModelParams::init(small_arch(), DecoderMode::Shared, 4).unwrap();
        let a = m.generate_pair(Modality::Visual, &[0.5; 5], &[0.0; 2]).unwrap();
        let b = m.generate_pair(Modality::Visual, &[0.5; 5], &[0.0; 2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn graph_path_agrees_with_direct_path() {
        for mode in [DecoderMode::Shared, DecoderMode::Separate] {
            let m = ModelParams::init(small_arch(), mode, 5).unwrap();
            let x = [0.3, -0.8, 1.1];
            let eps = [0.4, -1.3];
            let (pair, q) = m.generate_pair(Modality::Audio, &x, &eps).unwrap();
            let mut g = Graph::new();
            let b = m.bind(&mut g);
            let xv = g.leaf(Tensor::vector(x.to_vec()));
            let ev = g.leaf(Tensor::vector(eps.to_vec()));
            let (mu, lv) = m.encode_graph(&mut g, &b, Modality::Audio, xv).unwrap();
            let z = reparameterize_graph(&mut g, mu, lv, ev).unwrap();
            let out = m.decode_graph(&mut g, &b, z, Modality::Audio).unwrap();
            assert_eq!(g.value(mu).data(), q.mean.as_slice());
            let expect: Vec<f64> = pair.audio_hat.into_iter().chain(pair.visual_hat).flatten().collect();
            for (a, e) in g.value(out).data().iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_tape_round_trip() {
        let m = ModelParams::init(small_arch(), DecoderMode::Separate, 6).unwrap();
        let flat = m.to_tape();
        assert_eq!(flat.num_scalars(), m.num_scalars());
        assert_eq!(m.with_values_from(&flat).unwrap(), m);
        let other = ModelParams::init(small_arch(), DecoderMode::Shared, 6).unwrap();
        assert!(other.with_values_from(&flat).is_err());
    }
}
