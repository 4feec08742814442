//! The `msvae` command-line tool.
//!
//! Settings resolve as flags over an optional JSON config file over
//! defaults. The resolved [`RunConfig`] is written into every artifact.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::losses::LatentDistance;
use crate::model::DecoderMode;
use crate::synthdata::{self, Dataset, Split, SynthConfig};
use crate::tasks::{self, Direction, ExportOptions, InferenceOptions, QueryLen, RetrievalMode, TaskReport};
use crate::trainer::{self, TrainConfig, TrainLogEntry};

/// Per-epoch log written next to the checkpoint files.
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(name = "msvae", version, about = "Audio-visual VAE with a shared decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
    /// Train a model on the train split.
    Train(TrainArgs),
    /// Localization or retrieval on a split (test by default).
    Eval(EvalArgs),
    /// Write posterior means and their PCA projection as CSV.
    ExportLatents(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub categories: Option<usize>,
    #[arg(long)]
    pub num_videos: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// JSON file with a `synth` section.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long, value_parser = parse_decoder_mode)]
    pub decoder_mode: Option<DecoderMode>,
    #[arg(long)]
    pub no_wasserstein: bool,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda2_late: Option<f64>,
    #[arg(long)]
    pub switch_epoch: Option<usize>,
    /// Train on labeled event segments only. This reads the boundary labels.
    #[arg(long)]
    pub event_only: bool,
    /// JSON file with a `train` section.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = ["cml", "retrieval"])]
    pub task: String,
    /// Localization direction: a2v or v2a.
    #[arg(long, value_parser = parse_direction)]
    pub direction: Option<Direction>,
    /// Retrieval mode: a-a, a-v, v-a or v-v.
    #[arg(long, value_parser = parse_retrieval_mode)]
    pub mode: Option<RetrievalMode>,
    /// `event` or `fixed:N`.
    #[arg(long, value_parser = parse_query_len)]
    pub query_len: Option<QueryLen>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Ignore posterior variances when comparing latents.
    #[arg(long)]
    pub mean_only: bool,
    /// Seeds the choice of retrieval segments.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; the per-query CSV goes beside it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub include_background: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn parse_decoder_mode(s: &str) -> Result<DecoderMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_retrieval_mode(s: &str) -> Result<RetrievalMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_query_len(s: &str) -> Result<QueryLen, String> {
    s.parse().map_err(|e: Error| e.to_string())
}
fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Training settings plus the choice of training segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct TrainSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    pub event_only: bool,
}


#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskOptions {
    pub task: String,
    pub direction: Direction,
    pub mode: RetrievalMode,
    pub query_len: QueryLen,
    pub split: Split,
    pub latent_distance: LatentDistance,
    pub include_background: bool,
    pub seed: u64,
}

impl Default for TaskOptions {
    fn default() -> Self {
        TaskOptions {
            task: String::new(),
            direction: Direction::A2V,
            mode: RetrievalMode::AV,
            query_len: QueryLen::Event,
            split: Split::Test,
            latent_distance: LatentDistance::ClosedFormW2,
            include_background: false,
            seed: 0,
        }
    }
}

/// Optional config file contents. Every section is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub synth: Option<SynthConfig>,
    pub train: Option<TrainSection>,
    pub task: Option<TaskOptions>,
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl RunConfig {
    fn new(command: &str, out: &Path) -> Self {
        RunConfig {
            command: command.into(),
            version: crate::VERSION.into(),
            synth: None,
            train: None,
            task: None,
            data: None,
            checkpoint: None,
            out: out.to_path_buf(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

fn load_config_file(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => binio::read_json(p).map_err(|e| match e {
            Error::Format { path, reason } => Error::Config(format!("{}: {reason}", path.display())),
            other => other,
        }),
    }
}

pub fn resolve_synth(args: &SynthArgs) -> Result<RunConfig> {
    let mut synth = load_config_file(args.config.as_deref())?.synth.unwrap_or_default();
    if let Some(s) = args.seed {
        synth.seed = s;
    }
    if let Some(k) = args.categories {
        synth.num_categories = k;
    }
    if let Some(n) = args.num_videos {
        synth.num_videos = n;
    }
    if let Some(v) = args.noise_std {
        synth.noise_std = v;
    }
    synth.validate()?;
    let mut rc = RunConfig::new("synth", &args.out);
    rc.synth = Some(synth);
    Ok(rc)
}

pub fn resolve_train(args: &TrainArgs) -> Result<RunConfig> {
    let mut section = load_config_file(args.config.as_deref())?.train.unwrap_or_default();
    let c = &mut section.config;
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = args.lr {
        c.learning_rate = v;
    }
    if let Some(v) = args.latent_dim {
        c.latent_dim = v;
    }
    if let Some(v) = args.decoder_mode {
        c.decoder_mode = v;
    }
    if args.no_wasserstein {
        c.wasserstein_enabled = false;
    }
    if let Some(v) = args.lambda2 {
        c.weights.lambda2 = v;
    }
    if let Some(v) = args.lambda2_late {
        c.weights.lambda2_late = v;
    }
    if let Some(v) = args.switch_epoch {
        c.weights.switch_epoch = v;
    }
    if args.event_only {
        section.event_only = true;
    }
    section.config.validate()?;
    let mut rc = RunConfig::new("train", &args.out);
    rc.train = Some(section);
    rc.data = Some(args.data.clone());
    Ok(rc)
}

pub fn resolve_eval(args: &EvalArgs) -> Result<RunConfig> {
    let mut t = load_config_file(args.config.as_deref())?.task.unwrap_or_default();
    t.task = args.task.clone();
    if let Some(v) = args.direction {
        t.direction = v;
    }
    if let Some(v) = args.mode {
        t.mode = v;
    }
    if let Some(v) = args.query_len {
        t.query_len = v;
    }
    if let Some(v) = args.split {
        t.split = v;
    }
    if args.mean_only {
        t.latent_distance = LatentDistance::MeanOnly;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    let mut rc = RunConfig::new("eval", &args.out);
    rc.task = Some(t);
    rc.data = Some(args.data.clone());
    rc.checkpoint = Some(args.checkpoint.clone());
    Ok(rc)
}

pub fn resolve_export(args: &ExportArgs) -> Result<RunConfig> {
    let mut t = load_config_file(args.config.as_deref())?.task.unwrap_or_default();
    t.task = "export-latents".into();
    if let Some(v) = args.split {
        t.split = v;
    }
    if args.include_background {
        t.include_background = true;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    let mut rc = RunConfig::new("export-latents", &args.out);
    rc.task = Some(t);
    rc.data = Some(args.data.clone());
    rc.checkpoint = Some(args.checkpoint.clone());
    Ok(rc)
}

pub fn cmd_synth(rc: &RunConfig) -> Result<serde_json::Value> {
    let synth = rc.synth.as_ref().ok_or_else(|| Error::Contract("synth settings missing".into()))?;
    let mut ds = synthdata::generate_dataset(synth)?;
    ds.manifest.metadata = rc.to_json();
    synthdata::save_dataset(&ds, &rc.out)?;
    let m = &ds.manifest;
    Ok(serde_json::json!({
        "out": rc.out,
        "num_videos": m.num_videos,
        "K": m.num_categories,
        "T": m.segments_per_video,
        "d_a": m.audio_dim,
        "d_v": m.visual_dim,
        "train": m.splits.train.len(),
        "test": m.splits.test.len(),
        "seed": m.seed,
    }))
}

fn log_line(e: &TrainLogEntry) -> String {
    // no wall-clock time here, so repeated runs write identical logs
    serde_json::json!({
        "epoch": e.epoch,
        "mse": e.loss.mse,
        "kl": e.loss.kl,
        "w_latent": e.loss.w_latent,
        "total": e.loss.total,
    })
    .to_string()
}

/// Trains on the train split and writes the checkpoint plus its log.
/// Returns the per-epoch entries.
pub fn cmd_train(rc: &RunConfig) -> Result<Vec<TrainLogEntry>> {
    let section = rc.train.as_ref().ok_or_else(|| Error::Contract("train settings missing".into()))?;
    let data = rc.data.as_ref().ok_or_else(|| Error::Contract("dataset path missing".into()))?;
    let ds = synthdata::load_dataset(data)?;
    let pairs = ds.segment_pairs(Split::Train, !section.event_only);
    let outcome = trainer::train_with_observer(&pairs, &section.config, |e| {
        eprintln!(
            "epoch {:>3}  total {:.6}  mse {:.6}  kl {:.6}  w {:.6}  ({:.2}s)",
            e.epoch + 1,
            e.loss.total,
            e.loss.mse,
            e.loss.kl,
            e.loss.w_latent,
            e.seconds
        );
    })?;
    trainer::save_checkpoint(&outcome.params, &rc.out, section.config.seed, rc.to_json())?;
    let mut log = String::new();
    for e in &outcome.log {
        log.push_str(&log_line(e));
        log.push('\n');
    }
    let log_path = rc.out.join(TRAIN_LOG_FILE);
    std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
    Ok(outcome.log)
}

fn load_model_for(rc: &RunConfig) -> Result<(Dataset, crate::model::ModelParams)> {
    let data = rc.data.as_ref().ok_or_else(|| Error::Contract("dataset path missing".into()))?;
    let ckpt = rc.checkpoint.as_ref().ok_or_else(|| Error::Contract("checkpoint path missing".into()))?;
    let ds = synthdata::load_dataset(data)?;
    let model = trainer::load_checkpoint(ckpt)?;
    let (da, dv) = (ds.manifest.audio_dim, ds.manifest.visual_dim);
    if model.arch.audio_dim != da || model.arch.visual_dim != dv {
        return Err(Error::shape(
            format!("checkpoint {} against dataset {}", ckpt.display(), data.display()),
            format!("(d_a, d_v) = ({da}, {dv})"),
            format!("({}, {})", model.arch.audio_dim, model.arch.visual_dim),
        ));
    }
    Ok((ds, model))
}

fn indexed_split(ds: &Dataset, split: Split) -> Vec<(usize, &synthdata::VideoSequence)> {
    ds.manifest.splits.get(split).iter().map(|&i| (i, &ds.videos[i])).collect()
}

/// Sidecar CSV path for a report: same stem, `.csv` extension.
pub fn records_path(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

/// Runs the task and writes the report JSON plus per-query CSV.
pub fn cmd_eval(rc: &RunConfig) -> Result<TaskReport> {
    let t = rc.task.as_ref().ok_or_else(|| Error::Contract("task settings missing".into()))?;
    let (ds, model) = load_model_for(rc)?;
    let videos = indexed_split(&ds, t.split);
    let opts = InferenceOptions {
        latent_distance: t.latent_distance,
    };
    let mut report = match t.task.as_str() {
        "cml" => tasks::evaluate_cml(&model, &videos, t.direction, t.query_len, opts)?,
        "retrieval" => {
            let db = tasks::build_retrieval_database(&videos, t.seed);
            tasks::evaluate_retrieval(&model, &db, t.mode, opts)?
        }
        other => return Err(Error::Config(format!("unknown task {other:?}"))),
    };
    report.config = rc.to_json();
    binio::write_json(&rc.out, &report.to_json())?;
    let csv_path = records_path(&rc.out);
    std::fs::write(&csv_path, report.records_csv()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}

/// Sidecar carrying the run configuration of a CSV export.
pub fn export_meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    csv.with_file_name(name)
}

pub fn cmd_export(rc: &RunConfig) -> Result<usize> {
    let t = rc.task.as_ref().ok_or_else(|| Error::Contract("task settings missing".into()))?;
    let (ds, model) = load_model_for(rc)?;
    let videos = indexed_split(&ds, t.split);
    let rows = tasks::export_latents(
        &model,
        &videos,
        &rc.out,
        ExportOptions {
            include_background: t.include_background,
            pca_seed: t.seed,
        },
    )?;
    binio::write_json(&export_meta_path(&rc.out), &rc.to_json())?;
    Ok(rows)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let summary = cmd_synth(&resolve_synth(&a)?)?;
            print_json(&summary);
        }
        Command::Train(a) => {
            let rc = resolve_train(&a)?;
            let log = cmd_train(&rc)?;
            let last = log.last().map(|e| e.loss);
            print_json(&serde_json::json!({ "checkpoint": rc.out, "epochs": log.len(), "final": last }));
        }
        Command::Eval(a) => {
            let report = cmd_eval(&resolve_eval(&a)?)?;
            print_json(&report.to_json());
        }
        Command::ExportLatents(a) => {
            let rc = resolve_export(&a)?;
            let rows = cmd_export(&rc)?;
            print_json(&serde_json::json!({ "out": rc.out, "rows": rows }));
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage, 2 data or format, 3 numeric abort.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
