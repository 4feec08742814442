//! Checkpoint directory: `model.json` header plus `params.f32` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::model::{Arch, DecoderMode, ModelParams};
use crate::ndmath::Tensor;

pub const HEADER_FILE: &str = "model.json";
pub const PARAMS_FILE: &str = "params.f32";
const FORMAT_NAME: &str = "msvae-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Parsed `model.json`. Unknown fields are ignored when reading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    /// Kept as a string so an unknown mode surfaces as a format error with a path.
    pub decoder_mode: String,
    pub manifest: Vec<ManifestEntry>,
    pub seed: u64,
    #[serde(default)]
    pub training: serde_json::Value,
}

impl CheckpointHeader {
    pub fn mode(&self, path: &Path) -> Result<DecoderMode> {
        self.decoder_mode
            .parse()
            .map_err(|_| Error::format(path, format!("unknown decoder_mode {:?}", self.decoder_mode)))
    }
}

/// Writes `dir/model.json` and `dir/params.f32`. `training` is stored verbatim.
pub fn save_checkpoint(params: &ModelParams, dir: &Path, seed: u64, training: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let flat = params.to_tape();
    let header = CheckpointHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        arch: params.arch.clone(),
        decoder_mode: match params.mode() {
            DecoderMode::Shared => "shared".into(),
            DecoderMode::Separate => "separate".into(),
        },
        manifest: flat
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        seed,
        training,
    };
    binio::write_json(&dir.join(HEADER_FILE), &header)?;
    binio::write_f32(
        &dir.join(PARAMS_FILE),
        flat.params().iter().flat_map(|t| t.data().iter().copied()),
    )
}

pub fn load_header(dir: &Path) -> Result<CheckpointHeader> {
    let path = dir.join(HEADER_FILE);
    let header: CheckpointHeader = binio::read_json(&path)?;
    if header.format != FORMAT_NAME {
        return Err(Error::format(&path, format!("not a checkpoint (format {:?})", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported version {}", header.version)));
    }
    Ok(header)
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelParams> {
    let header_path = dir.join(HEADER_FILE);
    let header = load_header(dir)?;
    let mode = header.mode(&header_path)?;
    header.arch.validate().map_err(|e| Error::format(&header_path, e.to_string()))?;
    let template = ModelParams::init(header.arch.clone(), mode, 0)?;
    let mut flat = template.to_tape();

    if header.manifest.len() != flat.len() {
        return Err(Error::format(
            &header_path,
            format!("manifest lists {} tensors, architecture needs {}", header.manifest.len(), flat.len()),
        ));
    }
    for (i, e) in header.manifest.iter().enumerate() {
        if e.name != flat.name(i) || e.shape != flat.param(i).shape() {
            return Err(Error::format(
                &header_path,
                format!("manifest entry {i} ({} {:?}) does not match architecture", e.name, e.shape),
            ));
        }
    }

    let params_path = dir.join(PARAMS_FILE);
    let values = binio::read_f32(&params_path)?;
    let expected: usize = header.manifest.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if values.len() != expected {
        return Err(Error::corrupt(
            &params_path,
            format!("manifest needs {expected} values, file holds {}", values.len()),
        ));
    }
    let mut offset = 0;
    for i in 0..flat.len() {
        let shape = flat.param(i).shape().to_vec();
        let n = flat.param(i).len();
        *flat.param_mut(i) = Tensor::new(shape, values[offset..offset + n].to_vec())?;
        offset += n;
    }
    template.with_values_from(&flat)
}
