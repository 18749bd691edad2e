//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                        |
//! |------------------|------------------------------------------------|
//! | 8                | magic `REFAUGCK`                               |
//! | 4                | format version (u32), currently 1              |
//! | 8                | header length `n` (u64)                        |
//! | n                | JSON header                                    |
//! | 4 per value      | f32 values of every section, in header order   |
//! | 32               | SHA-256 of everything above                    |
//!
//! The header holds the model spec, the data source, and for a resumable
//! checkpoint the stage config, optimizer settings, epoch records and best
//! epoch. Sections are `model` (parameters then batch-norm running stats),
//! and for a resumable checkpoint `velocity` and `best_model`. The RNG needs
//! no state: every stream is derived from the seed and the epoch number.

use std::fs;
use std::path::Path;

use refaug_core::metrics::EpochRecord;
use refaug_core::nn::{Model, ModelSpec, OptimState};
use refaug_core::train::{BestModel, StageConfig, TrainerState};
use refaug_core::RngStream;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DataSource;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"REFAUGCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestInfo {
    pub epoch: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub spec: ModelSpec,
    pub data: DataSource,
    /// Last completed epoch of the run the model comes from.
    pub epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<StageConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimSettings>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<EpochRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestInfo>,
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: Header,
    pub model: Model<f32>,
    pub velocity: Option<Vec<Vec<f32>>>,
    pub best_model: Option<Model<f32>>,
}

fn section(name: &str, tensors: &[Vec<f32>]) -> Section {
    Section {
        name: name.into(),
        lengths: tensors.iter().map(Vec::len).collect(),
    }
}

fn model_values(model: &Model<f32>) -> Vec<Vec<f32>> {
    model.state().iter().map(|t| t.values().to_vec()).collect()
}

fn encode(header: &Header, sections: &[Vec<Vec<f32>>]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in sections.iter().flatten().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes via a temporary file in the same directory, so a failed write
/// never leaves a truncated checkpoint behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| CliError::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| CliError::io(path, e))
}

/// Model-only checkpoint, for evaluation.
pub fn save_model(
    path: &Path,
    model: &Model<f32>,
    data: &DataSource,
    epoch: Option<usize>,
) -> CliResult<()> {
    let values = model_values(model);
    let header = Header {
        spec: model.spec().clone(),
        data: data.clone(),
        epoch,
        config: None,
        optim: None,
        records: Vec::new(),
        best: None,
        sections: vec![section("model", &values)],
    };
    write_atomic(path, &encode(&header, &[values]))
}

/// Everything needed to resume the run bit-exactly.
pub fn save_trainer(path: &Path, state: &TrainerState, data: &DataSource) -> CliResult<()> {
    let model = model_values(&state.model);
    let velocity: Vec<Vec<f32>> = state
        .optim
        .velocity
        .iter()
        .map(|t| t.values().to_vec())
        .collect();
    let mut sections = vec![model, velocity];
    let mut names = vec!["model", "velocity"];
    if let Some(b) = &state.best {
        sections.push(model_values(&b.model));
        names.push("best_model");
    }
    let header = Header {
        spec: state.model.spec().clone(),
        data: data.clone(),
        epoch: state.records.len().checked_sub(1),
        config: Some(state.config.clone()),
        optim: Some(OptimSettings {
            learning_rate: state.optim.learning_rate,
            momentum: state.optim.momentum,
            weight_decay: state.optim.weight_decay,
        }),
        records: state.records.clone(),
        best: state.best.as_ref().map(|b| BestInfo {
            epoch: b.epoch,
            accuracy: b.accuracy,
        }),
        sections: names
            .iter()
            .zip(&sections)
            .map(|(n, s)| section(n, s))
            .collect(),
    };
    write_atomic(path, &encode(&header, &sections))
}

fn corrupt(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Checkpoint(format!("{}: {msg}", path.display()))
}

pub fn load(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| corrupt(path, e))?;
    decode(&bytes).map_err(|m| corrupt(path, m))
}

fn model_from(spec: &ModelSpec, values: &[Vec<f32>]) -> Result<Model<f32>, String> {
    let mut m = Model::new(spec.clone(), &RngStream::new(0)).map_err(|e| e.to_string())?;
    m.load_state(values).map_err(|e| e.to_string())?;
    Ok(m)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    if bytes.len() < 20 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch (file is corrupted or truncated)".into());
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body
        .get(20..20usize.saturating_add(hlen))
        .ok_or("header runs past end of file")?;
    let header: Header = serde_json::from_slice(json).map_err(|e| format!("bad header: {e}"))?;
    let mut payload = &body[20 + hlen..];
    let mut sections = Vec::new();
    for s in &header.sections {
        let mut tensors = Vec::with_capacity(s.lengths.len());
        for &n in &s.lengths {
            let need = n.checked_mul(4).ok_or("section too large")?;
            if payload.len() < need {
                return Err(format!("section `{}` runs past end of file", s.name));
            }
            let (head, rest) = payload.split_at(need);
            tensors.push(
                head.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            payload = rest;
        }
        sections.push((s.name.as_str(), tensors));
    }
    if !payload.is_empty() {
        return Err(format!("{} trailing payload bytes", payload.len()));
    }
    let mut take = |name: &str| {
        sections
            .iter()
            .position(|(n, _)| *n == name)
            .map(|i| sections.remove(i).1)
    };
    let model = model_from(
        &header.spec,
        &take("model").ok_or("missing `model` section")?,
    )?;
    let velocity = take("velocity");
    let best_model = take("best_model")
        .map(|v| model_from(&header.spec, &v))
        .transpose()?;
    if let Some((name, _)) = sections.first() {
        return Err(format!("unknown section `{name}`"));
    }
    Ok(Checkpoint {
        header,
        model,
        velocity,
        best_model,
    })
}

impl Checkpoint {
    /// Rebuilds the trainer state of a resumable checkpoint.
    pub fn trainer_state(&self) -> CliResult<TrainerState> {
        let missing = |what: &str| CliError::Checkpoint(format!("not resumable: no {what}"));
        let config = self
            .header
            .config
            .clone()
            .ok_or_else(|| missing("stage config"))?;
        let o = self
            .header
            .optim
            .as_ref()
            .ok_or_else(|| missing("optimizer settings"))?;
        let velocity = self.velocity.as_ref().ok_or_else(|| missing("velocity"))?;
        let mut optim = OptimState::new(&self.model, o.learning_rate, o.momentum, o.weight_decay);
        if optim.velocity.len() != velocity.len() {
            return Err(CliError::Checkpoint(
                "velocity does not match the model".into(),
            ));
        }
        for (t, v) in optim.velocity.iter_mut().zip(velocity) {
            if t.len() != v.len() {
                return Err(CliError::Checkpoint(
                    "velocity does not match the model".into(),
                ));
            }
            t.values_mut().copy_from_slice(v);
        }
        let best = match (&self.header.best, &self.best_model) {
            (Some(info), Some(model)) => Some(BestModel {
                epoch: info.epoch,
                accuracy: info.accuracy,
                model: model.clone(),
            }),
            (None, None) => None,
            _ => {
                return Err(CliError::Checkpoint(
                    "best-model info and tensors disagree".into(),
                ))
            }
        };
        Ok(TrainerState {
            config,
            model: self.model.clone(),
            optim,
            records: self.header.records.clone(),
            best,
        })
    }
}
