//! Run configuration files.
//!
//! A run config is one TOML file with a few top-level keys and three tables:
//!
//! ```toml
//! seeds = [1, 2, 3, 4, 5]
//! out_dir = "runs/desk-mixup"      # optional, relative to the working directory
//! record_wall_time = false         # true fills wall_seconds (breaks byte-identical reruns)
//!
//! [data]
//! source = "synthetic"             # or "cifar"
//! num_classes = 4
//! per_class_train = 500
//! per_class_test = 250
//! height = 16
//! width = 16
//! # seed = 7                       # data seed; defaults to the run seed
//!
//! [model]
//! architecture = "small_convnet"   # or "mlp" with `hidden = [...]`
//! channels = [8, 16]
//! normalization = "dataset"        # per-channel train-set mean/std, or "none"
//! # eligible_mix_layers = [0, 1]
//! # drop_rate = 0.0
//!
//! [stage]
//! augment_epochs = 40
//! refine_epochs = 10
//! batch_size = 64
//! eval_every = 1
//! momentum = 0.9
//! weight_decay = 1e-4
//! refine_lr = { rule = "continue_final" }   # or { rule = "fixed", lr = 0.001 }
//! refine_mode = { mode = "clean" }          # or { mode = "gradual", decay = "linear" }
//! schedule = { kind = "step", lr0 = 0.1, milestones = [25], factor = 0.1 }
//!
//! [stage.stage1]
//! moderate = [{ op = "pad_crop", padding = 2 }, { op = "hflip", probability = 0.5 }]
//! intensive = { kind = "mixup", gamma = 1.0 }
//!
//! [stage.stage2]
//! moderate = [{ op = "pad_crop", padding = 2 }, { op = "hflip", probability = 0.5 }]
//! ```
//!
//! CIFAR data reads `train` and `test` lists of binary files under `root`.
//! The root comes from `--data-root`, else `DATA_ROOT`, else `root` in the
//! file; relative paths in the file resolve against the file's directory.
//!
//! Intensive kinds: `none`, `mixup {gamma}`, `manifold_mixup {gamma,
//! eligible_layers}`, `cut_mix {apply_probability}` and `policy_aug {policy,
//! magnitudes, cutout_size, apply_probability}` where `policy` is a policy
//! file path or `"builtin"` and `magnitudes` an optional table path.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use refaug_core::augment::{AugPipeline, Intensive, MagnitudeTable, ModerateOp, Policy};
use refaug_core::data::{generate_synthetic, Dataset, SyntheticSpec};
use refaug_core::nn::ModelSpec;
use refaug_core::train::{LrSchedule, RefineLr, RefineMode, StageConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, CliResult};
use crate::io::load_cifar_files;
use crate::policy_file::{load_magnitudes, load_policy};

pub const DATA_ROOT_ENV: &str = "DATA_ROOT";

fn yes() -> f64 {
    1.0
}

fn one() -> usize {
    1
}

fn momentum() -> f64 {
    0.9
}

fn weight_decay() -> f64 {
    1e-4
}

fn ten() -> usize {
    10
}

fn continue_final() -> RefineLr {
    RefineLr::ContinueFinal
}

/// The file as written (after overrides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub record_wall_time: bool,
    pub data: DataFile,
    pub model: ModelFile,
    pub stage: StageFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataFile {
    Synthetic {
        num_classes: usize,
        per_class_train: usize,
        per_class_test: usize,
        height: usize,
        width: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Cifar {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        root: Option<PathBuf>,
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        #[serde(default = "ten")]
        num_classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    SmallConvnet,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Dataset,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub architecture: ArchName,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eligible_mix_layers: Option<Vec<usize>>,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    pub augment_epochs: usize,
    pub refine_epochs: usize,
    pub batch_size: usize,
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default = "momentum")]
    pub momentum: f64,
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "continue_final")]
    pub refine_lr: RefineLr,
    #[serde(default)]
    pub refine_mode: RefineMode,
    pub schedule: LrSchedule,
    pub stage1: PipelineFile,
    pub stage2: PipelineFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    #[serde(default)]
    pub moderate: Vec<ModerateOp>,
    #[serde(default)]
    pub intensive: IntensiveFile,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IntensiveFile {
    #[default]
    None,
    Mixup {
        gamma: f64,
    },
    ManifoldMixup {
        gamma: f64,
        eligible_layers: Vec<usize>,
    },
    CutMix {
        #[serde(default = "yes")]
        apply_probability: f64,
    },
    PolicyAug {
        /// Policy file path, or `builtin`.
        policy: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        magnitudes: Option<PathBuf>,
        cutout_size: usize,
        #[serde(default = "yes")]
        apply_probability: f64,
    },
}

/// Dataset of one run, with everything resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        num_classes: usize,
        per_class_train: usize,
        per_class_test: usize,
        height: usize,
        width: usize,
        seed: u64,
    },
    Cifar {
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
        num_classes: usize,
    },
}

impl DataSource {
    pub fn load(&self) -> CliResult<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic {
                num_classes,
                per_class_train,
                per_class_test,
                height,
                width,
                seed,
            } => {
                let spec = SyntheticSpec {
                    num_classes: *num_classes,
                    per_class_train: *per_class_train,
                    per_class_test: *per_class_test,
                    height: *height,
                    width: *width,
                };
                Ok(generate_synthetic(&spec, *seed)?)
            }
            DataSource::Cifar {
                train,
                test,
                num_classes,
            } => Ok((
                load_cifar_files(train, *num_classes, "train")?,
                load_cifar_files(test, *num_classes, "test")?,
            )),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DataSource::Synthetic { num_classes, .. } | DataSource::Cifar { num_classes, .. } => {
                *num_classes
            }
        }
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            DataSource::Synthetic { height, width, .. } => (3, *height, *width),
            DataSource::Cifar { .. } => (3, 32, 32),
        }
    }
}

/// A validated config: the normalized file plus everything derived from it.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Paths in here are absolute and overrides are applied.
    pub file: ConfigFile,
    stage1: AugPipeline,
    stage2: AugPipeline,
}

/// Parses `key.path=value`. The value is read as a TOML value when it is
/// one, else as a bare string.
pub fn parse_override(spec: &str) -> CliResult<(Vec<String>, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Input(format!("override `{spec}` is not key=value")))?;
    let key: Vec<String> = key
        .trim()
        .split('.')
        .map(|s| s.trim().to_string())
        .collect();
    if key.iter().any(String::is_empty) {
        return Err(CliError::Input(format!(
            "override `{spec}` has an empty key segment"
        )));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

pub fn apply_override(table: &mut Table, key: &[String], value: Value) -> CliResult<()> {
    let (last, parents) = key.split_last().expect("override key is non-empty");
    let mut cur = table;
    for (i, k) in parents.iter().enumerate() {
        let entry = cur
            .entry(k.clone())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Input(format!(
                "override {}: `{}` is not a table",
                key.join("."),
                parents[..=i].join(".")
            ))
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn must_exist(p: &Path, what: &str) -> CliResult<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{what} {} does not exist",
            p.display()
        )))
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String], data_root: Option<&Path>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = absolute(path.parent().unwrap_or(Path::new(".")));
        RunConfig::parse(
            &text,
            &path.display().to_string(),
            &base,
            overrides,
            data_root,
        )
    }

    /// `origin` names the text in diagnostics; `base` anchors relative paths.
    pub fn parse(
        text: &str,
        origin: &str,
        base: &Path,
        overrides: &[String],
        data_root: Option<&Path>,
    ) -> CliResult<Self> {
        let diag = |e: toml::de::Error| CliError::Input(format!("{origin}: {e}"));
        let file: ConfigFile = if overrides.is_empty() {
            toml::from_str(text).map_err(diag)?
        } else {
            let mut table: Table = text.parse().map_err(diag)?;
            for o in overrides {
                let (key, value) = parse_override(o)?;
                apply_override(&mut table, &key, value)?;
            }
            ConfigFile::deserialize(table)
                .map_err(|e| CliError::Input(format!("{origin} (with overrides): {e}")))?
        };
        RunConfig::from_file(file, base, data_root)
    }

    pub fn from_file(
        mut file: ConfigFile,
        base: &Path,
        data_root: Option<&Path>,
    ) -> CliResult<Self> {
        let bad = |m: String| Err(CliError::Input(m));
        if file.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if file.seeds.iter().collect::<BTreeSet<_>>().len() != file.seeds.len() {
            return bad("seeds: duplicate seed".into());
        }
        if let DataFile::Cifar {
            root, train, test, ..
        } = &mut file.data
        {
            let env_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
            let dir = match (data_root, env_root, root.as_ref()) {
                (Some(r), _, _) => absolute(r),
                (None, Some(r), _) => absolute(&r),
                (None, None, Some(r)) => resolve(base, r),
                (None, None, None) => base.to_path_buf(),
            };
            if train.is_empty() || test.is_empty() {
                return bad("data: cifar needs at least one train and one test file".into());
            }
            for p in train.iter_mut().chain(test.iter_mut()) {
                *p = resolve(&dir, p);
                must_exist(p, "data file")?;
            }
            *root = None;
        }
        let stage1 = pipeline(&mut file.stage.stage1, base, "stage.stage1")?;
        let stage2 = pipeline(&mut file.stage.stage2, base, "stage.stage2")?;
        let config = RunConfig {
            file,
            stage1,
            stage2,
        };
        let probe_seed = config.file.seeds[0];
        config
            .stage_config(probe_seed)
            .validate()
            .map_err(|e| CliError::Input(format!("stage: {e}")))?;
        let spec = config.unnormalized_spec(&config.data_source(probe_seed));
        spec.validate()
            .map_err(|e| CliError::Input(format!("model: {e}")))?;
        if let Intensive::ManifoldMixup {
            eligible_layers, ..
        } = &config.stage1.intensive
        {
            if let Some(l) = eligible_layers
                .iter()
                .find(|l| !spec.eligible_mix_layers.contains(l))
            {
                return bad(format!(
                    "stage.stage1.intensive.eligible_layers: layer {l} is not in model.eligible_mix_layers"
                ));
            }
        }
        Ok(config)
    }

    pub fn seeds(&self) -> &[u64] {
        &self.file.seeds
    }

    pub fn stage_config(&self, seed: u64) -> StageConfig {
        let s = &self.file.stage;
        StageConfig {
            augment_epochs: s.augment_epochs,
            refine_epochs: s.refine_epochs,
            stage1_pipeline: self.stage1.clone(),
            stage2_pipeline: self.stage2.clone(),
            stage1_schedule: s.schedule.clone(),
            refine_lr: s.refine_lr.clone(),
            refine_mode: s.refine_mode,
            batch_size: s.batch_size,
            seed,
            eval_every: s.eval_every,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
        }
    }

    pub fn data_source(&self, seed: u64) -> DataSource {
        match &self.file.data {
            DataFile::Synthetic {
                num_classes,
                per_class_train,
                per_class_test,
                height,
                width,
                seed: data_seed,
            } => DataSource::Synthetic {
                num_classes: *num_classes,
                per_class_train: *per_class_train,
                per_class_test: *per_class_test,
                height: *height,
                width: *width,
                seed: data_seed.unwrap_or(seed),
            },
            DataFile::Cifar {
                train,
                test,
                num_classes,
                ..
            } => DataSource::Cifar {
                train: train.clone(),
                test: test.clone(),
                num_classes: *num_classes,
            },
        }
    }

    fn unnormalized_spec(&self, data: &DataSource) -> ModelSpec {
        let m = &self.file.model;
        let (classes, shape) = (data.num_classes(), data.input_shape());
        let mut spec = match m.architecture {
            ArchName::SmallConvnet => ModelSpec::small_convnet(m.channels.clone(), classes, shape),
            ArchName::Mlp => ModelSpec::mlp(m.hidden.clone(), classes, shape),
        };
        if let Some(layers) = &m.eligible_mix_layers {
            spec.eligible_mix_layers = layers.clone();
        }
        spec.drop_rate = m.drop_rate;
        spec
    }

    /// The network for a run on `train`.
    pub fn model_spec(&self, data: &DataSource, train: &Dataset) -> ModelSpec {
        let spec = self.unnormalized_spec(data);
        match self.file.model.normalization {
            Normalization::Dataset => {
                let (mean, std) = train.channel_stats();
                spec.with_normalization(mean, std)
            }
            Normalization::None => spec,
        }
    }

    pub fn pipelines(&self) -> (&AugPipeline, &AugPipeline) {
        (&self.stage1, &self.stage2)
    }

    /// The effective config for one seed, as written into its run directory.
    pub fn to_toml_for_seed(&self, seed: u64) -> String {
        let mut file = self.file.clone();
        file.seeds = vec![seed];
        file.out_dir = None;
        toml::to_string(&file).expect("config serializes")
    }
}

fn pipeline(p: &mut PipelineFile, base: &Path, at: &str) -> CliResult<AugPipeline> {
    let intensive = match &mut p.intensive {
        IntensiveFile::None => Intensive::None,
        IntensiveFile::Mixup { gamma } => Intensive::Mixup { gamma: *gamma },
        IntensiveFile::ManifoldMixup {
            gamma,
            eligible_layers,
        } => Intensive::ManifoldMixup {
            gamma: *gamma,
            eligible_layers: eligible_layers.clone(),
        },
        IntensiveFile::CutMix { apply_probability } => Intensive::CutMix {
            apply_probability: *apply_probability,
        },
        IntensiveFile::PolicyAug {
            policy,
            magnitudes,
            cutout_size,
            apply_probability,
        } => {
            let table = match magnitudes {
                Some(m) => {
                    *m = resolve(base, m);
                    must_exist(m, &format!("{at}.intensive.magnitudes"))?;
                    load_magnitudes(m)?
                }
                None => MagnitudeTable::default(),
            };
            let policy = if policy == "builtin" {
                Policy::new(Policy::builtin().sub_policies().to_vec(), table)?
            } else {
                let path = resolve(base, Path::new(policy.as_str()));
                must_exist(&path, &format!("{at}.intensive.policy"))?;
                *policy = path.display().to_string();
                load_policy(&path, table)?
            };
            Intensive::PolicyAug {
                policy,
                cutout_size: *cutout_size,
                apply_probability: *apply_probability,
            }
        }
    };
    let out = AugPipeline::with_intensive(p.moderate.clone(), intensive);
    out.validate()
        .map_err(|e| CliError::Input(format!("{at}: {e}")))?;
    Ok(out)
}
