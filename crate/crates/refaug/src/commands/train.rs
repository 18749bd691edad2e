use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use refaug_core::metrics::EpochRecord;
use refaug_core::train::{Clock, NoClock, Splits, Trainer};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, save_model, save_trainer};
use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};
use crate::export::{export_records, Format};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data_root: Option<PathBuf>,
    /// Stop after this epoch; `final.ckpt` can then be resumed.
    pub until: Option<usize>,
    pub resume: Option<PathBuf>,
}

/// What a run directory says about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    /// Every seed of the invocation that produced this directory.
    pub seeds: Vec<u64>,
    pub method: String,
    pub augment_epochs: usize,
    pub refine_epochs: usize,
    pub completed_epochs: usize,
    pub complete: bool,
    pub best_epoch: Option<usize>,
    pub best_accuracy: Option<f64>,
    pub config_sha256: String,
    pub data: DataSource,
    pub model: refaug_core::nn::ModelSpec,
    pub stage: refaug_core::train::StageConfig,
    pub notes: Vec<String>,
}

struct Wall(Instant);

impl Clock for Wall {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory of each seed: `out` itself for a single seed, else
/// `out/seed-<n>`.
pub fn seed_dirs(out: &Path, seeds: &[u64]) -> Vec<PathBuf> {
    if seeds.len() == 1 {
        vec![out.to_path_buf()]
    } else {
        seeds
            .iter()
            .map(|s| out.join(format!("seed-{s}")))
            .collect()
    }
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seeds=[{s}]"));
    }
    let config = RunConfig::load(&args.config, &overrides, args.data_root.as_deref())?;
    let out = args
        .out
        .clone()
        .or_else(|| config.file.out_dir.clone())
        .ok_or_else(|| CliError::Input("no output directory (use --out or set out_dir)".into()))?;
    let seeds = config.seeds().to_vec();
    let dirs = seed_dirs(&out, &seeds);
    if args.resume.is_some() && seeds.len() != 1 {
        return Err(CliError::Input(
            "--resume needs a single seed (use --seed)".into(),
        ));
    }
    for (&seed, dir) in seeds.iter().zip(&dirs) {
        run_seed(&config, seed, &seeds, dir, args)?;
    }
    Ok(dirs)
}

fn run_seed(
    config: &RunConfig,
    seed: u64,
    seeds: &[u64],
    dir: &Path,
    args: &TrainArgs,
) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let data = config.data_source(seed);
    let (train, test) = data.load()?;
    let mut trainer = match &args.resume {
        Some(p) => {
            let ckpt = checkpoint::load(p)?;
            if ckpt.header.data != data {
                return Err(CliError::Checkpoint(format!(
                    "{}: data source differs from the config",
                    p.display()
                )));
            }
            let state = ckpt.trainer_state()?;
            if state.config != config.stage_config(seed) {
                return Err(CliError::Checkpoint(format!(
                    "{}: stage config differs from the config",
                    p.display()
                )));
            }
            Trainer::resume(state).map_err(|e| CliError::Checkpoint(e.to_string()))?
        }
        None => Trainer::new(config.stage_config(seed), config.model_spec(&data, &train))?,
    };
    let splits = Splits {
        train: &train,
        test: &test,
    };
    let wall = Wall(Instant::now());
    let clock: &dyn Clock = if config.file.record_wall_time {
        &wall
    } else {
        &NoClock
    };
    let total = trainer.config().total_epochs();
    let target = args.until.map_or(total, |u| u.min(total));
    let outcome = trainer.run_until(splits, target, clock);

    // Whatever happened, the completed epochs are worth keeping.
    let records: Vec<EpochRecord> = trainer.records().to_vec();
    export_records(&records, &dir.join(METRICS_CSV), Format::Csv)?;
    export_records(&records, &dir.join(METRICS_JSONL), Format::Jsonl)?;
    let config_text = config.to_toml_for_seed(seed);
    let config_path = dir.join(CONFIG_COPY);
    fs::write(&config_path, &config_text).map_err(|e| CliError::io(&config_path, e))?;
    let best = trainer.best();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        seeds: seeds.to_vec(),
        method: trainer.config().stage1_pipeline.intensive.name().into(),
        augment_epochs: trainer.config().augment_epochs,
        refine_epochs: trainer.config().refine_epochs,
        completed_epochs: trainer.epoch().unwrap_or(0),
        complete: trainer.is_done(),
        best_epoch: best.map(|b| b.epoch),
        best_accuracy: best.map(|b| b.accuracy),
        config_sha256: hex(&Sha256::digest(config_text.as_bytes())),
        data: data.clone(),
        model: trainer.model().spec().clone(),
        stage: trainer.config().clone(),
        notes: trainer.config().notes(),
    };
    let manifest_path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(|e| CliError::io(&manifest_path, e))?;
    outcome?;
    save_trainer(&dir.join(FINAL_CKPT), &trainer.state(), &data)?;
    if let Some(b) = trainer.best() {
        save_model(&dir.join(BEST_CKPT), &b.model, &data, Some(b.epoch))?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
}
