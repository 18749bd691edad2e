use std::path::{Path, PathBuf};

use refaug_core::metrics::{evaluate, Evaluation};

use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    /// Dataset from this config instead of the one recorded in the checkpoint.
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub data_root: Option<PathBuf>,
    pub split: Split,
}

fn rerooted(data: DataSource, root: Option<&Path>) -> DataSource {
    match (data, root) {
        (
            DataSource::Cifar {
                train,
                test,
                num_classes,
            },
            Some(root),
        ) => {
            let move_to = |v: Vec<PathBuf>| {
                v.into_iter()
                    .map(|p| p.file_name().map_or(p.clone(), |n| root.join(n)))
                    .collect()
            };
            DataSource::Cifar {
                train: move_to(train),
                test: move_to(test),
                num_classes,
            }
        }
        (d, _) => d,
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<Evaluation> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let data = match &args.config {
        Some(path) => {
            let config = RunConfig::load(path, &args.overrides, args.data_root.as_deref())?;
            let seed = args.seed.unwrap_or(config.seeds()[0]);
            config.data_source(seed)
        }
        None => {
            let root = args
                .data_root
                .clone()
                .or_else(|| std::env::var_os(crate::config::DATA_ROOT_ENV).map(PathBuf::from));
            rerooted(ckpt.header.data.clone(), root.as_deref())
        }
    };
    let (train, test) = data.load()?;
    let set = match args.split {
        Split::Train => &train,
        Split::Test => &test,
    };
    let spec = ckpt.model.spec();
    if set.image_shape() != spec.input_shape || set.num_classes() != spec.num_classes {
        return Err(CliError::Input(format!(
            "dataset is {:?} with {} classes, model expects {:?} with {}",
            set.image_shape(),
            set.num_classes(),
            spec.input_shape,
            spec.num_classes
        )));
    }
    Ok(evaluate(&ckpt.model, set)?)
}
