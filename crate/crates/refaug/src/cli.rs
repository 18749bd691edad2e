use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{
    cmd_evaluate, cmd_preview, cmd_report, cmd_train, run_checks, EvaluateArgs, PreviewArgs,
    ReportArgs, SelfcheckOptions, Split, TrainArgs,
};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "refaug",
    version,
    about = "Train with intensive augmentation, then refine on clean data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigFlags {
    /// Run config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Run this seed only, replacing the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset root for CIFAR files (falls back to $DATA_ROOT).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// `key.path=value`, applied to the config before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run augment-then-refine training for every seed of a config.
    Train {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this epoch; the final checkpoint can be resumed.
        #[arg(long)]
        until: Option<usize>,
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Loss and top-1 accuracy of a checkpoint.
    Evaluate {
        /// `final.ckpt` or `best.ckpt` from a run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take the dataset from this config instead of the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for a synthetic dataset taken from `--config`.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset root for CIFAR files (falls back to $DATA_ROOT).
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Config override, as for `train`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Write augmented training images as PPM files plus a JSONL sidecar.
    Preview {
        #[command(flatten)]
        flags: ConfigFlags,
        /// Number of images to write.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Use the refinement pipeline.
        #[arg(long)]
        refine: bool,
    },
    /// Loss-gap table and per-run curve files from run directories.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Run directories, or parents holding `seed-*` runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Run the built-in verification checks.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            flags,
            out,
            until,
            resume,
        } => {
            let dirs = cmd_train(&TrainArgs {
                config: flags.config,
                overrides: flags.overrides,
                seed: flags.seed,
                out,
                data_root: flags.data_root,
                until,
                resume,
            })?;
            for d in dirs {
                println!("{}", d.display());
            }
        }
        Command::Evaluate {
            checkpoint,
            config,
            seed,
            data_root,
            overrides,
            split,
        } => {
            let e = cmd_evaluate(&EvaluateArgs {
                checkpoint,
                config,
                overrides,
                seed,
                data_root,
                split: match split {
                    SplitArg::Train => Split::Train,
                    SplitArg::Test => Split::Test,
                },
            })?;
            println!("loss {}\naccuracy {}", e.loss, e.accuracy);
        }
        Command::Preview {
            flags,
            count,
            out,
            refine,
        } => {
            let entries = cmd_preview(&PreviewArgs {
                config: flags.config,
                overrides: flags.overrides,
                seed: flags.seed,
                data_root: flags.data_root,
                count,
                out: out.clone(),
                refine,
            })?;
            println!("{} images in {}", entries.len(), out.display());
        }
        Command::Report { out, runs } => {
            let report = cmd_report(&ReportArgs { runs, out })?;
            print!("{}", report.to_text());
        }
        Command::Selfcheck { inject_fault } => {
            let results = run_checks(&SelfcheckOptions { inject_fault });
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name)
                .collect();
            if !failed.is_empty() {
                return Err(CliError::SelfCheck(failed.join(", ")));
            }
        }
    }
    Ok(())
}
