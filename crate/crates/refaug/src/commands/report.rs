use std::fs;
use std::path::{Path, PathBuf};

use refaug_core::metrics::{gap_report, GapReport, RunLog, Stage};

use super::train::{read_manifest, MANIFEST, METRICS_CSV};
use crate::error::{CliError, CliResult};
use crate::export::{import_records, Format};

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const CURVES_DIR: &str = "curves";

#[derive(Debug, Clone, Default)]
pub struct ReportArgs {
    pub runs: Vec<PathBuf>,
    pub out: PathBuf,
}

/// A directory with `metrics.csv` is one run; otherwise its `seed-*`
/// subdirectories are. Returns the runs and the directories that had none.
fn expand(dirs: &[PathBuf]) -> (Vec<PathBuf>, Vec<PathBuf>) {
    let (mut runs, mut missing) = (Vec::new(), Vec::new());
    for d in dirs {
        if d.join(METRICS_CSV).is_file() {
            runs.push(d.clone());
            continue;
        }
        let mut seeds: Vec<PathBuf> = fs::read_dir(d)
            .into_iter()
            .flatten()
            .flatten()
            .map(|e| e.path())
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .is_some_and(|n| n.to_string_lossy().starts_with("seed-"))
            })
            .collect();
        seeds.sort();
        let (with, without): (Vec<PathBuf>, Vec<PathBuf>) = seeds
            .into_iter()
            .partition(|p| p.join(METRICS_CSV).is_file());
        if with.is_empty() {
            missing.push(d.clone());
        }
        missing.extend(without);
        runs.extend(with);
    }
    (runs, missing)
}

fn label_of(dir: &Path) -> String {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().into_owned());
    match (name(dir), dir.parent().and_then(name)) {
        (Some(n), Some(parent)) if n.starts_with("seed-") => format!("{parent}/{n}"),
        (Some(n), _) => n,
        (None, _) => dir.display().to_string(),
    }
}

fn load_run(dir: &Path) -> CliResult<RunLog> {
    let records = import_records(&dir.join(METRICS_CSV), Format::Csv)?;
    let (method, augment_epochs) = if dir.join(MANIFEST).is_file() {
        let m = read_manifest(dir)?;
        (m.method, m.augment_epochs)
    } else {
        // Without a manifest the stage column still tells where N is.
        (
            "unknown".into(),
            records
                .iter()
                .filter(|r| r.stage == Stage::Augment)
                .map(|r| r.epoch)
                .max()
                .unwrap_or(0),
        )
    };
    Ok(RunLog {
        method,
        label: label_of(dir),
        augment_epochs,
        records,
    })
}

fn curve_file_name(label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.csv")
}

/// Loss and accuracy per epoch; `stage` marks the boundary and the
/// `boundary` column is 1 on epoch N only.
fn write_curve(path: &Path, run: &RunLog) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record([
        "epoch",
        "stage",
        "boundary",
        "lr",
        "risk_aug",
        "risk_clean",
        "test_loss",
        "test_acc",
    ])
    .map_err(err)?;
    for r in &run.records {
        let boundary = if r.epoch == run.augment_epochs {
            "1"
        } else {
            "0"
        };
        w.write_record([
            r.epoch.to_string(),
            r.stage.as_str().to_string(),
            boundary.to_string(),
            r.lr.to_string(),
            r.risk_aug.to_string(),
            r.risk_clean.to_string(),
            r.test_loss.to_string(),
            r.test_acc.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<GapReport> {
    if args.runs.is_empty() {
        return Err(CliError::Input("no run directories given".into()));
    }
    let (dirs, missing) = expand(&args.runs);
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(CliError::Input(format!(
            "no {METRICS_CSV} in: {}",
            list.join(", ")
        )));
    }
    let runs = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<CliResult<Vec<_>>>()?;
    let report = gap_report(&runs)?;

    let curves = args.out.join(CURVES_DIR);
    fs::create_dir_all(&curves).map_err(|e| CliError::io(&curves, e))?;
    let text_path = args.out.join(REPORT_TEXT);
    fs::write(&text_path, report.to_text()).map_err(|e| CliError::io(&text_path, e))?;
    let csv_path = args.out.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", csv_path.display())))?;
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", csv_path.display()));
    w.write_record([
        "method",
        "run",
        "aug_risk_aug",
        "aug_risk_clean",
        "refined_risk_aug",
        "refined_risk_clean",
    ])
    .map_err(err)?;
    for row in report.cells() {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    for run in &runs {
        write_curve(&curves.join(curve_file_name(&run.label)), run)?;
    }
    Ok(report)
}
