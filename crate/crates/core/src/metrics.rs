//! Clean and augmented empirical risk, test metrics, per-epoch records and
//! the loss-gap table.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use crate::augment::{augment_batch, AugPipeline};
use crate::data::{argmax, epoch_batches, Dataset};
use crate::nn::{flat_labels, soft_ce_rows, Model, Scalar, Tensor};
use crate::{Error, Result, RngStream};

/// Batch size for measurement passes. Mixing ops pair samples inside a batch,
/// so this also fixes the pairing pool of an augmented measurement.
pub const MEASURE_BATCH: usize = 128;

/// Column order of exported records.
pub const RECORD_FIELDS: [&str; 9] = [
    "epoch",
    "stage",
    "lr",
    "risk_aug",
    "risk_clean",
    "test_loss",
    "test_acc",
    "intensity_scale",
    "wall_seconds",
];

/// Which half of the two-stage procedure an epoch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    Augment,
    Refine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Augment => "augment",
            Stage::Refine => "refine",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augment" => Ok(Stage::Augment),
            "refine" => Ok(Stage::Refine),
            _ => Err(Error::Config(format!("unknown stage `{s}`"))),
        }
    }
}

/// Measurements taken after one epoch. Epoch 0 is the untrained baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    /// Mean soft-label loss over one fresh augmented pass of the training set.
    pub risk_aug: f64,
    /// Mean loss over the clean training set.
    pub risk_clean: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub intensity_scale: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    pub fn is_valid(&self) -> bool {
        let finite = [
            self.lr,
            self.risk_aug,
            self.risk_clean,
            self.test_loss,
            self.test_acc,
            self.intensity_scale,
            self.wall_seconds,
        ]
        .iter()
        .all(|v| v.is_finite());
        finite
            && self.risk_aug >= 0.0
            && self.risk_clean >= 0.0
            && self.test_loss >= 0.0
            && (0.0..=1.0).contains(&self.test_acc)
    }
}

/// `|risk_aug - risk_clean|`, the measurable stand-in for the distribution
/// gap. It is a proxy, not the gap itself.
pub fn gap(record: &EpochRecord) -> f64 {
    gap_between(record.risk_aug, record.risk_clean)
}

pub fn gap_between(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

/// Loss and top-1 accuracy of an eval-mode pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Eval-mode pass over `dataset` in order, no augmentation. Loss is the mean
/// cross-entropy against the stored labels; ties in the logits resolve to
/// the lowest class index.
pub fn evaluate<S: Scalar>(model: &Model<S>, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0f64;
    let mut correct = 0usize;
    for chunk in dataset.samples().chunks(MEASURE_BATCH) {
        let x = Tensor::<S>::from_samples(chunk)?;
        let logits = model.forward_eval(&x, None)?;
        total += soft_ce_rows(&logits, &flat_labels(chunk))?
            .iter()
            .sum::<f64>();
        for (i, s) in chunk.iter().enumerate() {
            correct += (argmax(logits.row(i)) == s.label.argmax()) as usize;
        }
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        loss: total / n,
        accuracy: correct as f64 / n,
    })
}

/// Empirical risk of `model` on `dataset`.
///
/// With `None` (or a pipeline that does nothing) this is the clean risk and
/// equals `evaluate(model, dataset).loss`. Otherwise one augmented epoch is
/// drawn from `rng` and the mean soft-label loss over it is returned.
pub fn empirical_risk<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset,
    pipeline: Option<&AugPipeline>,
    rng: &RngStream,
) -> Result<f64> {
    let pipeline = match pipeline {
        Some(p) if !p.moderate.is_empty() || p.has_intensive() => p,
        _ => return Ok(evaluate(model, dataset)?.loss),
    };
    let mut total = 0.0f64;
    for (b, indices) in epoch_batches(dataset, MEASURE_BATCH, rng)?
        .iter()
        .enumerate()
    {
        let batch = augment_batch(pipeline, dataset, indices, rng, b)?;
        let x = Tensor::<S>::from_samples(&batch.samples)?;
        let logits = model.forward_eval(&x, batch.hook.as_ref())?;
        total += soft_ce_rows(&logits, &flat_labels(&batch.samples))?
            .iter()
            .sum::<f64>();
    }
    Ok(total / dataset.len() as f64)
}

/// Records of one run plus what is needed to find its stage boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    /// Intensive op name, e.g. `mixup`.
    pub method: String,
    /// Distinguishes runs of the same method, e.g. the seed.
    pub label: String,
    pub augment_epochs: usize,
    pub records: Vec<EpochRecord>,
}

/// `(risk_aug, risk_clean)` at one point of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPair {
    pub risk_aug: f64,
    pub risk_clean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub method: String,
    pub label: String,
    pub augmented: RiskPair,
    /// `None` when the run had no refinement epochs.
    pub refined: Option<RiskPair>,
}

/// End-of-augmentation and end-of-refinement risks per run, unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
}

/// Display scale of report cells.
pub const REPORT_SCALE: f64 = 1e3;

/// Formats an unscaled risk as a report cell (x 1e-3 units, two decimals).
pub fn report_cell(value: f64) -> String {
    format!("{:.2}", value * REPORT_SCALE)
}

fn pair_at(records: &[EpochRecord], epoch: usize) -> Option<RiskPair> {
    records.iter().find(|r| r.epoch == epoch).map(|r| RiskPair {
        risk_aug: r.risk_aug,
        risk_clean: r.risk_clean,
    })
}

/// Builds the table, rows sorted by method then label.
pub fn gap_report(runs: &[RunLog]) -> Result<GapReport> {
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        if run.augment_epochs == 0 {
            return Err(Error::Config(format!(
                "run `{}` has no augmentation epochs",
                run.label
            )));
        }
        let augmented = pair_at(&run.records, run.augment_epochs).ok_or_else(|| {
            Error::Config(format!(
                "run `{}` has no record for epoch {}",
                run.label, run.augment_epochs
            ))
        })?;
        let last = run.records.iter().map(|r| r.epoch).max().unwrap_or(0);
        let refined = if last > run.augment_epochs {
            pair_at(&run.records, last)
        } else {
            None
        };
        rows.push(GapRow {
            method: run.method.clone(),
            label: run.label.clone(),
            augmented,
            refined,
        });
    }
    rows.sort_by(|a, b| (&a.method, &a.label).cmp(&(&b.method, &b.label)));
    Ok(GapReport { rows })
}

impl GapReport {
    /// Cells of every row: method, label, then four risks (absent ones `-`).
    pub fn cells(&self) -> Vec<[String; 6]> {
        self.rows
            .iter()
            .map(|r| {
                let (ra, rc) = match r.refined {
                    Some(p) => (report_cell(p.risk_aug), report_cell(p.risk_clean)),
                    None => ("-".into(), "-".into()),
                };
                [
                    r.method.clone(),
                    r.label.clone(),
                    report_cell(r.augmented.risk_aug),
                    report_cell(r.augmented.risk_clean),
                    ra,
                    rc,
                ]
            })
            .collect()
    }

    /// Plain-text table with aligned columns.
    pub fn to_text(&self) -> String {
        let header = [
            "method",
            "run",
            "aug: risk_aug",
            "aug: risk_clean",
            "refined: risk_aug",
            "refined: risk_clean",
        ];
        let cells = self.cells();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::from("cross-entropy losses (x1e-3)\n");
        let mut line = |row: &[&str]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| {
                    if i < 2 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &cells {
            let refs: Vec<&str> = row.iter().map(|s| s.as_str()).collect();
            line(&refs);
        }
        out
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
