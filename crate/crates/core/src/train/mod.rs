//! Learning-rate schedules, the epoch loop and the two-stage driver: `N`
//! epochs with intensive augmentation, then `M` refinement epochs on the
//! original data with only moderate augmentation and a small learning rate.
//!
//! Epoch numbering is 1-based; epoch 0 is the untrained baseline. All
//! randomness of epoch `e` comes from `seed / EPOCH / e` (measurement from
//! `seed / MEASURE / e`), so runs that differ only in `M`, or in what happens
//! after some epoch, share everything before it.

mod schedule;

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

pub use self::schedule::LrSchedule;
use crate::augment::{augment_batch, weaken_intensity, AugPipeline, Intensive};
use crate::data::{epoch_batches, Dataset};
pub use crate::metrics::evaluate;
use crate::metrics::{empirical_risk, EpochRecord, Evaluation, Stage};
use crate::nn::{flat_labels, sgd_step, Model, ModelSpec, OptimState, Tensor};
use crate::rng::path;
use crate::{Error, Result, RngStream};

/// Learning rate used for every refinement epoch.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "rule", rename_all = "snake_case"))]
pub enum RefineLr {
    /// Keep the rate of the last augmentation epoch.
    ContinueFinal,
    /// A fixed small rate; `None` means the initial rate divided by 1000.
    Fixed {
        #[cfg_attr(feature = "serde", serde(default))]
        lr: Option<f64>,
    },
}

/// How intensity is removed during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Decay {
    /// Refinement epoch `m` of `M` runs at scale `1 - m/M`.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case"))]
pub enum RefineMode {
    /// Refinement uses `stage2_pipeline` unchanged.
    #[default]
    Clean,
    /// Refinement keeps a weakened copy of the stage-1 intensive op.
    Gradual { decay: Decay },
}

#[cfg(feature = "serde")]
fn default_eval_every() -> usize {
    1
}

#[cfg(feature = "serde")]
fn default_momentum() -> f64 {
    0.9
}

#[cfg(feature = "serde")]
fn default_weight_decay() -> f64 {
    1e-4
}

/// Everything that defines a two-stage run apart from the model and data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageConfig {
    /// `N`
    pub augment_epochs: usize,
    /// `M`
    pub refine_epochs: usize,
    pub stage1_pipeline: AugPipeline,
    /// Must carry no intensive op.
    pub stage2_pipeline: AugPipeline,
    pub stage1_schedule: LrSchedule,
    pub refine_lr: RefineLr,
    #[cfg_attr(feature = "serde", serde(default))]
    pub refine_mode: RefineMode,
    pub batch_size: usize,
    pub seed: u64,
    /// Measure every this many epochs. Epochs 0, `N` and `N + M` are always
    /// measured; other epochs repeat the latest measurement.
    #[cfg_attr(feature = "serde", serde(default = "default_eval_every"))]
    pub eval_every: usize,
    #[cfg_attr(feature = "serde", serde(default = "default_momentum"))]
    pub momentum: f64,
    #[cfg_attr(feature = "serde", serde(default = "default_weight_decay"))]
    pub weight_decay: f64,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.augment_epochs + self.refine_epochs == 0 {
            return bad("augment_epochs + refine_epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!(
                "weight_decay {} must be non-negative",
                self.weight_decay
            ));
        }
        if self.stage2_pipeline.has_intensive() {
            return bad("stage2_pipeline must not contain an intensive op".into());
        }
        if matches!(self.refine_mode, RefineMode::Gradual { .. }) && self.refine_epochs == 0 {
            return bad("gradual refinement needs refine_epochs >= 1".into());
        }
        if let RefineLr::Fixed { lr: Some(lr) } = self.refine_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("refinement lr {lr} must be positive"));
            }
        }
        self.stage1_schedule.validate()?;
        self.stage1_pipeline.validate()?;
        self.stage2_pipeline.validate()?;
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.augment_epochs + self.refine_epochs
    }

    /// Rate held through refinement.
    pub fn refine_rate(&self) -> f64 {
        match self.refine_lr {
            RefineLr::ContinueFinal => self
                .stage1_schedule
                .lr_at(self.augment_epochs.saturating_sub(1)),
            RefineLr::Fixed { lr: Some(lr) } => lr,
            RefineLr::Fixed { lr: None } => self.stage1_schedule.initial() / 1000.0,
        }
    }

    /// Stage of 1-based `epoch` (the baseline counts as augmentation when
    /// there is any).
    pub fn stage_of(&self, epoch: usize) -> Stage {
        if epoch <= self.augment_epochs && (epoch > 0 || self.augment_epochs > 0) {
            Stage::Augment
        } else {
            Stage::Refine
        }
    }

    pub fn lr_for(&self, epoch: usize) -> f64 {
        match self.stage_of(epoch.max(1)) {
            Stage::Augment => self.stage1_schedule.lr_at(epoch.max(1) - 1),
            Stage::Refine => self.refine_rate(),
        }
    }

    /// Pipeline trained with in 1-based `epoch`; epoch 0 reports the one of
    /// epoch 1.
    pub fn pipeline_for(&self, epoch: usize) -> AugPipeline {
        let epoch = epoch.max(1);
        if self.stage_of(epoch) == Stage::Augment {
            return self.stage1_pipeline.clone();
        }
        match self.refine_mode {
            RefineMode::Clean => self.stage2_pipeline.clone(),
            RefineMode::Gradual {
                decay: Decay::Linear,
            } => {
                let m = (epoch - self.augment_epochs) as f64;
                let scale = 1.0 - m / self.refine_epochs as f64;
                AugPipeline {
                    moderate: self.stage2_pipeline.moderate.clone(),
                    ..weaken_intensity(&self.stage1_pipeline, scale)
                }
            }
        }
    }

    fn is_measured(&self, epoch: usize) -> bool {
        epoch == 0
            || epoch.is_multiple_of(self.eval_every)
            || epoch == self.augment_epochs
            || epoch == self.total_epochs()
    }

    /// Choices the run makes where the procedure leaves room, for the
    /// manifest.
    pub fn notes(&self) -> Vec<String> {
        let mut notes = vec![
            String::from("batch-norm running statistics keep updating during refinement"),
            String::from("momentum buffers carry over from augmentation into refinement"),
            String::from("step milestones are fixed relative to epoch 0 and do not move with N"),
            String::from("risk_aug is one fresh augmented pass per measurement in eval mode"),
        ];
        if let RefineLr::Fixed { lr: None } = self.refine_lr {
            notes.push(format!(
                "refinement lr defaulted to lr0 / 1000 = {}",
                self.refine_rate()
            ));
        }
        notes
    }
}

/// Wall-clock source; the core library has none of its own.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always 0, for reproducible logs.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

/// Training and test sets of a run.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
}

/// What one call of [`train_epoch`] does.
#[derive(Debug, Clone, Copy)]
pub struct EpochPlan<'a> {
    /// Only used in diagnostics.
    pub epoch: usize,
    pub pipeline: &'a AugPipeline,
    pub lr: f64,
    pub batch_size: usize,
}

/// One pass over `dataset` in seeded batches: moderate ops per sample, the
/// intensive op per batch or sample, soft-label loss, backward, SGD step.
/// Returns the mean training loss over the augmented batches.
pub fn train_epoch(
    model: &mut Model<f32>,
    optim: &mut OptimState<f32>,
    dataset: &Dataset,
    plan: &EpochPlan<'_>,
    epoch_rng: &RngStream,
) -> Result<f64> {
    if !(plan.lr > 0.0 && plan.lr.is_finite()) {
        return Err(Error::Parameter(format!(
            "learning rate {} must be positive",
            plan.lr
        )));
    }
    optim.learning_rate = plan.lr;
    let abort = |batch: usize, message: String| Error::Aborted {
        epoch: plan.epoch,
        batch,
        lr: plan.lr,
        message,
    };
    let mut total = 0.0f64;
    for (b, indices) in epoch_batches(dataset, plan.batch_size, epoch_rng)?
        .iter()
        .enumerate()
    {
        let batch = augment_batch(plan.pipeline, dataset, indices, epoch_rng, b)?;
        let x = Tensor::<f32>::from_samples(&batch.samples)?;
        let labels = flat_labels(&batch.samples);
        let dropout = epoch_rng.child(path::DROPOUT).child(b as u64);
        let trace = model.forward_train(&x, batch.hook.as_ref(), Some(dropout))?;
        let (loss, grads) = match model.backward(&trace, &labels) {
            Ok(v) => v,
            Err(Error::Numeric(m)) => return Err(abort(b, m)),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(abort(b, format!("loss is {loss}")));
        }
        sgd_step(model, &grads, optim)?;
        total += loss * indices.len() as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// Highest test accuracy seen so far (earliest epoch wins ties).
#[derive(Debug, Clone)]
pub struct BestModel {
    pub epoch: usize,
    pub accuracy: f64,
    pub model: Model<f32>,
}

/// A run in progress. Cloning it forks the run: both copies continue
/// identically unless their configuration differs from here on.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: StageConfig,
    model: Model<f32>,
    optim: OptimState<f32>,
    records: Vec<EpochRecord>,
    best: Option<BestModel>,
}

/// Saved state of a [`Trainer`], enough to resume it exactly.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub config: StageConfig,
    pub model: Model<f32>,
    pub optim: OptimState<f32>,
    pub records: Vec<EpochRecord>,
    pub best: Option<BestModel>,
}

impl Trainer {
    /// Fresh model initialized from the config seed.
    pub fn new(config: StageConfig, spec: ModelSpec) -> Result<Self> {
        config.validate()?;
        if let Intensive::ManifoldMixup {
            eligible_layers, ..
        } = &config.stage1_pipeline.intensive
        {
            if let Some(l) = eligible_layers
                .iter()
                .find(|l| !spec.eligible_mix_layers.contains(l))
            {
                return Err(Error::Config(format!(
                    "manifold mixup layer {l} is not eligible in the model"
                )));
            }
        }
        let model = Model::new(spec, &RngStream::new(config.seed))?;
        let optim = OptimState::new(
            &model,
            config.stage1_schedule.initial(),
            config.momentum,
            config.weight_decay,
        );
        Ok(Trainer {
            config,
            model,
            optim,
            records: Vec::new(),
            best: None,
        })
    }

    pub fn resume(state: TrainerState) -> Result<Self> {
        state.config.validate()?;
        for (i, r) in state.records.iter().enumerate() {
            if r.epoch != i {
                return Err(Error::Config(format!(
                    "record {i} is for epoch {}",
                    r.epoch
                )));
            }
        }
        if state.records.len() > state.config.total_epochs() + 1 {
            return Err(Error::Config("more records than epochs".into()));
        }
        if state.optim.velocity.len() != state.model.params().len() {
            return Err(Error::Shape(
                "velocity buffers do not match the model".into(),
            ));
        }
        Ok(Trainer {
            config: state.config,
            model: state.model,
            optim: state.optim,
            records: state.records,
            best: state.best,
        })
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            config: self.config.clone(),
            model: self.model.clone(),
            optim: self.optim.clone(),
            records: self.records.clone(),
            best: self.best.clone(),
        }
    }

    pub fn config(&self) -> &StageConfig {
        &self.config
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn best(&self) -> Option<&BestModel> {
        self.best.as_ref()
    }

    /// Last completed epoch, `None` before the baseline is recorded.
    pub fn epoch(&self) -> Option<usize> {
        self.records.len().checked_sub(1)
    }

    pub fn is_done(&self) -> bool {
        self.records.len() == self.config.total_epochs() + 1
    }

    /// Copy of this run that refines with `mode` instead. Only allowed
    /// before refinement has started.
    pub fn fork_refinement(&self, mode: RefineMode, refine_lr: RefineLr) -> Result<Trainer> {
        if self.epoch().unwrap_or(0) > self.config.augment_epochs {
            return Err(Error::Config("refinement has already started".into()));
        }
        let mut fork = self.clone();
        fork.config.refine_mode = mode;
        fork.config.refine_lr = refine_lr;
        fork.config.validate()?;
        Ok(fork)
    }

    fn measure(&self, data: Splits<'_>, epoch: usize) -> Result<(f64, f64, Evaluation)> {
        let pipeline = self.config.pipeline_for(epoch);
        let rng = RngStream::new(self.config.seed)
            .child(path::MEASURE)
            .child(epoch as u64);
        let risk_aug = empirical_risk(&self.model, data.train, Some(&pipeline), &rng)?;
        let risk_clean = empirical_risk(&self.model, data.train, None, &rng)?;
        let test = evaluate(&self.model, data.test)?;
        Ok((risk_aug, risk_clean, test))
    }

    fn record(
        &mut self,
        data: Splits<'_>,
        epoch: usize,
        started: f64,
        clock: &dyn Clock,
    ) -> Result<()> {
        let measured = self.config.is_measured(epoch) || self.records.is_empty();
        let (risk_aug, risk_clean, test_loss, test_acc) = if measured {
            let (a, c, t) = self.measure(data, epoch)?;
            (a, c, t.loss, t.accuracy)
        } else {
            let last = self.records.last().expect("baseline recorded first");
            (
                last.risk_aug,
                last.risk_clean,
                last.test_loss,
                last.test_acc,
            )
        };
        if measured && self.best.as_ref().is_none_or(|b| test_acc > b.accuracy) {
            self.best = Some(BestModel {
                epoch,
                accuracy: test_acc,
                model: self.model.clone(),
            });
        }
        let pipeline = self.config.pipeline_for(epoch);
        self.records.push(EpochRecord {
            epoch,
            stage: self.config.stage_of(epoch),
            lr: self.config.lr_for(epoch),
            risk_aug,
            risk_clean,
            test_loss,
            test_acc,
            intensity_scale: pipeline.intensity_scale,
            wall_seconds: clock.seconds() - started,
        });
        Ok(())
    }

    /// Records the epoch-0 baseline, or trains and records the next epoch.
    pub fn step(&mut self, data: Splits<'_>, clock: &dyn Clock) -> Result<&EpochRecord> {
        if self.is_done() {
            return Err(Error::Config("all epochs are done".into()));
        }
        let start = clock.seconds();
        let epoch = self.records.len();
        if epoch > 0 {
            let pipeline = self.config.pipeline_for(epoch);
            let plan = EpochPlan {
                epoch,
                pipeline: &pipeline,
                lr: self.config.lr_for(epoch),
                batch_size: self.config.batch_size,
            };
            let rng = RngStream::new(self.config.seed)
                .child(path::EPOCH)
                .child(epoch as u64);
            train_epoch(&mut self.model, &mut self.optim, data.train, &plan, &rng)?;
        }
        self.record(data, epoch, start, clock)?;
        Ok(self.records.last().expect("just pushed"))
    }

    /// Steps until `epoch` is recorded (or the run is done).
    pub fn run_until(&mut self, data: Splits<'_>, epoch: usize, clock: &dyn Clock) -> Result<()> {
        while !self.is_done() && self.epoch().is_none_or(|e| e < epoch) {
            self.step(data, clock)?;
        }
        Ok(())
    }

    pub fn finish(mut self, data: Splits<'_>, clock: &dyn Clock) -> Result<RunResult> {
        let total = self.config.total_epochs();
        self.run_until(data, total, clock)?;
        let best = self.best.expect("baseline is always measured");
        Ok(RunResult {
            notes: self.config.notes(),
            config: self.config,
            records: self.records,
            final_model: self.model,
            best_model: best.model,
            best_epoch: best.epoch,
        })
    }
}

/// Outcome of a finished run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: StageConfig,
    /// Baseline plus one record per epoch.
    pub records: Vec<EpochRecord>,
    pub final_model: Model<f32>,
    pub best_model: Model<f32>,
    pub best_epoch: usize,
    pub notes: Vec<String>,
}

impl RunResult {
    pub fn record_at(&self, epoch: usize) -> Option<&EpochRecord> {
        self.records.get(epoch)
    }
}

/// `N` augmentation epochs followed by `M` refinement epochs.
pub fn refined_training(
    config: StageConfig,
    spec: ModelSpec,
    data: Splits<'_>,
    clock: &dyn Clock,
) -> Result<RunResult> {
    Trainer::new(config, spec)?.finish(data, clock)
}

/// As [`refined_training`], but refinement epoch `m` keeps the intensive op
/// at scale `1 - m/M`.
pub fn gradual_refined_training(
    mut config: StageConfig,
    spec: ModelSpec,
    data: Splits<'_>,
    decay: Decay,
    clock: &dyn Clock,
) -> Result<RunResult> {
    if config.refine_epochs == 0 {
        return Err(Error::Config(
            "gradual refinement needs refine_epochs >= 1".into(),
        ));
    }
    config.refine_mode = RefineMode::Gradual { decay };
    refined_training(config, spec, data, clock)
}
