//! Central finite-difference gradient check, run in f64.
//!
//! The numeric side only calls the forward pass and the loss, so it is
//! independent of every backward kernel it checks.

use alloc::vec;
use alloc::vec::Vec;

use super::loss::soft_ce_loss;
use super::{Gradients, Model, ModelSpec, Tensor};
use crate::augment::MixHook;
use crate::rng::path;
use crate::{Result, RngStream};

/// Finite-difference step used throughout.
pub const FD_STEP: f64 = 1e-3;
/// Denominator floor of the relative error, so that two gradients that are
/// both numerically zero do not produce a spurious failure.
pub const REL_FLOOR: f64 = 1e-8;

/// Outcome of one check. Errors are measured per parameter tensor as
/// `||a - n|| / max(||a||, ||n||, REL_FLOOR)`; entrywise ratios blow up on
/// entries that are near zero, where step-size truncation dominates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    /// Largest entrywise `|a - n|` over all tensors.
    pub max_abs_diff: f64,
    pub entries: usize,
    /// See [`NumericGradients::kink_crossings`].
    pub kink_crossings: usize,
}

/// `||a - n|| / max(||a||, ||n||, REL_FLOOR)`
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum::<f64>());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let a = norm(&mut analytic.iter().copied());
    let n = norm(&mut numeric.iter().copied());
    diff / a.max(n).max(REL_FLOOR)
}

fn loss_at(
    model: &Model<f64>,
    input: &Tensor<f64>,
    labels: &[f32],
    hook: Option<&MixHook>,
) -> Result<(f64, Vec<bool>)> {
    let trace = model.forward_train_frozen(input, hook, None)?;
    Ok((
        soft_ce_loss(trace.logits(), labels)?,
        model.relu_pattern(&trace),
    ))
}

/// Central differences for every parameter entry, plus how many of the
/// perturbed evaluations flipped a ReLU relative to the unperturbed pass.
/// A flip means the difference straddles a kink and says nothing about the
/// derivative.
#[derive(Debug, Clone)]
pub struct NumericGradients {
    pub values: Vec<Vec<f64>>,
    pub kink_crossings: usize,
}

/// Numeric gradient of the train-mode loss for every parameter entry.
pub fn numeric_gradients(
    model: &Model<f64>,
    input: &Tensor<f64>,
    labels: &[f32],
    hook: Option<&MixHook>,
    step: f64,
) -> Result<NumericGradients> {
    let (_, base) = loss_at(model, input, labels, hook)?;
    let mut probe = model.clone();
    let sizes: Vec<usize> = model.params().iter().map(|(t, _)| t.len()).collect();
    let mut values = Vec::with_capacity(sizes.len());
    let mut kink_crossings = 0;
    for (p, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = probe.params_mut()[p].values()[i];
            probe.params_mut()[p].values_mut()[i] = orig + step;
            let (up, up_pattern) = loss_at(&probe, input, labels, hook)?;
            probe.params_mut()[p].values_mut()[i] = orig - step;
            let (down, down_pattern) = loss_at(&probe, input, labels, hook)?;
            probe.params_mut()[p].values_mut()[i] = orig;
            kink_crossings += (up_pattern != base) as usize + (down_pattern != base) as usize;
            g.push((up - down) / (2.0 * step));
        }
        values.push(g);
    }
    Ok(NumericGradients {
        values,
        kink_crossings,
    })
}

/// Compares `analytic` against central differences, tensor by tensor.
pub fn compare(analytic: &Gradients<f64>, numeric: &NumericGradients) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        max_abs_diff: 0.0,
        entries: 0,
        kink_crossings: numeric.kink_crossings,
    };
    for (p, (a, n)) in analytic.0.iter().zip(&numeric.values).enumerate() {
        let e = relative_error(a.values(), n);
        if e > report.max_rel_error || !e.is_finite() {
            report.max_rel_error = e;
            report.worst_param = p;
        }
        for (&av, &nv) in a.values().iter().zip(n) {
            report.entries += 1;
            report.max_abs_diff = report.max_abs_diff.max((av - nv).abs());
        }
    }
    report
}

/// Backward gradients vs central differences for one (model, batch).
pub fn check_gradients(
    model: &Model<f64>,
    input: &Tensor<f64>,
    labels: &[f32],
    hook: Option<&MixHook>,
) -> Result<GradCheckReport> {
    let trace = model.forward_train_frozen(input, hook, None)?;
    let (_, analytic) = model.backward(&trace, labels)?;
    let numeric = numeric_gradients(model, input, labels, hook, FD_STEP)?;
    Ok(compare(&analytic, &numeric))
}

/// A random (model, batch) pair small enough for an exhaustive check.
#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub model: Model<f64>,
    pub input: Tensor<f64>,
    pub labels: Vec<f32>,
    pub hook: Option<MixHook>,
}

/// Draw `attempt` of instance `index` of the family drawn from `rng`: even indices are
/// one-hidden-layer MLPs (under 500 parameters), odd ones are single-block
/// conv nets (under 2000). About a third carry a mixing hook.
pub fn tiny_instance(rng: &RngStream, index: u64, attempt: u64) -> Result<TinyInstance> {
    let mut r = rng.child(path::CHECK).child(index).child(attempt);
    let classes = 2 + r.below(3);
    let channels = 1 + r.below(3);
    let side = 4 + 2 * r.below(2);
    let batch = 2 + r.below(4);
    let spec = if index.is_multiple_of(2) {
        let inputs = channels * side * side;
        let hidden = ((500 - classes) / (inputs + 1 + classes)).clamp(2, 8);
        ModelSpec::mlp(vec![1 + r.below(hidden)], classes, (channels, side, side))
    } else {
        ModelSpec::small_convnet(vec![2 + r.below(7)], classes, (channels, side, side))
    };
    let spec = spec.with_normalization(
        (0..channels).map(|_| r.range(0.3, 0.7)).collect(),
        (0..channels).map(|_| r.range(0.15, 0.35)).collect(),
    );
    let model = Model::new(spec, &r.child(0))?;
    let input = Tensor::new(
        vec![batch, channels, side, side],
        (0..batch * channels * side * side)
            .map(|_| r.uniform())
            .collect(),
    )?;
    let mut labels = Vec::with_capacity(batch * classes);
    for _ in 0..batch {
        let raw: Vec<f64> = (0..classes).map(|_| r.uniform() + 0.01).collect();
        let total: f64 = raw.iter().sum();
        labels.extend(raw.iter().map(|v| (v / total) as f32));
    }
    let hook = if r.below(3) == 0 {
        Some(MixHook {
            layer: r.below(2),
            lambda: r.uniform(),
            partners: r.permutation(batch),
        })
    } else {
        None
    };
    Ok(TinyInstance {
        model,
        input,
        labels,
        hook,
    })
}

/// Runs [`check_gradients`] on a [`TinyInstance`].
pub fn check_instance(inst: &TinyInstance) -> Result<GradCheckReport> {
    check_gradients(&inst.model, &inst.input, &inst.labels, inst.hook.as_ref())
}

/// Redraws allowed per instance before giving up on finding one whose
/// finite differences cross no kink.
pub const MAX_ATTEMPTS: u64 = 32;

/// Checks instance `index`, redrawing it while its finite differences cross
/// a ReLU kink. Returns the instance, its report and the attempts used.
pub fn check_smooth_instance(
    rng: &RngStream,
    index: u64,
) -> Result<(TinyInstance, GradCheckReport, u64)> {
    let mut attempt = 0;
    loop {
        let inst = tiny_instance(rng, index, attempt)?;
        let report = check_instance(&inst)?;
        attempt += 1;
        if report.kink_crossings == 0 || attempt == MAX_ATTEMPTS {
            return Ok((inst, report, attempt));
        }
    }
}
