//! Augmentation operators and the pipelines that combine them.
//!
//! A pipeline is a list of moderate per-image ops (always label preserving)
//! plus at most one intensive op. Mixup and CutMix act on whole batches,
//! Manifold Mixup is handed to the network as a hidden-layer hook, and the
//! policy executor (with its trailing Cutout) acts per image.

mod basic;
mod beta;
mod mix;
mod policy;

use alloc::vec::Vec;

pub use self::basic::{
    cutout, cutout_at, flip_horizontal, hflip, pad_crop, pad_crop_at, CutoutRegion, FILL,
};
pub use self::beta::{beta_sample, ln_gamma_variate};
pub use self::mix::{
    cutmix_batch, cutmix_mask_from, cutmix_masks, cutmix_with, mix_pixel, mix_value, mixup_batch,
    mixup_with, CutMask, MixCoefficient, MixOutcome,
};
pub use self::policy::{
    apply_op, apply_policy, describe, AppliedPolicyOp, MagnitudeRange, MagnitudeTable, OpKind,
    Policy, PolicyOp, MAX_MAGNITUDE,
};

use crate::data::{Dataset, Sample};
use crate::rng::{path, RngStream};
use crate::{Error, Result};

/// Label-preserving per-image op.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "op", rename_all = "snake_case"))]
pub enum ModerateOp {
    PadCrop {
        padding: usize,
    },
    #[cfg_attr(feature = "serde", serde(rename = "hflip"))]
    HFlip {
        probability: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
#[allow(clippy::large_enum_variant)]
pub enum Intensive {
    None,
    Mixup {
        gamma: f64,
    },
    ManifoldMixup {
        gamma: f64,
        eligible_layers: Vec<usize>,
    },
    CutMix {
        apply_probability: f64,
    },
    /// Policy ops followed by Cutout; `apply_probability` gates the whole
    /// thing per image.
    PolicyAug {
        policy: Policy,
        cutout_size: usize,
        apply_probability: f64,
    },
}

impl Intensive {
    pub fn name(&self) -> &'static str {
        match self {
            Intensive::None => "none",
            Intensive::Mixup { .. } => "mixup",
            Intensive::ManifoldMixup { .. } => "manifold_mixup",
            Intensive::CutMix { .. } => "cutmix",
            Intensive::PolicyAug { .. } => "policy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugPipeline {
    pub moderate: Vec<ModerateOp>,
    pub intensive: Intensive,
    /// 1 = full intensity, 0 = intensive op disabled.
    pub intensity_scale: f64,
}

impl AugPipeline {
    /// No augmentation at all.
    pub fn identity() -> Self {
        AugPipeline::moderate_only(Vec::new())
    }

    pub fn moderate_only(moderate: Vec<ModerateOp>) -> Self {
        AugPipeline {
            moderate,
            intensive: Intensive::None,
            intensity_scale: 0.0,
        }
    }

    /// Random crop with `padding` then a 50% horizontal flip.
    pub fn standard(padding: usize) -> Vec<ModerateOp> {
        alloc::vec![
            ModerateOp::PadCrop { padding },
            ModerateOp::HFlip { probability: 0.5 }
        ]
    }

    pub fn with_intensive(moderate: Vec<ModerateOp>, intensive: Intensive) -> Self {
        let intensity_scale = if intensive == Intensive::None {
            0.0
        } else {
            1.0
        };
        AugPipeline {
            moderate,
            intensive,
            intensity_scale,
        }
    }

    pub fn has_intensive(&self) -> bool {
        self.intensive != Intensive::None
    }

    /// Same moderate ops, no intensive op.
    pub fn without_intensive(&self) -> Self {
        AugPipeline::moderate_only(self.moderate.clone())
    }

    pub fn validate(&self) -> Result<()> {
        for op in &self.moderate {
            if let ModerateOp::HFlip { probability } = op {
                check_probability(*probability)?;
            }
        }
        match &self.intensive {
            Intensive::Mixup { gamma } | Intensive::ManifoldMixup { gamma, .. }
                if gamma.is_nan() || *gamma <= 0.0 =>
            {
                Err(Error::Parameter(alloc::format!(
                    "mixing gamma must be positive, got {gamma}"
                )))
            }
            Intensive::ManifoldMixup {
                eligible_layers, ..
            } if eligible_layers.is_empty() => Err(Error::Parameter(
                "manifold mixup needs at least one eligible layer".into(),
            )),
            Intensive::CutMix { apply_probability }
            | Intensive::PolicyAug {
                apply_probability, ..
            } => check_probability(*apply_probability),
            _ => Ok(()),
        }?;
        if !(0.0..=1.0).contains(&self.intensity_scale) {
            return Err(Error::Parameter("intensity_scale outside [0, 1]".into()));
        }
        Ok(())
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Parameter(alloc::format!(
            "probability {p} outside [0, 1]"
        )))
    }
}

/// Scales the intensive op: mixing concentration or apply probability is
/// multiplied by `scale`, and `scale == 0` removes it. Moderate ops are
/// untouched. `scale` is clamped into `[0, 1]`.
pub fn weaken_intensity(pipeline: &AugPipeline, scale: f64) -> AugPipeline {
    let scale = scale.clamp(0.0, 1.0);
    if scale == 0.0 || !pipeline.has_intensive() {
        return pipeline.without_intensive();
    }
    let intensive = match &pipeline.intensive {
        Intensive::None => Intensive::None,
        Intensive::Mixup { gamma } => Intensive::Mixup {
            gamma: gamma * scale,
        },
        Intensive::ManifoldMixup {
            gamma,
            eligible_layers,
        } => Intensive::ManifoldMixup {
            gamma: gamma * scale,
            eligible_layers: eligible_layers.clone(),
        },
        Intensive::CutMix { apply_probability } => Intensive::CutMix {
            apply_probability: apply_probability * scale,
        },
        Intensive::PolicyAug {
            policy,
            cutout_size,
            apply_probability,
        } => Intensive::PolicyAug {
            policy: policy.clone(),
            cutout_size: *cutout_size,
            apply_probability: apply_probability * scale,
        },
    };
    AugPipeline {
        moderate: pipeline.moderate.clone(),
        intensive,
        intensity_scale: pipeline.intensity_scale * scale,
    }
}

/// One thing that happened to one image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AppliedOp {
    PadCrop {
        offset_y: usize,
        offset_x: usize,
    },
    HFlip,
    Policy(AppliedPolicyOp),
    Cutout(CutoutRegion),
    Mixup {
        lambda: f64,
        partner: usize,
    },
    CutMix {
        lambda: f64,
        partner: usize,
        mask: CutMask,
    },
    ManifoldMixup {
        layer: usize,
        lambda: f64,
        partner: usize,
    },
}

/// Hidden-layer mix to be performed inside the network's forward pass.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixHook {
    pub layer: usize,
    pub lambda: f64,
    pub partners: Vec<usize>,
}

/// Result of running a pipeline over one batch.
#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    pub samples: Vec<Sample>,
    /// Set for Manifold Mixup; labels in `samples` are already mixed.
    pub hook: Option<MixHook>,
    /// Per-sample op log, parallel to `samples`.
    pub log: Vec<Vec<AppliedOp>>,
}

/// Applies the moderate ops, then a per-image intensive op if any.
///
/// `rng` must be the per-sample stream; the caller derives it from
/// `(epoch, sample index)` so results do not depend on processing order.
pub fn augment_sample(
    pipeline: &AugPipeline,
    sample: &Sample,
    rng: &mut RngStream,
) -> (Sample, Vec<AppliedOp>) {
    let mut image = sample.image.clone();
    let mut log = Vec::new();
    for op in &pipeline.moderate {
        match *op {
            ModerateOp::PadCrop { padding } => {
                let (out, (offset_y, offset_x)) = pad_crop(&image, padding, rng);
                image = out;
                log.push(AppliedOp::PadCrop { offset_y, offset_x });
            }
            ModerateOp::HFlip { probability } => {
                let (out, flipped) = hflip(&image, probability, rng);
                image = out;
                if flipped {
                    log.push(AppliedOp::HFlip);
                }
            }
        }
    }
    if let Intensive::PolicyAug {
        policy,
        cutout_size,
        apply_probability,
    } = &pipeline.intensive
    {
        if rng.bernoulli(*apply_probability) {
            let (out, applied, region) = apply_policy(&image, policy, *cutout_size, rng);
            image = out;
            log.extend(applied.into_iter().map(AppliedOp::Policy));
            log.push(AppliedOp::Cutout(region));
        }
    }
    (
        Sample {
            image,
            label: sample.label.clone(),
        },
        log,
    )
}

/// Augments the samples `indices` of `dataset` as one batch.
///
/// Per-sample streams are `epoch_rng / SAMPLE / index`; the batch-level
/// stream is `epoch_rng / BATCH / batch_index`.
pub fn augment_batch(
    pipeline: &AugPipeline,
    dataset: &Dataset,
    indices: &[usize],
    epoch_rng: &RngStream,
    batch_index: usize,
) -> Result<AugmentedBatch> {
    let sample_root = epoch_rng.child(path::SAMPLE);
    let (samples, mut log): (Vec<Sample>, Vec<Vec<AppliedOp>>) = indices
        .iter()
        .map(|&i| augment_sample(pipeline, dataset.get(i), &mut sample_root.child(i as u64)))
        .unzip();
    let mut rng = epoch_rng.child(path::BATCH).child(batch_index as u64);
    let (samples, hook) = match &pipeline.intensive {
        Intensive::Mixup { gamma } => {
            let (mixed, outcome) = mixup_batch(&samples, *gamma, &mut rng)?;
            for (entry, &partner) in log.iter_mut().zip(&outcome.partners) {
                entry.push(AppliedOp::Mixup {
                    lambda: outcome.lambda,
                    partner: indices[partner],
                });
            }
            (mixed, None)
        }
        Intensive::CutMix { apply_probability } => {
            let (mixed, outcome) = cutmix_batch(&samples, *apply_probability, &mut rng)?;
            if let Some(outcome) = outcome {
                let mask = outcome.mask.expect("cutmix outcome carries its mask");
                for (entry, &partner) in log.iter_mut().zip(&outcome.partners) {
                    entry.push(AppliedOp::CutMix {
                        lambda: outcome.lambda,
                        partner: indices[partner],
                        mask,
                    });
                }
            }
            (mixed, None)
        }
        Intensive::ManifoldMixup {
            gamma,
            eligible_layers,
        } => {
            if eligible_layers.is_empty() {
                return Err(Error::Parameter(
                    "manifold mixup needs an eligible layer".into(),
                ));
            }
            let layer = eligible_layers[rng.below(eligible_layers.len())];
            let lambda = beta_sample(*gamma, &mut rng)?;
            let partners = rng.permutation(samples.len());
            let l = lambda as f32;
            let mixed = samples
                .iter()
                .zip(&partners)
                .map(|(s, &j)| Sample {
                    image: s.image.clone(),
                    label: mix::mix_labels(l, &s.label, &samples[j].label),
                })
                .collect();
            for (entry, &partner) in log.iter_mut().zip(&partners) {
                entry.push(AppliedOp::ManifoldMixup {
                    layer,
                    lambda,
                    partner: indices[partner],
                });
            }
            (
                mixed,
                Some(MixHook {
                    layer,
                    lambda,
                    partners,
                }),
            )
        }
        Intensive::None | Intensive::PolicyAug { .. } => (samples, None),
    };
    Ok(AugmentedBatch { samples, hook, log })
}
