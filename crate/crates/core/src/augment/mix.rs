//! Batch-level mixing: Mixup and CutMix.

use alloc::format;
use alloc::vec::Vec;

use num_traits::Float;

use super::beta::beta_sample;
use crate::data::{LabelDist, Sample};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Combination weight and the Beta concentration it was drawn with.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixCoefficient {
    pub lambda: f64,
    pub gamma: f64,
}

/// Half-open pasted rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CutMask {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CutMask {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }
}

/// What a mixing op did to a batch: the weight, each sample's partner, and
/// for CutMix the pasted rectangle.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixOutcome {
    pub lambda: f64,
    pub partners: Vec<usize>,
    pub mask: Option<CutMask>,
}

/// `lambda * a + (1 - lambda) * b`, the single mixing expression shared by
/// input-space Mixup and the network's layer-0 hook.
#[inline]
pub fn mix_value<S: Float>(lambda: S, a: S, b: S) -> S {
    lambda * a + (S::one() - lambda) * b
}

/// Pixel variant of [`mix_value`], clamped back into `[0, 1]`.
#[inline]
pub fn mix_pixel<S: Float>(lambda: S, a: S, b: S) -> S {
    mix_value(lambda, a, b).max(S::zero()).min(S::one())
}

pub(crate) fn mix_labels(lambda: f32, a: &LabelDist, b: &LabelDist) -> LabelDist {
    LabelDist::from_mixed(
        a.probs()
            .iter()
            .zip(b.probs())
            .map(|(&p, &q)| mix_value(lambda, p, q))
            .collect(),
    )
}

fn check_batch(batch: &[Sample]) -> Result<()> {
    let first = batch.first().ok_or(Error::EmptyDataset)?;
    let shape = first.image.shape();
    let classes = first.label.num_classes();
    for (i, s) in batch.iter().enumerate() {
        if s.image.shape() != shape || s.label.num_classes() != classes {
            return Err(Error::Shape(format!(
                "batch item {i} does not match item 0"
            )));
        }
    }
    Ok(())
}

fn check_partners(partners: &[usize], len: usize) -> Result<()> {
    if partners.len() != len || partners.iter().any(|&p| p >= len) {
        return Err(Error::Parameter(format!(
            "partner list is not a pairing of {len} items"
        )));
    }
    Ok(())
}

/// Mixup with one `lambda ~ Beta(gamma, gamma)` per batch and partners given
/// by a seeded permutation of the batch.
pub fn mixup_batch(
    batch: &[Sample],
    gamma: f64,
    rng: &mut RngStream,
) -> Result<(Vec<Sample>, MixOutcome)> {
    check_batch(batch)?;
    let lambda = beta_sample(gamma, rng)?;
    let partners = rng.permutation(batch.len());
    let mixed = mixup_with(batch, lambda, &partners)?;
    Ok((
        mixed,
        MixOutcome {
            lambda,
            partners,
            mask: None,
        },
    ))
}

/// Mixup with a fixed weight and pairing.
pub fn mixup_with(batch: &[Sample], lambda: f64, partners: &[usize]) -> Result<Vec<Sample>> {
    check_batch(batch)?;
    check_partners(partners, batch.len())?;
    let l = lambda as f32;
    Ok(batch
        .iter()
        .zip(partners)
        .map(|(a, &j)| {
            let b = &batch[j];
            let mut image = a.image.clone();
            for (p, &q) in image.pixels_mut().iter_mut().zip(b.image.pixels()) {
                *p = mix_pixel(l, *p, q);
            }
            Sample {
                image,
                label: mix_labels(l, &a.label, &b.label),
            }
        })
        .collect())
}

/// Draws a CutMix rectangle. The returned coefficient's `lambda` is the
/// area-adjusted weight `1 - area / (H * W)`.
pub fn cutmix_masks(
    height: usize,
    width: usize,
    rng: &mut RngStream,
) -> Result<(CutMask, MixCoefficient)> {
    if height == 0 || width == 0 {
        return Err(Error::Parameter("CutMix needs a non-empty image".into()));
    }
    let lambda = beta_sample(1.0, rng)?;
    let cy = rng.below(height);
    let cx = rng.below(width);
    Ok(cutmix_mask_from(height, width, lambda, cy, cx))
}

/// Rectangle of side `W * sqrt(1 - lambda)` by `H * sqrt(1 - lambda)` centred
/// on `(cy, cx)` and clipped to the image.
pub fn cutmix_mask_from(
    height: usize,
    width: usize,
    lambda: f64,
    cy: usize,
    cx: usize,
) -> (CutMask, MixCoefficient) {
    let ratio = libm::sqrt((1.0 - lambda).clamp(0.0, 1.0));
    let cut_w = libm::floor(width as f64 * ratio) as i64;
    let cut_h = libm::floor(height as f64 * ratio) as i64;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let x0 = cx as i64 - cut_w / 2;
    let y0 = cy as i64 - cut_h / 2;
    let mask = CutMask {
        x0: clip(x0, width),
        y0: clip(y0, height),
        x1: clip(x0 + cut_w, width),
        y1: clip(y0 + cut_h, height),
    };
    let total = height * width;
    let adjusted = (total - mask.area()) as f64 / total as f64;
    (
        mask,
        MixCoefficient {
            lambda: adjusted,
            gamma: 1.0,
        },
    )
}

/// CutMix: with probability `apply_probability` (one coin per batch) paste
/// each partner's rectangle into each image and mix labels with the adjusted
/// weight. Returns `None` for the outcome when the coin says no.
pub fn cutmix_batch(
    batch: &[Sample],
    apply_probability: f64,
    rng: &mut RngStream,
) -> Result<(Vec<Sample>, Option<MixOutcome>)> {
    if !(0.0..=1.0).contains(&apply_probability) {
        return Err(Error::Parameter(format!(
            "CutMix apply probability {apply_probability} outside [0, 1]"
        )));
    }
    check_batch(batch)?;
    if !rng.bernoulli(apply_probability) {
        return Ok((batch.to_vec(), None));
    }
    let (_, h, w) = batch[0].image.shape();
    let (mask, coef) = cutmix_masks(h, w, rng)?;
    let partners = rng.permutation(batch.len());
    let mixed = cutmix_with(batch, &mask, coef.lambda, &partners)?;
    Ok((
        mixed,
        Some(MixOutcome {
            lambda: coef.lambda,
            partners,
            mask: Some(mask),
        }),
    ))
}

/// Pastes `mask` from each partner and mixes labels with weight `lambda`.
pub fn cutmix_with(
    batch: &[Sample],
    mask: &CutMask,
    lambda: f64,
    partners: &[usize],
) -> Result<Vec<Sample>> {
    check_batch(batch)?;
    check_partners(partners, batch.len())?;
    let (channels, h, w) = batch[0].image.shape();
    if mask.x1 > w || mask.y1 > h || mask.x0 > mask.x1 || mask.y0 > mask.y1 {
        return Err(Error::Parameter(format!(
            "mask {mask:?} outside a {h}x{w} image"
        )));
    }
    let l = lambda as f32;
    Ok(batch
        .iter()
        .zip(partners)
        .map(|(a, &j)| {
            let b = &batch[j];
            let mut image = a.image.clone();
            for c in 0..channels {
                let src = b.image.plane(c);
                let dst = image.plane_mut(c);
                for y in mask.y0..mask.y1 {
                    let row = y * w;
                    dst[row + mask.x0..row + mask.x1]
                        .copy_from_slice(&src[row + mask.x0..row + mask.x1]);
                }
            }
            Sample {
                image,
                label: mix_labels(l, &a.label, &b.label),
            }
        })
        .collect())
}
