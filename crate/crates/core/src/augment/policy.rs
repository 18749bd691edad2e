//! Policy executor: sub-policies of two (op, probability, magnitude) triples.
//!
//! Magnitudes are integers 0..=9 mapped linearly onto a per-kind physical
//! range by a [`MagnitudeTable`]. Kinds marked `signed` get a random sign, as
//! geometric ops are applied in both directions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::basic::{cutout_at, CutoutRegion, FILL};
use crate::data::Image;
use crate::rng::RngStream;
use crate::{Error, Result};

pub const MAX_MAGNITUDE: u8 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum OpKind {
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Rotate,
    Invert,
    Solarize,
    Posterize,
    Contrast,
    Color,
    Brightness,
    Sharpness,
    AutoContrast,
    Equalize,
    Cutout,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::ShearX,
        OpKind::ShearY,
        OpKind::TranslateX,
        OpKind::TranslateY,
        OpKind::Rotate,
        OpKind::Invert,
        OpKind::Solarize,
        OpKind::Posterize,
        OpKind::Contrast,
        OpKind::Color,
        OpKind::Brightness,
        OpKind::Sharpness,
        OpKind::AutoContrast,
        OpKind::Equalize,
        OpKind::Cutout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::ShearX => "ShearX",
            OpKind::ShearY => "ShearY",
            OpKind::TranslateX => "TranslateX",
            OpKind::TranslateY => "TranslateY",
            OpKind::Rotate => "Rotate",
            OpKind::Invert => "Invert",
            OpKind::Solarize => "Solarize",
            OpKind::Posterize => "Posterize",
            OpKind::Contrast => "Contrast",
            OpKind::Color => "Color",
            OpKind::Brightness => "Brightness",
            OpKind::Sharpness => "Sharpness",
            OpKind::AutoContrast => "AutoContrast",
            OpKind::Equalize => "Equalize",
            OpKind::Cutout => "Cutout",
        }
    }

    fn index(self) -> usize {
        OpKind::ALL.iter().position(|&k| k == self).unwrap()
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown op kind `{s}`")))
    }
}

/// Linear magnitude mapping: `low + (high - low) * m / 9`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MagnitudeRange {
    pub low: f64,
    pub high: f64,
    pub signed: bool,
}

impl MagnitudeRange {
    pub fn physical(&self, magnitude: u8) -> f64 {
        self.low + (self.high - self.low) * magnitude as f64 / MAX_MAGNITUDE as f64
    }
}

/// Physical range for each of the 15 op kinds.
///
/// Units: shear factor; translation as a fraction of the image side; rotation
/// in degrees; solarize threshold in 8-bit levels; posterize bits; enhancement
/// factor (1 = unchanged) for Contrast/Color/Brightness/Sharpness; Cutout side
/// as a fraction of the shorter image side. Invert, AutoContrast and Equalize
/// take no magnitude.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MagnitudeTable {
    ranges: [MagnitudeRange; 15],
}

impl Default for MagnitudeTable {
    fn default() -> Self {
        let r = |low, high, signed| MagnitudeRange { low, high, signed };
        MagnitudeTable {
            ranges: [
                r(0.0, 0.3, true),
                r(0.0, 0.3, true),
                r(0.0, 0.45, true),
                r(0.0, 0.45, true),
                r(0.0, 30.0, true),
                r(0.0, 0.0, false),
                r(256.0, 0.0, false),
                r(8.0, 4.0, false),
                r(0.1, 1.9, false),
                r(0.1, 1.9, false),
                r(0.1, 1.9, false),
                r(0.1, 1.9, false),
                r(0.0, 0.0, false),
                r(0.0, 0.0, false),
                r(0.0, 0.6, false),
            ],
        }
    }
}

impl MagnitudeTable {
    pub fn get(&self, kind: OpKind) -> MagnitudeRange {
        self.ranges[kind.index()]
    }

    pub fn set(&mut self, kind: OpKind, range: MagnitudeRange) -> Result<()> {
        if !range.low.is_finite() || !range.high.is_finite() {
            return Err(Error::Config(format!(
                "non-finite magnitude range for {kind}"
            )));
        }
        self.ranges[kind.index()] = range;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PolicyOp {
    pub kind: OpKind,
    pub probability: f64,
    pub magnitude: u8,
}

impl PolicyOp {
    pub fn new(kind: OpKind, probability: f64, magnitude: u8) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Config(format!(
                "{kind}: probability {probability} outside [0, 1]"
            )));
        }
        if magnitude > MAX_MAGNITUDE {
            return Err(Error::Config(format!(
                "{kind}: magnitude {magnitude} above {MAX_MAGNITUDE}"
            )));
        }
        Ok(PolicyOp {
            kind,
            probability,
            magnitude,
        })
    }
}

/// Non-empty list of sub-policies, one chosen uniformly per image.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Policy {
    sub_policies: Vec<[PolicyOp; 2]>,
    magnitudes: MagnitudeTable,
}

impl Policy {
    pub fn new(sub_policies: Vec<[PolicyOp; 2]>, magnitudes: MagnitudeTable) -> Result<Self> {
        if sub_policies.is_empty() {
            return Err(Error::Config("policy has no sub-policies".into()));
        }
        for pair in &sub_policies {
            for op in pair {
                PolicyOp::new(op.kind, op.probability, op.magnitude)?;
            }
        }
        Ok(Policy {
            sub_policies,
            magnitudes,
        })
    }

    pub fn sub_policies(&self) -> &[[PolicyOp; 2]] {
        &self.sub_policies
    }

    pub fn magnitudes(&self) -> &MagnitudeTable {
        &self.magnitudes
    }

    /// Eight sub-policies that together use every op kind at least once.
    pub fn builtin() -> Self {
        use OpKind::*;
        let op = |k, p, m| PolicyOp::new(k, p, m).unwrap();
        Policy::new(
            alloc::vec![
                [op(Invert, 0.1, 7), op(Contrast, 0.2, 6)],
                [op(Rotate, 0.7, 2), op(TranslateX, 0.3, 9)],
                [op(Sharpness, 0.8, 1), op(ShearY, 0.5, 8)],
                [op(ShearX, 0.5, 4), op(Equalize, 0.6, 0)],
                [op(Posterize, 0.4, 5), op(AutoContrast, 0.5, 0)],
                [op(Solarize, 0.4, 5), op(TranslateY, 0.6, 4)],
                [op(Color, 0.4, 3), op(Brightness, 0.6, 7)],
                [op(Cutout, 0.2, 4), op(Equalize, 0.2, 0)],
            ],
            MagnitudeTable::default(),
        )
        .unwrap()
    }
}

/// An op that actually fired, with its resolved physical parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AppliedPolicyOp {
    pub kind: OpKind,
    pub magnitude: u8,
    pub value: f64,
}

/// Applies one op at an already-resolved physical value (sign included).
pub fn apply_op(image: &Image, kind: OpKind, value: f64) -> Image {
    match kind {
        OpKind::ShearX => affine(image, [1.0, value, 0.0, 1.0], [0.0, 0.0]),
        OpKind::ShearY => affine(image, [1.0, 0.0, value, 1.0], [0.0, 0.0]),
        OpKind::TranslateX => affine(
            image,
            [1.0, 0.0, 0.0, 1.0],
            [value * image.width() as f64, 0.0],
        ),
        OpKind::TranslateY => affine(
            image,
            [1.0, 0.0, 0.0, 1.0],
            [0.0, value * image.height() as f64],
        ),
        OpKind::Rotate => {
            let (s, c) = libm::sincos(value.to_radians());
            affine(image, [c, -s, s, c], [0.0, 0.0])
        }
        OpKind::Invert => map_pixels(image, |v| 1.0 - v),
        OpKind::Solarize => map_levels(image, |q| if q as f64 >= value { 255 - q } else { q }),
        OpKind::Posterize => {
            let bits = (libm::round(value) as i32).clamp(1, 8) as u32;
            let mask = (0xFFu32 << (8 - bits)) as u8;
            map_levels(image, |q| q & mask)
        }
        OpKind::Contrast => {
            let gray = grayscale(image);
            let mean = (gray.iter().map(|&g| g as f64).sum::<f64>() / gray.len() as f64) as f32;
            map_pixels(image, |v| blend(mean, v, value))
        }
        OpKind::Color => {
            if image.channels() < 3 {
                return image.clone();
            }
            let gray = grayscale(image);
            let n = gray.len();
            let mut out = image.clone();
            for (i, v) in out.pixels_mut().iter_mut().enumerate() {
                *v = blend(gray[i % n], *v, value).clamp(0.0, 1.0);
            }
            out
        }
        OpKind::Brightness => map_pixels(image, |v| blend(0.0, v, value)),
        OpKind::Sharpness => sharpness(image, value),
        OpKind::AutoContrast => per_channel_levels(image, autocontrast_lut),
        OpKind::Equalize => per_channel_levels(image, equalize_lut),
        OpKind::Cutout => {
            let size = libm::round(value * image.height().min(image.width()) as f64) as usize;
            cutout_at(image, size, image.height() / 2, image.width() / 2).0
        }
    }
}

/// Picks a sub-policy uniformly, applies each op with its probability, then
/// applies Cutout of `cutout_size` at a uniform centre.
pub fn apply_policy(
    image: &Image,
    policy: &Policy,
    cutout_size: usize,
    rng: &mut RngStream,
) -> (Image, Vec<AppliedPolicyOp>, CutoutRegion) {
    let pair = &policy.sub_policies[rng.below(policy.sub_policies.len())];
    let mut out = image.clone();
    let mut applied = Vec::new();
    for op in pair {
        if !rng.bernoulli(op.probability) {
            continue;
        }
        let range = policy.magnitudes.get(op.kind);
        let mut value = range.physical(op.magnitude);
        if range.signed && rng.bernoulli(0.5) {
            value = -value;
        }
        out = if op.kind == OpKind::Cutout {
            let size = libm::round(value * out.height().min(out.width()) as f64) as usize;
            let cy = rng.below(out.height());
            let cx = rng.below(out.width());
            cutout_at(&out, size, cy, cx).0
        } else {
            apply_op(&out, op.kind, value)
        };
        applied.push(AppliedPolicyOp {
            kind: op.kind,
            magnitude: op.magnitude,
            value,
        });
    }
    let cy = rng.below(out.height());
    let cx = rng.below(out.width());
    let (out, region) = cutout_at(&out, cutout_size, cy, cx);
    (out, applied, region)
}

fn map_pixels(image: &Image, f: impl Fn(f32) -> f32) -> Image {
    let mut out = image.clone();
    for v in out.pixels_mut() {
        *v = f(*v).clamp(0.0, 1.0);
    }
    out
}

#[inline]
fn to_level(v: f32) -> u8 {
    libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8
}

#[inline]
fn from_level(q: u8) -> f32 {
    q as f32 / 255.0
}

fn map_levels(image: &Image, f: impl Fn(u8) -> u8) -> Image {
    map_pixels(image, |v| from_level(f(to_level(v))))
}

fn per_channel_levels(image: &Image, lut_for: fn(&[u32; 256]) -> Option<[u8; 256]>) -> Image {
    let mut out = image.clone();
    for c in 0..image.channels() {
        let mut hist = [0u32; 256];
        for &v in image.plane(c) {
            hist[to_level(v) as usize] += 1;
        }
        if let Some(lut) = lut_for(&hist) {
            for v in out.plane_mut(c) {
                *v = from_level(lut[to_level(*v) as usize]);
            }
        }
    }
    out
}

fn autocontrast_lut(hist: &[u32; 256]) -> Option<[u8; 256]> {
    let lo = hist.iter().position(|&h| h > 0)?;
    let hi = hist.iter().rposition(|&h| h > 0)?;
    if hi <= lo {
        return None;
    }
    let scale = 255.0 / (hi - lo) as f64;
    let mut lut = [0u8; 256];
    for (i, slot) in lut.iter_mut().enumerate() {
        let v = ((i as f64 - lo as f64) * scale).clamp(0.0, 255.0);
        *slot = libm::round(v) as u8;
    }
    Some(lut)
}

/// Histogram equalisation in the PIL formulation.
fn equalize_lut(hist: &[u32; 256]) -> Option<[u8; 256]> {
    let last = hist.iter().rposition(|&h| h > 0)?;
    let total: u32 = hist.iter().sum();
    let step = (total - hist[last]) / 255;
    if step == 0 {
        return None;
    }
    let mut lut = [0u8; 256];
    let mut n = step / 2;
    for (i, slot) in lut.iter_mut().enumerate() {
        *slot = (n / step).min(255) as u8;
        n += hist[i];
    }
    Some(lut)
}

/// `base + factor * (v - base)`: factor 0 gives `base`, 1 gives `v`.
#[inline]
fn blend(base: f32, v: f32, factor: f64) -> f32 {
    (base as f64 + factor * (v as f64 - base as f64)) as f32
}

/// ITU-R 601 luma; for single-channel images the channel itself.
fn grayscale(image: &Image) -> Vec<f32> {
    if image.channels() < 3 {
        return image.plane(0).to_vec();
    }
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    r.iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect()
}

/// Blend with a 3x3 smoothed copy (centre weight 5, others 1); border pixels
/// keep their value in the smoothed copy.
fn sharpness(image: &Image, factor: f64) -> Image {
    let (channels, h, w) = image.shape();
    let mut out = image.clone();
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..channels {
        let src = image.plane(c);
        let dst = out.plane_mut(c);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let mut acc = 4.0 * src[y * w + x];
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += src[(y + dy - 1) * w + (x + dx - 1)];
                    }
                }
                let smooth = acc / 13.0;
                dst[y * w + x] = blend(smooth, src[y * w + x], factor).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Inverse-mapped affine warp about the image centre with bilinear sampling.
/// `m = [a, b, c, d]` maps output offsets to source offsets:
/// `src = [a b; c d] * (dst - centre) + centre - t`.
fn affine(image: &Image, m: [f64; 4], t: [f64; 2]) -> Image {
    let (channels, h, w) = image.shape();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = m[0] * dx + m[1] * dy + cx - t[0];
            let sy = m[2] * dx + m[3] * dy + cy - t[1];
            for c in 0..channels {
                let v = bilinear(image.plane(c), h, w, sy, sx);
                out.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

fn bilinear(plane: &[f32], h: usize, w: usize, sy: f64, sx: f64) -> f32 {
    // Snap coordinates that are within rounding of a pixel centre so that
    // zero-magnitude warps reproduce the source exactly.
    let snap = |v: f64| {
        let r = libm::round(v);
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    let (sy, sx) = (snap(sy), snap(sx));
    let y0 = libm::floor(sy);
    let x0 = libm::floor(sx);
    let fy = (sy - y0) as f32;
    let fx = (sx - x0) as f32;
    let at = |yy: f64, xx: f64| -> f32 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            FILL
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    if fy == 0.0 && fx == 0.0 {
        return at(y0, x0);
    }
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1.0) * fx;
    let bottom = at(y0 + 1.0, x0) * (1.0 - fx) + at(y0 + 1.0, x0 + 1.0) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Human-readable `kind:magnitude` form used in logs.
pub fn describe(op: &AppliedPolicyOp) -> String {
    format!("{}(m={},v={:.4})", op.kind, op.magnitude, op.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(seed: u64, c: usize, h: usize, w: usize) -> Image {
        let mut r = RngStream::new(seed);
        let px = (0..c * h * w).map(|_| r.uniform() as f32).collect();
        Image::new(c, h, w, px).unwrap()
    }

    fn max_diff(a: &Image, b: &Image) -> f32 {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn kind_names_round_trip() {
        for k in OpKind::ALL {
            assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
        }
        assert!(matches!("Blur".parse::<OpKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn magnitude_mapping_is_monotone() {
        let table = MagnitudeTable::default();
        for k in OpKind::ALL {
            let r = table.get(k);
            let vals: Vec<f64> = (0..=9).map(|m| r.physical(m)).collect();
            let inc = vals.windows(2).all(|p| p[1] >= p[0]);
            let dec = vals.windows(2).all(|p| p[1] <= p[0]);
            assert!(inc || dec, "{k}");
        }
    }

    #[test]
    fn invert_twice() {
        let img = noisy(1, 3, 8, 8);
        let twice = apply_op(&apply_op(&img, OpKind::Invert, 0.0), OpKind::Invert, 0.0);
        assert!(max_diff(&img, &twice) <= 1.0 / 255.0);
    }

    #[test]
    fn zero_rotation_and_full_posterize_are_identities() {
        let img = noisy(2, 3, 9, 7);
        let table = MagnitudeTable::default();
        let rot = apply_op(&img, OpKind::Rotate, table.get(OpKind::Rotate).physical(0));
        assert!(max_diff(&img, &rot) <= 1.0 / 255.0);
        let post = apply_op(
            &img,
            OpKind::Posterize,
            table.get(OpKind::Posterize).physical(0),
        );
        assert!(max_diff(&img, &post) <= 1.0 / 255.0);
    }

    #[test]
    fn rotate_quarter_turn_moves_pixels() {
        let img = noisy(3, 1, 5, 5);
        let rot = apply_op(&img, OpKind::Rotate, 90.0);
        // centre stays, a corner lands on another corner
        assert!((rot.get(0, 2, 2) - img.get(0, 2, 2)).abs() < 1e-6);
        let corners = [
            img.get(0, 0, 4),
            img.get(0, 4, 0),
            img.get(0, 0, 0),
            img.get(0, 4, 4),
        ];
        assert!(corners.iter().any(|&c| (rot.get(0, 0, 0) - c).abs() < 1e-5));
    }

    #[test]
    fn solarize_and_posterize_levels() {
        let img = Image::new(1, 1, 3, alloc::vec![0.0, 100.0 / 255.0, 200.0 / 255.0]).unwrap();
        let s = apply_op(&img, OpKind::Solarize, 128.0);
        assert_eq!(s.pixels(), &[0.0, 100.0 / 255.0, 55.0 / 255.0]);
        let p = apply_op(&img, OpKind::Posterize, 4.0);
        assert_eq!(p.pixels(), &[0.0, 96.0 / 255.0, 192.0 / 255.0]);
    }

    #[test]
    fn autocontrast_stretches_range() {
        let img = Image::new(1, 1, 3, alloc::vec![0.2, 0.4, 0.6]).unwrap();
        let out = apply_op(&img, OpKind::AutoContrast, 0.0);
        assert_eq!(out.pixels()[0], 0.0);
        assert_eq!(out.pixels()[2], 1.0);
    }

    #[test]
    fn enhancement_factor_one_is_identity() {
        let img = noisy(4, 3, 6, 6);
        for k in [
            OpKind::Contrast,
            OpKind::Color,
            OpKind::Brightness,
            OpKind::Sharpness,
        ] {
            assert!(max_diff(&img, &apply_op(&img, k, 1.0)) < 1e-6, "{k}");
        }
    }

    #[test]
    fn every_op_preserves_range() {
        let img = noisy(5, 3, 10, 10);
        let table = MagnitudeTable::default();
        for k in OpKind::ALL {
            for m in [0u8, 4, 9] {
                for sign in [1.0, -1.0] {
                    let out = apply_op(&img, k, sign * table.get(k).physical(m));
                    assert!(
                        out.pixels().iter().all(|v| (0.0..=1.0).contains(v)),
                        "{k} m={m}"
                    );
                }
            }
        }
    }

    #[test]
    fn builtin_policy_covers_every_kind() {
        let p = Policy::builtin();
        for k in OpKind::ALL {
            assert!(
                p.sub_policies().iter().flatten().any(|op| op.kind == k),
                "{k}"
            );
        }
    }

    #[test]
    fn policy_validation() {
        assert!(Policy::new(alloc::vec![], MagnitudeTable::default()).is_err());
        assert!(PolicyOp::new(OpKind::Rotate, 1.2, 3).is_err());
        assert!(PolicyOp::new(OpKind::Rotate, 0.2, 10).is_err());
    }

    #[test]
    fn apply_policy_is_deterministic() {
        let img = noisy(6, 3, 12, 12);
        let p = Policy::builtin();
        let run = |seed| apply_policy(&img, &p, 4, &mut RngStream::new(seed));
        assert_eq!(run(3), run(3));
    }
}
