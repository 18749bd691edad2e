//! Procedural shape corpus used as the default training set.
//!
//! Class `k` draws shape `k % 4` (filled rectangle, disk, plus-shaped cross,
//! striped square) rotated by a class-dependent base angle `(k / 4) * pi/8`.
//! Position, scale, aspect, rotation jitter, shape colour and background
//! colour are all random, and Gaussian pixel noise is added, so colour
//! statistics carry no class information.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::{one_hot, Dataset, Image, Sample};
use crate::rng::{path, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub height: usize,
    pub width: usize,
}

const NOISE_STD: f64 = 0.06;

/// Generates class-balanced `(train, test)` splits. Train and test use
/// disjoint RNG paths of the same generator.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    if spec.num_classes < 2 {
        return Err(Error::InvalidSpec(format!(
            "num_classes = {} (need at least 2)",
            spec.num_classes
        )));
    }
    if spec.height < 8 || spec.width < 8 {
        return Err(Error::InvalidSpec(format!(
            "images are {}x{} (need at least 8x8)",
            spec.height, spec.width
        )));
    }
    if spec.per_class_train == 0 || spec.per_class_test == 0 {
        return Err(Error::InvalidSpec("zero samples per class".into()));
    }
    let root = RngStream::new(seed).child(path::SYNTHETIC);
    let train = split(
        spec,
        &root.child(0),
        spec.per_class_train,
        "synthetic-train",
    )?;
    let test = split(spec, &root.child(1), spec.per_class_test, "synthetic-test")?;
    Ok((train, test))
}

fn split(spec: &SyntheticSpec, rng: &RngStream, per_class: usize, name: &str) -> Result<Dataset> {
    let n = per_class * spec.num_classes;
    let samples = (0..n)
        .map(|i| {
            let class = i % spec.num_classes;
            let mut r = rng.child(i as u64);
            Ok(Sample {
                image: render(class, spec.height, spec.width, &mut r),
                label: one_hot(class, spec.num_classes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, spec.num_classes, samples)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = ((h - libm::floor(h)) * 6.0).min(5.999_999);
    let i = h6 as usize;
    let f = h6 - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn inside(kind: usize, u: f64, v: f64, aspect: f64) -> bool {
    match kind {
        0 => u.abs() <= 1.0 && v.abs() <= aspect,
        1 => u * u + v * v <= 1.0,
        2 => (u.abs() <= 1.0 && v.abs() <= 0.3) || (v.abs() <= 1.0 && u.abs() <= 0.3),
        _ => u.abs() <= 1.0 && v.abs() <= 1.0 && (libm::floor((v + 1.0) * 2.5) as i64) % 2 == 0,
    }
}

fn render(class: usize, height: usize, width: usize, rng: &mut RngStream) -> Image {
    let kind = class % 4;
    let base_angle = (class / 4) as f64 * PI / 8.0;
    let side = height.min(width) as f64;

    let background = hsv_to_rgb(rng.uniform(), rng.range(0.0, 0.6), rng.range(0.15, 0.85));
    let foreground = hsv_to_rgb(rng.uniform(), rng.range(0.3, 1.0), rng.range(0.3, 1.0));
    let cx = rng.range(0.35, 0.65) * width as f64;
    let cy = rng.range(0.35, 0.65) * height as f64;
    let scale = rng.range(0.22, 0.38) * side;
    let aspect = rng.range(0.45, 0.8);
    let angle = base_angle + rng.range(-0.25, 0.25);
    let (sin, cos) = libm::sincos(angle);

    let mut pixels = alloc::vec![0.0f32; 3 * height * width];
    for y in 0..height {
        for x in 0..width {
            let dx = (x as f64 + 0.5 - cx) / scale;
            let dy = (y as f64 + 0.5 - cy) / scale;
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let colour = if inside(kind, u, v, aspect) {
                &foreground
            } else {
                &background
            };
            for (c, &base) in colour.iter().enumerate() {
                let value = base + NOISE_STD * rng.normal();
                pixels[(c * height + y) * width + x] = value.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(3, height, width, pixels).expect("rendered pixels are clamped")
}
