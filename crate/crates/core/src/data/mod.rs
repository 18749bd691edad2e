//! Images, label distributions, datasets and seeded batching.

mod cifar;
mod synthetic;

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::rng::RngStream;
use crate::{Error, Result};

pub use self::cifar::{decode_cifar, decode_records, encode_records, CIFAR_RECORD_LEN};
pub use self::synthetic::{generate_synthetic, SyntheticSpec};

/// Planar float image, channel-major then row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {channels}x{height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image {
            channels,
            height,
            width,
            pixels: vec![value.clamp(0.0, 1.0); channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Mutable pixel access. Callers must keep values in `[0, 1]`.
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }
}

/// Per-class probability vector. A hard label is the one-hot special case.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDist {
    probs: Vec<f32>,
}

/// Tolerance on the sum of a label distribution.
pub const LABEL_SUM_TOL: f64 = 1e-6;

impl LabelDist {
    pub fn new(probs: Vec<f32>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Parameter("empty label distribution".into()));
        }
        if probs.iter().any(|p| p.is_nan() || *p < 0.0) {
            return Err(Error::Parameter("negative or NaN label entry".into()));
        }
        let sum: f64 = probs.iter().map(|&p| p as f64).sum();
        if (sum - 1.0).abs() > LABEL_SUM_TOL {
            return Err(Error::Parameter(format!("label entries sum to {sum}")));
        }
        Ok(LabelDist { probs })
    }

    /// Builds a distribution without validation; used by mixing code that
    /// produces convex combinations of valid distributions.
    pub(crate) fn from_mixed(probs: Vec<f32>) -> Self {
        LabelDist { probs }
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Highest-probability class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.probs.iter().map(|&p| p as f64).sum();
        self.probs.iter().all(|p| *p >= 0.0) && (sum - 1.0).abs() <= LABEL_SUM_TOL
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class_index: usize, num_classes: usize) -> Result<LabelDist> {
    if class_index >= num_classes {
        return Err(Error::IndexOutOfRange {
            index: class_index,
            len: num_classes,
        });
    }
    let mut probs = vec![0.0; num_classes];
    probs[class_index] = 1.0;
    Ok(LabelDist { probs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: LabelDist,
}

/// Immutable, shape-homogeneous collection of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    num_classes: usize,
    shape: (usize, usize, usize),
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, num_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let shape = samples
            .first()
            .map(|s| s.image.shape())
            .ok_or(Error::EmptyDataset)?;
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != shape {
                return Err(Error::Shape(format!(
                    "sample {i} has shape {:?}, expected {shape:?}",
                    s.image.shape()
                )));
            }
            if s.label.num_classes() != num_classes {
                return Err(Error::Shape(format!(
                    "sample {i} label has {} classes, expected {num_classes}",
                    s.label.num_classes()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            num_classes,
            shape,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `(channels, height, width)` shared by every image.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Subset by index list, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: self.samples.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.name.clone(), self.num_classes, samples)
    }

    /// Per-channel pixel mean and population standard deviation.
    pub fn channel_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let (c, h, w) = self.shape;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for s in &self.samples {
            for ch in 0..c {
                for &v in s.image.plane(ch) {
                    let v = v as f64;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let n = (self.samples.len() * h * w) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| libm::sqrt((q / n - m * m).max(0.0)))
            .collect();
        (mean, std)
    }
}

/// Seeded permutation of `0..len` cut into consecutive batches; the last batch
/// may be short.
pub fn epoch_batches(
    dataset: &Dataset,
    batch_size: usize,
    rng: &RngStream,
) -> Result<Vec<Vec<usize>>> {
    index_batches(dataset.len(), batch_size, rng)
}

pub(crate) fn index_batches(
    len: usize,
    batch_size: usize,
    rng: &RngStream,
) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be at least 1".into()));
    }
    let order = rng.child(crate::rng::path::SHUFFLE).permutation(len);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                image: Image::filled(1, 2, 2, i as f32 / n as f32),
                label: one_hot(i % 2, 2).unwrap(),
            })
            .collect();
        Dataset::new("tiny", 2, samples).unwrap()
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(0, 3).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(one_hot(2, 3).unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert!(matches!(one_hot(3, 3), Err(Error::IndexOutOfRange { .. })));
        let mut total = [0.0f32; 5];
        for i in 0..5 {
            for (t, p) in total.iter_mut().zip(one_hot(i, 5).unwrap().probs()) {
                *t += p;
            }
        }
        assert_eq!(total, [1.0; 5]);
    }

    #[test]
    fn label_validation() {
        assert!(LabelDist::new(vec![0.5, 0.5]).is_ok());
        assert!(LabelDist::new(vec![0.5, 0.6]).is_err());
        assert!(LabelDist::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(3, 1, 1, vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn dataset_rejects_mixed_shapes() {
        let samples = vec![
            Sample {
                image: Image::filled(1, 2, 2, 0.0),
                label: one_hot(0, 2).unwrap(),
            },
            Sample {
                image: Image::filled(1, 3, 2, 0.0),
                label: one_hot(0, 2).unwrap(),
            },
        ];
        assert!(matches!(
            Dataset::new("x", 2, samples),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Dataset::new("x", 2, vec![]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn batches_partition_the_dataset() {
        let ds = tiny_dataset(10);
        let rng = RngStream::new(4).child(7);
        let batches = epoch_batches(&ds, 4, &rng).unwrap();
        let sizes: Vec<_> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(batches, epoch_batches(&ds, 4, &rng).unwrap());
        assert_ne!(
            batches,
            epoch_batches(&ds, 4, &RngStream::new(4).child(8)).unwrap()
        );
    }

    #[test]
    fn batching_errors() {
        let ds = tiny_dataset(3);
        assert!(epoch_batches(&ds, 0, &RngStream::new(0)).is_err());
        assert!(matches!(
            index_batches(0, 2, &RngStream::new(0)),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn channel_stats_of_constant_images() {
        let samples = vec![
            Sample {
                image: Image::new(2, 1, 2, vec![0.2, 0.2, 1.0, 0.0]).unwrap(),
                label: one_hot(0, 2).unwrap(),
            };
            3
        ];
        let ds = Dataset::new("c", 2, samples).unwrap();
        let (mean, std) = ds.channel_stats();
        assert!((mean[0] - 0.2).abs() < 1e-7 && std[0] < 1e-6);
        assert!((mean[1] - 0.5).abs() < 1e-12 && (std[1] - 0.5).abs() < 1e-12);
    }
}
