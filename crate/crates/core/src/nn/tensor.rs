use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Scalar;
use crate::data::{Image, Sample};
use crate::{Error, Result};

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape:?}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![S::zero(); n],
        }
    }

    /// Packs images into a `[batch, channels, height, width]` tensor.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let mut values = Vec::new();
        let mut shape = None;
        let mut batch = 0;
        for img in images {
            match shape {
                None => shape = Some(img.shape()),
                Some(s) if s != img.shape() => {
                    return Err(Error::Shape(format!(
                        "image {batch} has shape {:?}, expected {s:?}",
                        img.shape()
                    )))
                }
                _ => {}
            }
            values.extend(img.pixels().iter().map(|&p| S::of(p as f64)));
            batch += 1;
        }
        let (c, h, w) = shape.ok_or(Error::EmptyDataset)?;
        Ok(Tensor {
            shape: vec![batch, c, h, w],
            values,
        })
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        Self::from_images(samples.iter().map(|s| &s.image))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Row `i` of the leading dimension.
    pub fn row(&self, i: usize) -> &[S] {
        let stride = self.values.len() / self.shape[0];
        &self.values[i * stride..(i + 1) * stride]
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// Flattens sample labels into a `[batch * classes]` buffer.
pub fn flat_labels(samples: &[Sample]) -> Vec<f32> {
    samples
        .iter()
        .flat_map(|s| s.label.probs().iter().copied())
        .collect()
}
