use alloc::format;
use alloc::vec::Vec;

use super::{Gradients, Model, Scalar, Tensor};
use crate::{Error, Result};

/// SGD hyperparameters and one velocity buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<S> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Tensor<S>>,
}

impl<S: Scalar> OptimState<S> {
    pub fn new(model: &Model<S>, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: model
                .params()
                .iter()
                .map(|(t, _)| Tensor::zeros(t.shape().to_vec()))
                .collect(),
        }
    }
}

/// `v <- momentum * v + g + wd * p; p <- p - lr * v` on flat buffers.
#[inline]
pub fn sgd_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    velocity: &mut [S],
    lr: S,
    momentum: S,
    weight_decay: S,
) {
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// One momentum-SGD step. Biases and batch-norm scale/shift are not decayed.
pub fn sgd_step<S: Scalar>(
    model: &mut Model<S>,
    grads: &Gradients<S>,
    optim: &mut OptimState<S>,
) -> Result<()> {
    let decay: Vec<bool> = model.params().iter().map(|(_, d)| *d).collect();
    let mut params = model.params_mut();
    if grads.0.len() != params.len() || optim.velocity.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} velocity buffers",
            params.len(),
            grads.0.len(),
            optim.velocity.len()
        )));
    }
    let lr = S::of(optim.learning_rate);
    let mu = S::of(optim.momentum);
    for (i, p) in params.iter_mut().enumerate() {
        if p.shape() != grads.0[i].shape() || p.shape() != optim.velocity[i].shape() {
            return Err(Error::Shape(format!("param {i} shape mismatch")));
        }
        let wd = if decay[i] {
            S::of(optim.weight_decay)
        } else {
            S::zero()
        };
        sgd_update(
            p.values_mut(),
            grads.0[i].values(),
            optim.velocity[i].values_mut(),
            lr,
            mu,
            wd,
        );
    }
    Ok(())
}
