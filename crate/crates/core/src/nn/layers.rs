//! Layer kernels with explicit forward and backward passes.
//!
//! Activations are flat `[batch, c, h, w]` buffers; dense layers see the same
//! buffer as `[batch, c * h * w]`.

use alloc::vec;
use alloc::vec::Vec;

use super::scalar::{axpy, dot};
use super::{Scalar, Tensor};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Dims { c, h, w }
    }

    pub fn size(&self) -> usize {
        self.c * self.h * self.w
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<S> {
    /// Per-channel `(x - mean) / std`; no parameters.
    Normalize {
        mean: Vec<S>,
        inv_std: Vec<S>,
    },
    /// 3x3 convolution, stride 1, zero padding 1, no bias. Weight is
    /// `[out, in, 3, 3]`.
    Conv3x3 {
        weight: Tensor<S>,
    },
    BatchNorm {
        gamma: Tensor<S>,
        beta: Tensor<S>,
        running_mean: Tensor<S>,
        running_var: Tensor<S>,
    },
    Relu,
    /// 2x2 average pooling with stride 2 (odd trailing rows/cols dropped).
    AvgPool2,
    GlobalAvgPool,
    /// Weight `[out, in]`, bias `[out]`.
    Dense {
        weight: Tensor<S>,
        bias: Tensor<S>,
    },
    /// Inverted dropout; identity in eval mode.
    Dropout {
        rate: f64,
    },
}

/// Per-layer values saved by a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub enum Cache<S> {
    None,
    BatchNorm { xhat: Vec<S>, inv_std: Vec<S> },
    Dropout { mask: Vec<S> },
}

/// Batch mean and unbiased variance from a train-mode batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

impl<S: Scalar> Layer<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Normalize { .. } => "normalize",
            Layer::Conv3x3 { .. } => "conv3x3",
            Layer::BatchNorm { .. } => "batchnorm",
            Layer::Relu => "relu",
            Layer::AvgPool2 => "avgpool2",
            Layer::GlobalAvgPool => "global_avgpool",
            Layer::Dense { .. } => "dense",
            Layer::Dropout { .. } => "dropout",
        }
    }

    pub fn out_dims(&self, d: Dims) -> Dims {
        match self {
            Layer::Conv3x3 { weight } => Dims::new(weight.shape()[0], d.h, d.w),
            Layer::AvgPool2 => Dims::new(d.c, d.h / 2, d.w / 2),
            Layer::GlobalAvgPool => Dims::new(d.c, 1, 1),
            Layer::Dense { weight, .. } => Dims::new(weight.shape()[0], 1, 1),
            _ => d,
        }
    }

    /// Trainable tensors with their weight-decay flag.
    pub fn params(&self) -> Vec<(&Tensor<S>, bool)> {
        match self {
            Layer::Conv3x3 { weight } => vec![(weight, true)],
            Layer::BatchNorm { gamma, beta, .. } => vec![(gamma, false), (beta, false)],
            Layer::Dense { weight, bias } => vec![(weight, true), (bias, false)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            Layer::Conv3x3 { weight } => vec![weight],
            Layer::BatchNorm { gamma, beta, .. } => vec![gamma, beta],
            Layer::Dense { weight, bias } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&self) -> Vec<&Tensor<S>> {
        match self {
            Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } => vec![running_mean, running_var],
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            Layer::BatchNorm {
                running_mean,
                running_var,
                ..
            } => vec![running_mean, running_var],
            _ => Vec::new(),
        }
    }

    pub(crate) fn forward(
        &self,
        x: &[S],
        batch: usize,
        d: Dims,
        train: bool,
        rng: Option<&mut RngStream>,
    ) -> Result<(Vec<S>, Cache<S>, Option<BatchStats>)> {
        let plane = d.plane();
        let out = match self {
            Layer::Normalize { mean, inv_std } => {
                let mut y = x.to_vec();
                for (i, chunk) in y.chunks_exact_mut(plane).enumerate() {
                    let c = i % d.c;
                    for v in chunk {
                        *v = (*v - mean[c]) * inv_std[c];
                    }
                }
                y
            }
            Layer::Conv3x3 { weight } => conv_forward(x, batch, d, weight),
            Layer::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
            } => {
                if train {
                    return Ok(bn_train_forward(x, batch, d, gamma.values(), beta.values()));
                }
                let mut y = x.to_vec();
                for (i, chunk) in y.chunks_exact_mut(plane).enumerate() {
                    let c = i % d.c;
                    let inv = S::one() / (running_var.values()[c] + S::of(BN_EPS)).sqrt();
                    let scale = gamma.values()[c] * inv;
                    let shift = beta.values()[c] - running_mean.values()[c] * scale;
                    for v in chunk {
                        *v = *v * scale + shift;
                    }
                }
                y
            }
            Layer::Relu => x.iter().map(|&v| v.max(S::zero())).collect(),
            Layer::AvgPool2 => {
                let (oh, ow) = (d.h / 2, d.w / 2);
                let quarter = S::of(0.25);
                let mut y = vec![S::zero(); batch * d.c * oh * ow];
                for (p, out) in y.chunks_exact_mut(oh * ow).enumerate() {
                    let src = &x[p * plane..(p + 1) * plane];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let i = 2 * oy * d.w + 2 * ox;
                            out[oy * ow + ox] = quarter
                                * ((src[i] + src[i + 1]) + (src[i + d.w] + src[i + d.w + 1]));
                        }
                    }
                }
                y
            }
            Layer::GlobalAvgPool => {
                let inv = S::one() / S::of(plane as f64);
                x.chunks_exact(plane)
                    .map(|p| p.iter().fold(S::zero(), |a, &v| a + v) * inv)
                    .collect()
            }
            Layer::Dense { weight, bias } => {
                let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
                let mut y = Vec::with_capacity(batch * outs);
                for b in 0..batch {
                    let xb = &x[b * ins..(b + 1) * ins];
                    for o in 0..outs {
                        y.push(
                            bias.values()[o] + dot(&weight.values()[o * ins..(o + 1) * ins], xb),
                        );
                    }
                }
                y
            }
            Layer::Dropout { rate } => {
                if !train || *rate <= 0.0 {
                    x.to_vec()
                } else {
                    let rng = rng.ok_or_else(|| {
                        Error::Parameter("dropout needs an rng in train mode".into())
                    })?;
                    let keep = S::of(1.0 / (1.0 - rate));
                    let mask: Vec<S> = x
                        .iter()
                        .map(|_| {
                            if rng.bernoulli(*rate) {
                                S::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    let y = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    return Ok((y, Cache::Dropout { mask }, None));
                }
            }
        };
        Ok((out, Cache::None, None))
    }

    /// Gradient of the layer input given the output gradient; parameter
    /// gradients are accumulated into `grads` (one buffer per param tensor).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward(
        &self,
        x: &[S],
        cache: &Cache<S>,
        dout: &[S],
        batch: usize,
        d: Dims,
        grads: &mut [Tensor<S>],
        need_input_grad: bool,
    ) -> Vec<S> {
        let plane = d.plane();
        match (self, cache) {
            (Layer::Normalize { inv_std, .. }, _) => {
                let mut dx = dout.to_vec();
                for (i, chunk) in dx.chunks_exact_mut(plane).enumerate() {
                    let s = inv_std[i % d.c];
                    for v in chunk {
                        *v *= s;
                    }
                }
                dx
            }
            (Layer::Conv3x3 { weight }, _) => {
                conv_backward(x, dout, batch, d, weight, grads, need_input_grad)
            }
            (Layer::BatchNorm { gamma, .. }, Cache::BatchNorm { xhat, inv_std }) => {
                bn_backward(dout, xhat, inv_std, gamma.values(), batch, d, grads)
            }
            (Layer::Relu, _) => x
                .iter()
                .zip(dout)
                .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
                .collect(),
            (Layer::AvgPool2, _) => {
                let (oh, ow) = (d.h / 2, d.w / 2);
                let quarter = S::of(0.25);
                let mut dx = vec![S::zero(); x.len()];
                for (p, g) in dout.chunks_exact(oh * ow).enumerate() {
                    let dst = &mut dx[p * plane..(p + 1) * plane];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let v = g[oy * ow + ox] * quarter;
                            let i = 2 * oy * d.w + 2 * ox;
                            dst[i] = v;
                            dst[i + 1] = v;
                            dst[i + d.w] = v;
                            dst[i + d.w + 1] = v;
                        }
                    }
                }
                dx
            }
            (Layer::GlobalAvgPool, _) => {
                let inv = S::one() / S::of(plane as f64);
                let mut dx = vec![S::zero(); x.len()];
                for (p, &g) in dout.iter().enumerate() {
                    dx[p * plane..(p + 1) * plane].fill(g * inv);
                }
                dx
            }
            (Layer::Dense { weight, .. }, _) => {
                let (outs, ins) = (weight.shape()[0], weight.shape()[1]);
                let (gw, gb) = grads.split_at_mut(1);
                let gw = gw[0].values_mut();
                let gb = gb[0].values_mut();
                let mut dx = vec![S::zero(); batch * ins];
                for b in 0..batch {
                    let xb = &x[b * ins..(b + 1) * ins];
                    let dxb = &mut dx[b * ins..(b + 1) * ins];
                    for o in 0..outs {
                        let g = dout[b * outs + o];
                        gb[o] += g;
                        axpy(g, xb, &mut gw[o * ins..(o + 1) * ins]);
                        if need_input_grad {
                            axpy(g, &weight.values()[o * ins..(o + 1) * ins], dxb);
                        }
                    }
                }
                dx
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                dout.iter().zip(mask).map(|(&g, &m)| g * m).collect()
            }
            (Layer::Dropout { .. }, _) => dout.to_vec(),
            (Layer::BatchNorm { .. }, _) => {
                unreachable!("batch-norm backward without a train-mode cache")
            }
        }
    }
}

/// Row range `[lo, hi)` of outputs whose input index `o + k - 1` is in bounds.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    (if k == 0 { 1 } else { 0 }, if k == 2 { n - 1 } else { n })
}

fn conv_forward<S: Scalar>(x: &[S], batch: usize, d: Dims, weight: &Tensor<S>) -> Vec<S> {
    let (cout, cin) = (weight.shape()[0], weight.shape()[1]);
    let plane = d.plane();
    let w = weight.values();
    let mut out = vec![S::zero(); batch * cout * plane];
    for b in 0..batch {
        let xin = &x[b * cin * plane..(b + 1) * cin * plane];
        let yout = &mut out[b * cout * plane..(b + 1) * cout * plane];
        for co in 0..cout {
            let op = &mut yout[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let ip = &xin[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, d.h);
                    for kx in 0..3 {
                        let (x0, x1) = valid_range(kx, d.w);
                        let wv = w[((co * cin + ci) * 3 + ky) * 3 + kx];
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let src = &ip[iy * d.w + x0 + kx - 1..iy * d.w + x1 + kx - 1];
                            axpy(wv, src, &mut op[y * d.w + x0..y * d.w + x1]);
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward<S: Scalar>(
    x: &[S],
    dout: &[S],
    batch: usize,
    d: Dims,
    weight: &Tensor<S>,
    grads: &mut [Tensor<S>],
    need_input_grad: bool,
) -> Vec<S> {
    let (cout, cin) = (weight.shape()[0], weight.shape()[1]);
    let plane = d.plane();
    let w = weight.values();
    let gw = grads[0].values_mut();
    let mut dx = vec![S::zero(); x.len()];
    for b in 0..batch {
        let xin = &x[b * cin * plane..(b + 1) * cin * plane];
        let g = &dout[b * cout * plane..(b + 1) * cout * plane];
        let dxb = &mut dx[b * cin * plane..(b + 1) * cin * plane];
        for co in 0..cout {
            let gp = &g[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let ip = &xin[ci * plane..(ci + 1) * plane];
                for ky in 0..3 {
                    let (y0, y1) = valid_range(ky, d.h);
                    for kx in 0..3 {
                        let (x0, x1) = valid_range(kx, d.w);
                        let wi = ((co * cin + ci) * 3 + ky) * 3 + kx;
                        let mut acc = S::zero();
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let grow = &gp[y * d.w + x0..y * d.w + x1];
                            let src = iy * d.w + x0 + kx - 1..iy * d.w + x1 + kx - 1;
                            acc += dot(grow, &ip[src.clone()]);
                            if need_input_grad {
                                axpy(w[wi], grow, &mut dxb[ci * plane..(ci + 1) * plane][src]);
                            }
                        }
                        gw[wi] += acc;
                    }
                }
            }
        }
    }
    dx
}

fn bn_train_forward<S: Scalar>(
    x: &[S],
    batch: usize,
    d: Dims,
    gamma: &[S],
    beta: &[S],
) -> (Vec<S>, Cache<S>, Option<BatchStats>) {
    let plane = d.plane();
    let n = (batch * plane) as f64;
    let mut mean = vec![0.0f64; d.c];
    let mut var = vec![0.0f64; d.c];
    for (i, chunk) in x.chunks_exact(plane).enumerate() {
        mean[i % d.c] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
    }
    for m in &mut mean {
        *m /= n;
    }
    for (i, chunk) in x.chunks_exact(plane).enumerate() {
        let m = mean[i % d.c];
        var[i % d.c] += chunk
            .iter()
            .map(|v| (v.as_f64() - m) * (v.as_f64() - m))
            .sum::<f64>();
    }
    for v in &mut var {
        *v /= n;
    }
    let inv_std: Vec<S> = var
        .iter()
        .map(|v| S::of(1.0 / libm::sqrt(v + BN_EPS)))
        .collect();
    let mean_s: Vec<S> = mean.iter().map(|&m| S::of(m)).collect();
    let mut xhat = vec![S::zero(); x.len()];
    let mut y = vec![S::zero(); x.len()];
    for (i, (chunk, (xh, yy))) in x
        .chunks_exact(plane)
        .zip(xhat.chunks_exact_mut(plane).zip(y.chunks_exact_mut(plane)))
        .enumerate()
    {
        let c = i % d.c;
        for ((&v, h), o) in chunk.iter().zip(xh).zip(yy) {
            *h = (v - mean_s[c]) * inv_std[c];
            *o = gamma[c] * *h + beta[c];
        }
    }
    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    let stats = BatchStats {
        mean,
        var_unbiased: var.iter().map(|v| v * unbiased).collect(),
    };
    (y, Cache::BatchNorm { xhat, inv_std }, Some(stats))
}

fn bn_backward<S: Scalar>(
    dout: &[S],
    xhat: &[S],
    inv_std: &[S],
    gamma: &[S],
    batch: usize,
    d: Dims,
    grads: &mut [Tensor<S>],
) -> Vec<S> {
    let plane = d.plane();
    let n = S::of((batch * plane) as f64);
    let mut dgamma = vec![S::zero(); d.c];
    let mut dbeta = vec![S::zero(); d.c];
    for (i, (g, h)) in dout
        .chunks_exact(plane)
        .zip(xhat.chunks_exact(plane))
        .enumerate()
    {
        let c = i % d.c;
        dbeta[c] += g.iter().fold(S::zero(), |a, &v| a + v);
        dgamma[c] += dot(g, h);
    }
    let mut dx = vec![S::zero(); dout.len()];
    for (i, ((g, h), o)) in dout
        .chunks_exact(plane)
        .zip(xhat.chunks_exact(plane))
        .zip(dx.chunks_exact_mut(plane))
        .enumerate()
    {
        let c = i % d.c;
        let k = gamma[c] * inv_std[c] / n;
        for ((&gv, &hv), ov) in g.iter().zip(h).zip(o) {
            *ov = k * (n * gv - dbeta[c] - hv * dgamma[c]);
        }
    }
    for c in 0..d.c {
        grads[0].values_mut()[c] += dgamma[c];
        grads[1].values_mut()[c] += dbeta[c];
    }
    dx
}
