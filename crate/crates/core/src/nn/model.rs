//! Network specification, construction, forward (with mixing hook) and
//! backward passes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::layers::{BatchStats, Cache, Dims, Layer, BN_MOMENTUM};
use super::loss::soft_ce_with_grad;
use super::{Scalar, Tensor};
use crate::augment::{mix_pixel, mix_value, MixHook};
use crate::rng::{path, RngStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Architecture {
    /// Dense layers of the given widths, each followed by ReLU.
    Mlp { hidden: Vec<usize> },
    /// One block per entry: conv3x3 -> batch-norm -> relu -> 2x2 avg-pool;
    /// then global average pooling and a dense classifier.
    #[cfg_attr(feature = "serde", serde(rename = "small_convnet"))]
    SmallConvNet { channels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
    /// `(channels, height, width)`.
    pub input_shape: (usize, usize, usize),
    /// Per-channel input normalisation, applied inside the network.
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    /// Layers where Manifold Mixup may mix: 0 is the raw input, `k` the
    /// output of block (or hidden layer) `k`.
    pub eligible_mix_layers: Vec<usize>,
    pub drop_rate: f64,
}

impl ModelSpec {
    pub fn small_convnet(
        channels: Vec<usize>,
        num_classes: usize,
        input_shape: (usize, usize, usize),
    ) -> Self {
        ModelSpec {
            architecture: Architecture::SmallConvNet { channels },
            num_classes,
            input_shape,
            norm_mean: vec![0.0; input_shape.0],
            norm_std: vec![1.0; input_shape.0],
            eligible_mix_layers: vec![0, 1],
            drop_rate: 0.0,
        }
    }

    pub fn mlp(hidden: Vec<usize>, num_classes: usize, input_shape: (usize, usize, usize)) -> Self {
        ModelSpec {
            architecture: Architecture::Mlp { hidden },
            ..ModelSpec::small_convnet(Vec::new(), num_classes, input_shape)
        }
    }

    pub fn with_normalization(mut self, mean: Vec<f64>, std: Vec<f64>) -> Self {
        self.norm_mean = mean;
        self.norm_std = std;
        self
    }

    /// Number of mixing points after the input (blocks or hidden layers).
    pub fn num_mix_layers(&self) -> usize {
        match &self.architecture {
            Architecture::Mlp { hidden } => hidden.len(),
            Architecture::SmallConvNet { channels } => channels.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidSpec("empty input shape".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("need at least two classes".into()));
        }
        if self.norm_mean.len() != c || self.norm_std.len() != c {
            return Err(Error::InvalidSpec(
                "normalisation constants must have one entry per channel".into(),
            ));
        }
        if let Some(&l) = self
            .eligible_mix_layers
            .iter()
            .find(|&&l| l > self.num_mix_layers())
        {
            return Err(Error::InvalidSpec(format!(
                "eligible mix layer {l} beyond the {} available",
                self.num_mix_layers()
            )));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::InvalidSpec("drop_rate must be in [0, 1)".into()));
        }
        match &self.architecture {
            Architecture::Mlp { hidden } if hidden.contains(&0) => {
                Err(Error::InvalidSpec("zero-width hidden layer".into()))
            }
            Architecture::SmallConvNet { channels } => {
                if channels.is_empty() || channels.contains(&0) {
                    return Err(Error::InvalidSpec(
                        "conv net needs non-zero channel widths".into(),
                    ));
                }
                if (h >> channels.len()) == 0 || (w >> channels.len()) == 0 {
                    return Err(Error::InvalidSpec(format!(
                        "{h}x{w} input is too small for {} pooling blocks",
                        channels.len()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    spec: ModelSpec,
    layers: Vec<Layer<S>>,
    /// `mix_points[k]` is the index of the layer whose input is mix point `k`.
    mix_points: Vec<usize>,
    /// Input dims of every layer, plus the output dims at the end.
    dims: Vec<Dims>,
}

/// Values saved by a train-mode forward.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    inputs: Vec<Vec<S>>,
    caches: Vec<Cache<S>>,
    logits: Tensor<S>,
    batch: usize,
    hook: Option<(usize, S, Vec<usize>)>,
}

impl<S: Scalar> Trace<S> {
    pub fn logits(&self) -> &Tensor<S> {
        &self.logits
    }
}

/// Parameter gradients in [`Model::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S>(pub Vec<Tensor<S>>);

impl<S: Scalar> Model<S> {
    /// Builds the network with He-normal weights drawn from `rng`.
    pub fn new(spec: ModelSpec, rng: &RngStream) -> Result<Self> {
        spec.validate()?;
        let (c, h, w) = spec.input_shape;
        let mut rng = rng.child(path::INIT);
        let mut layers = vec![Layer::Normalize {
            mean: spec.norm_mean.iter().map(|&m| S::of(m)).collect(),
            inv_std: spec
                .norm_std
                .iter()
                .map(|&s| S::of(1.0 / s.max(1e-6)))
                .collect(),
        }];
        let mut mix_points = vec![0];
        let mut normal =
            |n: usize, std: f64| -> Vec<S> { (0..n).map(|_| S::of(rng.normal() * std)).collect() };
        let dense =
            |ins: usize, outs: usize, std: f64, normal: &mut dyn FnMut(usize, f64) -> Vec<S>| {
                Layer::Dense {
                    weight: Tensor::new(vec![outs, ins], normal(outs * ins, std)).unwrap(),
                    bias: Tensor::zeros(vec![outs]),
                }
            };
        match &spec.architecture {
            Architecture::Mlp { hidden } => {
                let mut ins = c * h * w;
                for &width in hidden {
                    layers.push(dense(ins, width, libm::sqrt(2.0 / ins as f64), &mut normal));
                    layers.push(Layer::Relu);
                    mix_points.push(layers.len());
                    ins = width;
                }
                if spec.drop_rate > 0.0 {
                    layers.push(Layer::Dropout {
                        rate: spec.drop_rate,
                    });
                }
                layers.push(dense(
                    ins,
                    spec.num_classes,
                    libm::sqrt(1.0 / ins as f64),
                    &mut normal,
                ));
            }
            Architecture::SmallConvNet { channels } => {
                let mut cin = c;
                for &cout in channels {
                    layers.push(Layer::Conv3x3 {
                        weight: Tensor::new(
                            vec![cout, cin, 3, 3],
                            normal(cout * cin * 9, libm::sqrt(2.0 / (cin * 9) as f64)),
                        )
                        .unwrap(),
                    });
                    layers.push(Layer::BatchNorm {
                        gamma: Tensor::new(vec![cout], vec![S::one(); cout]).unwrap(),
                        beta: Tensor::zeros(vec![cout]),
                        running_mean: Tensor::zeros(vec![cout]),
                        running_var: Tensor::new(vec![cout], vec![S::one(); cout]).unwrap(),
                    });
                    layers.push(Layer::Relu);
                    layers.push(Layer::AvgPool2);
                    mix_points.push(layers.len());
                    cin = cout;
                }
                layers.push(Layer::GlobalAvgPool);
                if spec.drop_rate > 0.0 {
                    layers.push(Layer::Dropout {
                        rate: spec.drop_rate,
                    });
                }
                layers.push(dense(
                    cin,
                    spec.num_classes,
                    libm::sqrt(1.0 / cin as f64),
                    &mut normal,
                ));
            }
        }
        let mut dims = vec![Dims::new(c, h, w)];
        for l in &layers {
            let next = l.out_dims(*dims.last().unwrap());
            dims.push(next);
        }
        Ok(Model {
            spec,
            layers,
            mix_points,
            dims,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    /// Trainable tensors in a fixed order, with their weight-decay flags.
    pub fn params(&self) -> Vec<(&Tensor<S>, bool)> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(t, _)| t.len()).sum()
    }

    /// Every persistent tensor: parameters, then batch-norm running stats.
    pub fn state(&self) -> Vec<&Tensor<S>> {
        let mut out: Vec<&Tensor<S>> = self.params().into_iter().map(|(t, _)| t).collect();
        out.extend(self.layers.iter().flat_map(|l| l.buffers()));
        out
    }

    /// Replaces the values of every [`Model::state`] tensor, in order.
    pub fn load_state(&mut self, values: &[Vec<S>]) -> Result<()> {
        let lens: Vec<usize> = self.state().iter().map(|t| t.len()).collect();
        if lens.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} state tensors, got {}",
                lens.len(),
                values.len()
            )));
        }
        for (i, (&n, v)) in lens.iter().zip(values).enumerate() {
            if n != v.len() {
                return Err(Error::Shape(format!(
                    "state tensor {i}: {n} values, got {}",
                    v.len()
                )));
            }
        }
        let mut src = values.iter();
        for l in &mut self.layers {
            for t in l.params_mut() {
                t.values_mut().copy_from_slice(src.next().unwrap());
            }
        }
        for l in &mut self.layers {
            for t in l.buffers_mut() {
                t.values_mut().copy_from_slice(src.next().unwrap());
            }
        }
        Ok(())
    }

    /// Same network in another float type.
    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut out =
            Model::<T>::new(self.spec.clone(), &RngStream::new(0)).expect("spec already validated");
        let state: Vec<Vec<T>> = self
            .state()
            .iter()
            .map(|t| t.cast::<T>().into_values())
            .collect();
        out.load_state(&state).expect("same spec, same layout");
        out
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<usize> {
        let (c, h, w) = self.spec.input_shape;
        match input.shape() {
            [b, ic, ih, iw] if (*ic, *ih, *iw) == (c, h, w) && *b > 0 => Ok(*b),
            s => Err(Error::Shape(format!(
                "input {s:?} does not match model input {c}x{h}x{w}"
            ))),
        }
    }

    fn resolve_hook(
        &self,
        hook: Option<&MixHook>,
        batch: usize,
    ) -> Result<Option<(usize, S, Vec<usize>)>> {
        let Some(hook) = hook else { return Ok(None) };
        if !self.spec.eligible_mix_layers.contains(&hook.layer) {
            return Err(Error::IneligibleLayer(hook.layer));
        }
        if hook.partners.len() != batch || hook.partners.iter().any(|&p| p >= batch) {
            return Err(Error::Shape(format!(
                "hook pairing does not cover a batch of {batch}"
            )));
        }
        Ok(Some((
            self.mix_points[hook.layer],
            S::of(hook.lambda),
            hook.partners.clone(),
        )))
    }

    fn run(
        &self,
        input: &Tensor<S>,
        hook: Option<&MixHook>,
        train: bool,
        mut rng: Option<RngStream>,
    ) -> Result<(Trace<S>, Vec<Option<BatchStats>>)> {
        let batch = self.check_input(input)?;
        let hook = self.resolve_hook(hook, batch)?;
        let mut x = input.values().to_vec();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            if let Some((at, lambda, partners)) = &hook {
                if *at == li {
                    x = mix_rows(&x, batch, *lambda, partners, li == 0);
                }
            }
            let (y, cache, s) = layer.forward(&x, batch, self.dims[li], train, rng.as_mut())?;
            if train {
                inputs.push(x);
                caches.push(cache);
            }
            stats.push(s);
            x = y;
        }
        let logits = Tensor::new(vec![batch, self.spec.num_classes], x)?;
        Ok((
            Trace {
                inputs,
                caches,
                logits,
                batch,
                hook,
            },
            stats,
        ))
    }

    /// Eval-mode forward: batch-norm uses running statistics, no dropout.
    pub fn forward_eval(&self, input: &Tensor<S>, hook: Option<&MixHook>) -> Result<Tensor<S>> {
        Ok(self.run(input, hook, false, None)?.0.logits)
    }

    /// Train-mode forward without touching running statistics.
    pub fn forward_train_frozen(
        &self,
        input: &Tensor<S>,
        hook: Option<&MixHook>,
        dropout_rng: Option<RngStream>,
    ) -> Result<Trace<S>> {
        Ok(self.run(input, hook, true, dropout_rng)?.0)
    }

    /// Train-mode forward: batch statistics, running statistics updated.
    pub fn forward_train(
        &mut self,
        input: &Tensor<S>,
        hook: Option<&MixHook>,
        dropout_rng: Option<RngStream>,
    ) -> Result<Trace<S>> {
        let (trace, stats) = self.run(input, hook, true, dropout_rng)?;
        let m = S::of(BN_MOMENTUM);
        for (layer, s) in self.layers.iter_mut().zip(stats) {
            if let (
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                },
                Some(s),
            ) = (layer, s)
            {
                for (r, &b) in running_mean.values_mut().iter_mut().zip(&s.mean) {
                    *r = (S::one() - m) * *r + m * S::of(b);
                }
                for (r, &b) in running_var.values_mut().iter_mut().zip(&s.var_unbiased) {
                    *r = (S::one() - m) * *r + m * S::of(b);
                }
            }
        }
        Ok(trace)
    }
    /// Sign pattern (`> 0`) of every ReLU input in `trace`.
    pub fn relu_pattern(&self, trace: &Trace<S>) -> Vec<bool> {
        let mut out = Vec::new();
        for (layer, x) in self.layers.iter().zip(&trace.inputs) {
            if matches!(layer, Layer::Relu) {
                out.extend(x.iter().map(|&v| v > S::zero()));
            }
        }
        out
    }

    /// Gradients of the mean soft-label cross-entropy with respect to every
    /// parameter. Returns the loss alongside.
    pub fn backward(&self, trace: &Trace<S>, labels: &[f32]) -> Result<(f64, Gradients<S>)> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::MissingTrace);
        }
        let (loss, dlogits) = soft_ce_with_grad(&trace.logits, labels)?;
        let mut grads: Vec<Vec<Tensor<S>>> = self
            .layers
            .iter()
            .map(|l| {
                l.params()
                    .iter()
                    .map(|(t, _)| Tensor::zeros(t.shape().to_vec()))
                    .collect()
            })
            .collect();
        let mut g = dlogits.into_values();
        for li in (0..self.layers.len()).rev() {
            g = self.layers[li].backward(
                &trace.inputs[li],
                &trace.caches[li],
                &g,
                trace.batch,
                self.dims[li],
                &mut grads[li],
                li > 0,
            );
            if let Some((at, lambda, partners)) = &trace.hook {
                if *at == li && li > 0 {
                    g = unmix_rows(&g, trace.batch, *lambda, partners);
                }
            }
        }
        Ok((loss, Gradients(grads.into_iter().flatten().collect())))
    }
}

/// Row `i` becomes `lambda * x_i + (1 - lambda) * x_partner(i)`.
fn mix_rows<S: Scalar>(
    x: &[S],
    batch: usize,
    lambda: S,
    partners: &[usize],
    pixels: bool,
) -> Vec<S> {
    let stride = x.len() / batch;
    let mut out = vec![S::zero(); x.len()];
    for (i, &j) in partners.iter().enumerate() {
        let (a, b) = (
            &x[i * stride..(i + 1) * stride],
            &x[j * stride..(j + 1) * stride],
        );
        for ((o, &av), &bv) in out[i * stride..(i + 1) * stride].iter_mut().zip(a).zip(b) {
            *o = if pixels {
                mix_pixel(lambda, av, bv)
            } else {
                mix_value(lambda, av, bv)
            };
        }
    }
    out
}

/// Adjoint of [`mix_rows`] (without the pixel clamp).
fn unmix_rows<S: Scalar>(g: &[S], batch: usize, lambda: S, partners: &[usize]) -> Vec<S> {
    let stride = g.len() / batch;
    let rest = S::one() - lambda;
    let mut out = vec![S::zero(); g.len()];
    for (i, &j) in partners.iter().enumerate() {
        for k in 0..stride {
            let gv = g[i * stride + k];
            out[i * stride + k] += lambda * gv;
            out[j * stride + k] += rest * gv;
        }
    }
    out
}
