//! Stateful layer wrappers around [`super::ops`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::rng::RngState;
use crate::tensor::{s, Scalar, Tensor};

use super::ops::{self, BatchNormCache};
use super::{he_uniform_init, LayerMode, Parameter};

fn missing_cache(layer: &str) -> crate::Error {
    invalid!("{layer}: backward called without a preceding forward")
}

#[derive(Debug, Clone)]
pub struct Conv2d<T = f32> {
    pub weight: Parameter<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights with `fan_in = in_channels * 9`.
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut RngState) -> Result<Self> {
        let w = he_uniform_init(&[out_channels, in_channels, 3, 3], in_channels * 9, rng)?;
        Ok(Self::from_weight(w))
    }

    pub fn from_weight(weight: Tensor<T>) -> Self {
        Self { weight: Parameter::new(weight), input: None }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T = f32> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    /// `gamma = 1`, `beta = 0`, running mean 0 and variance 1;
    /// `eps = 1e-5`, running-stat momentum 0.99.
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Parameter::new(Tensor::full(&[features], T::one())),
            beta: Parameter::new(Tensor::zeros(&[features])),
            running_mean: Tensor::zeros(&[features]),
            running_var: Tensor::full(&[features], T::one()),
            eps: 1e-5,
            momentum: 0.99,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.value.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dense<T = f32> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    /// He-uniform weights (`fan_in = inputs`) and zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut RngState) -> Result<Self> {
        let w = he_uniform_init(&[inputs, outputs], inputs, rng)?;
        Ok(Self {
            weight: Parameter::new(w),
            bias: Parameter::new(Tensor::zeros(&[outputs])),
            input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone)]
pub struct Activation<T = f32> {
    pub kind: ActivationKind,
    // relu keeps its input, sigmoid its output
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }

    fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        match self.kind {
            ActivationKind::Relu => ops::relu(x),
            ActivationKind::Sigmoid => ops::sigmoid(x),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Upsample2x;

#[derive(Debug, Clone)]
pub struct Dropout<T = f32> {
    pub p: f64,
    mask: Option<Option<Vec<T>>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid!("dropout probability must lie in [0, 1), got {p}"));
        }
        Ok(Self { p, mask: None })
    }
}

/// One step of a [`Sequential`] stack.
#[derive(Debug, Clone)]
pub enum Layer<T = f32> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    Activation(Activation<T>),
    MaxPool(MaxPool2x2),
    Upsample(Upsample2x),
    Dropout(Dropout<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Activation(Activation::new(ActivationKind::Relu))
    }

    pub fn sigmoid() -> Self {
        Layer::Activation(Activation::new(ActivationKind::Sigmoid))
    }

    /// Short kind tag, e.g. `"conv3x3"` or `"dense"`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv3x3",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Dense(_) => "dense",
            Layer::Activation(a) => match a.kind {
                ActivationKind::Relu => "relu",
                ActivationKind::Sigmoid => "sigmoid",
            },
            Layer::MaxPool(_) => "maxpool2x2",
            Layer::Upsample(_) => "upsample2x",
            Layer::Dropout(_) => "dropout",
        }
    }

    /// Forward pass that records what `backward` needs.
    pub fn forward(&mut self, x: &Tensor<T>, mode: LayerMode, rng: &mut RngState) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => {
                let y = ops::conv2d(x, &l.weight.value)?;
                l.input = Some(x.clone());
                Ok(y)
            }
            Layer::BatchNorm(l) => {
                let (y, cache) = match mode {
                    LayerMode::Training => {
                        let (y, cache, stats) =
                            ops::batchnorm_train(x, &l.gamma.value, &l.beta.value, s(l.eps))?;
                        let keep = s::<T>(l.momentum);
                        let take = T::one() - keep;
                        for (r, &b) in l.running_mean.data_mut().iter_mut().zip(&stats.mean) {
                            *r = keep * *r + take * b;
                        }
                        for (r, &b) in l.running_var.data_mut().iter_mut().zip(&stats.var) {
                            *r = keep * *r + take * b;
                        }
                        (y, cache)
                    }
                    LayerMode::Inference => ops::batchnorm_infer(
                        x,
                        &l.gamma.value,
                        &l.beta.value,
                        &l.running_mean,
                        &l.running_var,
                        s(l.eps),
                    )?,
                };
                l.cache = Some(cache);
                Ok(y)
            }
            Layer::Dense(l) => {
                let y = ops::dense(x, &l.weight.value, &l.bias.value)?;
                l.input = Some(x.clone());
                Ok(y)
            }
            Layer::Activation(l) => {
                let y = l.apply(x);
                l.cache = Some(match l.kind {
                    ActivationKind::Relu => x.clone(),
                    ActivationKind::Sigmoid => y.clone(),
                });
                Ok(y)
            }
            Layer::MaxPool(l) => {
                let (y, argmax) = ops::maxpool2x2(x)?;
                l.cache = Some((argmax, x.shape().to_vec()));
                Ok(y)
            }
            Layer::Upsample(_) => ops::upsample2x(x),
            Layer::Dropout(l) => {
                let (y, mask) = ops::dropout(x, l.p, mode, rng)?;
                l.mask = Some(mask);
                Ok(y)
            }
        }
    }

    /// Inference-mode forward pass; mutates nothing.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => ops::conv2d(x, &l.weight.value),
            Layer::BatchNorm(l) => Ok(ops::batchnorm_infer(
                x,
                &l.gamma.value,
                &l.beta.value,
                &l.running_mean,
                &l.running_var,
                s(l.eps),
            )?
            .0),
            Layer::Dense(l) => ops::dense(x, &l.weight.value, &l.bias.value),
            Layer::Activation(l) => Ok(l.apply(x)),
            Layer::MaxPool(_) => Ok(ops::maxpool2x2(x)?.0),
            Layer::Upsample(_) => ops::upsample2x(x),
            Layer::Dropout(_) => Ok(x.clone()),
        }
    }

    /// Accumulates parameter gradients and returns the gradient of the input.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => {
                let x = l.input.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
                let (dx, dw) = ops::conv2d_backward(x, &l.weight.value, grad)?;
                add_into(&mut l.weight.grad, &dw);
                Ok(dx)
            }
            Layer::BatchNorm(l) => {
                let cache = l.cache.as_ref().ok_or_else(|| missing_cache("batchnorm"))?;
                let (dx, dg, db) = ops::batchnorm_backward(grad, &l.gamma.value, cache)?;
                add_into(&mut l.gamma.grad, &dg);
                add_into(&mut l.beta.grad, &db);
                Ok(dx)
            }
            Layer::Dense(l) => {
                let x = l.input.as_ref().ok_or_else(|| missing_cache("dense"))?;
                let (dx, dw, db) = ops::dense_backward(x, &l.weight.value, &l.bias.value, grad)?;
                add_into(&mut l.weight.grad, &dw);
                add_into(&mut l.bias.grad, &db);
                Ok(dx)
            }
            Layer::Activation(l) => {
                let c = l.cache.as_ref().ok_or_else(|| missing_cache("activation"))?;
                match l.kind {
                    ActivationKind::Relu => ops::relu_backward(c, grad),
                    ActivationKind::Sigmoid => ops::sigmoid_backward(c, grad),
                }
            }
            Layer::MaxPool(l) => {
                let (argmax, shape) = l.cache.as_ref().ok_or_else(|| missing_cache("maxpool2x2"))?;
                ops::maxpool2x2_backward(grad, argmax, shape)
            }
            Layer::Upsample(_) => ops::upsample2x_backward(grad),
            Layer::Dropout(l) => {
                let mask = l.mask.as_ref().ok_or_else(|| missing_cache("dropout"))?;
                ops::dropout_backward(grad, mask.as_deref())
            }
        }
    }

    /// Like [`Layer::backward`] but skips the input gradient where that saves
    /// work.
    pub fn backward_params(&mut self, grad: &Tensor<T>) -> Result<()> {
        match self {
            Layer::Conv2d(l) => {
                let x = l.input.as_ref().ok_or_else(|| missing_cache("conv2d"))?;
                let dw = ops::conv2d_weight_grad(x, &l.weight.value, grad)?;
                add_into(&mut l.weight.grad, &dw);
                Ok(())
            }
            _ => self.backward(grad).map(|_| ()),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            Layer::Conv2d(l) => vec![&mut l.weight],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Every persistent tensor (parameter values and running statistics).
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &l.weight.value)],
            Layer::BatchNorm(l) => vec![
                ("gamma", &l.gamma.value),
                ("beta", &l.beta.value),
                ("running_mean", &l.running_mean),
                ("running_var", &l.running_var),
            ],
            Layer::Dense(l) => vec![("weight", &l.weight.value), ("bias", &l.bias.value)],
            _ => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv2d(l) => vec![("weight", &mut l.weight.value)],
            Layer::BatchNorm(l) => vec![
                ("gamma", &mut l.gamma.value),
                ("beta", &mut l.beta.value),
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            Layer::Dense(l) => vec![("weight", &mut l.weight.value), ("bias", &mut l.bias.value)],
            _ => Vec::new(),
        }
    }

    /// Same weights in another precision, caches and optimizer state dropped.
    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(l) => Layer::Conv2d(Conv2d::from_weight(l.weight.value.cast())),
            Layer::BatchNorm(l) => Layer::BatchNorm(BatchNorm {
                gamma: l.gamma.cast(),
                beta: l.beta.cast(),
                running_mean: l.running_mean.cast(),
                running_var: l.running_var.cast(),
                eps: l.eps,
                momentum: l.momentum,
                cache: None,
            }),
            Layer::Dense(l) => Layer::Dense(Dense {
                weight: l.weight.cast(),
                bias: l.bias.cast(),
                input: None,
            }),
            Layer::Activation(l) => Layer::Activation(Activation::new(l.kind)),
            Layer::MaxPool(_) => Layer::MaxPool(MaxPool2x2::default()),
            Layer::Upsample(_) => Layer::Upsample(Upsample2x),
            Layer::Dropout(l) => Layer::Dropout(Dropout { p: l.p, mask: None }),
        }
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(l) => l.input = None,
            Layer::BatchNorm(l) => l.cache = None,
            Layer::Dense(l) => l.input = None,
            Layer::Activation(l) => l.cache = None,
            Layer::MaxPool(l) => l.cache = None,
            Layer::Upsample(_) => {}
            Layer::Dropout(l) => l.mask = None,
        }
    }
}

fn add_into<T: Scalar>(acc: &mut Tensor<T>, delta: &Tensor<T>) {
    acc.data_mut().iter_mut().zip(delta.data()).for_each(|(a, &d)| *a += d);
}

/// A named chain of layers.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T = f32> {
    layers: Vec<(String, Layer<T>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push((name.into(), layer));
    }

    pub fn layers(&self) -> &[(String, Layer<T>)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(String, Layer<T>)] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: LayerMode, rng: &mut RngState) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (_, layer) in &mut self.layers {
            cur = layer.forward(&cur, mode, rng)?;
        }
        Ok(cur)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (_, layer) in &self.layers {
            cur = layer.infer(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = grad.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur)?;
        }
        Ok(cur)
    }

    /// Backward pass for a stack whose input gradient is not needed.
    pub fn backward_params(&mut self, grad: &Tensor<T>) -> Result<()> {
        let mut cur = grad.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, (_, layer)) in self.layers.iter_mut().rev().enumerate() {
            if i == last {
                return layer.backward_params(&cur);
            }
            cur = layer.backward(&cur)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|(_, l)| l.params_mut()).collect()
    }

    /// `(layer_name.tensor_name, tensor)` in layer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .flat_map(|(name, l)| {
                l.tensors().into_iter().map(move |(t, v)| (format!("{name}.{t}"), v))
            })
            .collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .flat_map(|(name, l)| {
                let name = name.clone();
                l.tensors_mut().into_iter().map(move |(t, v)| (format!("{name}.{t}"), v))
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            layers: self.layers.iter().map(|(n, l)| (n.clone(), l.cast())).collect(),
        }
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|(_, l)| l.clear_cache());
    }
}
