//! A small deterministic layer engine: explicit forward and backward passes,
//! He-uniform initialization, losses and Adam.
//!
//! There is no autodiff graph. Each layer caches what its backward pass needs
//! during `forward`, and models chain the backward calls by hand.

mod adam;
mod gradcheck;
mod init;
mod layers;
mod loss;
pub mod ops;

use alloc::vec::Vec;
use core::ops::Range;

pub use adam::Adam;
pub use gradcheck::{check_layer, finite_diff_gradcheck, relative_error, LayerGradError};
pub use init::he_uniform_init;
pub use layers::{
    Activation, ActivationKind, BatchNorm, Conv2d, Dense, Dropout, Layer, MaxPool2x2,
    Sequential, Upsample2x,
};
pub use loss::{loss_eval, LossKind};

use crate::tensor::{Scalar, Tensor};

/// Switches dropout and batch normalization between their two behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Training,
    Inference,
}

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub adam_m: Tensor<T>,
    pub adam_v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            value,
            step_count: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Same values in another precision; optimizer state is reset.
    pub fn cast<U: Scalar>(&self) -> Parameter<U> {
        Parameter::new(self.value.cast())
    }
}

/// Zeroes the gradient of every parameter in `params`.
pub fn zero_grads<T: Scalar>(params: &mut [&mut Parameter<T>]) {
    for p in params.iter_mut() {
        p.zero_grad();
    }
}

/// Splits `0..n` into batches of `batch_size`; a trailing batch of one is
/// folded into the previous one because batch norm needs two samples.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}
