//! Allocation-only core of the triad recommender.
//!
//! Everything here is a pure function of explicit inputs: the small
//! neural-network engine in [`nn`], the convolutional autoencoder in [`cae`],
//! the triad classifier in [`recmodel`], evaluation in [`metrics`] and the
//! dataset procedures (splitting, augmentation, synthetic data) in [`data`].
//! File formats, checkpoints and the command line live in the `triadrec`
//! companion crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod cae;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod recmodel;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::{Scalar, Tensor};

/// Source of elapsed wall time for training histories.
///
/// The core has no clock of its own; callers without one can pass [`NoClock`].
pub trait Clock {
    fn elapsed_secs(&self) -> f64;
}

/// A clock that always reads zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }
}
