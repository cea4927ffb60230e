use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

/// A fixed Gaussian random projection of flattened images: an untrained
/// feature extractor used as a harness control.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    matrix: Tensor<f32>,
}

impl RandomProjection {
    /// Entries drawn from `N(0, 1 / input_len)`.
    pub fn new(input_len: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_len == 0 || output_dim == 0 {
            return Err(invalid!("random projection needs positive sizes"));
        }
        let mut rng = RngState::new(seed).substream("random-projection");
        let scale = 1.0 / libm::sqrt(input_len as f64);
        let matrix = Tensor::from_fn(&[input_len, output_dim], |_| (rng.normal() * scale) as f32);
        Ok(Self { matrix })
    }

    pub fn input_len(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn project(&self, input: &[f32]) -> Result<Vec<f32>> {
        let (n, d) = (self.input_len(), self.output_dim());
        if input.len() != n {
            return Err(invalid!("projection expects {n} inputs, got {}", input.len()));
        }
        let mut out = alloc::vec![0.0f32; d];
        f32::gemm(1, n, d, 1.0, input, (n, 1), self.matrix.data(), (d, 1), 0.0, &mut out, (d, 1));
        Ok(out)
    }
}
