use alloc::vec::Vec;

use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::Tensor;

use super::{Layer, LayerMode};

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and central differences of `f`
/// around `x` with step `h`.
pub fn finite_diff_gradcheck<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length must match input length");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Worst relative errors of one layer's backward pass against central
/// differences of `sum(r * layer(x))` for random `x` and `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerGradError {
    pub input: f64,
    /// 0 for layers without parameters.
    pub params: f64,
}

impl LayerGradError {
    pub fn max(&self) -> f64 {
        self.input.max(self.params)
    }
}

/// Checks input and parameter gradients of `layer` at `x`. Every evaluation
/// replays the same random stream, so dropout masks stay fixed.
///
/// Inputs closer than `h` to a kink (ReLU at 0, tied pooling maxima) make the
/// central difference meaningless; callers pick `x` away from those.
pub fn check_layer(
    layer: &Layer<f64>,
    x: &Tensor<f64>,
    mode: LayerMode,
    seed: u64,
    h: f64,
) -> Result<LayerGradError> {
    let mut data_rng = RngState::new(seed).substream("gradcheck-data");
    let fwd_rng = RngState::new(seed).substream("gradcheck-forward");
    let mut probe = layer.clone();
    let y = probe.forward(x, mode, &mut fwd_rng.clone())?;
    let r = Tensor::from_fn(y.shape(), |_| data_rng.normal());
    for p in probe.params_mut() {
        p.zero_grad();
    }
    let dx = probe.backward(&r)?;
    let objective = |l: &mut Layer<f64>, input: &Tensor<f64>| -> f64 {
        let out = l.forward(input, mode, &mut fwd_rng.clone()).expect("forward succeeded once");
        out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let mut scratch = layer.clone();
    let shape = x.shape().to_vec();
    let input = finite_diff_gradcheck(
        |v| objective(&mut scratch, &Tensor::new(shape.clone(), v.to_vec()).expect("same shape")),
        x.data(),
        dx.data(),
        h,
    );

    let analytic: Vec<Vec<f64>> = probe.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut params = 0.0f64;
    for (k, grad) in analytic.iter().enumerate() {
        let mut scratch = layer.clone();
        let start = scratch.params_mut()[k].value.data().to_vec();
        let err = finite_diff_gradcheck(
            |v| {
                scratch.params_mut()[k].value.data_mut().copy_from_slice(v);
                objective(&mut scratch, x)
            },
            &start,
            grad,
            h,
        );
        params = params.max(err);
    }
    Ok(LayerGradError { input, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_gradient_of_cubic() {
        let x = [0.5, -1.5];
        let g = [3.0 * 0.25, 3.0 * 2.25];
        let err = finite_diff_gradcheck(|v| v.iter().map(|a| a * a * a).sum(), &x, &g, 1e-5);
        assert!(err < 1e-8);
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = finite_diff_gradcheck(|v| v[0] * v[0], &[1.0], &[1.0], 1e-5);
        assert!(err > 0.3);
    }

    #[test]
    fn dense_layer_passes() {
        let mut rng = RngState::new(1);
        let layer = Layer::Dense(super::super::Dense::new(4, 3, &mut rng).unwrap());
        let x = Tensor::from_fn(&[2, 4], |i| i as f64 * 0.3 - 1.0);
        let e = check_layer(&layer, &x, LayerMode::Training, 3, 1e-5).unwrap();
        assert!(e.max() < 1e-6, "{e:?}");
    }
}
