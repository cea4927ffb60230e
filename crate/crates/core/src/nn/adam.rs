use crate::error::{invalid, Result};
use crate::tensor::{s, Scalar};

use super::Parameter;

/// Adam with bias correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// Standard moments `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Result<Self> {
        Self::with_moments(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_moments(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(invalid!("learning rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(invalid!("invalid Adam moments ({beta1}, {beta2}, {eps})"));
        }
        Ok(Self { lr, beta1, beta2, eps })
    }

    /// One update of every parameter from its current gradient. Gradients are
    /// left untouched.
    pub fn step<T: Scalar>(&self, params: &mut [&mut Parameter<T>]) {
        for p in params.iter_mut() {
            self.step_one(p);
        }
    }

    pub fn step_one<T: Scalar>(&self, p: &mut Parameter<T>) {
        p.step_count += 1;
        let t = p.step_count as i32;
        let (b1, b2) = (s::<T>(self.beta1), s::<T>(self.beta2));
        let one = T::one();
        let c1 = s::<T>(1.0 - libm::pow(self.beta1, t as f64));
        let c2 = s::<T>(1.0 - libm::pow(self.beta2, t as f64));
        let lr = s::<T>(self.lr);
        let eps = s::<T>(self.eps);
        let grad = p.grad.data();
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    fn scalar_param(v: f64) -> Parameter<f64> {
        Parameter::new(Tensor::new(vec![1], vec![v]).unwrap())
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut p = Parameter::new(Tensor::<f32>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        Adam::new(0.01).unwrap().step_one(&mut p);
        assert_eq!(p.value, before);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.2] {
            let mut p = scalar_param(0.0);
            p.grad.data_mut()[0] = g;
            Adam::new(0.001).unwrap().step_one(&mut p);
            let moved = p.value.data()[0];
            assert!((moved.abs() - 0.001).abs() < 1e-8, "{moved}");
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn minimizes_square() {
        let adam = Adam::new(0.05).unwrap();
        let mut p = scalar_param(1.0);
        let mut steps = 0;
        while p.value.data()[0].abs() >= 0.01 && steps < 500 {
            p.grad.data_mut()[0] = 2.0 * p.value.data()[0];
            adam.step_one(&mut p);
            steps += 1;
        }
        assert!(p.value.data()[0].abs() < 0.01, "after {steps} steps");
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(Adam::new(0.0).is_err());
        assert!(Adam::new(-1.0).is_err());
    }
}
