use crate::error::{invalid, Result};
use crate::rng::RngState;
use crate::tensor::{s, Scalar, Tensor};

/// Independent draws from `U[-L, L]` with `L = sqrt(6 / fan_in)`.
pub fn he_uniform_init<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut RngState,
) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(invalid!("he_uniform_init: fan_in must be positive"));
    }
    if shape.contains(&0) {
        return Err(invalid!("he_uniform_init: empty shape {shape:?}"));
    }
    let limit = libm::sqrt(6.0 / fan_in as f64);
    Ok(Tensor::from_fn(shape, |_| s(rng.uniform_range(-limit, limit))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fan_in_six_gives_unit_limit() {
        let mut rng = RngState::new(5);
        for _ in 0..1000 {
            let t: Tensor<f64> = he_uniform_init(&[1], 6, &mut rng).unwrap();
            assert!(t.data()[0].abs() <= 1.0);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a: Tensor<f32> = he_uniform_init(&[4, 5], 3, &mut RngState::new(9)).unwrap();
        let b: Tensor<f32> = he_uniform_init(&[4, 5], 3, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_matches_uniform_formula() {
        let t: Tensor<f64> = he_uniform_init(&[100_000], 24, &mut RngState::new(1)).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let expected = (6.0 / 24.0) / 3.0;
        assert!((var - expected).abs() / expected < 0.05, "var {var}");
    }

    #[test]
    fn zero_fan_in_rejected() {
        assert!(he_uniform_init::<f32>(&[2], 0, &mut RngState::new(0)).is_err());
    }
}
