use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Standard deviation of He initialisation, `sqrt(2 / fan_in)`.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

/// Zero-mean Gaussian with variance `2 / fan_in`, reproducible from `seed`.
pub fn he_init<T: Scalar>(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Config("He initialisation needs fan_in > 0".into()));
    }
    let normal = Normal::new(0.0, he_std(fan_in)).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Tensor::from_fn(shape, |_| T::lit(normal.sample(&mut rng))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_variance_matches_fan_in() {
        let t: Tensor<f64> = he_init(&[100_000], 50, 11).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 0.04).abs() / 0.04 < 0.05, "variance {var}");
    }

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = he_init(&[3, 4, 3, 3], 36, 5).unwrap();
        let b: Tensor<f32> = he_init(&[3, 4, 3, 3], 36, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fan_in_two_has_unit_variance() {
        assert_eq!(he_std(2).powi(2), 1.0);
    }
}
