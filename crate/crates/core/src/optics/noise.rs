//! Photon shot noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_PEAK: f64 = 1000.0;

/// Replaces each value `v` by `Poisson(v·peak)/peak`, clamped to [0, 1].
pub fn add_poisson_noise<R: Rng + ?Sized>(image: &Image, peak: f64, rng: &mut R) -> Result<Image> {
    if !(peak > 0.0) || !peak.is_finite() {
        return Err(Error::Config(format!("noise peak must be positive, got {peak}")));
    }
    let mut out = image.clone();
    for v in out.data_mut() {
        let lambda = v.clamp(0.0, 1.0) as f64 * peak;
        *v = if lambda > 0.0 {
            let count: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
            ((count / peak) as f32).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn huge_peak_is_nearly_exact() {
        let img = Image::filled(32, 32, 3, 0.5);
        let out = add_poisson_noise(&img, 1e6, &mut stream(1, 0)).unwrap();
        let err = out.data().iter().map(|v| (v - 0.5).abs()).fold(0.0, f32::max);
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn black_stays_black() {
        let img = Image::filled(8, 8, 3, 0.0);
        let out = add_poisson_noise(&img, 10.0, &mut stream(2, 0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_match_poisson_model() {
        let img = Image::filled(200, 200, 3, 0.5);
        let out = add_poisson_noise(&img, 1000.0, &mut stream(3, 0)).unwrap();
        let n = out.data().len() as f64;
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
        assert!((var - 0.5 / 1000.0).abs() < 0.05 * 0.5 / 1000.0, "{var}");
    }

    #[test]
    fn same_seed_same_noise() {
        let img = Image::filled(16, 16, 3, 0.3);
        let a = add_poisson_noise(&img, 100.0, &mut stream(4, 0)).unwrap();
        let b = add_poisson_noise(&img, 100.0, &mut stream(4, 0)).unwrap();
        assert_eq!(a, b);
    }
}
