//! Removes the mean over channel groups.
//!
//! Channels are laid out as `groups` consecutive blocks of equal width.
//! Each output channel `g·w + c` is the input minus the mean of channel `c`
//! across all blocks at the same pixel. The map is a symmetric projection,
//! so the backward pass applies the same operation to the gradient.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn centre_groups<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!("{c} channels do not split into {groups} groups")));
    }
    let width = c / groups;
    let plane = h * w;
    let inv = T::one() / T::from_usize(groups).unwrap();
    let mut out = x.clone();
    let mut mean = vec![T::zero(); plane];
    for b in out.data_mut().chunks_mut(c * plane) {
        for ch in 0..width {
            mean.iter_mut().for_each(|m| *m = T::zero());
            for g in 0..groups {
                let s = &b[(g * width + ch) * plane..][..plane];
                mean.iter_mut().zip(s).for_each(|(m, &v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m = *m * inv);
            for g in 0..groups {
                let s = &mut b[(g * width + ch) * plane..][..plane];
                s.iter_mut().zip(&mean).for_each(|(v, &m)| *v -= m);
            }
        }
    }
    debug_assert_eq!(out.shape(), [n, c, h, w]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_sum_to_zero() {
        let x = Tensor::<f64>::from_fn(&[2, 6, 3, 2], |i| ((i * 37) % 11) as f64);
        let y = centre_groups(&x, 3).unwrap();
        for b in 0..2 {
            for ch in 0..2 {
                for p in 0..6 {
                    let s: f64 = (0..3).map(|g| y.data()[((b * 6) + g * 2 + ch) * 6 + p]).sum();
                    assert!(s.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn idempotent_and_rejects_bad_groups() {
        let x = Tensor::<f64>::from_fn(&[1, 4, 2, 2], |i| (i as f64).sin());
        let y = centre_groups(&x, 4).unwrap();
        assert_eq!(centre_groups(&y, 4).unwrap().data().iter().zip(y.data()).all(|(a, b)| (a - b).abs() < 1e-12), true);
        assert!(centre_groups(&x, 3).is_err());
    }

    #[test]
    fn single_group_gives_zero() {
        let x = Tensor::<f32>::from_fn(&[1, 3, 2, 2], |i| i as f32);
        assert!(centre_groups(&x, 1).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
