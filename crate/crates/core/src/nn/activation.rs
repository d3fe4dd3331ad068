use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Initial value of every learnable PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

fn check_slopes<T: Scalar>(x: &Tensor<T>, slopes: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if slopes.numel() != c {
        return Err(Error::ShapeMismatch {
            op: "prelu (one slope per channel)",
            lhs: x.shape().to_vec(),
            rhs: slopes.shape().to_vec(),
        });
    }
    Ok((n, c, h * w))
}

/// `x` where positive, `a_c · x` elsewhere, with one slope per channel.
pub fn prelu_forward<T: Scalar>(x: &Tensor<T>, slopes: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, plane) = check_slopes(x, slopes)?;
    let a = slopes.data();
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ai = a[i % c];
        for v in chunk {
            if *v <= T::zero() {
                *v = *v * ai;
            }
        }
    }
    Ok(out)
}

/// Returns (input grad, slope grad).
pub fn prelu_backward<T: Scalar>(
    output_grad: &Tensor<T>,
    x: &Tensor<T>,
    slopes: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (_, c, plane) = check_slopes(x, slopes)?;
    if output_grad.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "prelu backward",
            lhs: output_grad.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let a = slopes.data();
    let mut dx = output_grad.clone();
    let mut da = vec![T::zero(); c];
    for (i, (dchunk, xchunk)) in dx
        .data_mut()
        .chunks_mut(plane)
        .zip(x.data().chunks(plane))
        .enumerate()
    {
        let ch = i % c;
        let mut acc = T::zero();
        for (d, &xv) in dchunk.iter_mut().zip(xchunk) {
            if xv <= T::zero() {
                acc += *d * xv;
                *d = *d * a[ch];
            }
        }
        da[ch] += acc;
    }
    Ok((dx, Tensor::from_vec(slopes.shape(), da)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_side_is_scaled() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1, 2], vec![-2.0, 3.0]).unwrap();
        let a = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        assert_eq!(prelu_forward(&x, &a).unwrap().data(), &[-0.5, 3.0]);
    }

    #[test]
    fn zero_slope_is_relu() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1, 1], vec![-5.0]).unwrap();
        let a = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        assert_eq!(prelu_forward(&x, &a).unwrap().data(), &[0.0]);
    }

    #[test]
    fn slope_gradient_matches_central_differences() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 3], |i| ((i * 37 % 23) as f64 - 11.0) / 7.0);
        let a = Tensor::<f64>::from_vec(&[3], vec![0.1, 0.25, -0.3]).unwrap();
        let dy = Tensor::<f64>::from_fn(x.shape(), |i| ((i * 13 % 17) as f64 - 8.0) / 5.0);
        let (_, da) = prelu_backward(&dy, &x, &a).unwrap();
        let loss = |a: &Tensor<f64>| -> f64 {
            let y = prelu_forward(&x, a).unwrap();
            y.data().iter().zip(dy.data()).map(|(p, q)| p * q).sum()
        };
        for c in 0..3 {
            let h = 1e-6;
            let mut ap = a.clone();
            ap.data_mut()[c] += h;
            let mut am = a.clone();
            am.data_mut()[c] -= h;
            let num = (loss(&ap) - loss(&am)) / (2.0 * h);
            let rel = (num - da.data()[c]).abs() / num.abs().max(da.data()[c].abs()).max(1e-8);
            assert!(rel < 1e-4, "channel {c}: {num} vs {}", da.data()[c]);
        }
    }
}
