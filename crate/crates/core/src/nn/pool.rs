use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// 2×2 max pooling with stride 2.
///
/// Returns the pooled tensor and, per output element, the flat input index of
/// the selected maximum. Ties go to the first element in row-major order.
pub fn maxpool2x2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "max pooling needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * w + 2 * ox;
                let mut best = i0;
                for idx in [i0 + 1, i0 + w, i0 + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, arg))
}

/// Routes each output gradient to its argmax position.
pub fn maxpool2x2_backward<T: Scalar>(
    output_grad: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if output_grad.numel() != argmax.len() {
        return Err(Error::Shape(format!(
            "max pool backward: {} gradients for {} argmax entries",
            output_grad.numel(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &i) in output_grad.data().iter().zip(argmax) {
        d[i as usize] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_block_maximum() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn ties_choose_first_in_row_major_order() {
        let x = Tensor::<f32>::full(&[1, 1, 2, 2], 5.0);
        let (_, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn odd_extent_is_rejected() {
        assert!(maxpool2x2_forward(&Tensor::<f32>::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn backward_conserves_gradient_mass() {
        let x = Tensor::<f64>::from_fn(&[2, 2, 4, 6], |i| ((i * 7919) % 101) as f64);
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        let dy = Tensor::from_fn(y.shape(), |i| i as f64 * 0.5 - 3.0);
        let dx = maxpool2x2_backward(&dy, &arg, x.shape()).unwrap();
        let a: f64 = dx.data().iter().sum();
        let b: f64 = dy.data().iter().sum();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), dy.data().iter().filter(|&&v| v != 0.0).count());
    }
}
