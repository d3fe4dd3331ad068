//! Squared colour difference between a left image and horizontally shifted
//! copies of a right image.
//!
//! Output channel `k` at `(y, x)` is `Σ_c (L_c(y, x) − R_c(y, x − s_k))²`,
//! with the right image clamped at its left border.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check(left: &Tensor<impl Scalar>, right: &Tensor<impl Scalar>) -> Result<(usize, usize, usize, usize)> {
    if left.shape() != right.shape() {
        return Err(Error::ShapeMismatch {
            op: "shift cost (left vs right)",
            lhs: left.shape().to_vec(),
            rhs: right.shape().to_vec(),
        });
    }
    left.dims4()
}

#[inline]
fn source(x: usize, s: usize) -> usize {
    x.saturating_sub(s)
}

pub fn shift_cost_forward<T: Scalar>(left: &Tensor<T>, right: &Tensor<T>, shifts: &[usize]) -> Result<Tensor<T>> {
    let (n, c, h, w) = check(left, right)?;
    let k = shifts.len();
    let plane = h * w;
    let mut out = vec![T::zero(); n * k * plane];
    for b in 0..n {
        let l = &left.data()[b * c * plane..][..c * plane];
        let r = &right.data()[b * c * plane..][..c * plane];
        for (ki, &s) in shifts.iter().enumerate() {
            let dst = &mut out[(b * k + ki) * plane..][..plane];
            for ch in 0..c {
                for y in 0..h {
                    let lrow = &l[ch * plane + y * w..][..w];
                    let rrow = &r[ch * plane + y * w..][..w];
                    let drow = &mut dst[y * w..][..w];
                    for x in 0..w {
                        let d = lrow[x] - rrow[source(x, s)];
                        drow[x] += d * d;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, k, h, w], out)
}

/// Gradients with respect to the left and right images.
pub fn shift_cost_backward<T: Scalar>(
    output_grad: &Tensor<T>,
    left: &Tensor<T>,
    right: &Tensor<T>,
    shifts: &[usize],
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = check(left, right)?;
    let k = shifts.len();
    if output_grad.shape() != [n, k, h, w] {
        return Err(Error::ShapeMismatch {
            op: "shift cost backward",
            lhs: output_grad.shape().to_vec(),
            rhs: vec![n, k, h, w],
        });
    }
    let plane = h * w;
    let mut dl = vec![T::zero(); n * c * plane];
    let mut dr = vec![T::zero(); n * c * plane];
    let two = T::one() + T::one();
    for b in 0..n {
        let base = b * c * plane;
        for (ki, &s) in shifts.iter().enumerate() {
            let g = &output_grad.data()[(b * k + ki) * plane..][..plane];
            for ch in 0..c {
                for y in 0..h {
                    let row = base + ch * plane + y * w;
                    for x in 0..w {
                        let src = source(x, s);
                        let d = two * (left.data()[row + x] - right.data()[row + src]) * g[y * w + x];
                        dl[row + x] += d;
                        dr[row + src] -= d;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(left.shape(), dl)?, Tensor::from_vec(right.shape(), dr)?))
}
