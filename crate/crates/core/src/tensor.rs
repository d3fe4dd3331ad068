//! Dense N-dimensional arrays used by the network engine.
//!
//! Image tensors are laid out N,C,H,W. The element type is generic over
//! [`Scalar`] so the same kernels run in `f32` for training and `f64` for
//! gradient checking.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating point element type with a GEMM kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` for row-major `a` (m×k), `b` (k×n), `c` (m×n),
    /// with arbitrary strides given as (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: (&[Self], isize, isize),
        b: (&[Self], isize, isize),
        beta: Self,
        c: (&mut [Self], isize, isize),
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits in scalar type")
    }
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: (&[Self], isize, isize),
                b: (&[Self], isize, isize),
                beta: Self,
                c: (&mut [Self], isize, isize),
            ) {
                assert!(a.1 >= 0 && a.2 >= 0 && b.1 >= 0 && b.2 >= 0 && c.1 >= 0 && c.2 >= 0);
                assert!(a.0.len() >= span(m, k, a.1, a.2), "gemm: lhs too short");
                assert!(b.0.len() >= span(k, n, b.1, b.2), "gemm: rhs too short");
                assert!(c.0.len() >= span(m, n, c.1, c.2), "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents checked against slice lengths above; strides are nonnegative.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.0.as_ptr(),
                        a.1,
                        a.2,
                        b.0.as_ptr(),
                        b.1,
                        b.2,
                        beta,
                        c.0.as_mut_ptr(),
                        c.1,
                        c.2,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Row-major `m×k` times `k×n` into `c` (overwritten), all contiguous.
pub(crate) fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    T::gemm(
        m,
        k,
        n,
        T::one(),
        (a, k as isize, 1),
        (b, n as isize, 1),
        T::zero(),
        (c, n as isize, 1),
    );
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Extents of a rank-4 tensor as (n, c, h, w).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Shape(format!(
                "expected an N,C,H,W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan);
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(conv).collect(),
            grad: self.grad.as_ref().map(|g| g.iter().map(conv).collect()),
        }
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Sample `n` of a batched tensor as a standalone rank-4 tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let (bn, c, h, w) = self.dims4()?;
        if n >= bn {
            return Err(Error::Shape(format!("batch index {n} out of range {bn}")));
        }
        let len = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[n * len..(n + 1) * len].to_vec())
    }

    /// Concatenate rank-4 tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty batch".into()))?;
        let (_, c, h, w) = first.dims4()?;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for t in items {
            let (tn, tc, th, tw) = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(Error::ShapeMismatch {
                    op: "stack_batch",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[n, c, h, w], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
    }

    #[test]
    fn grad_has_matching_length() {
        let mut t = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        assert!(t.grad().is_none());
        assert_eq!(t.grad_mut().len(), 8);
        assert!(t.set_grad(vec![0.0; 3]).is_err());
    }

    #[test]
    fn matmul_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        matmul(2, 3, 2, &a, &b, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::<f32>::full(&[1, 2, 2, 2], 1.0);
        let b = Tensor::<f32>::full(&[1, 2, 2, 2], 2.0);
        let s = Tensor::stack_batch(&[a.clone(), b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 2]);
        assert_eq!(s.batch_item(0).unwrap(), a);
    }
}
