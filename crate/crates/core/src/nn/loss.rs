//! Training objective: batch-mean squared L2 error plus an L2 penalty on all weights.
//!
//! `N` is the batch size (the leading tensor axis), so each sample contributes
//! its full squared norm `‖pred − target‖²` divided by `N`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct Loss<T> {
    pub value: T,
    pub data_term: T,
    pub regularizer: T,
    /// ∂loss/∂pred = 2(pred − target)/N.
    pub pred_grad: Tensor<T>,
}

fn batch_size<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<usize> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss (prediction vs target)",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(pred.shape().first().copied().unwrap_or(1).max(1))
}

/// `(1/N)·Σᵢ‖predᵢ − targetᵢ‖²` and its gradient with respect to `pred`.
pub fn mse_sum_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let n = T::from_usize(batch_size(pred, target)?).unwrap();
    let two = T::lit(2.0);
    let mut sum = T::zero();
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d * d;
            two * d / n
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(pred.shape(), grad)?))
}

/// `(λ/2)·Σ‖θ‖²`.
pub fn l2_penalty<'a, T: Scalar>(params: impl IntoIterator<Item = &'a Tensor<T>>, lambda: T) -> T {
    let sq: T = params.into_iter().map(|p| p.sum_sq()).sum();
    lambda * sq / T::lit(2.0)
}

/// Adds the penalty gradient `λθ` to `grad`.
pub fn add_l2_gradient<T: Scalar>(grad: &mut [T], param: &Tensor<T>, lambda: T) {
    for (g, &p) in grad.iter_mut().zip(param.data()) {
        *g += lambda * p;
    }
}

pub fn mse_l2_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    params: &[&Tensor<T>],
    lambda: T,
) -> Result<Loss<T>> {
    if lambda < T::zero() {
        return Err(Error::Config("weight decay must be nonnegative".into()));
    }
    let (data_term, pred_grad) = mse_sum_loss(pred, target)?;
    let regularizer = l2_penalty(params.iter().copied(), lambda);
    Ok(Loss {
        value: data_term + regularizer,
        data_term,
        regularizer,
        pred_grad,
    })
}

/// Plain per-element mean squared error, used for reporting.
pub fn mean_squared_error<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    batch_size(pred, target)?;
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = (p - t).to_f64().unwrap();
            d * d
        })
        .sum::<f64>()
        / n)
}
