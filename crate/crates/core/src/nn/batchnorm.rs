//! Per-channel batch normalisation over N, H, W.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    /// Weight of the previous running value in each update.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.9,
            eps: 1e-5,
        }
    }
}

/// Running mean/variance. The first training update copies the batch
/// statistics; before it, inference uses zero mean and unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; running statistics updated only if `update_running`.
    Train { update_running: bool },
    /// Running statistics.
    Infer,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    for p in [gamma, beta] {
        if p.numel() != c {
            return Err(Error::ShapeMismatch {
                op: "batchnorm (per-channel parameters)",
                lhs: x.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    Ok((n, c, h * w))
}

pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut Option<RunningStats<T>>,
    mode: BnMode,
    config: &BatchNormConfig,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, plane) = check(x, gamma, beta)?;
    let eps = T::lit(config.eps);
    let (mean, var, batch_stats) = match mode {
        BnMode::Infer => {
            // Untrained layers normalise with zero mean and unit variance.
            match running.as_ref() {
                Some(stats) => (stats.mean.clone(), stats.var.clone(), false),
                None => (vec![T::zero(); c], vec![T::one(); c], false),
            }
        }
        BnMode::Train { update_running } => {
            let m = T::from_usize(n * plane).unwrap();
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for (i, chunk) in x.data().chunks(plane).enumerate() {
                mean[i % c] += chunk.iter().copied().sum::<T>();
            }
            mean.iter_mut().for_each(|v| *v = *v / m);
            for (i, chunk) in x.data().chunks(plane).enumerate() {
                let mu = mean[i % c];
                var[i % c] += chunk.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
            }
            var.iter_mut().for_each(|v| *v = *v / m);
            if update_running {
                let unbiased = if n * plane > 1 {
                    m / (m - T::one())
                } else {
                    T::one()
                };
                match running {
                    None => {
                        *running = Some(RunningStats {
                            mean: mean.clone(),
                            var: var.iter().map(|&v| v * unbiased).collect(),
                        })
                    }
                    Some(stats) => {
                        let mom = T::lit(config.momentum);
                        let rest = T::one() - mom;
                        for ch in 0..c {
                            stats.mean[ch] = mom * stats.mean[ch] + rest * mean[ch];
                            stats.var[ch] = mom * stats.var[ch] + rest * var[ch] * unbiased;
                        }
                    }
                }
            }
            (mean, var, true)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (g, b) = (gamma.data(), beta.data());
    let mut out = x.clone();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let ch = i % c;
        let scale = g[ch] * inv_std[ch];
        let shift = b[ch] - mean[ch] * scale;
        chunk.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok((
        out,
        BnCache {
            mean,
            inv_std,
            batch_stats,
        },
    ))
}

pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batchnorm_backward<T: Scalar>(
    output_grad: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<BnGrads<T>> {
    let (n, c, plane) = check(x, gamma, gamma)?;
    if output_grad.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm backward",
            lhs: output_grad.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let dy = output_grad.data();
    let xd = x.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, (dchunk, xchunk)) in dy.chunks(plane).zip(xd.chunks(plane)).enumerate() {
        let ch = i % c;
        let (mu, is) = (cache.mean[ch], cache.inv_std[ch]);
        for (&d, &xv) in dchunk.iter().zip(xchunk) {
            dbeta[ch] += d;
            dgamma[ch] += d * (xv - mu) * is;
        }
    }
    let g = gamma.data();
    let mut dx = output_grad.clone();
    if cache.batch_stats {
        let m = T::from_usize(n * plane).unwrap();
        for (i, (dchunk, xchunk)) in dx.data_mut().chunks_mut(plane).zip(xd.chunks(plane)).enumerate() {
            let ch = i % c;
            let (mu, is) = (cache.mean[ch], cache.inv_std[ch]);
            // dx = γ·inv_std/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
            let k = g[ch] * is / m;
            for (d, &xv) in dchunk.iter_mut().zip(xchunk) {
                let xhat = (xv - mu) * is;
                *d = k * (m * *d - dbeta[ch] - xhat * dgamma[ch]);
            }
        }
    } else {
        for (i, dchunk) in dx.data_mut().chunks_mut(plane).enumerate() {
            let ch = i % c;
            let k = g[ch] * cache.inv_std[ch];
            dchunk.iter_mut().for_each(|d| *d = *d * k);
        }
    }
    Ok(BnGrads {
        input: dx,
        gamma: Tensor::from_vec(gamma.shape(), dgamma)?,
        beta: Tensor::from_vec(gamma.shape(), dbeta)?,
    })
}
