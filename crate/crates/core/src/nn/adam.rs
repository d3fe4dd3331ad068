use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// λ of the L2 penalty. Applied through the loss gradient, not by the optimizer.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.002,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: BTreeMap<String, Vec<T>>,
    pub second_moment: BTreeMap<String, Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update of every parameter that has a gradient.
    ///
    /// All gradients are validated before any parameter is touched.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<T>>,
        grads: &BTreeMap<String, Vec<T>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter `{name}`")))?;
            if p.numel() != g.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has {} entries, parameter has {}",
                    g.len(),
                    p.numel()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bias1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
        let lr = T::lit(c.lr);
        let eps = T::lit(c.eps);
        for (name, g) in grads {
            let p = params.get_mut(name).expect("validated above");
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self
                .second_moment
                .entry(name.clone())
                .or_insert_with(|| vec![T::zero(); g.len()]);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / bias1;
                let vhat = *vv / bias2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
