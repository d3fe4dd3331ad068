//! Central finite-difference verification of analytic gradients.

use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::model::{Mode, Model};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub abs_floor: f64,
    /// Entries probed per block (evenly strided when the block is larger).
    pub max_entries: usize,
    /// Extra probes at `step/10`, `step/100`, … for entries that disagree,
    /// which happens when a perturbation crosses a PReLU or pooling kink.
    pub refinements: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-3,
            abs_floor: 1e-5,
            max_entries: 12,
            refinements: 2,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub graph: String,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
}

impl GradReport {
    pub fn failures(&self) -> Vec<&BlockReport> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error < self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (tolerance {:.0e})", self.graph, self.tolerance)?;
        for b in &self.blocks {
            writeln!(
                f,
                "  {:<40} {:>4} entries  max rel err {:.3e}  {}",
                b.name,
                b.checked,
                b.max_rel_error,
                if b.max_rel_error < self.tolerance { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central difference at `step`, retried at smaller steps until the result
/// agrees with `analytic` to a hundredth of the tolerance. Returns the best
/// (numeric, error) pair.
fn central_difference(
    analytic: f64,
    config: &GradCheckConfig,
    mut objective_at: impl FnMut(f64) -> Result<(f64, f64)>,
) -> Result<(f64, f64)> {
    let mut best = (f64::NAN, f64::INFINITY);
    let mut h = config.step;
    for _ in 0..=config.refinements {
        let (plus, minus) = objective_at(h)?;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic, numeric, config.abs_floor);
        if !(err >= best.1) {
            best = (numeric, err);
        }
        if best.1 < config.tolerance * 1e-2 {
            break;
        }
        h /= 10.0;
    }
    Ok(best)
}

fn probe_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|i| i * (len - 1) / (max - 1).max(1)).collect()
    }
}

/// Checks every trainable parameter block and every graph input of `model`
/// against central differences of `L = Σ_taps ⟨r, tap⟩` for a fixed random `r`.
///
/// Batch norm runs on batch statistics without touching the running
/// statistics; frozen sub-graphs use their running statistics.
pub fn grad_check(model: &Model<f64>, inputs: &[(&str, &Tensor<f64>)], config: &GradCheckConfig) -> Result<GradReport> {
    let mut probe = model.clone();
    let taps = model.graph().taps.clone();
    let base = probe.forward_with(inputs, Mode::Check, true)?;
    let mut rng = stream(config.seed, 0);
    let projections: Vec<(String, Tensor<f64>)> = taps
        .iter()
        .map(|t| {
            let shape = base
                .get(t)
                .ok_or_else(|| Error::Usage(format!("tap `{t}` not produced")))?
                .shape()
                .to_vec();
            Ok((t.clone(), Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))))
        })
        .collect::<Result<_>>()?;
    let grads = probe.backward(&base, projections.clone())?;

    let objective = |m: &mut Model<f64>, ins: &[(&str, &Tensor<f64>)]| -> Result<f64> {
        let pass = m.forward(ins, Mode::Check)?;
        Ok(projections
            .iter()
            .map(|(t, r)| {
                pass.get(t)
                    .expect("tap produced")
                    .data()
                    .iter()
                    .zip(r.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum())
    };

    let mut blocks = vec![];
    for (name, analytic) in &grads.params {
        let mut block = BlockReport {
            name: name.clone(),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in probe_indices(analytic.len(), config.max_entries) {
            let orig = probe.params[name].data()[i];
            let (numeric, err) = central_difference(analytic[i], config, |h| {
                probe.params.get_mut(name).unwrap().data_mut()[i] = orig + h;
                let plus = objective(&mut probe, inputs)?;
                probe.params.get_mut(name).unwrap().data_mut()[i] = orig - h;
                let minus = objective(&mut probe, inputs)?;
                probe.params.get_mut(name).unwrap().data_mut()[i] = orig;
                Ok((plus, minus))
            })?;
            block.checked += 1;
            if err > block.max_rel_error || block.checked == 1 {
                block.max_rel_error = err;
                block.worst_index = i;
                block.analytic = analytic[i];
                block.numeric = numeric;
            }
        }
        blocks.push(block);
    }

    for (name, analytic) in &grads.inputs {
        let mut block = BlockReport {
            name: format!("input:{name}"),
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        let (idx, x) = inputs
            .iter()
            .enumerate()
            .find(|(_, (n, _))| n == name)
            .map(|(i, (_, t))| (i, (*t).clone()))
            .expect("gradient for a supplied input");
        for i in probe_indices(x.numel(), config.max_entries) {
            let mut shifted: Vec<(&str, Tensor<f64>)> = inputs.iter().map(|(n, t)| (*n, (*t).clone())).collect();
            let (numeric, err) = central_difference(analytic.data()[i], config, |h| {
                shifted[idx].1.data_mut()[i] = x.data()[i] + h;
                let refs: Vec<(&str, &Tensor<f64>)> = shifted.iter().map(|(n, t)| (*n, t)).collect();
                let plus = objective(&mut probe, &refs)?;
                shifted[idx].1.data_mut()[i] = x.data()[i] - h;
                let refs: Vec<(&str, &Tensor<f64>)> = shifted.iter().map(|(n, t)| (*n, t)).collect();
                let minus = objective(&mut probe, &refs)?;
                Ok((plus, minus))
            })?;
            block.checked += 1;
            if err > block.max_rel_error || block.checked == 1 {
                block.max_rel_error = err;
                block.worst_index = i;
                block.analytic = analytic.data()[i];
                block.numeric = numeric;
            }
        }
        blocks.push(block);
    }

    Ok(GradReport {
        graph: model.graph().name.clone(),
        tolerance: config.tolerance,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::GraphBuilder;

    fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, 1);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_conv_layer() {
        let mut b = GraphBuilder::new("conv");
        let x = b.input("x", 2);
        let y = b.conv("c", &x, 3, 3, 1, 1).unwrap();
        let m = Model::<f64>::new(b.finish(&y, &[&y], 1).unwrap(), 1).unwrap();
        let x = input(&[1, 2, 6, 6], 2);
        let r = grad_check(&m, &[("x", &x)], &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error() < 1e-4, "{r}");
    }

    #[test]
    fn conv_prelu_stack() {
        let mut b = GraphBuilder::new("stack");
        let mut t = b.input("x", 2);
        for i in 0..3 {
            let c = b.conv(&format!("c{i}"), &t, 3, 3, 1, 1).unwrap();
            t = b.prelu(&format!("a{i}"), &c).unwrap();
        }
        let m = Model::<f64>::new(b.finish(&t, &[&t], 1).unwrap(), 4).unwrap();
        let x = input(&[2, 2, 5, 5], 3);
        let r = grad_check(&m, &[("x", &x)], &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error() < 1e-3, "{r}");
    }

    #[test]
    fn refinement_does_not_hide_a_wrong_gradient() {
        let cfg = GradCheckConfig::default();
        let f = |x: f64| x.sin() * 3.0;
        let at = |h: f64| Ok((f(0.4 + h), f(0.4 - h)));
        let (_, good) = central_difference(3.0 * 0.4f64.cos(), &cfg, at).unwrap();
        let (_, bad) = central_difference(1.01 * 3.0 * 0.4f64.cos(), &cfg, at).unwrap();
        assert!(good < 1e-6, "{good}");
        assert!(bad > cfg.tolerance, "{bad}");
    }

    #[test]
    fn refinement_recovers_from_a_kink() {
        let cfg = GradCheckConfig::default();
        let f = |x: f64| if x > 0.0 { x } else { 0.25 * x };
        let x0 = 3e-6;
        let (_, err) = central_difference(1.0, &cfg, |h| Ok((f(x0 + h), f(x0 - h)))).unwrap();
        assert!(err < cfg.tolerance, "{err}");
    }

    #[test]
    fn report_is_deterministic() {
        let mut b = GraphBuilder::new("bn");
        let x = b.input("x", 2);
        let y = b.conv_bn_prelu("l", &x, 2, 3, 1, 1).unwrap();
        let m = Model::<f64>::new(b.finish(&y, &[&y], 1).unwrap(), 9).unwrap();
        let x = input(&[2, 2, 4, 4], 5);
        let cfg = GradCheckConfig::default();
        let a = grad_check(&m, &[("x", &x)], &cfg).unwrap();
        let b = grad_check(&m, &[("x", &x)], &cfg).unwrap();
        let errs = |r: &GradReport| r.blocks.iter().map(|b| b.max_rel_error.to_bits()).collect::<Vec<_>>();
        assert_eq!(errs(&a), errs(&b));
    }
}
