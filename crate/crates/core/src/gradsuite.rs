//! Finite-difference checks over every layer type, the loss, and every
//! network head at toy width.

use rand::Rng;

use crate::error::Result;
use crate::networks::{NetKind, WidthConfig};
use crate::nn::gradcheck::{grad_check, relative_error, BlockReport, GradCheckConfig, GradReport};
use crate::nn::graph::{GraphBuilder, NetworkGraph};
use crate::nn::loss::{l2_penalty, mse_sum_loss, add_l2_gradient};
use crate::nn::Model;
use crate::rng::{name_seed, stream};
use crate::tensor::Tensor;

/// Spatial extent of every probe input.
pub const PROBE_EXTENT: usize = 8;
const BATCH: usize = 2;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = stream(seed, 0);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

type Case = (NetworkGraph, Vec<(String, usize)>);

fn layer_case(name: &str, build: impl FnOnce(&mut GraphBuilder) -> Result<(String, Vec<(String, usize)>)>) -> Result<Case> {
    let mut b = GraphBuilder::new(name);
    let (out, inputs) = build(&mut b)?;
    Ok((b.finish(&out, &[&out], 1)?, inputs))
}

/// One small graph per layer type.
pub fn layer_cases() -> Result<Vec<Case>> {
    let one = |name: &str, ch: usize| vec![(name.to_string(), ch)];
    Ok(vec![
        layer_case("layer/conv", |b| {
            let x = b.input("x", 3);
            Ok((b.conv("conv", &x, 4, 3, 1, 1)?, one("x", 3)))
        })?,
        layer_case("layer/conv_strided", |b| {
            let x = b.input("x", 2);
            Ok((b.conv("conv", &x, 3, 4, 2, 1)?, one("x", 2)))
        })?,
        layer_case("layer/deconv", |b| {
            let x = b.input("x", 3);
            Ok((b.deconv("deconv", &x, 2, 2)?, one("x", 3)))
        })?,
        layer_case("layer/prelu", |b| {
            let x = b.input("x", 3);
            Ok((b.prelu("prelu", &x)?, one("x", 3)))
        })?,
        layer_case("layer/batchnorm", |b| {
            let x = b.input("x", 3);
            Ok((b.batchnorm("bn", &x)?, one("x", 3)))
        })?,
        layer_case("layer/maxpool", |b| {
            let x = b.input("x", 2);
            Ok((b.maxpool("pool", &x)?, one("x", 2)))
        })?,
        layer_case("layer/centre", |b| {
            let x = b.input("x", 6);
            Ok((b.centre("centre", &x, 3)?, one("x", 6)))
        })?,
        layer_case("layer/shift_cost", |b| {
            let x = b.input("x", 3);
            let y = b.input("y", 3);
            Ok((b.shift_cost("cost", &x, &y, &[0, 2, 5])?, vec![("x".into(), 3), ("y".into(), 3)]))
        })?,
        layer_case("layer/concat", |b| {
            let x = b.input("x", 2);
            let y = b.input("y", 3);
            let c = b.concat("cat", &[&x, &y])?;
            Ok((b.conv("conv", &c, 2, 3, 1, 1)?, vec![("x".into(), 2), ("y".into(), 3)]))
        })?,
        layer_case("layer/add", |b| {
            let x = b.input("x", 2);
            let y = b.input("y", 2);
            Ok((b.add("add", &[&x, &y])?, vec![("x".into(), 2), ("y".into(), 2)]))
        })?,
        layer_case("layer/residual", |b| {
            let x = b.input("x", 4);
            Ok((b.residual("res", &x, 4)?, one("x", 4)))
        })?,
        layer_case("layer/conv_bn_prelu", |b| {
            let x = b.input("x", 3);
            Ok((b.conv_bn_prelu("cbp", &x, 3, 3, 1, 1)?, one("x", 3)))
        })?,
    ])
}

/// Every network head at toy width.
pub fn network_cases() -> Result<Vec<Case>> {
    let width = WidthConfig::tiny();
    NetKind::ALL
        .iter()
        .map(|&kind| {
            let g = kind.build(&width)?;
            let inputs = g.inputs.iter().map(|i| (i.name.clone(), i.channels)).collect();
            Ok((g, inputs))
        })
        .collect()
}

pub fn check_case(case: &Case, config: &GradCheckConfig) -> Result<GradReport> {
    let (graph, inputs) = case;
    let model = Model::<f64>::new(graph.clone(), name_seed(config.seed, &graph.name))?;
    let tensors: Vec<(String, Tensor<f64>)> = inputs
        .iter()
        .map(|(name, ch)| {
            let seed = name_seed(config.seed, &format!("{}/{name}", graph.name));
            (name.clone(), random(&[BATCH, *ch, PROBE_EXTENT, PROBE_EXTENT], seed))
        })
        .collect();
    let refs: Vec<(&str, &Tensor<f64>)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    grad_check(&model, &refs, config)
}

fn probe_block(name: &str, x: &Tensor<f64>, analytic: &[f64], f: impl Fn(&Tensor<f64>) -> f64, config: &GradCheckConfig) -> BlockReport {
    let mut block = BlockReport {
        name: name.into(),
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.numel().min(config.max_entries) {
        let mut p = x.clone();
        p.data_mut()[i] += config.step;
        let mut m = x.clone();
        m.data_mut()[i] -= config.step;
        let numeric = (f(&p) - f(&m)) / (2.0 * config.step);
        let err = relative_error(analytic[i], numeric, config.abs_floor);
        block.checked += 1;
        if err > block.max_rel_error || block.checked == 1 {
            block.max_rel_error = err.max(block.max_rel_error);
            block.worst_index = i;
            block.analytic = analytic[i];
            block.numeric = numeric;
        }
    }
    block
}

/// The regression loss and the weight-decay term.
pub fn check_loss(config: &GradCheckConfig) -> Result<GradReport> {
    let pred = random(&[BATCH, 1, 3, 3], name_seed(config.seed, "loss/pred"));
    let target = random(&[BATCH, 1, 3, 3], name_seed(config.seed, "loss/target"));
    let (_, grad) = mse_sum_loss(&pred, &target)?;
    let data = probe_block(
        "mse_sum_loss",
        &pred,
        grad.data(),
        |p| mse_sum_loss(p, &target).map(|(l, _)| l).unwrap_or(f64::NAN),
        config,
    );
    let lambda = 0.002;
    let w = random(&[2, 3], name_seed(config.seed, "loss/weight"));
    let mut g = vec![0.0; w.numel()];
    add_l2_gradient(&mut g, &w, lambda);
    let l2 = probe_block("l2_penalty", &w, &g, |p| l2_penalty([p], lambda), config);
    Ok(GradReport {
        graph: "loss".into(),
        tolerance: config.tolerance,
        blocks: vec![data, l2],
    })
}

/// Every layer, the loss, and optionally the five network heads.
pub fn run_suite(config: &GradCheckConfig, networks: bool) -> Result<Vec<GradReport>> {
    let mut cases = layer_cases()?;
    if networks {
        cases.extend(network_cases()?);
    }
    let mut reports = vec![check_loss(config)?];
    for case in &cases {
        reports.push(check_case(case, config)?);
    }
    Ok(reports)
}
