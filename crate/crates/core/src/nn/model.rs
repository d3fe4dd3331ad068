//! Parameter storage and the forward/backward executor for a [`NetworkGraph`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::nn::activation::{prelu_backward, prelu_forward, PRELU_INIT_SLOPE};
use crate::nn::batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormConfig, BnCache, BnMode, RunningStats};
use crate::nn::conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward};
use crate::nn::graph::{NetworkGraph, Node, Op, ParamInit};
use crate::nn::centre::centre_groups;
use crate::nn::shift::{shift_cost_backward, shift_cost_forward};
use crate::nn::init::he_init;
use crate::nn::pool::{maxpool2x2_backward, maxpool2x2_forward};
use crate::rng::name_seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; no state changes.
    Infer,
    /// Batch statistics without running updates, for gradient checking.
    Check,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    graph: NetworkGraph,
    pub params: BTreeMap<String, Tensor<T>>,
    /// Keyed by batch-norm param key; absent until the first training update.
    pub running: BTreeMap<String, RunningStats<T>>,
    frozen: BTreeSet<String>,
    pub bn_config: BatchNormConfig,
}

/// Activations and caches of one forward pass.
#[derive(Debug)]
pub struct ForwardPass<T> {
    acts: HashMap<String, Tensor<T>>,
    requires_grad: HashSet<String>,
    bn: HashMap<usize, BnCache<T>>,
    pool: HashMap<usize, Vec<u32>>,
    pub mode: Mode,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn get(&self, tensor: &str) -> Option<&Tensor<T>> {
        self.acts.get(tensor)
    }

    pub fn take(&mut self, tensor: &str) -> Option<Tensor<T>> {
        self.acts.remove(tensor)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    /// One entry per trainable parameter.
    pub params: BTreeMap<String, Vec<T>>,
    /// Only filled when requested in [`Model::forward_with`].
    pub inputs: BTreeMap<String, Tensor<T>>,
}

fn accumulate<T: Scalar>(map: &mut HashMap<String, Tensor<T>>, name: &str, g: Tensor<T>) {
    match map.get_mut(name) {
        Some(existing) => existing.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
        None => {
            map.insert(name.to_string(), g);
        }
    }
}

fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let (n, _, h, w) = xs[0].dims4()?;
    let mut total_c = 0;
    for x in xs {
        let (xn, xc, xh, xw) = x.dims4()?;
        if (xn, xh, xw) != (n, h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: xs[0].shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        total_c += xc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total_c * plane);
    for s in 0..n {
        for x in xs {
            let c = x.shape()[1];
            data.extend_from_slice(&x.data()[s * c * plane..(s + 1) * c * plane]);
        }
    }
    Tensor::from_vec(&[n, total_c, h, w], data)
}

fn split_channels<T: Scalar>(g: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, _, h, w) = g.dims4()?;
    let plane = h * w;
    let total: usize = channels.iter().sum();
    let mut parts: Vec<Vec<T>> = channels.iter().map(|c| Vec::with_capacity(n * c * plane)).collect();
    for s in 0..n {
        let mut off = s * total * plane;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&g.data()[off..off + c * plane]);
            off += c * plane;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(&[n, c, h, w], d))
        .collect()
}

fn add_all<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let mut out = xs[0].clone();
    for x in &xs[1..] {
        if x.shape() != out.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: out.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
        out.data_mut().iter_mut().zip(x.data()).for_each(|(a, &b)| *a += b);
    }
    Ok(out)
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters: He-initialised weights, zero biases, unit BN scale,
    /// PReLU slopes at their initial value. Each tensor's seed is derived from
    /// `seed` and its name.
    pub fn new(graph: NetworkGraph, seed: u64) -> Result<Self> {
        graph.validate()?;
        let mut params = BTreeMap::new();
        for spec in graph.param_specs() {
            let t = match spec.init {
                ParamInit::He(fan_in) => he_init(&spec.shape, fan_in, name_seed(seed, &spec.name))?,
                ParamInit::Zeros => Tensor::zeros(&spec.shape),
                ParamInit::Ones => Tensor::full(&spec.shape, T::one()),
                ParamInit::PReluSlope => Tensor::full(&spec.shape, T::lit(PRELU_INIT_SLOPE)),
            };
            params.insert(spec.name, t);
        }
        Ok(Model {
            graph,
            params,
            running: BTreeMap::new(),
            frozen: BTreeSet::new(),
            bn_config: BatchNormConfig::default(),
        })
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    /// Parameters whose key starts with any of `prefixes` are no longer
    /// updated, and their batch-norm layers use running statistics.
    pub fn set_frozen<S: AsRef<str>>(&mut self, prefixes: &[S]) {
        self.frozen = prefixes.iter().map(|s| s.as_ref().to_string()).collect();
    }

    pub fn frozen(&self) -> &BTreeSet<String> {
        &self.frozen
    }

    fn is_frozen_key(&self, key: &str) -> bool {
        self.frozen.iter().any(|p| key.starts_with(p.as_str()))
    }

    pub fn trainable_param_names(&self) -> Vec<String> {
        self.graph
            .param_specs()
            .into_iter()
            .map(|p| p.name)
            .filter(|n| !self.is_frozen_key(n))
            .collect()
    }

    fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Usage(format!("parameter `{name}` missing from model")))
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect();
        Model {
            graph: self.graph.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            running: self
                .running
                .iter()
                .map(|(k, s)| {
                    (
                        k.clone(),
                        RunningStats {
                            mean: conv(&s.mean),
                            var: conv(&s.var),
                        },
                    )
                })
                .collect(),
            frozen: self.frozen.clone(),
            bn_config: self.bn_config,
        }
    }

    fn check_inputs(&self, inputs: &[(&str, &Tensor<T>)]) -> Result<()> {
        let mut hw = None;
        for spec in &self.graph.inputs {
            let (_, t) = inputs
                .iter()
                .find(|(n, _)| *n == spec.name)
                .ok_or_else(|| Error::Usage(format!("{}: input `{}` not supplied", self.graph.name, spec.name)))?;
            let (_, c, h, w) = t.dims4()?;
            if c != spec.channels {
                return Err(Error::Shape(format!(
                    "{}: input `{}` has {c} channels, expected {}",
                    self.graph.name, spec.name, spec.channels
                )));
            }
            if *hw.get_or_insert((h, w)) != (h, w) {
                return Err(Error::Shape(format!("{}: inputs disagree on spatial extent", self.graph.name)));
            }
            let m = self.graph.spatial_multiple;
            if h % m != 0 || w % m != 0 {
                return Err(Error::Shape(format!(
                    "{}: input {h}x{w} is not a multiple of {m}",
                    self.graph.name
                )));
            }
        }
        Ok(())
    }

    /// Forward pass; in [`Mode::Train`] the running statistics are updated.
    pub fn forward(&mut self, inputs: &[(&str, &Tensor<T>)], mode: Mode) -> Result<ForwardPass<T>> {
        self.forward_with(inputs, mode, false)
    }

    /// Forward pass that can also mark the graph inputs as requiring gradients.
    pub fn forward_with(
        &mut self,
        inputs: &[(&str, &Tensor<T>)],
        mode: Mode,
        input_grads: bool,
    ) -> Result<ForwardPass<T>> {
        let (pass, running) = self.run(inputs, mode, input_grads)?;
        self.running.extend(running);
        Ok(pass)
    }

    /// Read-only inference; returns the graph output.
    pub fn infer(&self, inputs: &[(&str, &Tensor<T>)]) -> Result<Tensor<T>> {
        let (mut pass, _) = self.run(inputs, Mode::Infer, false)?;
        pass.take(&self.graph.output)
            .ok_or_else(|| Error::Usage("graph output not produced".into()))
    }

    /// Read-only inference returning the listed tensors.
    pub fn infer_tensors(&self, inputs: &[(&str, &Tensor<T>)], names: &[&str]) -> Result<Vec<Tensor<T>>> {
        let (mut pass, _) = self.run(inputs, Mode::Infer, false)?;
        names
            .iter()
            .map(|n| pass.take(n).ok_or_else(|| Error::Usage(format!("tensor `{n}` not produced"))))
            .collect()
    }

    fn bn_mode(&self, node: &Node, mode: Mode) -> BnMode {
        if self.is_frozen_key(&node.param_key) {
            return BnMode::Infer;
        }
        match mode {
            Mode::Train => BnMode::Train { update_running: true },
            Mode::Check => BnMode::Train { update_running: false },
            Mode::Infer => BnMode::Infer,
        }
    }

    fn node_trainable(&self, node: &Node) -> bool {
        !node.op.params(&node.param_key).is_empty() && !self.is_frozen_key(&node.param_key)
    }

    fn run(
        &self,
        inputs: &[(&str, &Tensor<T>)],
        mode: Mode,
        input_grads: bool,
    ) -> Result<(ForwardPass<T>, BTreeMap<String, RunningStats<T>>)> {
        self.check_inputs(inputs)?;
        let mut acts: HashMap<String, Tensor<T>> = HashMap::new();
        let mut requires_grad = HashSet::new();
        for spec in &self.graph.inputs {
            let (_, t) = inputs.iter().find(|(n, _)| *n == spec.name).expect("checked");
            acts.insert(spec.name.clone(), (*t).clone());
            if input_grads {
                requires_grad.insert(spec.name.clone());
            }
        }
        let mut running_updates: BTreeMap<String, RunningStats<T>> = BTreeMap::new();
        let mut bn_caches = HashMap::new();
        let mut pool_caches = HashMap::new();

        for (idx, node) in self.graph.nodes.iter().enumerate() {
            let xs: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|i| {
                    acts.get(i)
                        .ok_or_else(|| Error::Usage(format!("tensor `{i}` not available")))
                })
                .collect::<Result<_>>()?;
            let key = &node.param_key;
            let out = match node.op {
                Op::Conv2d { stride, padding, .. } => conv2d_forward(
                    xs[0],
                    self.param(&format!("{key}.weight"))?,
                    Some(self.param(&format!("{key}.bias"))?),
                    stride,
                    padding,
                )?,
                Op::Deconv2d { stride, padding, .. } => deconv2d_forward(
                    xs[0],
                    self.param(&format!("{key}.weight"))?,
                    Some(self.param(&format!("{key}.bias"))?),
                    stride,
                    padding,
                )?,
                Op::PRelu { .. } => prelu_forward(xs[0], self.param(&format!("{key}.slope"))?)?,
                Op::BatchNorm { .. } => {
                    let mut stats = running_updates
                        .get(key)
                        .or_else(|| self.running.get(key))
                        .cloned();
                    let bn_mode = self.bn_mode(node, mode);
                    let (y, cache) = batchnorm_forward(
                        xs[0],
                        self.param(&format!("{key}.gamma"))?,
                        self.param(&format!("{key}.beta"))?,
                        &mut stats,
                        bn_mode,
                        &self.bn_config,
                    )
                    .map_err(|e| match e {
                        Error::Usage(m) => Error::Usage(format!("{} (layer `{}`)", m, node.name)),
                        other => other,
                    })?;
                    if bn_mode == (BnMode::Train { update_running: true }) {
                        running_updates.insert(key.clone(), stats.expect("set by training update"));
                    }
                    bn_caches.insert(idx, cache);
                    y
                }
                Op::MaxPool2x2 => {
                    let (y, arg) = maxpool2x2_forward(xs[0])?;
                    pool_caches.insert(idx, arg);
                    y
                }
                Op::Centre { groups } => centre_groups(xs[0], groups)?,
                Op::ShiftCost { ref shifts } => shift_cost_forward(xs[0], xs[1], shifts)?,
                Op::Concat => concat_channels(&xs)?,
                Op::Add => add_all(&xs)?,
            };
            if self.node_trainable(node) || node.inputs.iter().any(|i| requires_grad.contains(i)) {
                requires_grad.insert(node.name.clone());
            }
            acts.insert(node.name.clone(), out);
        }
        Ok((
            ForwardPass {
                acts,
                requires_grad,
                bn: bn_caches,
                pool: pool_caches,
                mode,
            },
            running_updates,
        ))
    }

    /// Back-propagates `output_grads` (tensor name → ∂loss/∂tensor).
    pub fn backward(&self, pass: &ForwardPass<T>, output_grads: Vec<(String, Tensor<T>)>) -> Result<Gradients<T>> {
        let mut tgrads: HashMap<String, Tensor<T>> = HashMap::new();
        for (name, g) in output_grads {
            let act = pass
                .get(&name)
                .ok_or_else(|| Error::Usage(format!("no forward value for `{name}`")))?;
            if act.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "backward seed",
                    lhs: g.shape().to_vec(),
                    rhs: act.shape().to_vec(),
                });
            }
            accumulate(&mut tgrads, &name, g);
        }
        let mut pgrads: BTreeMap<String, Vec<T>> = self
            .trainable_param_names()
            .into_iter()
            .map(|n| {
                let len = self.params[&n].numel();
                (n, vec![T::zero(); len])
            })
            .collect();
        let mut add_param = |name: String, g: &Tensor<T>| {
            if let Some(acc) = pgrads.get_mut(&name) {
                acc.iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b);
            }
        };

        for (idx, node) in self.graph.nodes.iter().enumerate().rev() {
            if !pass.requires_grad.contains(&node.name) {
                continue;
            }
            let Some(dy) = tgrads.remove(&node.name) else {
                continue;
            };
            let want: Vec<bool> = node.inputs.iter().map(|i| pass.requires_grad.contains(i)).collect();
            let trainable = self.node_trainable(node);
            let key = &node.param_key;
            let x = |i: usize| {
                pass.get(&node.inputs[i])
                    .ok_or_else(|| Error::Usage(format!("forward cache for `{}` missing", node.inputs[i])))
            };
            let mut input_grads: Vec<Option<Tensor<T>>> = vec![None; node.inputs.len()];
            match node.op {
                Op::Conv2d { stride, padding, .. } | Op::Deconv2d { stride, padding, .. } => {
                    let w = self.param(&format!("{key}.weight"))?;
                    let g = if matches!(node.op, Op::Conv2d { .. }) {
                        conv2d_backward(&dy, Some(x(0)?), w, stride, padding, want[0])?
                    } else {
                        deconv2d_backward(&dy, Some(x(0)?), w, stride, padding, want[0])?
                    };
                    if trainable {
                        add_param(format!("{key}.weight"), &g.weight);
                        add_param(format!("{key}.bias"), &g.bias);
                    }
                    input_grads[0] = g.input;
                }
                Op::PRelu { .. } => {
                    let (dx, da) = prelu_backward(&dy, x(0)?, self.param(&format!("{key}.slope"))?)?;
                    if trainable {
                        add_param(format!("{key}.slope"), &da);
                    }
                    input_grads[0] = Some(dx);
                }
                Op::BatchNorm { .. } => {
                    let cache = pass
                        .bn
                        .get(&idx)
                        .ok_or_else(|| Error::Usage(format!("batch-norm cache for `{}` missing", node.name)))?;
                    let g = batchnorm_backward(&dy, x(0)?, self.param(&format!("{key}.gamma"))?, cache)?;
                    if trainable {
                        add_param(format!("{key}.gamma"), &g.gamma);
                        add_param(format!("{key}.beta"), &g.beta);
                    }
                    input_grads[0] = Some(g.input);
                }
                Op::MaxPool2x2 => {
                    let arg = pass
                        .pool
                        .get(&idx)
                        .ok_or_else(|| Error::Usage(format!("pooling cache for `{}` missing", node.name)))?;
                    input_grads[0] = Some(maxpool2x2_backward(&dy, arg, x(0)?.shape())?);
                }
                Op::Centre { groups } => input_grads[0] = Some(centre_groups(&dy, groups)?),
                Op::ShiftCost { ref shifts } => {
                    let (dl, dr) = shift_cost_backward(&dy, x(0)?, x(1)?, shifts)?;
                    input_grads[0] = Some(dl);
                    input_grads[1] = Some(dr);
                }
                Op::Concat => {
                    let chans: Vec<usize> = (0..node.inputs.len())
                        .map(|i| x(i).map(|t| t.shape()[1]))
                        .collect::<Result<_>>()?;
                    for (slot, part) in input_grads.iter_mut().zip(split_channels(&dy, &chans)?) {
                        *slot = Some(part);
                    }
                }
                Op::Add => {
                    for slot in input_grads.iter_mut() {
                        *slot = Some(dy.clone());
                    }
                }
            }
            for ((name, g), w) in node.inputs.iter().zip(input_grads).zip(&want) {
                if let (Some(g), true) = (g, *w) {
                    accumulate(&mut tgrads, name, g);
                }
            }
        }
        let inputs = self
            .graph
            .inputs
            .iter()
            .filter_map(|i| tgrads.remove(&i.name).map(|g| (i.name.clone(), g)))
            .collect();
        Ok(Gradients { params: pgrads, inputs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::GraphBuilder;

    fn tiny() -> NetworkGraph {
        let mut b = GraphBuilder::new("tiny");
        let x = b.input("x", 2);
        let y = b.conv_bn_prelu("l1", &x, 3, 3, 1, 1).unwrap();
        let p = b.maxpool("pool", &y).unwrap();
        let z = b.deconv("up", &p, 3, 2).unwrap();
        let s = b.add("sum", &[&y, &z]).unwrap();
        let o = b.conv("out", &s, 1, 3, 1, 1).unwrap();
        b.finish(&o, &[&o], 2).unwrap()
    }

    #[test]
    fn untrained_inference_leaves_state_alone() {
        let m = Model::<f32>::new(tiny(), 1).unwrap();
        let x = Tensor::full(&[1, 2, 4, 4], 0.5);
        let y = m.infer(&[("x", &x)]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(m.running.is_empty());
    }

    #[test]
    fn infer_is_bitwise_deterministic() {
        let mut m = Model::<f32>::new(tiny(), 1).unwrap();
        let x = Tensor::from_fn(&[2, 2, 8, 8], |i| (i as f32 * 0.37).sin());
        m.forward(&[("x", &x)], Mode::Train).unwrap();
        let a = m.infer(&[("x", &x)]).unwrap();
        let b = m.infer(&[("x", &x)]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_params_get_no_gradients() {
        let mut m = Model::<f64>::new(tiny(), 3).unwrap();
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| (i as f64 * 0.7).cos());
        m.forward(&[("x", &x)], Mode::Train).unwrap();
        m.set_frozen(&["l1"]);
        let pass = m.forward(&[("x", &x)], Mode::Train).unwrap();
        let out = pass.get("out").unwrap().clone();
        let g = m.backward(&pass, vec![("out".into(), Tensor::full(out.shape(), 1.0))]).unwrap();
        assert!(g.params.keys().all(|k| !k.starts_with("l1")));
        assert!(g.params.contains_key("out.weight"));
    }

    #[test]
    fn missing_input_is_reported() {
        let m = Model::<f32>::new(tiny(), 1).unwrap();
        assert!(m.infer(&[]).is_err());
    }
}
