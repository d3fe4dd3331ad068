//! Declarative layer graphs.
//!
//! A [`NetworkGraph`] is an ordered list of primitive nodes. Each node produces
//! one tensor named after the node and refers to its parameters through a
//! `param_key`; nodes that share a key share weights. Composite layers such as
//! the residual module are expanded into primitives when they are added.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv::conv_out_extent;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Op {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    PRelu {
        channels: usize,
    },
    BatchNorm {
        channels: usize,
    },
    MaxPool2x2,
    /// Subtracts the mean over `groups` equal channel blocks.
    Centre {
        groups: usize,
    },
    /// Squared difference of two images under horizontal shifts of the
    /// second; one output channel per shift.
    ShiftCost {
        shifts: Vec<usize>,
    },
    Concat,
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamInit {
    /// He normal with the given fan-in.
    He(usize),
    Zeros,
    Ones,
    PReluSlope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: ParamInit,
}

impl Op {
    pub fn params(&self, key: &str) -> Vec<ParamSpec> {
        let p = |suffix: &str, shape: Vec<usize>, init| ParamSpec {
            name: format!("{key}.{suffix}"),
            shape,
            init,
        };
        match *self {
            Op::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                p(
                    "weight",
                    vec![out_channels, in_channels, kernel, kernel],
                    ParamInit::He(in_channels * kernel * kernel),
                ),
                p("bias", vec![out_channels], ParamInit::Zeros),
            ],
            Op::Deconv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                // Each output pixel sees in_channels · (kernel/stride)² taps.
                let taps = kernel.div_ceil(stride);
                vec![
                    p(
                        "weight",
                        vec![in_channels, out_channels, kernel, kernel],
                        ParamInit::He(in_channels * taps * taps),
                    ),
                    p("bias", vec![out_channels], ParamInit::Zeros),
                ]
            }
            Op::PRelu { channels } => vec![p("slope", vec![channels], ParamInit::PReluSlope)],
            Op::BatchNorm { channels } => vec![
                p("gamma", vec![channels], ParamInit::Ones),
                p("beta", vec![channels], ParamInit::Zeros),
            ],
            Op::MaxPool2x2 | Op::Centre { .. } | Op::ShiftCost { .. } | Op::Concat | Op::Add => vec![],
        }
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv",
            Op::Deconv2d { .. } => "deconv",
            Op::PRelu { .. } => "prelu",
            Op::BatchNorm { .. } => "batchnorm",
            Op::MaxPool2x2 => "maxpool",
            Op::Centre { .. } => "centre",
            Op::ShiftCost { .. } => "shift_cost",
            Op::Concat => "concat",
            Op::Add => "add",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub param_key: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub name: String,
    pub inputs: Vec<InputSpec>,
    pub nodes: Vec<Node>,
    /// Final prediction.
    pub output: String,
    /// Tensors that receive the loss; contains `output`.
    pub taps: Vec<String>,
    /// Input height and width must be multiples of this.
    pub spatial_multiple: usize,
}

/// Layer kinds available to graph builders. `ResidualModule` is a composite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv2D,
    Deconv2D,
    PReLU,
    BatchNorm,
    MaxPool,
    ResidualModule,
    Concat,
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl LayerSpec {
    /// Stride-1 convolution that keeps the spatial extent (odd kernel).
    pub fn same_conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2D,
            kernel,
            stride: 1,
            padding: kernel / 2,
            in_channels,
            out_channels,
        }
    }

    pub fn residual(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ResidualModule,
            kernel: 3,
            stride: 1,
            padding: 1,
            in_channels,
            out_channels,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            LayerKind::Conv2D | LayerKind::Deconv2D => {
                if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
                    return Err(Error::Config(format!("degenerate layer {self:?}")));
                }
                if self.kind == LayerKind::Conv2D && self.stride == 1 && self.kernel % 2 == 0 {
                    return Err(Error::Config(format!(
                        "resolution-preserving convolution needs an odd kernel, got {}",
                        self.kernel
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Incrementally assembles a [`NetworkGraph`].
#[derive(Debug)]
pub struct GraphBuilder {
    name: String,
    inputs: Vec<InputSpec>,
    nodes: Vec<Node>,
    channels: HashMap<String, usize>,
}

impl GraphBuilder {
    pub fn new(name: &str) -> Self {
        GraphBuilder {
            name: name.to_string(),
            inputs: vec![],
            nodes: vec![],
            channels: HashMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, channels: usize) -> String {
        self.inputs.push(InputSpec {
            name: name.to_string(),
            channels,
        });
        self.channels.insert(name.to_string(), channels);
        name.to_string()
    }

    pub fn channels(&self, tensor: &str) -> Result<usize> {
        self.channels
            .get(tensor)
            .copied()
            .ok_or_else(|| Error::Config(format!("tensor `{tensor}` used before it is produced")))
    }

    fn push(&mut self, name: &str, op: Op, inputs: &[&str], param_key: &str, out_channels: usize) -> Result<String> {
        for i in inputs {
            self.channels(i)?;
        }
        if self.channels.contains_key(name) {
            return Err(Error::Config(format!("tensor `{name}` produced twice")));
        }
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            param_key: param_key.to_string(),
        });
        self.channels.insert(name.to_string(), out_channels);
        Ok(name.to_string())
    }

    pub fn conv(&mut self, name: &str, x: &str, out: usize, kernel: usize, stride: usize, padding: usize) -> Result<String> {
        let in_channels = self.channels(x)?;
        let op = Op::Conv2d {
            in_channels,
            out_channels: out,
            kernel,
            stride,
            padding,
        };
        self.push(name, op, &[x], name, out)
    }

    pub fn deconv(&mut self, name: &str, x: &str, out: usize, stride: usize) -> Result<String> {
        let in_channels = self.channels(x)?;
        let (kernel, padding) = crate::nn::conv::deconv_kernel_for_stride(stride)?;
        let op = Op::Deconv2d {
            in_channels,
            out_channels: out,
            kernel,
            stride,
            padding,
        };
        self.push(name, op, &[x], name, out)
    }

    pub fn batchnorm(&mut self, name: &str, x: &str) -> Result<String> {
        let channels = self.channels(x)?;
        self.push(name, Op::BatchNorm { channels }, &[x], name, channels)
    }

    pub fn prelu(&mut self, name: &str, x: &str) -> Result<String> {
        let channels = self.channels(x)?;
        self.push(name, Op::PRelu { channels }, &[x], name, channels)
    }

    pub fn maxpool(&mut self, name: &str, x: &str) -> Result<String> {
        let channels = self.channels(x)?;
        self.push(name, Op::MaxPool2x2, &[x], "", channels)
    }

    pub fn centre(&mut self, name: &str, x: &str, groups: usize) -> Result<String> {
        let channels = self.channels(x)?;
        if groups == 0 || channels % groups != 0 {
            return Err(Error::Config(format!("centre `{name}`: {channels} channels do not split into {groups} groups")));
        }
        self.push(name, Op::Centre { groups }, &[x], "", channels)
    }

    pub fn shift_cost(&mut self, name: &str, left: &str, right: &str, shifts: &[usize]) -> Result<String> {
        let (cl, cr) = (self.channels(left)?, self.channels(right)?);
        if cl != cr {
            return Err(Error::Config(format!("shift cost `{name}`: {cl} vs {cr} channels")));
        }
        if shifts.is_empty() {
            return Err(Error::Config(format!("shift cost `{name}` needs at least one shift")));
        }
        self.push(name, Op::ShiftCost { shifts: shifts.to_vec() }, &[left, right], "", shifts.len())
    }

    pub fn concat(&mut self, name: &str, xs: &[&str]) -> Result<String> {
        let channels = xs.iter().map(|x| self.channels(x)).sum::<Result<usize>>()?;
        self.push(name, Op::Concat, xs, "", channels)
    }

    pub fn add(&mut self, name: &str, xs: &[&str]) -> Result<String> {
        let first = self.channels(xs.first().ok_or_else(|| Error::Config("empty add".into()))?)?;
        for x in xs {
            if self.channels(x)? != first {
                return Err(Error::Config(format!(
                    "add `{name}`: `{x}` has {} channels, expected {first}",
                    self.channels(x)?
                )));
            }
        }
        self.push(name, Op::Add, xs, "", first)
    }

    /// Convolution → batch norm → PReLU.
    pub fn conv_bn_prelu(&mut self, name: &str, x: &str, out: usize, kernel: usize, stride: usize, padding: usize) -> Result<String> {
        let c = self.conv(&format!("{name}.conv"), x, out, kernel, stride, padding)?;
        let b = self.batchnorm(&format!("{name}.bn"), &c)?;
        self.prelu(&format!("{name}.act"), &b)
    }

    /// Bottleneck residual module: 1×1 (half width) → 3×3 → 1×1, each conv
    /// followed by batch norm, PReLU after the first two; the skip path is the
    /// identity or a 1×1 projection when the channel count changes.
    pub fn residual(&mut self, name: &str, x: &str, out: usize) -> Result<String> {
        let in_channels = self.channels(x)?;
        let mid = (out / 2).max(1);
        let a = self.conv_bn_prelu(&format!("{name}.a"), x, mid, 1, 1, 0)?;
        let b = self.conv_bn_prelu(&format!("{name}.b"), &a, mid, 3, 1, 1)?;
        let c = self.conv(&format!("{name}.c.conv"), &b, out, 1, 1, 0)?;
        let c = self.batchnorm(&format!("{name}.c.bn"), &c)?;
        let skip = if in_channels == out {
            x.to_string()
        } else {
            self.conv(&format!("{name}.skip"), x, out, 1, 1, 0)?
        };
        self.add(name, &[&skip, &c])
    }

    /// Adds one layer described by `spec`, expanding composites.
    pub fn layer(&mut self, name: &str, spec: &LayerSpec, inputs: &[&str]) -> Result<String> {
        spec.validate()?;
        let x = inputs.first().copied().unwrap_or_default();
        if matches!(spec.kind, LayerKind::Conv2D | LayerKind::Deconv2D | LayerKind::ResidualModule)
            && self.channels(x)? != spec.in_channels
        {
            return Err(Error::Config(format!(
                "layer `{name}` expects {} input channels, `{x}` has {}",
                spec.in_channels,
                self.channels(x)?
            )));
        }
        match spec.kind {
            LayerKind::Conv2D => self.conv(name, x, spec.out_channels, spec.kernel, spec.stride, spec.padding),
            LayerKind::Deconv2D => self.deconv(name, x, spec.out_channels, spec.stride),
            LayerKind::PReLU => self.prelu(name, x),
            LayerKind::BatchNorm => self.batchnorm(name, x),
            LayerKind::MaxPool => self.maxpool(name, x),
            LayerKind::ResidualModule => self.residual(name, x, spec.out_channels),
            LayerKind::Concat => self.concat(name, inputs),
            LayerKind::Add => self.add(name, inputs),
        }
    }

    /// Copies `sub` into this graph. Its inputs are bound through `bind`
    /// (sub input name → tensor here); its internal tensors are renamed with
    /// `tensor_prefix` while parameter keys are kept, so the copy shares
    /// weights with `sub` and with any other copy. Returns the renamed output.
    pub fn embed(&mut self, sub: &NetworkGraph, tensor_prefix: &str, bind: &[(&str, &str)]) -> Result<String> {
        let mut rename: HashMap<String, String> = HashMap::new();
        for input in &sub.inputs {
            let (_, here) = bind
                .iter()
                .find(|(s, _)| *s == input.name)
                .ok_or_else(|| Error::Config(format!("embedding `{}`: input `{}` not bound", sub.name, input.name)))?;
            if self.channels(here)? != input.channels {
                return Err(Error::Config(format!(
                    "embedding `{}`: `{here}` has {} channels, `{}` expects {}",
                    sub.name,
                    self.channels(here)?,
                    input.name,
                    input.channels
                )));
            }
            rename.insert(input.name.clone(), here.to_string());
        }
        for node in &sub.nodes {
            let new_name = format!("{tensor_prefix}{}", node.name);
            let inputs: Vec<String> = node
                .inputs
                .iter()
                .map(|i| rename.get(i).cloned().unwrap_or_else(|| format!("{tensor_prefix}{i}")))
                .collect();
            let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
            let out = op_out_channels(&node.op, &refs, &self.channels)?;
            self.push(&new_name, node.op.clone(), &refs, &node.param_key, out)?;
            rename.insert(node.name.clone(), new_name);
        }
        rename
            .get(&sub.output)
            .cloned()
            .ok_or_else(|| Error::Config(format!("embedded graph `{}` has no output", sub.name)))
    }

    pub fn finish(self, output: &str, taps: &[&str], spatial_multiple: usize) -> Result<NetworkGraph> {
        let g = NetworkGraph {
            name: self.name,
            inputs: self.inputs,
            nodes: self.nodes,
            output: output.to_string(),
            taps: taps.iter().map(|s| s.to_string()).collect(),
            spatial_multiple: spatial_multiple.max(1),
        };
        g.validate()?;
        Ok(g)
    }
}

fn op_out_channels(op: &Op, inputs: &[&str], channels: &HashMap<String, usize>) -> Result<usize> {
    let ch = |t: &str| {
        channels
            .get(t)
            .copied()
            .ok_or_else(|| Error::Config(format!("tensor `{t}` used before it is produced")))
    };
    Ok(match *op {
        Op::Conv2d { out_channels, .. } | Op::Deconv2d { out_channels, .. } => out_channels,
        Op::PRelu { channels } | Op::BatchNorm { channels } => channels,
        Op::MaxPool2x2 | Op::Centre { .. } | Op::Add => ch(inputs[0])?,
        Op::ShiftCost { ref shifts } => shifts.len(),
        Op::Concat => inputs.iter().map(|t| ch(t)).sum::<Result<usize>>()?,
    })
}

/// Per-tensor (channels, height, width).
pub type ShapeMap = BTreeMap<String, [usize; 3]>;

impl NetworkGraph {
    /// Checks ordering, uniqueness, and that output and taps exist.
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeSet<&str> = self.inputs.iter().map(|i| i.name.as_str()).collect();
        for node in &self.nodes {
            for i in &node.inputs {
                if !seen.contains(i.as_str()) {
                    return Err(Error::Config(format!(
                        "node `{}` reads `{i}` before it is produced",
                        node.name
                    )));
                }
            }
            if !seen.insert(node.name.as_str()) {
                return Err(Error::Config(format!("tensor `{}` produced twice", node.name)));
            }
        }
        for t in std::iter::once(&self.output).chain(&self.taps) {
            if !seen.contains(t.as_str()) {
                return Err(Error::Config(format!("output `{t}` is never produced")));
            }
        }
        Ok(())
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Propagates shapes for an `height`×`width` input.
    pub fn infer_shapes(&self, height: usize, width: usize) -> Result<ShapeMap> {
        let m = self.spatial_multiple;
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::Shape(format!(
                "{}: input {height}x{width} is not a positive multiple of {m}",
                self.name
            )));
        }
        let mut shapes = ShapeMap::new();
        for i in &self.inputs {
            shapes.insert(i.name.clone(), [i.channels, height, width]);
        }
        for node in &self.nodes {
            let ins: Vec<[usize; 3]> = node.inputs.iter().map(|i| shapes[i]).collect();
            let bad = |what: String| Error::Shape(format!("{}: node `{}`: {what}", self.name, node.name));
            let out = match node.op {
                Op::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = ins[0];
                    if c != in_channels {
                        return Err(bad(format!("expects {in_channels} channels, got {c}")));
                    }
                    let (Some(oh), Some(ow)) = (
                        conv_out_extent(h, kernel, stride, padding),
                        conv_out_extent(w, kernel, stride, padding),
                    ) else {
                        return Err(bad(format!("kernel {kernel} does not fit {h}x{w}")));
                    };
                    [out_channels, oh, ow]
                }
                Op::Deconv2d {
                    in_channels,
                    out_channels,
                    stride,
                    ..
                } => {
                    let [c, h, w] = ins[0];
                    if c != in_channels {
                        return Err(bad(format!("expects {in_channels} channels, got {c}")));
                    }
                    [out_channels, h * stride, w * stride]
                }
                Op::PRelu { channels } | Op::BatchNorm { channels } => {
                    if ins[0][0] != channels {
                        return Err(bad(format!("expects {channels} channels, got {}", ins[0][0])));
                    }
                    ins[0]
                }
                Op::MaxPool2x2 => {
                    let [c, h, w] = ins[0];
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(bad(format!("max pooling an odd extent {h}x{w}")));
                    }
                    [c, h / 2, w / 2]
                }
                Op::Centre { .. } => ins[0],
                Op::ShiftCost { ref shifts } => {
                    if ins[0] != ins[1] {
                        return Err(bad(format!("comparing mismatched shapes {ins:?}")));
                    }
                    [shifts.len(), ins[0][1], ins[0][2]]
                }
                Op::Concat => {
                    let [_, h, w] = ins[0];
                    if ins.iter().any(|s| s[1] != h || s[2] != w) {
                        return Err(bad(format!("concatenating mismatched extents {ins:?}")));
                    }
                    [ins.iter().map(|s| s[0]).sum(), h, w]
                }
                Op::Add => {
                    if ins.iter().any(|s| *s != ins[0]) {
                        return Err(bad(format!("adding mismatched shapes {ins:?}")));
                    }
                    ins[0]
                }
            };
            shapes.insert(node.name.clone(), out);
        }
        Ok(shapes)
    }

    /// Every distinct parameter, in first-use order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut seen = BTreeSet::new();
        let mut out = vec![];
        for node in &self.nodes {
            for p in node.op.params(&node.param_key) {
                if seen.insert(p.name.clone()) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Keys of all batch-norm nodes (distinct).
    pub fn batchnorm_keys(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::BatchNorm { .. }))
            .filter(|n| seen.insert(n.param_key.clone()))
            .map(|n| n.param_key.clone())
            .collect()
    }

    pub fn output_channels(&self) -> Result<usize> {
        let m = self.spatial_multiple;
        Ok(self.infer_shapes(m, m)?[&self.output][0])
    }
}
