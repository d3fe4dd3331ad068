//! Graph constructors for the five depth networks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{GraphBuilder, NetworkGraph, Op};
use crate::nn::model::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WidthConfig {
    pub base: usize,
    /// FocusNet channel multiplier per branch.
    pub focus_branch_multipliers: Vec<usize>,
    pub focus_strides: Vec<usize>,
    /// Kernel of each branch's first (sampling) convolution.
    pub focus_sampling_kernels: Vec<usize>,
    /// 3×3 layers per branch after the sampling convolution.
    pub focus_branch_convs: usize,
    pub edof_layers: usize,
    /// Channels of the EDoFNet hidden layers.
    pub edof_width: usize,
    pub fusion_layers: usize,
    pub stereo_features: usize,
    /// Horizontal shifts (pixels) at which StereoNet compares the two views
    /// before its first convolution. Empty feeds the raw pair only.
    pub stereo_shifts: Vec<usize>,
    pub hourglass_levels: usize,
    pub rounds: usize,
    pub bdff_head_layers: usize,
    pub slices: usize,
}

impl Default for WidthConfig {
    fn default() -> Self {
        WidthConfig {
            base: 8,
            focus_branch_multipliers: vec![1, 2, 4, 8],
            focus_strides: vec![1, 2, 4, 8],
            focus_sampling_kernels: vec![3, 4, 6, 10],
            focus_branch_convs: 2,
            edof_layers: 20,
            edof_width: 16,
            fusion_layers: 10,
            stereo_features: 16,
            stereo_shifts: Vec::new(),
            hourglass_levels: 4,
            rounds: 2,
            bdff_head_layers: 4,
            slices: 16,
        }
    }
}

impl WidthConfig {
    /// Smallest configuration with the default topology, for gradient checks.
    pub fn tiny() -> Self {
        WidthConfig {
            base: 2,
            edof_width: 2,
            stereo_features: 4,
            hourglass_levels: 2,
            slices: 2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base", self.base),
            ("edof_layers", self.edof_layers),
            ("edof_width", self.edof_width),
            ("fusion_layers", self.fusion_layers),
            ("stereo_features", self.stereo_features),
            ("hourglass_levels", self.hourglass_levels),
            ("rounds", self.rounds),
            ("bdff_head_layers", self.bdff_head_layers),
            ("slices", self.slices),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("width config: `{name}` must be at least 1")));
        }
        let n = self.focus_strides.len();
        if n == 0 || self.focus_branch_multipliers.len() != n || self.focus_sampling_kernels.len() != n {
            return Err(Error::Config(
                "focus branch strides, multipliers and kernels must have equal nonzero length".into(),
            ));
        }
        for i in 0..n {
            let (s, k, m) = (self.focus_strides[i], self.focus_sampling_kernels[i], self.focus_branch_multipliers[i]);
            if m == 0 || s == 0 {
                return Err(Error::Config(format!("focus branch {i}: zero stride or multiplier")));
            }
            if s == 1 && k % 2 == 0 {
                return Err(Error::Config(format!("focus branch {i}: full-resolution kernel {k} must be odd")));
            }
            if s > 1 && (k < s || (k - s) % 2 != 0 || s % 2 != 0) {
                return Err(Error::Config(format!(
                    "focus branch {i}: sampling kernel {k} cannot reduce by exactly {s}"
                )));
            }
            if i > 0 && (s <= self.focus_strides[i - 1] || m <= self.focus_branch_multipliers[i - 1]) {
                return Err(Error::Config(
                    "focus branches must increase in stride and in channel count".into(),
                ));
            }
        }
        Ok(())
    }

    fn focus_multiple(&self) -> usize {
        self.focus_strides.iter().copied().max().unwrap_or(1)
    }

    fn stereo_multiple(&self) -> usize {
        1 << self.hourglass_levels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Edof,
    Focus,
    Focus2,
    Stereo,
    Bdff,
}

impl NetKind {
    pub const ALL: [NetKind; 5] = [NetKind::Edof, NetKind::Focus, NetKind::Focus2, NetKind::Stereo, NetKind::Bdff];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Edof => "edof",
            NetKind::Focus => "focus",
            NetKind::Focus2 => "focus2",
            NetKind::Stereo => "stereo",
            NetKind::Bdff => "bdff",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            NetKind::Edof => "EDoFNet",
            NetKind::Focus => "FocusNet",
            NetKind::Focus2 => "FocusNet-v2",
            NetKind::Stereo => "StereoNet",
            NetKind::Bdff => "BDfFNet",
        }
    }

    pub fn build(self, width: &WidthConfig) -> Result<NetworkGraph> {
        match self {
            NetKind::Edof => build_edofnet(width),
            NetKind::Focus => build_focusnet(width),
            NetKind::Focus2 => build_focusnet_v2(width),
            NetKind::Stereo => build_stereonet(width, width.rounds),
            NetKind::Bdff => build_bdffnet(width),
        }
    }

    /// Sub-networks whose pretrained weights initialise this one.
    pub fn components(self) -> &'static [NetKind] {
        match self {
            NetKind::Focus2 => &[NetKind::Focus, NetKind::Edof],
            NetKind::Bdff => &[NetKind::Focus2, NetKind::Stereo],
            _ => &[],
        }
    }

    /// Parameter-name prefix owned by this network alone.
    pub fn param_prefix(self) -> &'static str {
        match self {
            NetKind::Edof => "edof.",
            NetKind::Focus => "focus.",
            NetKind::Focus2 => "focus2.",
            NetKind::Stereo => "stereo.",
            NetKind::Bdff => "bdff.",
        }
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown network `{s}` (edof|focus|focus2|stereo|bdff)")))
    }
}

/// Name of the EDoF colour tensor inside a FocusNet-v2 embedded with `prefix`.
pub fn edof_tensor_in_focus2(prefix: &str, width: &WidthConfig) -> String {
    format!("{prefix}edof/{}", layer_name("edof", width.edof_layers))
}

fn layer_name(prefix: &str, i: usize) -> String {
    format!("{prefix}.l{i:02}")
}

/// `n` 3×3 layers: conv-BN-PReLU except the last, a plain convolution.
fn conv_stack(b: &mut GraphBuilder, prefix: &str, x: &str, width: usize, out: usize, n: usize) -> Result<String> {
    let mut t = x.to_string();
    for i in 1..n {
        t = b.conv_bn_prelu(&layer_name(prefix, i), &t, width, 3, 1, 1)?;
    }
    b.conv(&layer_name(prefix, n), &t, out, 3, 1, 1)
}

pub fn build_edofnet(width: &WidthConfig) -> Result<NetworkGraph> {
    width.validate()?;
    let mut b = GraphBuilder::new("edof");
    let x = b.input("stack", width.slices * 3);
    let out = conv_stack(&mut b, "edof", &x, width.edof_width, 3, width.edof_layers)?;
    b.finish(&out, &[&out], 1)
}

pub fn build_focusnet(width: &WidthConfig) -> Result<NetworkGraph> {
    width.validate()?;
    let mut b = GraphBuilder::new("focus");
    let stack = b.input("stack", width.slices * 3);
    let x = b.centre("focus.centre", &stack, width.slices)?;
    let mut branches = vec![];
    for (k, ((&s, &kernel), &m)) in width
        .focus_strides
        .iter()
        .zip(&width.focus_sampling_kernels)
        .zip(&width.focus_branch_multipliers)
        .enumerate()
    {
        let ch = width.base * m;
        let pad = if s == 1 { kernel / 2 } else { (kernel - s) / 2 };
        let mut t = b.conv_bn_prelu(&format!("focus.b{k}.in"), &x, ch, kernel, s, pad)?;
        for j in 0..width.focus_branch_convs {
            t = b.conv_bn_prelu(&format!("focus.b{k}.c{j}"), &t, ch, 3, 1, 1)?;
        }
        if s > 1 {
            let up = b.deconv(&format!("focus.b{k}.up.deconv"), &t, width.base, s)?;
            let up = b.batchnorm(&format!("focus.b{k}.up.bn"), &up)?;
            t = b.prelu(&format!("focus.b{k}.up.act"), &up)?;
        }
        branches.push(t);
    }
    let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
    let cat = b.concat("focus.cat", &refs)?;
    let f = b.conv_bn_prelu("focus.fuse1", &cat, 2 * width.base, 3, 1, 1)?;
    let f = b.conv_bn_prelu("focus.fuse2", &f, width.base, 3, 1, 1)?;
    let out = b.conv("focus.out", &f, 1, 3, 1, 1)?;
    b.finish(&out, &[&out], width.focus_multiple())
}

/// FocusNet and EDoFNet on the same stack, their outputs fused by ten 3×3
/// layers added onto the FocusNet depth.
pub fn build_focusnet_v2(width: &WidthConfig) -> Result<NetworkGraph> {
    let focus = build_focusnet(width)?;
    let edof = build_edofnet(width)?;
    let mut b = GraphBuilder::new("focus2");
    let x = b.input("stack", width.slices * 3);
    let depth = b.embed(&focus, "focus/", &[("stack", &x)])?;
    let color = b.embed(&edof, "edof/", &[("stack", &x)])?;
    let cat = b.concat("focus2.cat", &[&depth, &color])?;
    let fused = conv_stack(&mut b, "focus2.fuse", &cat, width.base, 1, width.fusion_layers)?;
    let out = b.add("focus2.out", &[&depth, &fused])?;
    b.finish(&out, &[&out], width.focus_multiple())
}

fn hourglass(b: &mut GraphBuilder, name: &str, x: &str, f: usize, level: usize) -> Result<String> {
    let up1 = b.residual(&format!("{name}.skip"), x, f)?;
    let low = b.maxpool(&format!("{name}.pool"), x)?;
    let low = b.residual(&format!("{name}.down"), &low, f)?;
    let low = if level > 1 {
        hourglass(b, &format!("{name}.inner"), &low, f, level - 1)?
    } else {
        b.residual(&format!("{name}.bottom"), &low, f)?
    };
    let low = b.residual(&format!("{name}.rise"), &low, f)?;
    let up2 = b.deconv(&format!("{name}.up"), &low, f, 2)?;
    b.add(name, &[&up1, &up2])
}

/// Stacked hourglass on the concatenated EDoF pair, plus its shifted
/// differences when configured, with one supervised prediction per round.
pub fn build_stereonet(width: &WidthConfig, rounds: usize) -> Result<NetworkGraph> {
    width.validate()?;
    if rounds == 0 {
        return Err(Error::Config("stereo network needs at least one round".into()));
    }
    let f = width.stereo_features;
    let mut b = GraphBuilder::new("stereo");
    let l = b.input("left", 3);
    let r = b.input("right", 3);
    let cat = if width.stereo_shifts.is_empty() {
        b.concat("stereo.in", &[&l, &r])?
    } else {
        let cost = b.shift_cost("stereo.cost", &l, &r, &width.stereo_shifts)?;
        b.concat("stereo.in", &[&l, &r, &cost])?
    };
    let stem = b.conv_bn_prelu("stereo.stem", &cat, f, 3, 1, 1)?;
    let mut x = b.residual("stereo.stem.res", &stem, f)?;
    let mut preds = vec![];
    for round in 1..=rounds {
        let p = format!("stereo.r{round}");
        let hg = hourglass(&mut b, &format!("{p}.hg"), &x, f, width.hourglass_levels)?;
        let feat = b.residual(&format!("{p}.post"), &hg, f)?;
        let feat = b.conv_bn_prelu(&format!("{p}.lin"), &feat, f, 1, 1, 0)?;
        let pred = b.conv(&format!("{p}.pred"), &feat, 1, 1, 1, 0)?;
        if round < rounds {
            let fb = b.conv(&format!("{p}.feat_back"), &feat, f, 1, 1, 0)?;
            let pb = b.conv(&format!("{p}.pred_back"), &pred, f, 1, 1, 0)?;
            x = b.add(&format!("{p}.merge"), &[&x, &fb, &pb])?;
        }
        preds.push(pred);
    }
    let out = preds.last().unwrap().clone();
    let taps: Vec<&str> = preds.iter().map(String::as_str).collect();
    b.finish(&out, &taps, width.stereo_multiple())
}

/// FocusNet-v2 on the left stack, EDoFNet on the right stack (weights shared
/// with the left copy), StereoNet on both EDoF images, and a fusion head on
/// stereo (1) + focus (1) + EDoF (3) channels added onto the stereo output.
pub fn build_bdffnet(width: &WidthConfig) -> Result<NetworkGraph> {
    let focus2 = build_focusnet_v2(width)?;
    let edof = build_edofnet(width)?;
    let stereo = build_stereonet(width, width.rounds)?;
    let mut b = GraphBuilder::new("bdff");
    let ls = b.input("left_stack", width.slices * 3);
    let rs = b.input("right_stack", width.slices * 3);
    let depth = b.embed(&focus2, "f2/", &[("stack", &ls)])?;
    let left_color = edof_tensor_in_focus2("f2/", width);
    let right_color = b.embed(&edof, "edof_r/", &[("stack", &rs)])?;
    let disp = b.embed(&stereo, "st/", &[("left", &left_color), ("right", &right_color)])?;
    let cat = b.concat("bdff.cat", &[&disp, &depth, &left_color])?;
    let head = conv_stack(&mut b, "bdff.head", &cat, width.base, 1, width.bdff_head_layers)?;
    let out = b.add("bdff.out", &[&disp, &head])?;
    let m = lcm(width.focus_multiple(), width.stereo_multiple());
    b.finish(&out, &[&out], m)
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

/// Bias of the EDoFNet output layer at initialisation.
pub const EDOF_INIT_BIAS: f32 = 0.5;

/// Fresh model for `kind`. The last layer of each residual fusion head starts
/// at zero so the composite initially reproduces its sub-network; the EDoFNet
/// output layer starts as a constant mid-grey image.
pub fn init_model(kind: NetKind, width: &WidthConfig, seed: u64) -> Result<Model<f32>> {
    let graph = kind.build(width)?;
    let mut model = Model::new(graph, seed)?;
    let edof_out = layer_name("edof", width.edof_layers);
    if let Some(w) = model.params.get_mut(&format!("{edof_out}.weight")) {
        w.data_mut().fill(0.0);
    }
    if let Some(b) = model.params.get_mut(&format!("{edof_out}.bias")) {
        b.data_mut().fill(EDOF_INIT_BIAS);
    }
    let heads = [
        layer_name("focus2.fuse", width.fusion_layers),
        layer_name("bdff.head", width.bdff_head_layers),
    ];
    for h in heads {
        for suffix in ["weight", "bias"] {
            if let Some(t) = model.params.get_mut(&format!("{h}.{suffix}")) {
                t.data_mut().fill(0.0);
            }
        }
    }
    Ok(model)
}

/// Layers that regress disparity directly, including those of embedded
/// sub-networks.
pub fn depth_output_layers(kind: NetKind, width: &WidthConfig) -> Vec<String> {
    match kind {
        NetKind::Edof => vec![],
        NetKind::Focus => vec!["focus.out".into()],
        NetKind::Stereo => (1..=width.rounds).map(|r| format!("stereo.r{r}.pred")).collect(),
        NetKind::Focus2 | NetKind::Bdff => kind
            .components()
            .iter()
            .flat_map(|&c| depth_output_layers(c, width))
            .collect(),
    }
}

/// Sets the direct disparity outputs to the constant `bias`, so training
/// starts from a flat prediction instead of a random one.
pub fn init_depth_outputs(model: &mut Model<f32>, kind: NetKind, width: &WidthConfig, bias: f32) {
    for layer in depth_output_layers(kind, width) {
        if let Some(w) = model.params.get_mut(&format!("{layer}.weight")) {
            w.data_mut().fill(0.0);
        }
        if let Some(b) = model.params.get_mut(&format!("{layer}.bias")) {
            b.data_mut().fill(bias);
        }
    }
}

/// Receptive field along one axis of the network output, by the usual
/// `(extent, jump)` recurrence taking the widest input at merges. A
/// transposed convolution with stride `s` and kernel `k` reads `⌈k/s⌉`
/// input samples per output.
pub fn receptive_field(graph: &NetworkGraph) -> Result<usize> {
    use std::collections::HashMap;
    let mut rf: HashMap<&str, (f64, f64)> = graph.inputs.iter().map(|i| (i.name.as_str(), (1.0, 1.0))).collect();
    for node in &graph.nodes {
        let ins: Vec<(f64, f64)> = node
            .inputs
            .iter()
            .map(|i| {
                rf.get(i.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("`{i}` used before it is produced")))
            })
            .collect::<Result<_>>()?;
        let widest = ins
            .iter()
            .copied()
            .fold((0.0f64, 1.0f64), |a, b| if b.0 > a.0 { b } else { a });
        let (r, j) = widest;
        let out = match node.op {
            Op::Conv2d { kernel, stride, .. } => (r + (kernel as f64 - 1.0) * j, j * stride as f64),
            Op::Deconv2d { kernel, stride, .. } => {
                let taps = kernel.div_ceil(stride) as f64;
                (r + (taps - 1.0) * j, j / stride as f64)
            }
            Op::MaxPool2x2 => (r + j, j * 2.0),
            Op::ShiftCost { ref shifts } => (r + *shifts.iter().max().unwrap_or(&0) as f64 * j, j),
            Op::PRelu { .. } | Op::BatchNorm { .. } | Op::Centre { .. } | Op::Concat | Op::Add => (r, j),
        };
        rf.insert(node.name.as_str(), out);
    }
    let (r, _) = rf
        .get(graph.output.as_str())
        .ok_or_else(|| Error::Config(format!("output `{}` is never produced", graph.output)))?;
    Ok(r.round() as usize)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSummary {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub shape: [usize; 3],
    pub params: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphSummary {
    pub name: String,
    pub input_size: [usize; 2],
    pub spatial_multiple: usize,
    pub param_count: usize,
    pub receptive_field: usize,
    pub taps: Vec<String>,
    pub layers: Vec<LayerSummary>,
}

/// Layer list with shapes at `height`×`width` and parameter counts.
pub fn summarize(graph: &NetworkGraph, height: usize, width: usize) -> Result<GraphSummary> {
    let shapes = graph.infer_shapes(height, width)?;
    let mut seen = std::collections::BTreeSet::new();
    let layers = graph
        .nodes
        .iter()
        .map(|n| LayerSummary {
            name: n.name.clone(),
            op: n.op.clone(),
            inputs: n.inputs.clone(),
            shape: shapes[&n.name],
            params: n
                .op
                .params(&n.param_key)
                .iter()
                .filter(|p| seen.insert(p.name.clone()))
                .map(|p| p.shape.iter().product::<usize>())
                .sum(),
        })
        .collect();
    Ok(GraphSummary {
        name: graph.name.clone(),
        input_size: [height, width],
        spatial_multiple: graph.spatial_multiple,
        param_count: graph.param_count(),
        receptive_field: receptive_field(graph)?,
        taps: graph.taps.clone(),
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::Mode;
    use crate::tensor::Tensor;

    fn conv_count(g: &NetworkGraph, prefix: &str) -> usize {
        g.nodes
            .iter()
            .filter(|n| n.name.starts_with(prefix) && matches!(n.op, Op::Conv2d { .. }))
            .count()
    }

    #[test]
    fn edofnet_structure() {
        let g = build_edofnet(&WidthConfig::default()).unwrap();
        assert_eq!(conv_count(&g, "edof."), 20);
        assert_eq!(receptive_field(&g).unwrap(), 41);
        let s = g.infer_shapes(64, 64).unwrap();
        assert_eq!(s[&g.inputs[0].name], [48, 64, 64]);
        assert_eq!(s[&g.output], [3, 64, 64]);
        assert!(matches!(
            build_edofnet(&WidthConfig { base: 0, ..Default::default() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn depth_outputs_start_flat() {
        let w = WidthConfig::tiny();
        for kind in NetKind::ALL {
            let mut m = init_model(kind, &w, 3).unwrap();
            init_depth_outputs(&mut m, kind, &w, 0.25);
            let layers = depth_output_layers(kind, &w);
            assert_eq!(layers.is_empty(), kind == NetKind::Edof);
            for l in layers {
                assert!(m.params[&format!("{l}.weight")].data().iter().all(|&v| v == 0.0), "{l}");
                assert!(m.params[&format!("{l}.bias")].data().iter().all(|&v| v == 0.25), "{l}");
            }
        }
        let m = {
            let mut m = init_model(NetKind::Focus, &w, 3).unwrap();
            init_depth_outputs(&mut m, NetKind::Focus, &w, 0.25);
            m
        };
        let x = crate::tensor::Tensor::<f32>::full(&[1, 6, 8, 8], 0.3);
        assert!(m.infer(&[("stack", &x)]).unwrap().data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn receptive_field_recurrence() {
        let mut b = GraphBuilder::new("t");
        let x = b.input("x", 1);
        let a = b.conv("a", &x, 1, 3, 1, 1).unwrap();
        let single = b.finish(&a, &[&a], 1).unwrap();
        assert_eq!(receptive_field(&single).unwrap(), 3);

        let mut b = GraphBuilder::new("t");
        let x = b.input("x", 1);
        let a = b.conv("a", &x, 1, 3, 1, 1).unwrap();
        let p = b.maxpool("p", &a).unwrap();
        let c = b.conv("c", &p, 1, 3, 1, 1).unwrap();
        assert_eq!(receptive_field(&b.finish(&c, &[&c], 2).unwrap()).unwrap(), 8);
    }

    #[test]
    fn focusnet_structure() {
        let w = WidthConfig::default();
        let g = build_focusnet(&w).unwrap();
        let branches: std::collections::BTreeSet<_> = g
            .nodes
            .iter()
            .filter_map(|n| n.name.strip_prefix("focus.b").and_then(|r| r.split('.').next()))
            .collect();
        assert_eq!(branches.len(), 4);
        let s = g.infer_shapes(64, 64).unwrap();
        assert_eq!(s[&g.output], [1, 64, 64]);
        assert_eq!(s["focus.b3.c0.act"], [64, 8, 8]);
        assert_eq!(s["focus.cat"], [32, 64, 64]);
        assert!(g.infer_shapes(60, 64).is_err());
    }

    #[test]
    fn focusnet_v2_structure() {
        let g = build_focusnet_v2(&WidthConfig::default()).unwrap();
        assert_eq!(conv_count(&g, "focus2.fuse"), 10);
        assert_eq!(g.infer_shapes(64, 64).unwrap()[&g.output], [1, 64, 64]);
        assert_eq!(g.infer_shapes(24, 40).unwrap()[&g.output], [1, 24, 40]);
        assert!(g.node(&edof_tensor_in_focus2("", &WidthConfig::default())).is_some());
    }

    #[test]
    fn stereonet_structure() {
        let w = WidthConfig::default();
        let g = build_stereonet(&w, 2).unwrap();
        assert_eq!(g.taps.len(), 2);
        assert_eq!(g.infer_shapes(64, 64).unwrap()[&g.output], [1, 64, 64]);
        for n in &g.nodes {
            if let Op::Conv2d { kernel, .. } = n.op {
                assert!(kernel == 1 || kernel == 3, "{}", n.name);
            }
        }
        // rounds do not share weights
        let keys: Vec<_> = g.param_specs().into_iter().map(|p| p.name).collect();
        assert!(keys.iter().any(|k| k.starts_with("stereo.r1.")));
        assert!(keys.iter().any(|k| k.starts_with("stereo.r2.")));
        assert!(g.infer_shapes(40, 40).is_err());
        assert!(g.node("stereo.cost").is_none());
    }

    #[test]
    fn stereonet_with_shift_costs() {
        let w = WidthConfig { stereo_shifts: vec![0, 4, 8], ..WidthConfig::default() };
        let g = build_stereonet(&w, 2).unwrap();
        let shapes = g.infer_shapes(64, 64).unwrap();
        assert_eq!(shapes["stereo.cost"], [3, 64, 64]);
        assert_eq!(shapes["stereo.in"][0], 9);
        let plain = receptive_field(&build_stereonet(&WidthConfig::default(), 2).unwrap()).unwrap();
        assert_eq!(receptive_field(&g).unwrap(), plain + 8);
    }

    #[test]
    fn bdffnet_structure() {
        let w = WidthConfig::default();
        let g = build_bdffnet(&w).unwrap();
        assert_eq!(g.infer_shapes(64, 64).unwrap()["bdff.cat"][0], 5);
        assert_eq!(g.infer_shapes(64, 64).unwrap()[&g.output], [1, 64, 64]);
        // both EDoF copies share one set of weights
        let edof_keys = g.param_specs().iter().filter(|p| p.name.starts_with("edof.")).count();
        assert_eq!(edof_keys, build_edofnet(&w).unwrap().param_specs().len());
    }

    #[test]
    fn shape_inference_grid() {
        let w = WidthConfig::default();
        for kind in NetKind::ALL {
            let g = kind.build(&w).unwrap();
            for size in [64, 128, 256] {
                g.infer_shapes(size, size).unwrap();
            }
            if g.spatial_multiple > 1 {
                let err = g.infer_shapes(65, 65).unwrap_err().to_string();
                assert!(err.contains("multiple"), "{kind}: {err}");
            } else {
                g.infer_shapes(65, 65).unwrap();
            }
        }
    }

    #[test]
    fn parameter_count_is_deterministic() {
        let w = WidthConfig::default();
        for kind in NetKind::ALL {
            assert_eq!(kind.build(&w).unwrap().param_count(), kind.build(&w).unwrap().param_count());
        }
        let wider = WidthConfig { base: 16, edof_width: 32, stereo_features: 32, ..Default::default() };
        for kind in NetKind::ALL {
            assert!(kind.build(&wider).unwrap().param_count() > kind.build(&w).unwrap().param_count());
        }
    }

    #[test]
    fn edof_receptive_field_exceeds_blur_cap() {
        let rf = receptive_field(&build_edofnet(&WidthConfig::default()).unwrap()).unwrap();
        assert!(rf as f64 > crate::optics::MAX_COC_PX);
    }

    #[test]
    fn frozen_edof_inside_focus2_matches_standalone() {
        let w = WidthConfig::tiny();
        let mut edof = init_model(NetKind::Edof, &w, 3).unwrap();
        for (i, v) in edof.params.get_mut("edof.l20.weight").unwrap().data_mut().iter_mut().enumerate() {
            *v = ((i * 7) % 5) as f32 * 0.1 - 0.2;
        }
        let x = Tensor::from_fn(&[2, 6, 8, 8], |i| ((i * 37) % 11) as f32 / 11.0);
        edof.forward(&[("stack", &x)], Mode::Train).unwrap();
        let mut f2 = init_model(NetKind::Focus2, &w, 4).unwrap();
        for (k, v) in &edof.params {
            f2.params.insert(k.clone(), v.clone());
        }
        f2.running.extend(edof.running.clone());
        f2.set_frozen(&["edof."]);
        f2.forward(&[("stack", &x)], Mode::Train).unwrap();
        let inside = f2.infer_tensors(&[("stack", &x)], &[&edof_tensor_in_focus2("", &w)]).unwrap();
        assert_eq!(inside[0], edof.infer(&[("stack", &x)]).unwrap());
    }

    #[test]
    fn edof_starts_mid_grey() {
        let w = WidthConfig::tiny();
        let m = init_model(NetKind::Edof, &w, 1).unwrap();
        let x = Tensor::from_fn(&[1, 6, 8, 8], |i| (i % 3) as f32);
        assert!(m.infer(&[("stack", &x)]).unwrap().data().iter().all(|&v| v == EDOF_INIT_BIAS));
    }

    #[test]
    fn zero_head_reproduces_subnet() {
        let w = WidthConfig::tiny();
        let mut m = init_model(NetKind::Focus2, &w, 1).unwrap();
        let x = Tensor::from_fn(&[1, 6, 8, 8], |i| (i % 5) as f32 / 5.0);
        let pass = m.forward(&[("stack", &x)], Mode::Train).unwrap();
        assert_eq!(pass.get(&m.graph().output).unwrap(), pass.get("focus/focus.out").unwrap());
    }

    #[test]
    fn summary_serializes() {
        let g = build_stereonet(&WidthConfig::default(), 2).unwrap();
        let s = summarize(&g, 64, 64).unwrap();
        assert_eq!(s.param_count, s.layers.iter().map(|l| l.params).sum::<usize>());
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("stereo.r2.pred"));
    }
}
