//! Error metrics, inference timing and the model comparison table.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::ensure_parent;
use crate::networks::NetKind;
use crate::nn::Model;
use crate::tensor::Tensor;
use crate::train::{as_refs, predict};

/// Mean absolute error, accumulated in double precision.
pub fn mae(pred: &[f32], gt: &[f32]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            op: "mae",
            lhs: vec![pred.len()],
            rhs: vec![gt.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::Shape("mae of empty maps".into()));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(&p, &g)| (p as f64 - g as f64).abs()).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub height: usize,
    pub width: usize,
    /// Median of `runs`, in seconds.
    pub median_s: f64,
    pub runs: Vec<f64>,
}

/// Median wall-clock time of `runs` (at least 5) inference passes on
/// synthetic inputs of the given size, after one untimed warm-up pass.
pub fn benchmark_inference(model: &Model<f32>, height: usize, width: usize, runs: usize) -> Result<Timing> {
    let runs = runs.max(5);
    let graph = model.graph();
    graph.infer_shapes(height, width)?;
    let inputs: Vec<(String, Tensor<f32>)> = graph
        .inputs
        .iter()
        .map(|i| {
            let t = Tensor::from_fn(&[1, i.channels, height, width], |k| ((k * 7919) % 255) as f32 / 255.0);
            (i.name.clone(), t)
        })
        .collect();
    let refs = as_refs(&inputs);
    model.infer(&refs)?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        model.infer(&refs)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median_s = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(Timing {
        height,
        width,
        median_s,
        runs: times,
    })
}

/// Mean of per-image MAE over `samples` (left eye, clamped prediction).
pub fn evaluate_model(kind: NetKind, model: &Model<f32>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += mae(&predict(kind, model, s)?, &s.disparity[0])?;
    }
    Ok(total / samples.len() as f64)
}

/// Full-scale published MAE, printed for orientation only.
pub const REFERENCE_MAE: [(NetKind, f64); 4] = [
    (NetKind::Focus, 0.045),
    (NetKind::Focus2, 0.031),
    (NetKind::Stereo, 0.024),
    (NetKind::Bdff, 0.021),
];

/// Order from worst to best expected quality.
pub const EXPECTED_ORDER: [NetKind; 4] = [NetKind::Focus, NetKind::Focus2, NetKind::Stereo, NetKind::Bdff];

/// Relative slack before an ordering violation counts as a failure.
pub const ORDER_TOLERANCE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub net: NetKind,
    pub name: String,
    pub mae: f64,
    pub time_s: f64,
    pub param_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderCheck {
    pub better: NetKind,
    pub worse: NetKind,
    /// `mae(better) / mae(worse) − 1`; positive means the pair is inverted.
    pub excess: f64,
    pub holds: bool,
    pub within_tolerance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ModelScore>,
    pub resolution: [usize; 2],
    pub test_samples: usize,
    pub config_hash: String,
    pub ordering: Vec<OrderCheck>,
    pub reference: Vec<(NetKind, f64)>,
}

impl EvalReport {
    pub fn score(&self, net: NetKind) -> Option<&ModelScore> {
        self.rows.iter().find(|r| r.net == net)
    }

    /// True when no adjacent pair is inverted by more than [`ORDER_TOLERANCE`].
    pub fn ordering_passes(&self) -> bool {
        self.ordering.iter().all(|o| o.within_tolerance)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,mae,time_s,height,width,note\n");
        let [h, w] = self.resolution;
        for r in &self.rows {
            s += &format!("{},{:.6},{:.6},{h},{w},measured\n", r.name, r.mae, r.time_s);
        }
        for (net, v) in &self.reference {
            s += &format!("{},{v},,,,\"reference, not reproduced\"\n", net.display_name());
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join("eval.json");
        ensure_parent(&json)?;
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("eval.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [h, w] = self.resolution;
        writeln!(f, "{:<12} {:>9} {:>10}   ({} test images, timing at {h}x{w})", "model", "MAE", "time (s)", self.test_samples)?;
        for r in &self.rows {
            writeln!(f, "{:<12} {:>9.4} {:>10.4}", r.name, r.mae, r.time_s)?;
        }
        write!(f, "{:<12}", "reference")?;
        for (net, v) in &self.reference {
            write!(f, " {}={v}", net.display_name())?;
        }
        writeln!(f, "  (reference, not reproduced)")?;
        for o in &self.ordering {
            let tag = if o.holds {
                "ok"
            } else if o.within_tolerance {
                "inverted, within tolerance"
            } else {
                "VIOLATED"
            };
            writeln!(
                f,
                "{} <= {}: {tag} ({:+.1}%)",
                o.better.display_name(),
                o.worse.display_name(),
                100.0 * o.excess
            )?;
        }
        Ok(())
    }
}

/// Checks each adjacent pair of [`EXPECTED_ORDER`] present in `rows`.
pub fn check_ordering(rows: &[ModelScore]) -> Vec<OrderCheck> {
    let get = |k: NetKind| rows.iter().find(|r| r.net == k).map(|r| r.mae);
    EXPECTED_ORDER
        .windows(2)
        .filter_map(|pair| {
            let (worse, better) = (pair[0], pair[1]);
            let (mw, mb) = (get(worse)?, get(better)?);
            let excess = if mw > 0.0 { mb / mw - 1.0 } else if mb > 0.0 { f64::INFINITY } else { 0.0 };
            Some(OrderCheck {
                better,
                worse,
                excess,
                holds: mb <= mw,
                within_tolerance: excess <= ORDER_TOLERANCE,
            })
        })
        .collect()
}

/// Scores whichever of FocusNet, FocusNet-v2, StereoNet and BDfFNet are in
/// `models` on `test`, in that order. StereoNet needs EDoF predictions cached
/// on the samples.
pub fn compare_models(
    models: &BTreeMap<NetKind, Model<f32>>,
    test: &[Sample],
    config_hash: &str,
    timing_runs: usize,
) -> Result<EvalReport> {
    let first = test.first().ok_or_else(|| Error::Usage("empty test split".into()))?;
    let (h, w) = (first.height, first.width);
    if !EXPECTED_ORDER.iter().any(|n| models.contains_key(n)) {
        return Err(Error::Usage("no depth network to evaluate".into()));
    }
    let mut rows = vec![];
    for net in EXPECTED_ORDER {
        let Some(model) = models.get(&net) else {
            continue;
        };
        let mae = evaluate_model(net, model, test)?;
        let time_s = benchmark_inference(model, h, w, timing_runs)?.median_s;
        rows.push(ModelScore {
            net,
            name: net.display_name().to_string(),
            mae,
            time_s,
            param_count: model.graph().param_count(),
        });
    }
    let ordering = check_ordering(&rows);
    for o in ordering.iter().filter(|o| !o.holds) {
        log::warn!(
            "{} scored worse than {} ({:+.1}%)",
            o.better.display_name(),
            o.worse.display_name(),
            100.0 * o.excess
        );
    }
    Ok(EvalReport {
        rows,
        resolution: [h, w],
        test_samples: test.len(),
        config_hash: config_hash.to_string(),
        ordering,
        reference: REFERENCE_MAE.to_vec(),
    })
}
