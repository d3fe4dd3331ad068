//! Patch-based training of the depth networks, one stage at a time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{extract_patch, load_split, random_placement, Manifest, Patch, PatchTarget, Sample, Split};
use crate::error::{Error, Result};
use crate::image::ensure_parent;
use crate::networks::{init_depth_outputs, init_model, NetKind, WidthConfig};
use crate::nn::batchnorm::RunningStats;
use crate::nn::loss::{add_l2_gradient, l2_penalty, mse_sum_loss};
use crate::nn::{AdamConfig, AdamState, Checkpoint, Mode, Model};
use crate::rng::{name_seed, stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// λ of the `(λ/2)‖θ‖²` penalty.
    pub weight_decay: f64,
    pub epochs: usize,
    /// Per-network epoch overrides.
    pub stage_epochs: BTreeMap<NetKind, usize>,
    /// Full-scale epoch count, kept for the record only.
    pub reference_epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub focus_patch: usize,
    pub stereo_patch: usize,
    /// Training scenes held out for validation.
    pub validation_samples: usize,
    /// Fixed patches per validation scene.
    pub validation_patches: usize,
    pub augment: bool,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    /// Additional frozen prefixes per network.
    pub stage_freeze: BTreeMap<NetKind, Vec<String>>,
    pub seed: u64,
    pub width: WidthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            weight_decay: adam.weight_decay,
            epochs: 20,
            stage_epochs: BTreeMap::from([
                (NetKind::Edof, 15),
                (NetKind::Focus, 30),
                (NetKind::Focus2, 10),
                (NetKind::Stereo, 25),
                (NetKind::Bdff, 4),
            ]),
            reference_epochs: 80,
            steps_per_epoch: 20,
            batch_size: 4,
            focus_patch: 64,
            stereo_patch: 96,
            validation_samples: 6,
            validation_patches: 4,
            augment: true,
            freeze: vec![],
            stage_freeze: BTreeMap::new(),
            seed: 1,
            width: WidthConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [("lr", self.lr), ("weight_decay", self.weight_decay)];
        for (name, v) in finite_nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("`{name}` must be finite and nonnegative, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("`{name}` must lie in [0, 1), got {v}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("`eps` must be positive".into()));
        }
        let counts = [
            ("steps_per_epoch", self.steps_per_epoch),
            ("batch_size", self.batch_size),
            ("focus_patch", self.focus_patch),
            ("stereo_patch", self.stereo_patch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be at least 1")));
        }
        self.width.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn epochs_for(&self, kind: NetKind) -> usize {
        self.stage_epochs.get(&kind).copied().unwrap_or(self.epochs)
    }

    pub fn frozen_for(&self, kind: NetKind) -> Vec<String> {
        let mut out = self.freeze.clone();
        out.extend(self.stage_freeze.get(&kind).cloned().unwrap_or_default());
        out
    }

    pub fn patch_size(&self, kind: NetKind) -> usize {
        match patch_target(kind) {
            PatchTarget::Focus => self.focus_patch,
            PatchTarget::Stereo => self.stereo_patch,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Fresh weights.
    Pretrain,
    /// Sub-network weights loaded from their own checkpoints.
    Finetune,
}

pub fn patch_target(kind: NetKind) -> PatchTarget {
    match kind {
        NetKind::Edof | NetKind::Focus | NetKind::Focus2 => PatchTarget::Focus,
        NetKind::Stereo | NetKind::Bdff => PatchTarget::Stereo,
    }
}

/// Parameter prefixes stored in a checkpoint of `kind`.
pub fn checkpoint_prefixes(kind: NetKind) -> Vec<&'static str> {
    let mut out = vec![kind.param_prefix()];
    for &c in kind.components() {
        out.extend(checkpoint_prefixes(c));
    }
    out
}

/// Training scenes with a validation carve-out taken from the end of the split.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
}

impl TrainData {
    pub fn split(mut samples: Vec<Sample>, validation: usize) -> Result<Self> {
        if validation >= samples.len() {
            return Err(Error::Config(format!(
                "{validation} validation scenes leave no training scenes out of {}",
                samples.len()
            )));
        }
        let val = samples.split_off(samples.len() - validation);
        Ok(TrainData {
            train: samples,
            validation: val,
        })
    }

    pub fn from_manifest(manifest: &Manifest, cfg: &TrainConfig) -> Result<Self> {
        Self::split(load_split(manifest, Split::Train)?, cfg.validation_samples)
    }

    /// Mean left-view disparity over the training scenes.
    pub fn mean_disparity(&self) -> f32 {
        let (sum, n) = self
            .train
            .iter()
            .fold((0.0f64, 0usize), |(s, n), x| (s + x.disparity[0].iter().map(|&v| v as f64).sum::<f64>(), n + x.disparity[0].len()));
        if n == 0 {
            0.0
        } else {
            (sum / n as f64) as f32
        }
    }

    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut Sample> {
        self.train.iter_mut().chain(self.validation.iter_mut())
    }
}

fn batch_tensor(parts: Vec<&[f32]>, channels: usize, h: usize, w: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(parts.len() * channels * h * w);
    for p in &parts {
        data.extend_from_slice(p);
    }
    Tensor::from_vec(&[parts.len(), channels, h, w], data)
}

pub type NamedInputs = Vec<(String, Tensor<f32>)>;

pub fn as_refs(inputs: &NamedInputs) -> Vec<(&str, &Tensor<f32>)> {
    inputs.iter().map(|(n, t)| (n.as_str(), t)).collect()
}

/// Network inputs and regression target for a batch of patches.
pub fn batch_inputs(kind: NetKind, patches: &[Patch]) -> Result<(NamedInputs, Tensor<f32>)> {
    let first = patches.first().ok_or_else(|| Error::Usage("empty batch".into()))?;
    let s = first.size;
    let sc = first.stack[0].len() / (s * s);
    let col = |f: &dyn Fn(&Patch) -> &[f32]| patches.iter().map(f).collect::<Vec<_>>();
    let disparity = batch_tensor(col(&|p| &p.disparity[0]), 1, s, s)?;
    Ok(match kind {
        NetKind::Edof => (
            vec![("stack".into(), batch_tensor(col(&|p| &p.stack[0]), sc, s, s)?)],
            batch_tensor(col(&|p| &p.edof[0]), 3, s, s)?,
        ),
        NetKind::Focus | NetKind::Focus2 => {
            (vec![("stack".into(), batch_tensor(col(&|p| &p.stack[0]), sc, s, s)?)], disparity)
        }
        NetKind::Stereo => {
            if patches.iter().any(|p| p.edof_pred.len() != 2) {
                return Err(Error::Usage(
                    "stereo batches need cached EDoF predictions for both eyes".into(),
                ));
            }
            (
                vec![
                    ("left".into(), batch_tensor(col(&|p| &p.edof_pred[0]), 3, s, s)?),
                    ("right".into(), batch_tensor(col(&|p| &p.edof_pred[1]), 3, s, s)?),
                ],
                disparity,
            )
        }
        NetKind::Bdff => {
            if patches.iter().any(|p| p.stack.len() != 2) {
                return Err(Error::Usage("binocular batches need stereo patches".into()));
            }
            (
                vec![
                    ("left_stack".into(), batch_tensor(col(&|p| &p.stack[0]), sc, s, s)?),
                    ("right_stack".into(), batch_tensor(col(&|p| &p.stack[1]), sc, s, s)?),
                ],
                disparity,
            )
        }
    })
}

/// Whole-image inputs for the left eye of `sample`.
pub fn sample_inputs(kind: NetKind, sample: &Sample) -> Result<NamedInputs> {
    let (w, h, sc) = (sample.width, sample.height, sample.stack_channels());
    let stack = |eye: usize| Tensor::from_vec(&[1, sc, h, w], sample.stack_f32(eye));
    Ok(match kind {
        NetKind::Edof | NetKind::Focus | NetKind::Focus2 => vec![("stack".into(), stack(0)?)],
        NetKind::Stereo => {
            let pred = sample.edof_pred.as_ref().ok_or_else(|| {
                Error::Usage(format!("sample `{}` has no cached EDoF prediction", sample.id))
            })?;
            vec![
                ("left".into(), Tensor::from_vec(&[1, 3, h, w], pred[0].clone())?),
                ("right".into(), Tensor::from_vec(&[1, 3, h, w], pred[1].clone())?),
            ]
        }
        NetKind::Bdff => vec![("left_stack".into(), stack(0)?), ("right_stack".into(), stack(1)?)],
    })
}

/// Left-eye disparity prediction, clamped to `[0, 1]`.
pub fn predict(kind: NetKind, model: &Model<f32>, sample: &Sample) -> Result<Vec<f32>> {
    if kind == NetKind::Edof {
        return Err(Error::Usage("EDoFNet predicts colour, not disparity".into()));
    }
    let inputs = sample_inputs(kind, sample)?;
    let out = model.infer(&as_refs(&inputs))?;
    Ok(out.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

/// Runs `edof` over both eyes of every sample and stores the result.
pub fn cache_edof_predictions<'a>(edof: &Model<f32>, samples: impl IntoIterator<Item = &'a mut Sample>) -> Result<()> {
    let mut samples: Vec<&mut Sample> = samples.into_iter().collect();
    samples.par_iter_mut().try_for_each(|s| {
        let (w, h, sc) = (s.width, s.height, s.stack_channels());
        let mut eyes = vec![];
        for eye in 0..2 {
            let x = Tensor::from_vec(&[1, sc, h, w], s.stack_f32(eye))?;
            eyes.push(edof.infer(&[("stack", &x)])?.into_data());
        }
        let right = eyes.pop().unwrap();
        s.edof_pred = Some([eyes.pop().unwrap(), right]);
        Ok(())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub data_term: f64,
}

/// One Adam step on the batch objective. The data term averages the
/// supervision taps; each tap sees the same target.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    inputs: &[(&str, &Tensor<f32>)],
    target: &Tensor<f32>,
    iteration: usize,
) -> Result<StepStats> {
    let pass = model.forward(inputs, Mode::Train)?;
    let taps = model.graph().taps.clone();
    let scale = 1.0 / taps.len() as f32;
    let mut data_term = 0.0f64;
    let mut seeds = vec![];
    for tap in &taps {
        let pred = pass
            .get(tap)
            .ok_or_else(|| Error::Usage(format!("tap `{tap}` not produced")))?;
        let (d, mut g) = mse_sum_loss(pred, target)?;
        data_term += d as f64 * scale as f64;
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        seeds.push((tap.clone(), g));
    }
    let lambda = adam.config.weight_decay as f32;
    let trainable = model.trainable_param_names();
    let reg = l2_penalty(trainable.iter().map(|n| &model.params[n]), lambda) as f64;
    let loss = data_term + reg;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration });
    }
    let mut grads = model.backward(&pass, seeds)?;
    drop(pass);
    for (name, g) in grads.params.iter_mut() {
        add_l2_gradient(g, &model.params[name], lambda);
    }
    adam.step(&mut model.params, &grads.params)?;
    Ok(StepStats { loss, data_term })
}

/// Batch-mean squared error of the output and its mean absolute error, in
/// inference mode.
pub fn evaluate_patches(kind: NetKind, model: &Model<f32>, patches: &[Patch], batch: usize) -> Result<(f64, f64)> {
    let (mut sq, mut abs, mut count, mut n) = (0.0f64, 0.0f64, 0usize, 0usize);
    for chunk in patches.chunks(batch.max(1)) {
        let (inputs, target) = batch_inputs(kind, chunk)?;
        let out = model.infer(&as_refs(&inputs))?;
        for (&p, &t) in out.data().iter().zip(target.data()) {
            let d = (p - t) as f64;
            sq += d * d;
            abs += d.abs();
        }
        count += target.numel();
        n += chunk.len();
    }
    if n == 0 {
        return Ok((f64::NAN, f64::NAN));
    }
    Ok((sq / n as f64, abs / count as f64))
}

/// Fixed validation patches, identical for every epoch and every run with
/// the same seed.
pub fn validation_patches(kind: NetKind, samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<Patch>> {
    let size = cfg.patch_size(kind);
    let target = patch_target(kind);
    let mut rng = stream(name_seed(cfg.seed, "validation"), size as u64);
    let mut out = vec![];
    for s in samples {
        for _ in 0..cfg.validation_patches {
            let at = random_placement(s, target, size, false, &mut rng)?;
            out.push(extract_patch(s, target, size, &at)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_data: f64,
    pub val_loss: f64,
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub net: NetKind,
    pub stage: Stage,
    pub config: TrainConfig,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: usize,
    pub param_count: usize,
}

impl TrainOutcome {
    /// Per-epoch losses without timings, so identical runs give identical files.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_data,val_loss,val_mae\n");
        for r in &self.curve {
            s += &format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.train_data, r.val_loss, r.val_mae);
        }
        s
    }
}

#[derive(Clone)]
struct Snapshot {
    params: BTreeMap<String, Tensor<f32>>,
    running: BTreeMap<String, RunningStats<f32>>,
}

impl Snapshot {
    fn of(model: &Model<f32>) -> Self {
        Snapshot {
            params: model.params.clone(),
            running: model.running.clone(),
        }
    }

    fn restore(&self, model: &mut Model<f32>) {
        model.params = self.params.clone();
        model.running = self.running.clone();
    }
}

/// Where a training run writes its files.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths { root: root.to_path_buf() }
    }

    pub fn checkpoint(&self, kind: NetKind) -> PathBuf {
        self.root.join("checkpoints").join(format!("{kind}.ckpt"))
    }

    pub fn last_checkpoint(&self, kind: NetKind) -> PathBuf {
        self.root.join("checkpoints").join(format!("{kind}.last.ckpt"))
    }

    pub fn loss_curve(&self, kind: NetKind) -> PathBuf {
        self.root.join("reports").join(format!("{kind}_loss.csv"))
    }

    pub fn train_report(&self, kind: NetKind) -> PathBuf {
        self.root.join("reports").join(format!("{kind}_train.json"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fresh model for `kind` with its disparity outputs at `depth_prior`; in the
/// fine-tune stage every sub-network is then
/// initialised from its checkpoint.
pub fn prepare_model(
    kind: NetKind,
    cfg: &TrainConfig,
    stage: Stage,
    components: &BTreeMap<NetKind, Checkpoint>,
    depth_prior: f32,
) -> Result<Model<f32>> {
    let mut model = init_model(kind, &cfg.width, name_seed(cfg.seed, kind.name()))?;
    init_depth_outputs(&mut model, kind, &cfg.width, depth_prior);
    if stage == Stage::Finetune {
        if kind.components().is_empty() {
            return Err(Error::Usage(format!("{kind} has no sub-networks to fine-tune from")));
        }
        for c in kind.components() {
            let ckpt = components
                .get(c)
                .ok_or_else(|| Error::Usage(format!("fine-tuning {kind} needs a {c} checkpoint")))?;
            ckpt.load_into(&mut model, &checkpoint_prefixes(*c))?;
        }
    }
    model.set_frozen(&cfg.frozen_for(kind));
    Ok(model)
}

/// Trains `model` and leaves it at the epoch with the lowest validation loss
/// (training loss when there is no validation split). On a non-finite loss
/// the model is restored to the last completed epoch, which is also written
/// out, and the error is returned.
pub fn train(
    kind: NetKind,
    model: &mut Model<f32>,
    data: &TrainData,
    cfg: &TrainConfig,
    stage: Stage,
    out: Option<&RunPaths>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Usage("no training samples".into()));
    }
    let size = cfg.patch_size(kind);
    model.graph().infer_shapes(size, size)?;
    let target = patch_target(kind);
    let val = validation_patches(kind, &data.validation, cfg)?;
    let mut adam = AdamState::new(cfg.adam());
    let mut outcome = TrainOutcome {
        net: kind,
        stage,
        config: cfg.clone(),
        curve: vec![],
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        steps: 0,
        param_count: model.graph().param_count(),
    };
    let mut last_good = Snapshot::of(model);
    let mut best = last_good.clone();
    let train_seed = name_seed(cfg.seed, &format!("train/{kind}"));
    let epochs = cfg.epochs_for(kind);
    for epoch in 1..=epochs {
        let t0 = Instant::now();
        let mut rng = stream(train_seed, epoch as u64);
        let (mut loss_sum, mut data_sum) = (0.0, 0.0);
        for _ in 0..cfg.steps_per_epoch {
            let patches = (0..cfg.batch_size)
                .map(|_| {
                    let s = &data.train[rng.random_range(0..data.train.len())];
                    let at = random_placement(s, target, size, cfg.augment, &mut rng)?;
                    extract_patch(s, target, size, &at)
                })
                .collect::<Result<Vec<_>>>()?;
            let (inputs, y) = batch_inputs(kind, &patches)?;
            match train_step(model, &mut adam, &as_refs(&inputs), &y, outcome.steps) {
                Ok(st) => {
                    loss_sum += st.loss;
                    data_sum += st.data_term;
                    outcome.steps += 1;
                }
                Err(e) => {
                    last_good.restore(model);
                    if let Some(paths) = out {
                        Checkpoint::from_model(model, None).write(&paths.last_checkpoint(kind))?;
                    }
                    log::error!("{kind}: {e}; restored the state after epoch {}", epoch - 1);
                    return Err(e);
                }
            }
        }
        let steps = cfg.steps_per_epoch as f64;
        let (val_loss, val_mae) = if val.is_empty() {
            (data_sum / steps, f64::NAN)
        } else {
            evaluate_patches(kind, model, &val, cfg.batch_size)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / steps,
            train_data: data_sum / steps,
            val_loss,
            val_mae,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "{kind} epoch {epoch}/{epochs}: train {:.5} val {:.5} mae {:.4} ({:.1}s)",
            record.train_loss,
            record.val_loss,
            record.val_mae,
            record.seconds
        );
        outcome.curve.push(record);
        last_good = Snapshot::of(model);
        if val_loss < outcome.best_val_loss {
            outcome.best_val_loss = val_loss;
            outcome.best_epoch = epoch;
            best = last_good.clone();
        }
        if let Some(paths) = out {
            Checkpoint::from_model(model, Some(&adam)).write(&paths.last_checkpoint(kind))?;
            write_text(&paths.loss_curve(kind), &outcome.curve_csv())?;
        }
    }
    best.restore(model);
    if let Some(paths) = out {
        Checkpoint::from_model(model, None).write(&paths.checkpoint(kind))?;
        write_text(&paths.train_report(kind), &serde_json::to_string_pretty(&outcome)?)?;
    }
    Ok(outcome)
}

/// Everything produced by the staged pipeline.
pub struct PipelineResult {
    pub models: BTreeMap<NetKind, Model<f32>>,
    pub outcomes: Vec<TrainOutcome>,
}

impl PipelineResult {
    pub fn checkpoints(&self) -> BTreeMap<NetKind, Checkpoint> {
        self.models
            .iter()
            .map(|(k, m)| (*k, Checkpoint::from_model(m, None)))
            .collect()
    }
}

/// Pretrains EDoFNet and FocusNet, fine-tunes FocusNet-v2 from them,
/// pretrains StereoNet on EDoFNet predictions and fine-tunes BDfFNet from
/// FocusNet-v2 and StereoNet. Leaves the EDoF predictions cached in `data`.
pub fn run_pipeline(data: &mut TrainData, cfg: &TrainConfig, out: Option<&RunPaths>) -> Result<PipelineResult> {
    let mut models = BTreeMap::new();
    let mut ckpts = BTreeMap::new();
    let mut outcomes = vec![];
    let plan = [
        (NetKind::Edof, Stage::Pretrain),
        (NetKind::Focus, Stage::Pretrain),
        (NetKind::Focus2, Stage::Finetune),
        (NetKind::Stereo, Stage::Pretrain),
        (NetKind::Bdff, Stage::Finetune),
    ];
    for (kind, stage) in plan {
        if kind == NetKind::Stereo {
            cache_edof_predictions(&models[&NetKind::Edof], data.all_mut())?;
        }
        let mut model = prepare_model(kind, cfg, stage, &ckpts, data.mean_disparity())?;
        outcomes.push(train(kind, &mut model, data, cfg, stage, out)?);
        ckpts.insert(kind, Checkpoint::from_model(&model, None));
        models.insert(kind, model);
    }
    Ok(PipelineResult { models, outcomes })
}
