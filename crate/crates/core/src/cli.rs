//! Command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn, LevelFilter};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dataset::{generate_dataset, load_split, DatasetConfig, Manifest, Sample, SamplePair, Split};
use crate::error::{Error, Result};
use crate::eval::{compare_models, mae, EvalReport};
use crate::gradsuite::run_suite;
use crate::image::Image;
use crate::infer::{infer_depth, infer_edof, load_model};
use crate::lightfield::{classical_dff, parse_slope_range, refocus_stack_from_lf, LightField};
use crate::networks::{NetKind, WidthConfig};
use crate::nn::gradcheck::GradCheckConfig;
use crate::nn::{Checkpoint, Model};
use crate::optics::FocalStack;
use crate::train::{cache_edof_predictions, prepare_model, run_pipeline, train, RunPaths, Stage, TrainConfig, TrainData};

/// Environment variable with the default worker count.
pub const THREADS_ENV: &str = "BDFF_THREADS";
pub const CONFIG_FILE: &str = "config.json";
pub const VERSION_FILE: &str = "version.json";
pub const RUN_SUBDIRS: [&str; 3] = ["checkpoints", "reports", "images"];

#[derive(Debug, Parser)]
#[command(name = "bdff", version, about = "Depth from binocular focal stacks")]
pub struct Cli {
    /// JSON configuration (a dataset or training config, or a run's config.json).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LevelFilter,
    /// Worker threads (default: $BDFF_THREADS, else all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a procedural stereo focal-stack dataset.
    GenDataset(GenDatasetArgs),
    /// Train one network, or the whole staged pipeline with `--net all`.
    Train(TrainArgs),
    /// Predict disparity (PFM and PNG) with a trained network.
    Infer(InferArgs),
    /// Score trained networks on the test split (JSON and CSV).
    Eval(EvalArgs),
    /// Refocus a light field into a focal stack, optionally predicting depth.
    Refocus(RefocusArgs),
    /// All-in-focus image from a focal stack.
    Edof(EdofArgs),
    /// Classical depth from focus (modified Laplacian, argmax).
    DffBaseline(DffArgs),
    /// Finite-difference gradient checks of every layer and network.
    GradCheck(GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenDataset(_) => "gen-dataset",
            Command::Train(_) => "train",
            Command::Infer(_) => "infer",
            Command::Eval(_) => "eval",
            Command::Refocus(_) => "refocus",
            Command::Edof(_) => "edof",
            Command::DffBaseline(_) => "dff-baseline",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Training scenes.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Square image extent in pixels.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NetArg {
    Edof,
    Focus,
    Focus2,
    Stereo,
    Bdff,
    All,
}

impl NetArg {
    fn kind(self) -> Option<NetKind> {
        Some(match self {
            NetArg::Edof => NetKind::Edof,
            NetArg::Focus => NetKind::Focus,
            NetArg::Focus2 => NetKind::Focus2,
            NetArg::Stereo => NetKind::Stereo,
            NetArg::Bdff => NetKind::Bdff,
            NetArg::All => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Pretrain,
    Finetune,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub net: NetArg,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Default: fine-tune for FocusNet-v2 and BDfFNet, pretrain otherwise.
    #[arg(long, value_enum)]
    pub stage: Option<StageArg>,
    /// Run directory holding sub-network checkpoints (default: --out).
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Epochs for every stage, overriding the configuration.
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Where the input focal stacks come from.
#[derive(Debug, Args)]
pub struct StackSource {
    /// Focal stack directory (slice PNGs plus stack.json).
    #[arg(long)]
    pub stack: Option<PathBuf>,
    /// Right-eye focal stack directory.
    #[arg(long)]
    pub right_stack: Option<PathBuf>,
    /// Dataset directory or manifest, used with --sample.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sample id inside --data.
    #[arg(long)]
    pub sample: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Run directory with checkpoints/ and config.json.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint file, overriding the one in --run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, value_parser = parse_net)]
    pub net: NetKind,
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub input: StackSource,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_net, default_value = "focus,focus2,stereo,bdff")]
    pub nets: Vec<NetKind>,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory with checkpoints/ (default: --out).
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Timed inference runs per network.
    #[arg(long, default_value_t = 5)]
    pub timing_runs: usize,
}

#[derive(Debug, Args)]
pub struct RefocusArgs {
    /// Light-field directory (views plus lightfield.json).
    #[arg(long)]
    pub lf: PathBuf,
    /// Slope range `start:end:count` in pixels per view.
    #[arg(long)]
    pub slopes: String,
    /// Also predict depth from the refocused stack with this network.
    #[arg(long, value_parser = parse_net)]
    pub net: Option<NetKind>,
    #[command(flatten)]
    pub model: ModelSource,
}

#[derive(Debug, Args)]
pub struct EdofArgs {
    #[command(flatten)]
    pub model: ModelSource,
    #[command(flatten)]
    pub input: StackSource,
}

#[derive(Debug, Args)]
pub struct DffArgs {
    #[command(flatten)]
    pub input: StackSource,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Skip the full network graphs.
    #[arg(long)]
    pub layers_only: bool,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

fn parse_net(s: &str) -> std::result::Result<NetKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Resolved settings written to `config.json` in every output directory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub log_level: String,
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VersionStamp {
    pub version: String,
    pub git_revision: String,
}

impl VersionStamp {
    pub fn current() -> Self {
        VersionStamp {
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_revision: option_env!("BDFF_GIT_REVISION").unwrap_or("unknown").to_string(),
        }
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads section `key` of a run snapshot, or the whole file when it has no
/// such section.
fn load_section<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>, key: &str) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let mut v = read_json(path)?;
    if v.get("subcommand").is_some() {
        return match v.get_mut(key).map(Value::take) {
            Some(section) if !section.is_null() => Ok(serde_json::from_value(section)?),
            _ => Err(Error::Config(format!("{} has no `{key}` section", path.display()))),
        };
    }
    Ok(serde_json::from_value(v)?)
}

/// Training configuration from a JSON file holding either a `TrainConfig`
/// or a run's `config.json`.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let cfg: TrainConfig = load_section(Some(path), "train")?;
    cfg.validate()?;
    Ok(cfg)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(v)?).map_err(|e| Error::io(path, e))
}

struct Context {
    cli_config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    log_level: LevelFilter,
    threads: Option<usize>,
    args: Vec<String>,
}

impl Context {
    fn snapshot(&self, command: &Command, dataset: Option<DatasetConfig>, train: Option<TrainConfig>) -> RunConfig {
        RunConfig {
            subcommand: command.name().to_string(),
            args: self.args.clone(),
            config_file: self.cli_config.clone(),
            seed: self.seed,
            out: self.out.clone(),
            log_level: self.log_level.to_string(),
            threads: self.threads,
            dataset,
            train,
        }
    }

    /// Creates the run layout and writes the snapshot and version stamp.
    fn open_run(&self, command: &Command, dataset: Option<DatasetConfig>, train: Option<TrainConfig>) -> Result<()> {
        for d in RUN_SUBDIRS {
            ensure_dir(&self.out.join(d))?;
        }
        write_json(&self.out.join(CONFIG_FILE), &self.snapshot(command, dataset, train))?;
        write_json(&self.out.join(VERSION_FILE), &VersionStamp::current())
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg: TrainConfig = load_section(self.cli_config.as_deref(), "train")?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Training configuration used for a run directory: its snapshot if present,
/// else `--config`, else defaults.
fn model_config(ctx: &Context, run: Option<&Path>) -> Result<TrainConfig> {
    if ctx.cli_config.is_some() {
        return ctx.train_config();
    }
    if let Some(run) = run {
        let snap = run.join(CONFIG_FILE);
        if snap.exists() {
            return load_section(Some(&snap), "train");
        }
    }
    Ok(TrainConfig::default())
}

fn checkpoint_path(src: &ModelSource, kind: NetKind) -> Result<PathBuf> {
    if let Some(p) = &src.checkpoint {
        return Ok(p.clone());
    }
    let run = src
        .run
        .as_ref()
        .ok_or_else(|| Error::Usage("pass --run or --checkpoint".into()))?;
    Ok(RunPaths::new(run).checkpoint(kind))
}

fn edof_for(src: &ModelSource, width: &WidthConfig) -> Result<Model<f32>> {
    let run = src
        .run
        .as_ref()
        .ok_or_else(|| Error::Usage("StereoNet needs --run with an EDoFNet checkpoint".into()))?;
    load_model(NetKind::Edof, width, &RunPaths::new(run).checkpoint(NetKind::Edof))
}

struct Stacks {
    id: String,
    left: Vec<Image>,
    right: Option<Vec<Image>>,
    truth: Option<Image>,
}

fn load_sample(data: &Path, id: &str) -> Result<SamplePair> {
    let manifest = Manifest::load(data)?;
    SamplePair::read(&manifest.sample_dir(id)?)
}

fn read_stacks(src: &StackSource) -> Result<Stacks> {
    match (&src.stack, &src.data, &src.sample) {
        (Some(dir), None, None) => {
            let left = FocalStack::read(dir)?.slices;
            let right = src.right_stack.as_ref().map(|d| FocalStack::read(d).map(|s| s.slices)).transpose()?;
            let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "stack".into());
            Ok(Stacks { id, left, right, truth: None })
        }
        (None, Some(data), Some(id)) => {
            let pair = load_sample(data, id)?;
            Ok(Stacks {
                id: id.clone(),
                left: pair.left.slices,
                right: Some(pair.right.slices),
                truth: Some(pair.disparity_left),
            })
        }
        _ => Err(Error::Usage("pass either --stack [--right-stack] or --data with --sample".into())),
    }
}

/// Writes `<stem>.pfm` and a grey-level `<stem>.png`.
fn write_depth(dir: &Path, stem: &str, depth: &Image) -> Result<(PathBuf, PathBuf)> {
    ensure_dir(dir)?;
    let pfm = dir.join(format!("{stem}.pfm"));
    let png = dir.join(format!("{stem}.png"));
    depth.write_pfm(&pfm)?;
    depth.map(|v| v.clamp(0.0, 1.0)).write_png(&png)?;
    Ok((pfm, png))
}

fn crop_like(truth: &Image, pred: &Image) -> Result<Image> {
    truth.crop(0, 0, pred.width(), pred.height())
}

fn cmd_gen_dataset(ctx: &Context, cmd: &Command, a: &GenDatasetArgs) -> Result<()> {
    let mut cfg: DatasetConfig = load_section(ctx.cli_config.as_deref(), "dataset")?;
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.count {
        cfg.train_count = n;
    }
    if let Some(n) = a.test_count {
        cfg.test_count = n;
    }
    if let Some(s) = a.size {
        cfg.width = s;
        cfg.height = s;
    }
    cfg.validate()?;
    let t = Instant::now();
    let manifest = generate_dataset(&cfg, &ctx.out)?;
    write_json(&ctx.out.join(CONFIG_FILE), &ctx.snapshot(cmd, Some(cfg), None))?;
    write_json(&ctx.out.join(VERSION_FILE), &VersionStamp::current())?;
    info!(
        "{} training and {} test scenes in {} ({:.1}s)",
        manifest.train.len(),
        manifest.test.len(),
        ctx.out.display(),
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn default_stage(kind: NetKind) -> Stage {
    if kind.components().is_empty() {
        Stage::Pretrain
    } else {
        Stage::Finetune
    }
}

fn cmd_train(ctx: &Context, cmd: &Command, a: &TrainArgs) -> Result<()> {
    let mut cfg = ctx.train_config()?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
        cfg.stage_epochs.clear();
    }
    ctx.open_run(cmd, None, Some(cfg.clone()))?;
    let manifest = Manifest::load(&a.data)?;
    let mut data = TrainData::from_manifest(&manifest, &cfg)?;
    let paths = RunPaths::new(&ctx.out);
    let t = Instant::now();
    let Some(kind) = a.net.kind() else {
        let res = run_pipeline(&mut data, &cfg, Some(&paths))?;
        for o in &res.outcomes {
            info!("{}: best validation loss {:.4} at epoch {}", o.net, o.best_val_loss, o.best_epoch);
        }
        info!("pipeline finished in {:.0}s", t.elapsed().as_secs_f64());
        return Ok(());
    };
    let stage = match a.stage {
        Some(StageArg::Pretrain) => Stage::Pretrain,
        Some(StageArg::Finetune) => Stage::Finetune,
        None => default_stage(kind),
    };
    let from = RunPaths::new(a.from.as_deref().unwrap_or(&ctx.out));
    let mut components = BTreeMap::new();
    if stage == Stage::Finetune {
        for &c in kind.components() {
            components.insert(c, Checkpoint::read(&from.checkpoint(c))?);
        }
    }
    if kind == NetKind::Stereo {
        let edof = load_model(NetKind::Edof, &cfg.width, &from.checkpoint(NetKind::Edof))?;
        cache_edof_predictions(&edof, data.all_mut())?;
    }
    let mut model = prepare_model(kind, &cfg, stage, &components, data.mean_disparity())?;
    let outcome = train(kind, &mut model, &data, &cfg, stage, Some(&paths))?;
    info!(
        "{}: best validation loss {:.4} at epoch {} ({:.0}s)",
        kind.display_name(),
        outcome.best_val_loss,
        outcome.best_epoch,
        t.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_infer(ctx: &Context, cmd: &Command, a: &InferArgs) -> Result<()> {
    let cfg = model_config(ctx, a.model.run.as_deref())?;
    ctx.open_run(cmd, None, Some(cfg.clone()))?;
    let model = load_model(a.net, &cfg.width, &checkpoint_path(&a.model, a.net)?)?;
    let stacks = read_stacks(&a.input)?;
    if a.net == NetKind::Edof {
        let img = infer_edof(&model, &cfg.width, &stacks.left)?;
        let p = ctx.out.join("images").join(format!("{}_edof.png", stacks.id));
        img.write_png(&p)?;
        info!("wrote {}", p.display());
        return Ok(());
    }
    let edof = if a.net == NetKind::Stereo { Some(edof_for(&a.model, &cfg.width)?) } else { None };
    let depth = infer_depth(a.net, &model, &cfg.width, &stacks.left, stacks.right.as_deref(), edof.as_ref())?;
    let (pfm, _) = write_depth(&ctx.out.join("images"), &format!("{}_{}", stacks.id, a.net), &depth)?;
    info!("wrote {}", pfm.display());
    if let Some(gt) = &stacks.truth {
        let gt = crop_like(gt, &depth)?;
        info!("MAE against ground truth: {:.4}", mae(depth.data(), gt.data())?);
    }
    Ok(())
}

fn cmd_eval(ctx: &Context, cmd: &Command, a: &EvalArgs) -> Result<()> {
    let run = a.run.clone().unwrap_or_else(|| ctx.out.clone());
    let cfg = model_config(ctx, Some(&run))?;
    ctx.open_run(cmd, None, Some(cfg.clone()))?;
    let paths = RunPaths::new(&run);
    let manifest = Manifest::load(&a.data)?;
    let mut test: Vec<Sample> = load_split(&manifest, Split::Test)?;
    let mut models = BTreeMap::new();
    for &net in &a.nets {
        if net == NetKind::Edof {
            warn!("EDoFNet predicts colour and is not scored");
            continue;
        }
        models.insert(net, load_model(net, &cfg.width, &paths.checkpoint(net))?);
    }
    if models.contains_key(&NetKind::Stereo) {
        let edof = load_model(NetKind::Edof, &cfg.width, &paths.checkpoint(NetKind::Edof))?;
        cache_edof_predictions(&edof, test.iter_mut())?;
    }
    let hash = sha256_hex(&serde_json::to_vec(&cfg)?);
    let report: EvalReport = compare_models(&models, &test, &hash, a.timing_runs)?;
    report.write(&ctx.out.join("reports"))?;
    print!("{report}");
    Ok(())
}

fn cmd_refocus(ctx: &Context, cmd: &Command, a: &RefocusArgs) -> Result<()> {
    let slopes = parse_slope_range(&a.slopes)?;
    let cfg = if a.net.is_some() { Some(model_config(ctx, a.model.run.as_deref())?) } else { None };
    ctx.open_run(cmd, None, cfg.clone())?;
    let lf = LightField::load(&a.lf)?;
    let stack = refocus_stack_from_lf(&lf, &slopes)?;
    let dir = ctx.out.join("images").join("refocused");
    stack.write(&dir)?;
    info!("{} refocused slices in {}", stack.len(), dir.display());
    if let (Some(net), Some(cfg)) = (a.net, cfg) {
        if !matches!(net, NetKind::Focus | NetKind::Focus2) {
            return Err(Error::Usage("a single light field feeds FocusNet or FocusNet-v2 only".into()));
        }
        let model = load_model(net, &cfg.width, &checkpoint_path(&a.model, net)?)?;
        let depth = infer_depth(net, &model, &cfg.width, &stack.slices, None, None)?;
        let (pfm, _) = write_depth(&ctx.out.join("images"), &format!("refocused_{net}"), &depth)?;
        info!("wrote {}", pfm.display());
    }
    Ok(())
}

fn cmd_edof(ctx: &Context, cmd: &Command, a: &EdofArgs) -> Result<()> {
    let cfg = model_config(ctx, a.model.run.as_deref())?;
    ctx.open_run(cmd, None, Some(cfg.clone()))?;
    let model = load_model(NetKind::Edof, &cfg.width, &checkpoint_path(&a.model, NetKind::Edof)?)?;
    let stacks = read_stacks(&a.input)?;
    let img = infer_edof(&model, &cfg.width, &stacks.left)?;
    let p = ctx.out.join("images").join(format!("{}_edof.png", stacks.id));
    img.write_png(&p)?;
    info!("wrote {}", p.display());
    Ok(())
}

#[derive(Serialize)]
struct DffSummary {
    id: String,
    slices: usize,
    mae: Option<f64>,
    mean_confidence: f64,
}

fn cmd_dff(ctx: &Context, cmd: &Command, a: &DffArgs) -> Result<()> {
    ctx.open_run(cmd, None, None)?;
    let stacks = read_stacks(&a.input)?;
    let n = stacks.left.len();
    let dff = classical_dff(&stacks.left)?;
    let (w, h) = (stacks.left[0].width(), stacks.left[0].height());
    let depth = Image::from_vec(w, h, 1, dff.normalized())?;
    let images = ctx.out.join("images");
    write_depth(&images, &format!("{}_dff", stacks.id), &depth)?;
    Image::from_vec(w, h, 1, dff.confidence.clone())?.write_pfm(&images.join(format!("{}_dff_confidence.pfm", stacks.id)))?;
    let err = match &stacks.truth {
        Some(gt) => Some(mae(depth.data(), gt.data())?),
        None => None,
    };
    let summary = DffSummary {
        id: stacks.id.clone(),
        slices: n,
        mae: err,
        mean_confidence: dff.confidence.iter().map(|&c| c as f64).sum::<f64>() / dff.confidence.len() as f64,
    };
    write_json(&ctx.out.join("reports").join("dff.json"), &summary)?;
    match err {
        Some(e) => info!("classical DfF on {}: MAE {e:.4}", stacks.id),
        None => info!("classical DfF on {} done", stacks.id),
    }
    Ok(())
}

/// Returns whether every check passed.
fn cmd_grad_check(ctx: &Context, cmd: &Command, a: &GradCheckArgs) -> Result<bool> {
    ctx.open_run(cmd, None, None)?;
    let mut cfg = GradCheckConfig::default();
    if let Some(s) = ctx.seed {
        cfg.seed = s;
    }
    if let Some(t) = a.tolerance {
        cfg.tolerance = t;
    }
    let reports = run_suite(&cfg, !a.layers_only)?;
    println!("{:<28} {:>7} {:>14}  result", "graph", "blocks", "max rel err");
    for r in &reports {
        println!(
            "{:<28} {:>7} {:>14.3e}  {}",
            r.graph,
            r.blocks.len(),
            r.max_rel_error(),
            if r.passed() { "ok" } else { "FAIL" }
        );
        for b in r.failures() {
            println!("    {:<40} {:.3e} (analytic {:e}, numeric {:e})", b.name, b.max_rel_error, b.analytic, b.numeric);
        }
    }
    write_json(&ctx.out.join("reports").join("grad_check.json"), &reports)?;
    Ok(reports.iter().all(|r| r.passed()))
}

fn default_out(command: &Command) -> PathBuf {
    PathBuf::from("runs").join(command.name())
}

fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|&n| n > 0) {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("worker pool already initialised; --threads ignored");
        }
    }
}

/// Runs a parsed command line. `Ok(false)` means the command ran but its
/// checks failed.
pub fn run(cli: Cli, args: Vec<String>) -> Result<bool> {
    init_threads(cli.threads);
    let ctx = Context {
        cli_config: cli.config.clone(),
        seed: cli.seed,
        out: cli.out.clone().unwrap_or_else(|| default_out(&cli.command)),
        log_level: cli.log_level,
        threads: cli.threads,
        args,
    };
    let cmd = &cli.command;
    match cmd {
        Command::GenDataset(a) => cmd_gen_dataset(&ctx, cmd, a)?,
        Command::Train(a) => cmd_train(&ctx, cmd, a)?,
        Command::Infer(a) => cmd_infer(&ctx, cmd, a)?,
        Command::Eval(a) => cmd_eval(&ctx, cmd, a)?,
        Command::Refocus(a) => cmd_refocus(&ctx, cmd, a)?,
        Command::Edof(a) => cmd_edof(&ctx, cmd, a)?,
        Command::DffBaseline(a) => cmd_dff(&ctx, cmd, a)?,
        Command::GradCheck(a) => return cmd_grad_check(&ctx, cmd, a),
    }
    Ok(true)
}

/// Parses `args` (program name first), runs, and returns the exit code:
/// 0 on success, 1 on failure, 2 on a usage error.
pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    match run(cli, args) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_exits_with_usage_code() {
        assert_eq!(dispatch(["bdff", "grad-check", "--no-such-flag"]), 2);
        assert_eq!(dispatch(["bdff", "frobnicate"]), 2);
        assert_eq!(dispatch(["bdff", "train", "--net", "resnet", "--data", "x"]), 2);
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(dispatch(["bdff", "--version"]), 0);
    }

    #[test]
    fn nets_parse() {
        let cli = Cli::try_parse_from(["bdff", "eval", "--data", "d", "--nets", "focus,bdff"]).unwrap();
        match cli.command {
            Command::Eval(a) => assert_eq!(a.nets, vec![NetKind::Focus, NetKind::Bdff]),
            _ => unreachable!(),
        }
        let cli = Cli::try_parse_from(["bdff", "train", "--net", "all", "--data", "d", "--out", "o"]).unwrap();
        assert_eq!(cli.out, Some(PathBuf::from("o")));
    }

    #[test]
    fn config_section_or_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.json");
        fs::write(&raw, r#"{"epochs": 3}"#).unwrap();
        let cfg: TrainConfig = load_section(Some(&raw), "train").unwrap();
        assert_eq!(cfg.epochs, 3);
        let snap = dir.path().join("snap.json");
        let mut t = TrainConfig::default();
        t.steps_per_epoch = 7;
        let rc = RunConfig {
            subcommand: "train".into(),
            args: vec![],
            config_file: None,
            seed: None,
            out: dir.path().into(),
            log_level: "info".into(),
            threads: None,
            dataset: None,
            train: Some(t.clone()),
        };
        write_json(&snap, &rc).unwrap();
        let back: TrainConfig = load_section(Some(&snap), "train").unwrap();
        assert_eq!(back, t);
        assert!(load_section::<DatasetConfig>(Some(&snap), "dataset").is_err());
    }

    #[test]
    fn missing_input_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(dispatch(["bdff", "dff-baseline", "--out", out]), 2);
        assert!(dir.path().join(CONFIG_FILE).exists());
        assert!(dir.path().join(VERSION_FILE).exists());
        for d in RUN_SUBDIRS {
            assert!(dir.path().join(d).is_dir());
        }
    }
}
