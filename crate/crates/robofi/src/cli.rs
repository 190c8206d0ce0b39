//! The `robofi` command line.
//!
//! Exit codes: 0 on success, 1 for invalid input (flags, configuration,
//! datasets), 2 when a run fails after validation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use robofi_core::autodiff::{decode_checkpoint, encode_checkpoint};
use robofi_core::models::{Model, ModelConfig, ModelKind};
use robofi_core::synth::gen_dataset;
use robofi_core::train::mc_splits;
use robofi_core::{ActivityLabel, Location, Sample, SnifferId, Velocity};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ConfigFile, Overrides, RunConfig};
use crate::container::{self, io_err, read_json_file, write_json_file, ContainerError};
use crate::fit::{evaluate, fit, weight_hash, FitError};
use crate::import::{adapter, import_with, CaptureAdapter, ImportError};
use crate::prepare::Normalizer;
use crate::protocols::{run_cv, run_freq_sweep, run_location, run_lovo, ProtocolError};
use crate::report::{read_report, render, write_report, EvalReport, Report, ReportError, TrainReport};
use crate::rundir::{latest, RunDir};

pub const CHECKPOINT_FILE: &str = "checkpoint.rfsw";
pub const MODEL_FILE: &str = "model.json";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const DATASET_DIR: &str = "dataset";
pub const IMPORT_FAILURES_FILE: &str = "import_failures.json";

#[derive(Debug, Parser)]
#[command(name = "robofi", version, about = "Robotic-arm activity recognition from two-sniffer WiFi CSI")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth,
    /// Convert an external dataset through an import adapter.
    Import,
    /// Decimate to `--rate` and cache per-sniffer normalization statistics.
    Preprocess,
    /// Train one model on the first split and save its best checkpoint.
    Train,
    /// Evaluate a saved checkpoint on a dataset.
    Eval,
    /// Monte-Carlo cross-validation.
    Cv,
    /// Leave-one-velocity-out evaluation.
    Lovo,
    /// Per-velocity cross-validation at every sweep rate.
    SweepFreq,
    /// Same-location and mixed-location training across placements.
    SweepLoc,
    /// Re-render CSV and SVG files from a run's report.json.
    Report {
        /// Run directory; defaults to the one named by `<out>/latest`.
        run: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Flags {
    /// Dataset directory; repeat to merge several.
    #[arg(long, global = true)]
    pub dataset: Vec<PathBuf>,
    /// Parent directory of run directories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Sampling rate in Hz.
    #[arg(long, global = true)]
    pub rate: Option<u32>,
    #[arg(long, global = true, value_parser = parse_velocity)]
    pub velocity: Option<Velocity>,
    #[arg(long, global = true, value_parser = parse_location)]
    pub location: Option<Location>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// `paper` or `tiny`.
    #[arg(long = "model-preset", global = true)]
    pub model_preset: Option<String>,
    /// `bivtc`, `vit-s1` or `vit-s2`.
    #[arg(long, global = true, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    /// Train run directory holding a checkpoint.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Import adapter name.
    #[arg(long, global = true)]
    pub adapter: Option<String>,
    #[arg(long = "max-epochs", global = true)]
    pub max_epochs: Option<usize>,
}

fn parse_velocity(s: &str) -> Result<Velocity, String> {
    Velocity::from_name(s).ok_or_else(|| format!("unknown velocity `{s}` (expected V1, V2 or V3)"))
}

fn parse_location(s: &str) -> Result<Location, String> {
    Location::from_name(s).ok_or_else(|| format!("unknown location `{s}` (expected L1 to L4)"))
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "bivtc" => Ok(ModelKind::Bivtc),
        "vit-s1" => Ok(ModelKind::Vit { sniffer: SnifferId::S1 }),
        "vit-s2" => Ok(ModelKind::Vit { sniffer: SnifferId::S2 }),
        _ => Err(format!("unknown model `{s}` (expected bivtc, vit-s1 or vit-s2)")),
    }
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        validation(e)
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        if e.is_validation() {
            validation(e)
        } else {
            runtime(e)
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        runtime(e)
    }
}

/// Output files that fail to write are runtime failures.
fn write_failed(e: ContainerError) -> CliError {
    runtime(e)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn overrides(f: &Flags) -> Overrides {
    Overrides {
        dataset: f.dataset.clone(),
        out: f.out.clone(),
        seed: f.seed,
        workers: f.workers,
        rate_hz: f.rate,
        velocity: f.velocity,
        location: f.location,
        model_preset: f.model_preset.clone(),
        kind: f.model,
        adapter: f.adapter.clone(),
        checkpoint: f.checkpoint.clone(),
        max_epochs: f.max_epochs,
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Import => "import",
        Command::Preprocess => "preprocess",
        Command::Train => "train",
        Command::Eval => "eval",
        Command::Cv => "cv",
        Command::Lovo => "lovo",
        Command::SweepFreq => "sweep-freq",
        Command::SweepLoc => "sweep-loc",
        Command::Report { .. } => "report",
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = cli.flags.config.as_deref().map(ConfigFile::read).transpose()?;
    let mut cfg = RunConfig::resolve(file, &overrides(&cli.flags))?;
    if let Some(n) = cfg.workers {
        // the global pool can only be configured once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Command::Report { run } = &cli.command {
        let dir = match run {
            Some(d) => d.clone(),
            None => latest(&cfg.out).map_err(validation)?,
        };
        let report = read_report(&dir).map_err(validation)?;
        for p in render(&dir, &report)? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    if matches!(cli.command, Command::Synth) {
        if let Some(v) = cfg.velocity {
            cfg.synth.velocities = vec![v];
        }
        if let Some(l) = cfg.location {
            cfg.synth.locations = vec![l];
        }
    }
    let name = command_name(&cli.command);
    let run = RunDir::create(&cfg.out, name, &cfg).map_err(runtime)?;
    run.log(&format!("robofi {name} -> {}", run.path().display()));
    let result = dispatch(&cli.command, &cfg, &run);
    match &result {
        Ok(()) => run.log("done"),
        Err(e) => run.log(&format!("failed: {}", e.message())),
    }
    println!("{}", run.path().display());
    result
}

fn dispatch(command: &Command, cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    match command {
        Command::Synth => synth(cfg, run),
        Command::Import => import(cfg, run),
        Command::Preprocess => preprocess(cfg, run),
        Command::Train => train(cfg, run),
        Command::Eval => eval(cfg, run),
        Command::Cv => {
            let samples = load(cfg, run)?;
            let r = run_cv(&samples, &cfg.experiment())?;
            run.log(&format!("accuracy {:.4} +- {:.4}", r.summary.accuracy.mean, r.summary.accuracy.std));
            finish(run, &Report::Cv(r))
        }
        Command::Lovo => {
            let samples = load(cfg, run)?;
            let r = run_lovo(&samples, &cfg.experiment())?;
            for a in &r.arms {
                run.log(&format!("held out {}: accuracy {:.4}", a.held_out.name(), a.overall_accuracy));
            }
            finish(run, &Report::Lovo(r))
        }
        Command::SweepFreq => {
            let samples = load(cfg, run)?;
            let r = run_freq_sweep(&samples, &cfg.experiment(), &cfg.sweep_rates)?;
            finish(run, &Report::FreqSweep(r))
        }
        Command::SweepLoc => {
            let samples = load(cfg, run)?;
            let r = run_location(&samples, &cfg.experiment(), &cfg.location_counts)?;
            finish(run, &Report::Location(r))
        }
        Command::Report { .. } => unreachable!("handled before a run directory is created"),
    }
}

fn finish(run: &RunDir, report: &Report) -> Result<(), CliError> {
    let written = write_report(run.path(), report)?;
    run.log(&format!("wrote {} report files", written.len()));
    Ok(())
}

/// Loads and merges `cfg.dataset`, then applies the velocity and location
/// filters.
pub fn load(cfg: &RunConfig, run: &RunDir) -> Result<Vec<Sample>, CliError> {
    if cfg.dataset.is_empty() {
        return Err(validation("no --dataset given"));
    }
    let mut samples = Vec::new();
    for d in &cfg.dataset {
        samples.extend(container::read_dataset(d).map_err(validation)?);
    }
    samples.retain(|s| {
        cfg.velocity.is_none_or(|v| s.meta.velocity == v) && cfg.location.is_none_or(|l| s.meta.location == l)
    });
    if samples.is_empty() {
        return Err(validation("no samples left after applying the velocity/location filters"));
    }
    run.log(&format!("loaded {} samples from {} dataset(s)", samples.len(), cfg.dataset.len()));
    Ok(samples)
}

fn synth(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let samples = gen_dataset(&cfg.synth).map_err(validation)?;
    let target = run.path().join(DATASET_DIR);
    container::write_dataset(&target, &samples).map_err(write_failed)?;
    run.log(&format!("generated {} samples into {}", samples.len(), target.display()));
    Ok(())
}

fn import(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let [source] = cfg.dataset.as_slice() else {
        return Err(validation("import needs exactly one --dataset source directory"));
    };
    let outcome = match (cfg.adapter.as_str(), &cfg.mask) {
        ("capture", Some(mask)) => {
            let a = CaptureAdapter { mask: mask.clone(), ..CaptureAdapter::default() };
            import_with(source, &a)
        }
        (name, _) => adapter(name).and_then(|a| import_with(source, a.as_ref())),
    }
    .map_err(|e| match e {
        ImportError::UnknownAdapter(_) | ImportError::NotADirectory(_) => validation(e),
        other => runtime(other),
    })?;
    let failures: Vec<(String, String)> =
        outcome.failures.iter().map(|f| (f.path.display().to_string(), f.reason.clone())).collect();
    write_json_file(&run.path().join(IMPORT_FAILURES_FILE), &failures).map_err(write_failed)?;
    for (path, reason) in &failures {
        run.log(&format!("skipped {path}: {reason}"));
    }
    if outcome.samples.is_empty() {
        return Err(validation(format!("no sample under {} could be imported", source.display())));
    }
    let target = run.path().join(DATASET_DIR);
    container::write_dataset(&target, &outcome.samples).map_err(write_failed)?;
    run.log(&format!("imported {} samples, {} failures", outcome.samples.len(), failures.len()));
    Ok(())
}

fn preprocess(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let samples = load(cfg, run)?;
    let all: Vec<usize> = (0..samples.len()).collect();
    let normalizer = Normalizer::fit(&samples, &all, cfg.rate_hz).map_err(validation)?;
    let decimated: Vec<Sample> = samples
        .iter()
        .map(|s| -> Result<Sample, CliError> {
            let at = |sn| {
                let w = s.window(sn);
                if w.rate_hz() == cfg.rate_hz {
                    Ok(w.clone())
                } else {
                    robofi_core::preprocess::downsample(w, cfg.rate_hz).map_err(validation)
                }
            };
            Ok(Sample { sniffer1: at(SnifferId::S1)?, sniffer2: at(SnifferId::S2)?, meta: s.meta })
        })
        .collect::<Result<_, _>>()?;
    container::write_dataset(&run.path().join(DATASET_DIR), &decimated).map_err(write_failed)?;
    write_json_file(&run.path().join(NORMALIZER_FILE), &normalizer).map_err(write_failed)?;
    run.log(&format!("cached {} samples at {} Hz", decimated.len(), cfg.rate_hz));
    Ok(())
}

/// Architecture and input statistics saved next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: ModelConfig,
    pub kind: ModelKind,
    pub normalizer: Normalizer,
    pub weight_hash: String,
}

fn train(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let samples = load(cfg, run)?;
    let labels: Vec<ActivityLabel> = samples.iter().map(|s| s.meta.label).collect();
    let split = mc_splits(&labels, &cfg.split, cfg.seed).map_err(validation)?.swap_remove(0);
    let exp = cfg.experiment();
    let normalizer = Normalizer::fit(&samples, &split.train, cfg.rate_hz).map_err(validation)?;
    let p = cfg.model.patch;
    let prep = |idx: &[usize]| normalizer.prepare(&samples, idx, p).map_err(validation);
    let (train_set, val_set, test_set) = (prep(&split.train)?, prep(&split.val)?, prep(&split.test)?);
    let (model, params) = Model::init::<f32>(exp.model.clone(), exp.kind, cfg.seed).map_err(validation)?;
    let outcome = fit(&model, params, &train_set, &val_set, &cfg.train).map_err(|e| fit_error(e, run))?;
    let val_eval = evaluate(&model, &outcome.params, &val_set).map_err(runtime)?;
    let hash = weight_hash(&outcome.params);
    let ckpt = run.path().join(CHECKPOINT_FILE);
    fs::write(&ckpt, encode_checkpoint(&outcome.params)).map_err(|e| runtime(io_err(&ckpt)(e)))?;
    let saved = SavedModel { model: exp.model.clone(), kind: exp.kind, normalizer, weight_hash: hash.clone() };
    write_json_file(&run.path().join(MODEL_FILE), &saved).map_err(write_failed)?;
    if !test_set.is_empty() {
        let test_eval = evaluate(&model, &outcome.params, &test_set).map_err(runtime)?;
        run.log(&format!("held-out accuracy {:.4} on {} samples", test_eval.accuracy(), test_set.len()));
    }
    run.log(&format!(
        "best epoch {} of {}, validation accuracy {:.4}",
        outcome.best_epoch,
        outcome.stopped_epoch,
        val_eval.accuracy()
    ));
    let report = TrainReport {
        experiment: exp,
        train_size: train_set.len(),
        val_size: val_set.len(),
        best_epoch: outcome.best_epoch,
        stopped_epoch: outcome.stopped_epoch,
        early_stopped: outcome.early_stopped,
        val_metrics: val_eval.metrics().map_err(runtime)?,
        weight_hash: hash,
        history: outcome.history,
    };
    finish(run, &Report::Train(report))
}

fn fit_error(e: FitError, run: &RunDir) -> CliError {
    if let FitError::Diverged { epoch, checkpoint } = &e {
        let path = run.path().join(format!("diverged_epoch{epoch}.rfsw"));
        if fs::write(&path, checkpoint).is_ok() {
            run.log(&format!("saved weights at divergence to {}", path.display()));
        }
    }
    match e {
        FitError::Train(t) if !matches!(t, robofi_core::train::TrainError::DivergedLoss { .. }) => validation(t),
        other => runtime(other),
    }
}

/// Reads the model description and weights saved by `train`.
pub fn load_checkpoint(dir: &Path) -> Result<(Model, robofi_core::autodiff::ParamStore<f32>, SavedModel), CliError> {
    let saved: SavedModel = read_json_file(&dir.join(MODEL_FILE)).map_err(validation)?;
    let path = dir.join(CHECKPOINT_FILE);
    let bytes = fs::read(&path).map_err(|e| validation(io_err(&path)(e)))?;
    let stored = decode_checkpoint::<f32>(&bytes).map_err(validation)?;
    let (model, mut params) = Model::init::<f32>(saved.model.clone(), saved.kind, 0).map_err(validation)?;
    params.load_from(&stored).map_err(validation)?;
    Ok((model, params, saved))
}

fn eval(cfg: &RunConfig, run: &RunDir) -> Result<(), CliError> {
    let dir = cfg.checkpoint.as_deref().ok_or_else(|| validation("eval needs --checkpoint <train run directory>"))?;
    let (model, params, saved) = load_checkpoint(dir)?;
    let samples = load(cfg, run)?;
    let all: Vec<usize> = (0..samples.len()).collect();
    let data = saved.normalizer.prepare(&samples, &all, saved.model.patch).map_err(validation)?;
    let e = evaluate(&model, &params, &data).map_err(|e| match e {
        FitError::Model(m) => validation(m),
        other => runtime(other),
    })?;
    run.log(&format!("accuracy {:.4} on {} samples", e.accuracy(), data.len()));
    let report = EvalReport { weight_hash: weight_hash(&params), test_size: data.len(), loss: e.loss, metrics: e.metrics().map_err(runtime)? };
    finish(run, &Report::Eval(report))
}
