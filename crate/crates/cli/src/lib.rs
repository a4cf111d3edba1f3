//! Command-line driver: `synth`, `prepare`, `train`, `evaluate` and `bench`.
//!
//! Each command reads the run configuration (see [`config::Config`]), applies
//! flag overrides and writes its artifacts into a directory. `prepare` writes
//! the processed dataset, `train` a run directory with weights and a manifest,
//! and `evaluate`/`bench` read that manifest.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
mod manifest;

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use ietp_core::data::{self, BootstrapSet, BuildReport, DataError, IngestConfig, Split, TrajectorySample, Units};
use ietp_core::evaluation::{self, EvalError, FleetStats, LatencyReport, MetricsSummary};
use ietp_core::model::{read_weights, write_weights, BaseLearner, ModelError};
use ietp_core::synth;
use ietp_core::training::{self, TrainError, TrainReport};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::Config;
pub use manifest::{LearnerEntry, RunManifest, TrainFailure};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

/// An error together with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: m.into(),
        }
    }

    pub fn data(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: m.into(),
        }
    }

    pub fn runtime(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: m.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::config(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::config(e.to_string()),
            ModelError::Io { .. } | ModelError::Format(_) => CliError::data(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::runtime(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::runtime(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "ietp",
    version,
    about = "Ensemble trajectory prediction: data preparation, training, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic highway scenario as a trajectory CSV.
    Synth(SynthArgs),
    /// Ingest a CSV, build samples, split them and draw bootstrap sets.
    Prepare(PrepareArgs),
    /// Train one base learner per bootstrap set.
    Train(TrainArgs),
    /// Evaluate base learners and ensembles on the test split.
    Evaluate(EvaluateArgs),
    /// Measure per-sample latency against ensemble size.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV; a `.meta.json` sidecar and a `.labels.json` file are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub vehicles: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learners: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Defaults to the configuration saved by `prepare`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory for weights and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent trainings; overrides the config and `IETP_WORKERS`.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Skip learners whose weight file already exists and loads.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated ensemble sizes.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Prepare(a) => cmd_prepare(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a).map(|_| ()),
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io(path))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub csv: PathBuf,
    pub vehicles: usize,
    pub frames: usize,
    pub labels: usize,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<SynthSummary> {
    let mut cfg = Config::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    if let Some(v) = a.vehicles {
        cfg.synth.vehicles = v;
    }
    if let Some(n) = a.noise_std {
        cfg.synth.noise_std = n;
    }
    let scen = cfg.scenario();
    scen.validate()?;
    let s = synth::generate(&scen)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    data::write_csv(&a.out, &s.tracks)?;
    IngestConfig {
        units: Units::Meters,
        frame_rate_hz: 1.0 / scen.period_s,
        working_period_s: scen.period_s,
    }
    .write_sidecar(&a.out)?;
    write_json(&a.out.with_extension("labels.json"), &s.labels)?;
    let summary = SynthSummary {
        csv: a.out.clone(),
        vehicles: s.tracks.len(),
        frames: scen.frames(),
        labels: s.labels.len(),
    };
    eprintln!(
        "synth: {} vehicles, {} frames, {} labels -> {}",
        summary.vehicles,
        summary.frames,
        summary.labels,
        a.out.display()
    );
    Ok(summary)
}

/// `report.json` of a prepared directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub input: PathBuf,
    pub build: BuildReport,
    pub train_samples: usize,
    pub test_samples: usize,
    pub bootstrap_sets: usize,
    pub bootstrap_unique_fraction: Vec<f64>,
    pub working_period_s: f64,
    pub dataset_fingerprint: String,
}

const SAMPLES_FILE: &str = "samples.jsonl";
const SPLIT_FILE: &str = "split.json";
const REPORT_FILE: &str = "report.json";
const CONFIG_FILE: &str = "config.toml";
const MANIFEST_FILE: &str = "manifest.json";

fn set_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("bootstrap").join(format!("set_{index:03}.json"))
}

/// sha256 over the samples, the split and every bootstrap set, in that order.
pub fn dataset_fingerprint(dir: &Path, sets: usize) -> Result<String> {
    let mut h = Sha256::new();
    let mut files = vec![dir.join(SAMPLES_FILE), dir.join(SPLIT_FILE)];
    files.extend((1..=sets).map(|i| set_path(dir, i)));
    for f in files {
        let bytes = fs::read(&f).map_err(io(&f))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn cmd_prepare(a: &PrepareArgs) -> Result<PrepareReport> {
    let mut cfg = Config::load_or_default(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.learners {
        cfg.learners = n;
    }
    if let Some(s) = a.stride {
        cfg.data.stride = s;
    }
    if let Some(f) = a.test_fraction {
        cfg.data.test_fraction = f;
    }
    cfg.validate()?;
    let ingest_cfg = IngestConfig::for_csv(&a.input)?;
    let tracks = data::ingest(&a.input, &ingest_cfg)?;
    let (samples, build) = data::build_samples(&tracks, &cfg.sample_config());
    if samples.len() < 2 {
        return Err(CliError::data(format!(
            "{}: {} usable samples, need at least 2",
            a.input.display(),
            samples.len()
        )));
    }
    let seeds = cfg.seeds();
    let sp = data::split(&samples, cfg.data.test_fraction, seeds.split, cfg.data.split_mode)?;
    let sets = data::bootstrap(&sp.train, cfg.learners, seeds.bootstrap)?;

    create_dir(&a.out.join("bootstrap"))?;
    let path = a.out.join(SAMPLES_FILE);
    let file = fs::File::create(&path).map_err(io(&path))?;
    let mut w = BufWriter::new(file);
    for s in &samples {
        serde_json::to_writer(&mut w, s).map_err(|e| CliError::runtime(e.to_string()))?;
        w.write_all(b"\n").map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))?;
    write_json(&a.out.join(SPLIT_FILE), &sp)?;
    for s in &sets {
        write_json(&set_path(&a.out, s.index), s)?;
    }
    let path = a.out.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()).map_err(io(&path))?;
    let report = PrepareReport {
        input: a.input.clone(),
        build,
        train_samples: sp.train.len(),
        test_samples: sp.test.len(),
        bootstrap_sets: sets.len(),
        bootstrap_unique_fraction: sets.iter().map(BootstrapSet::unique_fraction).collect(),
        working_period_s: ingest_cfg.working_period_s,
        dataset_fingerprint: dataset_fingerprint(&a.out, sets.len())?,
    };
    write_json(&a.out.join(REPORT_FILE), &report)?;
    eprintln!(
        "prepare: {} samples ({} train, {} test), {} bootstrap sets -> {}",
        report.build.samples,
        report.train_samples,
        report.test_samples,
        report.bootstrap_sets,
        a.out.display()
    );
    Ok(report)
}

/// A prepared directory loaded back from disk.
pub struct Prepared {
    pub dir: PathBuf,
    pub config: Config,
    pub report: PrepareReport,
    pub samples: Vec<TrajectorySample>,
    pub split: Split,
    pub sets: Vec<BootstrapSet>,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Prepared> {
        if !dir.is_dir() {
            return Err(CliError::data(format!("{}: not a prepared directory", dir.display())));
        }
        let config = Config::load(&dir.join(CONFIG_FILE))?;
        let report: PrepareReport = read_json(&dir.join(REPORT_FILE))?;
        let fp = dataset_fingerprint(dir, report.bootstrap_sets)?;
        if fp != report.dataset_fingerprint {
            return Err(CliError::data(format!(
                "{}: dataset fingerprint mismatch, files changed since prepare",
                dir.display()
            )));
        }
        let path = dir.join(SAMPLES_FILE);
        let file = fs::File::open(&path).map_err(io(&path))?;
        let mut samples = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io(&path))?;
            let s: TrajectorySample = serde_json::from_str(&line)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            samples.push(s);
        }
        let split: Split = read_json(&dir.join(SPLIT_FILE))?;
        let sets = (1..=report.bootstrap_sets)
            .map(|i| read_json(&set_path(dir, i)))
            .collect::<Result<Vec<BootstrapSet>>>()?;
        Ok(Prepared {
            dir: dir.to_path_buf(),
            config,
            report,
            samples,
            split,
            sets,
        })
    }

    pub fn test_samples(&self) -> Result<Vec<TrajectorySample>> {
        let by_id: HashMap<usize, &TrajectorySample> = self.samples.iter().map(|s| (s.sample_id, s)).collect();
        self.split
            .test
            .iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|s| (*s).clone())
                    .ok_or_else(|| CliError::data(format!("test sample {id} missing from {SAMPLES_FILE}")))
            })
            .collect()
    }
}

fn weight_path(index: usize) -> PathBuf {
    PathBuf::from("weights").join(format!("learner_{index:03}.ietpw"))
}

fn resolve_workers(flag: Option<usize>, cfg: &Config) -> Result<usize> {
    if let Some(w) = flag.or(cfg.train.workers) {
        return if w == 0 {
            Err(CliError::config("workers must be at least 1"))
        } else {
            Ok(w)
        };
    }
    match std::env::var("IETP_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(CliError::config(format!(
                "IETP_WORKERS={v:?} is not a positive integer"
            ))),
        },
        Err(_) => Ok(1),
    }
}

/// Fields of the configuration that shape the prepared data must match it.
fn check_data_compatible(cfg: &Config, prepared: &Config) -> Result<()> {
    if cfg.seed != prepared.seed || cfg.learners != prepared.learners || cfg.data != prepared.data {
        return Err(CliError::config(
            "seed, learners and [data] must match the configuration used by prepare",
        ));
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<RunManifest> {
    let prepared = Prepared::load(&a.data)?;
    let mut cfg = match &a.config {
        Some(p) => Config::load(p)?,
        None => prepared.config.clone(),
    };
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    cfg.validate()?;
    check_data_compatible(&cfg, &prepared.config)?;
    let workers = resolve_workers(a.workers, &cfg)?;
    let model = cfg.model_config();
    let seeds = cfg.seeds();
    let manifest_path = a.out.join(MANIFEST_FILE);

    let mut done: Vec<LearnerEntry> = Vec::new();
    if manifest_path.exists() {
        if !a.resume {
            return Err(CliError::config(format!(
                "{} exists; pass --resume or choose another --out",
                manifest_path.display()
            )));
        }
        let old: RunManifest = read_json(&manifest_path)?;
        if old.config_hash != cfg.hash() || old.dataset_fingerprint != prepared.report.dataset_fingerprint {
            return Err(CliError::config(
                "--resume: configuration or dataset differs from the existing run",
            ));
        }
    }
    if a.resume {
        for set in &prepared.sets {
            let rel = weight_path(set.index);
            let path = a.out.join(&rel);
            if !path.exists() {
                continue;
            }
            match read_weights(&path) {
                Ok(l) if l.index == set.index && l.variant == cfg.variant && l.config == model => {
                    done.push(LearnerEntry {
                        index: set.index,
                        path: rel,
                        sha256: sha256_file(&path)?,
                    })
                }
                _ => eprintln!("train: {} unusable, retraining", path.display()),
            }
        }
    }

    create_dir(&a.out.join("weights"))?;
    create_dir(&a.out.join("reports"))?;
    let cfg_path = a.out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(io(&cfg_path))?;
    let mut manifest = RunManifest::new(&cfg, &prepared, seeds);
    manifest.learners = done.clone();
    manifest.write(&a.out)?;

    let skip: Vec<usize> = done.iter().map(|e| e.index).collect();
    let todo: Vec<BootstrapSet> = prepared
        .sets
        .iter()
        .filter(|s| !skip.contains(&s.index))
        .cloned()
        .collect();
    if !skip.is_empty() {
        eprintln!(
            "train: resuming, {} of {} learners already trained",
            skip.len(),
            prepared.sets.len()
        );
    }
    let written: Mutex<Vec<std::result::Result<LearnerEntry, (usize, String)>>> = Mutex::new(Vec::new());
    let out_dir = a.out.clone();
    let on_done = |l: &BaseLearner, r: &TrainReport| {
        let rel = weight_path(l.index);
        let res = write_weights(l, &out_dir.join(&rel))
            .map(|sha256| LearnerEntry {
                index: l.index,
                path: rel,
                sha256,
            })
            .map_err(|e| (l.index, e.to_string()))
            .and_then(|entry| {
                let path = out_dir.join("reports").join(format!("learner_{:03}.json", l.index));
                write_json(&path, r).map(|_| entry).map_err(|e| (l.index, e.message))
            });
        match &res {
            Ok(_) => eprintln!(
                "train: learner {} done in {:.1}s, final loss {:.4}",
                l.index,
                r.wall_clock_s,
                r.epoch_losses.last().copied().unwrap_or(f64::NAN)
            ),
            Err((i, e)) => eprintln!("train: learner {i}: {e}"),
        }
        written.lock().expect("no panics while holding the lock").push(res);
    };
    let result = if todo.is_empty() {
        Ok(Vec::new())
    } else {
        training::train_fleet(
            &todo,
            &prepared.samples,
            cfg.variant,
            &model,
            &cfg.train_config(),
            seeds.training,
            workers,
            &on_done,
        )
    };

    for r in written.into_inner().expect("lock not poisoned") {
        match r {
            Ok(e) => manifest.learners.push(e),
            Err((index, error)) => manifest.failures.push(TrainFailure { index, error }),
        }
    }
    if let Err(TrainError::Partial { failed, .. }) = &result {
        for (index, error) in failed {
            if !manifest.failures.iter().any(|f| f.index == *index) {
                manifest.failures.push(TrainFailure {
                    index: *index,
                    error: error.clone(),
                });
            }
        }
    }
    manifest.learners.sort_by_key(|e| e.index);
    manifest.failures.sort_by_key(|f| f.index);
    manifest.write(&a.out)?;
    match result {
        Ok(_) if manifest.failures.is_empty() => {
            eprintln!(
                "train: {} learners -> {}",
                manifest.learners.len(),
                manifest_path.display()
            );
            Ok(manifest)
        }
        Ok(_) | Err(TrainError::Partial { .. }) => Err(CliError::runtime(format!(
            "{} learner(s) failed: {}; partial manifest at {}",
            manifest.failures.len(),
            manifest
                .failures
                .iter()
                .map(|f| format!("#{}: {}", f.index, f.error))
                .collect::<Vec<_>>()
                .join("; "),
            manifest_path.display()
        ))),
        Err(e) => Err(e.into()),
    }
}

/// A trained run loaded and verified against its manifest.
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub config: Config,
    pub prepared: Prepared,
    pub fleet: Vec<BaseLearner>,
}

impl LoadedRun {
    pub fn load(run: &Path) -> Result<LoadedRun> {
        let manifest: RunManifest = read_json(&run.join(MANIFEST_FILE))?;
        let config = Config::load(&run.join(CONFIG_FILE))?;
        if config.hash() != manifest.config_hash {
            return Err(CliError::config(format!(
                "{}: config hash does not match the manifest",
                run.display()
            )));
        }
        let prepared = Prepared::load(&manifest.data_dir)?;
        if prepared.report.dataset_fingerprint != manifest.dataset_fingerprint {
            return Err(CliError::data("prepared dataset changed since training"));
        }
        if !manifest.failures.is_empty() {
            return Err(CliError::data(format!(
                "run has failed learners {:?}; retrain with --resume",
                manifest.failures.iter().map(|f| f.index).collect::<Vec<_>>()
            )));
        }
        let expected: Vec<usize> = (1..=manifest.requested).collect();
        let have: Vec<usize> = manifest.learners.iter().map(|e| e.index).collect();
        if have != expected {
            let missing: Vec<usize> = expected.iter().copied().filter(|i| !have.contains(i)).collect();
            return Err(CliError::data(format!("run is missing learners {missing:?}")));
        }
        let mut fleet = Vec::with_capacity(have.len());
        for e in &manifest.learners {
            let path = run.join(&e.path);
            if !path.exists() {
                return Err(CliError::data(format!(
                    "learner {}: weight file {} not found",
                    e.index,
                    path.display()
                )));
            }
            let digest = sha256_file(&path)?;
            if digest != e.sha256 {
                return Err(CliError::data(format!(
                    "learner {}: {} does not match its manifest hash",
                    e.index,
                    path.display()
                )));
            }
            let l = read_weights(&path).map_err(|err| CliError::data(format!("learner {}: {err}", e.index)))?;
            if l.index != e.index {
                return Err(CliError::data(format!(
                    "learner {}: file holds learner {}",
                    e.index, l.index
                )));
            }
            fleet.push(l);
        }
        Ok(LoadedRun {
            manifest,
            config,
            prepared,
            fleet,
        })
    }
}

/// `metrics_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub learners: usize,
    pub test_samples: usize,
    pub summary: MetricsSummary,
    /// Absent for a fleet of one.
    pub fleet_variance: Option<FleetStats>,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<EvaluationSummary> {
    let run = LoadedRun::load(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_dir(&out)?;
    let test = run.prepared.test_samples()?;
    let opts = run.config.eval_options(run.prepared.report.working_period_s);
    let metrics = evaluation::evaluate_fleet(&run.fleet, &test, &opts)?;
    evaluation::write_metrics_csv(&out.join("metrics.csv"), &metrics)?;
    evaluation::write_long_csv(&out.join("metrics_long.csv"), &metrics)?;
    let summary = EvaluationSummary {
        learners: run.fleet.len(),
        test_samples: test.len(),
        summary: evaluation::summarize(&metrics)?,
        fleet_variance: if run.fleet.len() > 1 {
            Some(evaluation::fleet_variance(&metrics)?)
        } else {
            None
        },
    };
    write_json(&out.join("metrics_summary.json"), &summary)?;
    eprintln!(
        "evaluate: {} learners on {} test samples -> {}",
        summary.learners,
        summary.test_samples,
        out.display()
    );
    Ok(summary)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<LatencyReport> {
    let run = LoadedRun::load(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    create_dir(&out)?;
    let mut b = run.config.bench.clone();
    if let Some(s) = &a.sizes {
        b.sizes = s.clone();
    }
    if let Some(n) = a.samples {
        b.samples = n;
    }
    if let Some(r) = a.repetitions {
        b.repetitions = r;
    }
    if b.samples == 0 || b.repetitions == 0 {
        return Err(CliError::config("bench samples and repetitions must be positive"));
    }
    let n = run.fleet.len();
    let (sizes, dropped): (Vec<usize>, Vec<usize>) = b.sizes.iter().partition(|&&s| s >= 1 && s <= n);
    if !dropped.is_empty() {
        eprintln!("bench: skipping ensemble sizes {dropped:?} outside 1..={n}");
    }
    if sizes.is_empty() {
        return Err(CliError::config(format!("no ensemble size within 1..={n}")));
    }
    let mut test = run.prepared.test_samples()?;
    test.truncate(b.samples);
    let report = evaluation::bench_latency(&run.fleet, &test, &sizes, b.repetitions, run.manifest.seeds.tie_break)?;
    let path = out.join("latency.csv");
    let mut w = csv_writer(&path)?;
    writeln!(w, "n,mean_s,std_s,calls").map_err(io(&path))?;
    for r in &report.ensembles {
        writeln!(w, "{},{},{},{}", r.n, r.mean_s, r.std_s, r.calls).map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))?;
    write_json(&out.join("latency.json"), &report)?;
    if let Some(last) = report.ensembles.last() {
        eprintln!(
            "bench: {}-member ensemble {:.3} ms per sample",
            last.n,
            last.mean_s * 1e3
        );
    }
    if let Some(f) = &report.fit {
        eprintln!("bench: slope {:.3} ms per member, R² {:.4}", f.slope * 1e3, f.r2);
    }
    Ok(report)
}

fn csv_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io(path))?))
}
