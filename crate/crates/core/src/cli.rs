//! Command-line runs: data generation, training over seeds, GR hyperparameter
//! sweeps, and post-hoc analyses of saved checkpoints.
//!
//! Every command reads one JSON config. `SPML_OUTPUT_DIR` and `SPML_JOBS`
//! override the output directory and the number of concurrent runs; nothing
//! else is read from the environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::MethodId;
use crate::data::{self, DatasetSplits, LabeledDataset, Split, SyntheticSpec};
use crate::error::{Result, SpmlError};
use crate::eval::{self, CurvePoint, EvalReport, GradCurveSpec};
use crate::trainer::{self, LossConfig, ModelParams, RunConfig, TrainedRun, TrainerConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MISSING_ARTIFACT: i32 = 3;

/// Largest sweep grid accepted unless the config raises the cap.
pub const DEFAULT_GRID_CAP: usize = 256;

/// Minimum missing labels per bucket for the assumption check.
pub const MIN_BUCKET_COUNT: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "spml", version, about = "Single-positive multi-label learning workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as CSV plus label statistics.
    GenerateData(CommonArgs),
    /// Train every configured seed and evaluate the best checkpoints.
    Train(CommonArgs),
    /// Train over a Cartesian grid of GR hyperparameters.
    Sweep(CommonArgs),
    /// Analyze the checkpoints of a finished run.
    Analyze(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn exit_code(err: &SpmlError) -> i32 {
    match err {
        SpmlError::Config(_) => EXIT_CONFIG,
        SpmlError::MissingArtifact(_) => EXIT_MISSING_ARTIFACT,
        _ => EXIT_FAILURE,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenerateData(a) => cmd_generate_data(&a.config, a.out.as_deref()),
        Command::Train(a) => cmd_train(&a.config, a.out.as_deref(), a.jobs),
        Command::Sweep(a) => cmd_sweep(&a.config, a.out.as_deref(), a.jobs),
        Command::Analyze(a) => cmd_analyze(&a.config, a.out.as_deref()),
    }
}

// ---------------------------------------------------------------------------
// Configs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub spec: SyntheticSpec,
    #[serde(default)]
    pub n_val: usize,
    #[serde(default)]
    pub n_test: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub spec: SyntheticSpec,
    pub n_val: usize,
    pub n_test: usize,
}

/// CSV paths, resolved relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSource),
    Csv(CsvSource),
}

/// GR hyperparameter grid. `tau_t` sets `w_t = −b_t/τ` and cannot be combined
/// with `w_t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub w_t: Vec<f64>,
    pub b_t: Vec<f64>,
    pub tau_t: Vec<f64>,
    pub mu_t: Vec<f64>,
    pub sigma_t: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
    pub max_points: Option<usize>,
}

/// One assignment of grid values; unset keys keep the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub w_t: Option<f64>,
    pub b_t: Option<f64>,
    pub tau_t: Option<f64>,
    pub mu_t: Option<f64>,
    pub sigma_t: Option<f64>,
    pub q2: Option<f64>,
    pub q3: Option<f64>,
}

impl SweepGrid {
    fn axes(&self) -> [(&'static str, &Vec<f64>); 7] {
        [
            ("w_t", &self.w_t),
            ("b_t", &self.b_t),
            ("tau_t", &self.tau_t),
            ("mu_t", &self.mu_t),
            ("sigma_t", &self.sigma_t),
            ("q2", &self.q2),
            ("q3", &self.q3),
        ]
    }

    pub fn size(&self) -> usize {
        self.axes().iter().map(|(_, v)| v.len().max(1)).product()
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.tau_t.is_empty() && !self.w_t.is_empty() {
            out.push("sweep: tau_t and w_t cannot both be swept".to_string());
        }
        if let Some(tau) = self.tau_t.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
            out.push(format!("sweep: tau_t value {tau} outside (0, 1]"));
        }
        for (name, values) in self.axes() {
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                out.push(format!("sweep: {name} value {v} is not finite"));
            }
        }
        let cap = self.max_points.unwrap_or(DEFAULT_GRID_CAP);
        let size = self.size();
        if size > cap {
            out.push(format!("sweep: grid has {size} points, above the cap of {cap}"));
        }
        out
    }

    /// Cartesian product in axis order, last axis varying fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut points = vec![GridPoint::default()];
        for (name, values) in self.axes() {
            if values.is_empty() {
                continue;
            }
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for &v in values {
                    let mut q = p.clone();
                    let slot = match name {
                        "w_t" => &mut q.w_t,
                        "b_t" => &mut q.b_t,
                        "tau_t" => &mut q.tau_t,
                        "mu_t" => &mut q.mu_t,
                        "sigma_t" => &mut q.sigma_t,
                        "q2" => &mut q.q2,
                        _ => &mut q.q3,
                    };
                    *slot = Some(v);
                    next.push(q);
                }
            }
            points = next;
        }
        points
    }
}

impl GridPoint {
    pub fn apply(&self, loss: &LossConfig) -> LossConfig {
        let mut out = loss.clone();
        let gr = &mut out.gr;
        if let Some(v) = self.b_t {
            gr.b_t = v;
        }
        if let Some(v) = self.w_t {
            gr.w_t = v;
        }
        if let Some(tau) = self.tau_t {
            gr.w_t = -gr.b_t / tau;
        }
        if let Some(v) = self.mu_t {
            gr.mu_t = v;
        }
        if let Some(v) = self.sigma_t {
            gr.sigma_t = v;
        }
        if let Some(v) = self.q2 {
            gr.q2 = v;
        }
        if let Some(v) = self.q3 {
            gr.q3 = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub trainer: TrainerConfig,
    pub loss: LossConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

impl ExperimentConfig {
    pub fn run_config(&self) -> RunConfig {
        RunConfig { trainer: self.trainer, loss: self.loss.clone() }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seeds.is_empty() {
            out.push("seeds must list at least one seed".to_string());
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                out.push(format!("seed {s} is listed twice"));
            }
        }
        if let DatasetSource::Synthetic(src) = &self.dataset {
            if let Err(SpmlError::Config(p)) = src.spec.validate() {
                out.extend(p.into_iter().map(|m| format!("dataset.synthetic.spec: {m}")));
            }
            if src.n_val == 0 || src.n_test == 0 {
                out.push("dataset.synthetic: n_val and n_test must be at least 1".to_string());
            }
        }
        out.extend(self.run_config().problems());
        if let Some(grid) = &self.sweep {
            if self.loss.method != MethodId::Gr {
                out.push(format!("sweep grids apply to GR, but the method is {}", self.loss.method));
            }
            out.extend(grid.problems());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SpmlError::Config(problems))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Analysis {
    Distinguishability,
    FnBuckets,
    GradCurves,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Initial,
    Best,
    Final,
}

impl CheckpointKind {
    pub fn file_name(self) -> &'static str {
        match self {
            CheckpointKind::Initial => "initial.ckpt",
            CheckpointKind::Best => "best.ckpt",
            CheckpointKind::Final => "final.ckpt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Output directory of a finished `train` run; not needed for grad-curves alone.
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    pub analyses: Vec<Analysis>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: CheckpointKind,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub grad_curves: GradCurveSpec,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_checkpoint() -> CheckpointKind {
    CheckpointKind::Best
}
fn default_split() -> Split {
    Split::Train
}
fn default_grid_points() -> usize {
    99
}

/// Reads a JSON config; unreadable or ill-typed documents are config errors.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpmlError::config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SpmlError::config(format!("{}: {e}", path.display())))
}

fn output_dir(flag: Option<&Path>, configured: Option<&Path>, fallback: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var("SPML_OUTPUT_DIR") {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    configured.map_or_else(|| PathBuf::from(fallback), Path::to_path_buf)
}

fn jobs(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("SPML_JOBS") {
            Ok(v) if !v.is_empty() => {
                v.parse().map_err(|_| SpmlError::config(format!("SPML_JOBS={v:?} is not a count")))?
            }
            _ => 1,
        },
    };
    if n == 0 {
        return Err(SpmlError::config("jobs must be at least 1"));
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Manifests

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Collects output files and writes `manifest.json` into `dir`.
struct ManifestBuilder {
    command: String,
    config_sha256: String,
    seeds: Vec<u64>,
    started: f64,
    files: BTreeMap<String, String>,
    root: PathBuf,
}

impl ManifestBuilder {
    fn new(command: &str, config_bytes: &[u8], seeds: Vec<u64>, root: &Path) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config_sha256: sha256_hex(config_bytes),
            seeds,
            started: unix_now(),
            files: BTreeMap::new(),
            root: root.to_path_buf(),
        }
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)?;
        self.record(path, bytes);
        Ok(())
    }

    fn record(&mut self, path: &Path, bytes: &[u8]) {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.files.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(bytes));
    }

    fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            config_sha256: self.config_sha256,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: self.seeds,
            started_unix: self.started,
            finished_unix: unix_now(),
            files: self.files.into_iter().map(|(path, sha256)| FileDigest { path, sha256 }).collect(),
        };
        std::fs::create_dir_all(&self.root)?;
        std::fs::write(self.root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

// ---------------------------------------------------------------------------
// generate-data

pub fn cmd_generate_data(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: GenerateConfig = read_config(config_path)?;
    cfg.spec.validate()?;
    let dir = output_dir(out, cfg.output_dir.as_deref(), "spml-data");
    let config_bytes = serde_json::to_vec(&cfg)?;
    let mut manifest = ManifestBuilder::new("generate-data", &config_bytes, vec![cfg.spec.seed], &dir);
    let mut stats = BTreeMap::new();
    let mut emit = |name: &str, ds: &LabeledDataset, m: &mut ManifestBuilder| -> Result<()> {
        let mut buf = Vec::new();
        data::write_csv(ds, &mut buf)?;
        m.write(&dir.join(format!("{name}.csv")), &buf)?;
        stats.insert(name.to_string(), data::dataset_stats(ds));
        Ok(())
    };
    if cfg.n_val == 0 && cfg.n_test == 0 {
        emit("train", &data::generate_train(&cfg.spec)?, &mut manifest)?;
    } else {
        let splits = data::generate_splits(&cfg.spec, cfg.n_val.max(1), cfg.n_test.max(1))?;
        emit("train", &splits.train, &mut manifest)?;
        if cfg.n_val > 0 {
            emit("val", &splits.val, &mut manifest)?;
        }
        if cfg.n_test > 0 {
            emit("test", &splits.test, &mut manifest)?;
        }
    }
    manifest.write(&dir.join("stats.json"), serde_json::to_string_pretty(&stats)?.as_bytes())?;
    manifest.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train

pub fn load_dataset(source: &DatasetSource, base_dir: &Path) -> Result<DatasetSplits> {
    match source {
        DatasetSource::Synthetic(s) => data::generate_splits(&s.spec, s.n_val, s.n_test),
        DatasetSource::Csv(c) => {
            let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
            let load = |p: &Path, split: Split| -> Result<LabeledDataset> {
                let path = resolve(p);
                if !path.exists() {
                    return Err(SpmlError::MissingArtifact(format!("dataset file {}", path.display())));
                }
                data::load_csv(&path, split)
            };
            Ok(DatasetSplits {
                train: load(&c.train, Split::Train)?,
                val: load(&c.val, Split::Val)?,
                test: load(&c.test, Split::Test)?,
            })
        }
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

/// Test-set mAP of the best model plus the training-set analyses.
pub fn evaluate_run(run: &TrainedRun, splits: &DatasetSplits) -> Result<EvalReport> {
    let map = eval::mean_average_precision(&run.best_model.predict(&splits.test.features)?, &splits.test.truth)?;
    let train = &splits.train;
    let best_probs = run.best_model.predict(&train.features)?;
    let distinguishability = eval::distinguishability(&best_probs, &train.truth, &train.observed).ok();
    let final_probs = run.final_model.predict(&train.features)?;
    let buckets = eval::fn_ratio_buckets(&final_probs, &train.truth, &train.observed, eval::FN_RATIO_BUCKETS)?;
    let assumption = match train.scar_rate {
        Some(a) => Some(eval::assumption_check(&buckets, a, MIN_BUCKET_COUNT)?),
        None => None,
    };
    let curves = match &run.gr_params {
        Some(gr) => {
            let spec = GradCurveSpec {
                w0: gr.w.start,
                b0: gr.b.start,
                w_t: gr.w.end,
                b_t: gr.b.end,
                q2: gr.robust.q2,
                q3: gr.robust.q3,
                hill_lambda: 1.5,
            };
            eval::gradient_curves(&spec, &eval::interior_grid(99))?
        }
        None => Vec::new(),
    };
    Ok(EvalReport { map, distinguishability, fn_ratio: Some(buckets), assumption, gradient_curves: curves })
}

/// Summary row of one trained seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub best_epoch: u32,
    pub best_val_map: f64,
    pub test_map: f64,
    pub w1: Option<f64>,
}

fn write_seed_outputs(
    dir: &Path,
    run: &TrainedRun,
    report: &EvalReport,
    manifest: &mut ManifestBuilder,
) -> Result<SeedSummary> {
    manifest.write(&dir.join("metrics.jsonl"), run.metrics_jsonl()?.as_bytes())?;
    manifest.write(&dir.join("timings.jsonl"), run.timings_jsonl()?.as_bytes())?;
    for (kind, model) in [
        (CheckpointKind::Initial, &run.initial_model),
        (CheckpointKind::Best, &run.best_model),
        (CheckpointKind::Final, &run.final_model),
    ] {
        manifest.write(&dir.join(kind.file_name()), trainer::checkpoint_to_string(model).as_bytes())?;
    }
    manifest.write(&dir.join("eval_report.json"), serde_json::to_string_pretty(report)?.as_bytes())?;
    Ok(SeedSummary {
        seed: run.seed,
        best_epoch: run.best_epoch,
        best_val_map: run.best_val_map,
        test_map: report.map.map,
        w1: report.distinguishability.as_ref().map(|d| d.w1),
    })
}

fn thread_pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| SpmlError::Io(std::io::Error::other(e.to_string())))
}

pub fn cmd_train(config_path: &Path, out: Option<&Path>, jobs_flag: Option<usize>) -> Result<()> {
    let cfg: ExperimentConfig = read_config(config_path)?;
    cfg.validate()?;
    let n_jobs = jobs(jobs_flag)?;
    let dir = output_dir(out, cfg.output_dir.as_deref(), "spml-run");
    let splits = load_dataset(&cfg.dataset, &config_dir(config_path))?;
    let run_cfg = cfg.run_config();
    let config_bytes = serde_json::to_vec_pretty(&cfg)?;
    let mut manifest = ManifestBuilder::new("train", &config_bytes, cfg.seeds.clone(), &dir);
    manifest.write(&dir.join("config.json"), &config_bytes)?;

    let runs = thread_pool(n_jobs)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let run = trainer::train(&run_cfg, &splits.train, &splits.val, seed)?;
                let report = evaluate_run(&run, &splits)?;
                Ok((run, report))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (run, report) in &runs {
        let seed_dir = dir.join(format!("seed-{}", run.seed));
        summaries.push(write_seed_outputs(&seed_dir, run, report, &mut manifest)?);
    }
    manifest.write(&dir.join("summary.json"), serde_json::to_string_pretty(&summaries)?.as_bytes())?;
    manifest.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

pub fn cmd_sweep(config_path: &Path, out: Option<&Path>, jobs_flag: Option<usize>) -> Result<()> {
    let cfg: ExperimentConfig = read_config(config_path)?;
    let grid = cfg
        .sweep
        .clone()
        .ok_or_else(|| SpmlError::config("sweep needs a \"sweep\" section with at least one grid"))?;
    cfg.validate()?;
    let points = grid.points();
    let mut problems = Vec::new();
    for (k, p) in points.iter().enumerate() {
        let loss = p.apply(&cfg.loss);
        for msg in loss.problems() {
            problems.push(format!("grid point {k}: {msg}"));
        }
    }
    if !problems.is_empty() {
        return Err(SpmlError::Config(problems));
    }
    let n_jobs = jobs(jobs_flag)?;
    let dir = output_dir(out, cfg.output_dir.as_deref(), "spml-sweep");
    let splits = load_dataset(&cfg.dataset, &config_dir(config_path))?;
    let config_bytes = serde_json::to_vec_pretty(&cfg)?;
    let mut manifest = ManifestBuilder::new("sweep", &config_bytes, cfg.seeds.clone(), &dir);
    manifest.write(&dir.join("config.json"), &config_bytes)?;

    let tasks: Vec<(usize, u64)> =
        (0..points.len()).flat_map(|k| cfg.seeds.iter().map(move |&s| (k, s))).collect();
    let results = thread_pool(n_jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(k, seed)| {
                let run_cfg = RunConfig { trainer: cfg.trainer, loss: points[k].apply(&cfg.loss) };
                let run = trainer::train(&run_cfg, &splits.train, &splits.val, seed)?;
                let report = evaluate_run(&run, &splits)?;
                Ok((k, run_cfg, run, report))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| SpmlError::Io(std::io::Error::other(e.to_string()));
    w.write_record([
        "point", "seed", "w_t", "b_t", "tau_t", "mu_t", "sigma_t", "q2", "q3", "best_epoch", "best_val_map", "test_map", "w1",
    ])
    .map_err(io)?;
    for (k, run_cfg, run, report) in &results {
        let seed_dir = dir.join(format!("point-{k}")).join(format!("seed-{}", run.seed));
        let summary = write_seed_outputs(&seed_dir, run, report, &mut manifest)?;
        let gr = &run_cfg.loss.gr;
        let tau = if gr.w_t > 0.0 { (-gr.b_t / gr.w_t).to_string() } else { String::new() };
        w.write_record([
            k.to_string(),
            run.seed.to_string(),
            gr.w_t.to_string(),
            gr.b_t.to_string(),
            tau,
            gr.mu_t.to_string(),
            gr.sigma_t.to_string(),
            gr.q2.to_string(),
            gr.q3.to_string(),
            summary.best_epoch.to_string(),
            summary.best_val_map.to_string(),
            summary.test_map.to_string(),
            summary.w1.map_or_else(String::new, |v| v.to_string()),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| SpmlError::Io(std::io::Error::other(e.to_string())))?;
    manifest.write(&dir.join("sweep.csv"), &bytes)?;
    manifest.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

fn plot_csv(points: &[CurvePoint]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    eval::write_plot_csv(points, &mut buf)?;
    Ok(buf)
}

pub fn cmd_analyze(config_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: AnalyzeConfig = read_config(config_path)?;
    if cfg.analyses.is_empty() {
        return Err(SpmlError::config("analyses must list at least one analysis"));
    }
    let needs_run = cfg.analyses.iter().any(|a| *a != Analysis::GradCurves);
    let run_dir = cfg.run_dir.as_ref().map(|p| if p.is_absolute() { p.clone() } else { config_dir(config_path).join(p) });
    if needs_run && run_dir.is_none() {
        return Err(SpmlError::config("run_dir is required for distinguishability and fn-buckets"));
    }
    let fallback = run_dir.as_ref().map_or_else(|| PathBuf::from("spml-analysis"), |d| d.join("analysis"));
    let dir = output_dir(out, cfg.output_dir.as_deref(), &fallback.to_string_lossy());
    let config_bytes = serde_json::to_vec_pretty(&cfg)?;
    let mut manifest = ManifestBuilder::new("analyze", &config_bytes, cfg.seeds.clone().unwrap_or_default(), &dir);

    if cfg.analyses.contains(&Analysis::GradCurves) {
        let curves = eval::gradient_curves(&cfg.grad_curves, &eval::interior_grid(cfg.grid_points))?;
        manifest.write(&dir.join("grad_curves.csv"), &plot_csv(&curves)?)?;
        manifest.write(&dir.join("grad_curves.json"), serde_json::to_string_pretty(&curves)?.as_bytes())?;
    }

    if let (true, Some(run_dir)) = (needs_run, run_dir) {
        let run_config_path = run_dir.join("config.json");
        if !run_config_path.exists() {
            return Err(SpmlError::MissingArtifact(format!("run config {}", run_config_path.display())));
        }
        let run_cfg: ExperimentConfig = read_config(&run_config_path)?;
        let splits = load_dataset(&run_cfg.dataset, &run_dir)?;
        let ds = match cfg.split {
            Split::Train => &splits.train,
            Split::Val => &splits.val,
            Split::Test => &splits.test,
            Split::Full => return Err(SpmlError::config("analysis split must be train, val or test")),
        };
        let seeds = cfg.seeds.clone().unwrap_or_else(|| run_cfg.seeds.clone());
        for seed in seeds {
            let ckpt = run_dir.join(format!("seed-{seed}")).join(cfg.checkpoint.file_name());
            let model: ModelParams = trainer::load_checkpoint(&ckpt)?;
            let probs = model.predict(&ds.features)?;
            let seed_dir = dir.join(format!("seed-{seed}"));
            if cfg.analyses.contains(&Analysis::Distinguishability) {
                let d = eval::distinguishability(&probs, &ds.truth, &ds.observed)?;
                let mut pts = eval::histogram_points(&d.positive_histogram, "unannotated positive");
                pts.extend(eval::histogram_points(&d.negative_histogram, "unannotated negative"));
                manifest.write(&seed_dir.join("distinguishability.json"), serde_json::to_string_pretty(&d)?.as_bytes())?;
                manifest.write(&seed_dir.join("distinguishability.csv"), &plot_csv(&pts)?)?;
            }
            if cfg.analyses.contains(&Analysis::FnBuckets) {
                let buckets = eval::fn_ratio_buckets(&probs, &ds.truth, &ds.observed, eval::FN_RATIO_BUCKETS)?;
                let a = data::scar_rate(&ds.truth, &ds.observed)?;
                let check = eval::assumption_check(&buckets, a, MIN_BUCKET_COUNT)?;
                let mut pts = eval::bucket_points(&buckets, "FN/(FN+TN)");
                for b in &buckets {
                    pts.push(CurvePoint {
                        series: "theoretical".to_string(),
                        x: b.center(),
                        y: crate::gr_loss::theoretical_k(b.center(), a)?,
                    });
                }
                let report = serde_json::json!({ "scar_a": a, "buckets": buckets, "assumption": check });
                manifest.write(&seed_dir.join("fn_buckets.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
                manifest.write(&seed_dir.join("fn_buckets.csv"), &plot_csv(&pts)?)?;
            }
        }
    }
    manifest.finish()?;
    Ok(())
}
