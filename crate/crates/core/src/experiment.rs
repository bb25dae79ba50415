//! Reproducible experiment runs: run configuration, run directories, and the
//! key=value report format shared by every command.
//!
//! A run directory holds everything needed to rebuild a result row:
//!
//! ```text
//! <run>/config.toml        effective configuration
//! <run>/manifest.sha256    hash of the dataset manifest that was used
//! <run>/report.txt         train report (per-trial and mean rows)
//! <run>/trial_<k>/layer.ckpt
//! <run>/trial_<k>/circuit.lgnnet
//! <run>/trial_<k>/history.csv
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Display, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuit::{self, BenchReport, CircuitError, DiscreteCircuit, FramePair};
use crate::dataset::{self, Dataset, DatasetConfig, DatasetError, Split};
use crate::metrics::{full_report, MetricsError, MetricsReport, ScoredPair};
use crate::network::{
    load_checkpoint, save_checkpoint, CheckpointError, ConnectomeKind, LgnConfig, NetworkError, SoftGateLayer,
    DEFAULT_TOP_K,
};
use crate::pipeline::{Frame, PipelineError, PreprocessConfig, SimilarityStrategy, RGB};
use crate::seed::Seed;
use crate::training::{self, FitResult, MeanMetrics, Pair, TrainConfig, TrainingData, TrainingError};

pub const REPORT_FORMAT: &str = "lgn-vcd-report";
pub const REPORT_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_HASH_FILE: &str = "manifest.sha256";
pub const REPORT_FILE: &str = "report.txt";
pub const LAYER_FILE: &str = "layer.ckpt";
pub const NETLIST_FILE: &str = "circuit.lgnnet";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config file: {0}")]
    TomlDe(#[from] toml::de::Error),
    #[error("config serialization: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("report {file}: {message}")]
    Report { file: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Layer shape; the input width follows from the preprocessing and the
/// initialization seed from the trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_gates: usize,
    pub connectome: ConnectomeKind,
    pub pass_through_bias: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { n_gates: 2000, connectome: ConnectomeKind::TopK { k: DEFAULT_TOP_K }, pass_through_bias: 1.0 }
    }
}

impl ModelConfig {
    pub fn to_lgn(&self, input_dim: usize) -> LgnConfig {
        LgnConfig { pass_through_bias: self.pass_through_bias, ..LgnConfig::new(self.n_gates, self.connectome, input_dim, Seed(0)) }
    }

    /// `Top32-2000`, `L-4000`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.connectome.label(), self.n_gates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub trials: usize,
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trials: 5,
            dataset: DatasetConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        if self.model.n_gates == 0 {
            return Err(ExperimentError::Config("n_gates must be positive".into()));
        }
        self.dataset.validate()?;
        self.preprocess.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Ordered `key=value` lines, optionally followed by a human-readable table
/// whose lines start with `#`. Parsers ignore the table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    entries: Vec<(String, String)>,
    table: Vec<String>,
}

impl Report {
    pub fn new(kind: &str) -> Self {
        let mut r = Report::default();
        r.push("format", REPORT_FORMAT);
        r.push("version", REPORT_VERSION);
        r.push("kind", kind);
        r
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string();
        debug_assert!(!key.contains(['=', ' ', '\n']) && !value.contains('\n'));
        self.entries.push((key, value));
    }

    pub fn push_metrics(&mut self, prefix: &str, m: &MetricsReport) {
        self.push(format!("{prefix}.accuracy"), m.accuracy);
        self.push(format!("{prefix}.precision"), m.precision);
        self.push(format!("{prefix}.recall"), m.recall);
        self.push(format!("{prefix}.f1"), m.f1);
        self.push(format!("{prefix}.micro_ap"), m.micro_ap.map_or("nan".to_string(), |v| v.to_string()));
        self.push(format!("{prefix}.threshold"), m.threshold);
        let c = m.counts;
        self.push(format!("{prefix}.counts"), format!("tp:{},fp:{},tn:{},fn:{}", c.tp, c.fp, c.tn, c.fn_));
    }

    fn push_mean(&mut self, prefix: &str, m: &MeanMetrics) {
        self.push(format!("{prefix}.accuracy"), m.accuracy);
        self.push(format!("{prefix}.precision"), m.precision);
        self.push(format!("{prefix}.recall"), m.recall);
        self.push(format!("{prefix}.f1"), m.f1);
        self.push(format!("{prefix}.micro_ap"), m.micro_ap);
    }

    pub fn set_table(&mut self, table: &str) {
        self.table = table.lines().map(str::to_string).collect();
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        let v = self.get(key).ok_or_else(|| report_err("report", format!("missing key `{key}`")))?;
        v.parse().map_err(|_| report_err("report", format!("`{key}` is not a number: {v}")))
    }

    pub fn kind(&self) -> Option<&str> {
        self.get("kind")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = Report::default();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                r.table.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| report_err("report", format!("line {}: expected key=value", n + 1)))?;
            r.entries.push((k.to_string(), v.to_string()));
        }
        if r.get("format") != Some(REPORT_FORMAT) {
            return Err(report_err("report", format!("not a {REPORT_FORMAT} file")));
        }
        if r.get("version") != Some(REPORT_VERSION.to_string().as_str()) {
            return Err(report_err("report", format!("unsupported version {:?}", r.get("version"))));
        }
        Ok(r)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?).map_err(|e| match e {
            ExperimentError::Report { message, .. } => report_err(&path.display().to_string(), message),
            e => e,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_string())
    }
}

impl Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        if !self.table.is_empty() {
            writeln!(f)?;
            for line in &self.table {
                writeln!(f, "# {line}")?;
            }
        }
        Ok(())
    }
}

fn report_err(file: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Report { file: file.to_string(), message: message.into() }
}

/// Left-aligned plain text table.
pub fn render_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let line: Vec<String> = row.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

pub fn render_csv(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Generates the dataset and writes it under `out`.
pub fn gen_data(config: &DatasetConfig, out: &Path) -> Result<Dataset> {
    let ds = dataset::generate(config)?;
    ds.write(out)?;
    Ok(ds)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = dataset::manifest_path(dir);
    if !manifest.is_file() {
        return Err(ExperimentError::Config(format!("no dataset manifest at {}", manifest.display())));
    }
    Ok(Dataset::load(dir)?)
}

/// Binarized fragments and the pair lists of every split.
pub fn training_data(ds: &Dataset, pre: &PreprocessConfig) -> Result<TrainingData> {
    let fragments = ds.binarize(pre)?;
    let pairs = |split| -> Vec<Pair> {
        ds.pairs(split).iter().map(|p| Pair { a: p.a as usize, b: p.b as usize, label: p.label == 1 }).collect()
    };
    Ok(TrainingData { fragments, train: pairs(Split::Train), val: pairs(Split::Val), test: pairs(Split::Test) })
}

pub fn trial_dir(run: &Path, trial: usize) -> PathBuf {
    run.join(format!("trial_{trial}"))
}

/// Metrics of one scoring regime with a threshold picked on validation.
fn threshold_then_report(val: &[ScoredPair], test: &[ScoredPair], fixed: Option<f64>) -> Result<MetricsReport> {
    let threshold = match fixed {
        Some(t) => t,
        None => training::select_threshold(val)?.0,
    };
    Ok(full_report(test, threshold)?)
}

fn baseline_report(data: &TrainingData, similarity: SimilarityStrategy, split: &[Pair]) -> Result<MetricsReport> {
    threshold_then_report(
        &training::score_baseline(&data.fragments, &data.val, similarity)?,
        &training::score_baseline(&data.fragments, split, similarity)?,
        None,
    )
}

/// Trains `config.trials` trials on the dataset in `data_dir` and fills the
/// run directory. `on_epoch` sees `(trial, epoch, loss, val_f1)`.
pub fn train_run(
    config: &RunConfig,
    data_dir: &Path,
    run_dir: &Path,
    on_epoch: impl FnMut(usize, usize, f64, f64),
) -> Result<FitResult> {
    config.validate()?;
    let ds = load_dataset(data_dir)?;
    let hash = dataset::manifest_hash(data_dir)?;
    let data = training_data(&ds, &config.preprocess)?;
    let mut snapshot = config.clone();
    snapshot.dataset = ds.manifest.config.clone();

    let model = config.model.to_lgn(config.preprocess.input_dim());
    let fit = training::fit(&model, &config.train, &data, config.trials, on_epoch)?;
    let baseline = baseline_report(&data, config.train.similarity, &data.test)?;

    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    write_text(&run_dir.join(CONFIG_FILE), &snapshot.to_toml()?)?;
    write_text(&run_dir.join(MANIFEST_HASH_FILE), &format!("{hash}\n"))?;
    for t in &fit.trials {
        let dir = trial_dir(run_dir, t.trial);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        save_checkpoint(&t.layer, &dir.join(LAYER_FILE))?;
        circuit::export_netlist(&t.circuit, &dir.join(NETLIST_FILE))?;
        let mut csv = String::from("epoch,loss,val_f1\n");
        let _ = writeln!(csv, "0,,{}", t.val_f1_history[0]);
        for (e, (l, f)) in t.losses.iter().zip(&t.val_f1_history[1..]).enumerate() {
            let _ = writeln!(csv, "{},{l},{f}", e + 1);
        }
        write_text(&dir.join(HISTORY_FILE), &csv)?;
    }

    let report = train_report(&snapshot, &hash, &fit, &baseline);
    report.write(&run_dir.join(REPORT_FILE))?;
    Ok(fit)
}

fn train_report(config: &RunConfig, hash: &str, fit: &FitResult, baseline: &MetricsReport) -> Report {
    let mut r = Report::new("train");
    r.push("manifest_sha256", hash);
    r.push("fold", config.dataset.fold);
    r.push("model", config.model.label());
    r.push("frame_size", config.preprocess.frame_size);
    r.push("thresholds", config.preprocess.thresholds.len());
    r.push("input_dim", config.preprocess.input_dim());
    r.push("similarity", config.train.similarity);
    r.push("epochs", config.train.max_epochs);
    r.push("trials", fit.trials.len());
    for t in &fit.trials {
        let p = format!("trial.{}", t.trial);
        r.push(format!("{p}.seed"), t.seed.0);
        r.push(format!("{p}.best_epoch"), t.best_epoch);
        r.push(format!("{p}.final_loss"), t.losses.last().map_or("nan".to_string(), |l| l.to_string()));
        r.push(format!("{p}.hard.val_f1"), t.hard.val_f1);
        r.push_metrics(&format!("{p}.hard.test"), &t.hard.test);
        r.push(format!("{p}.soft.val_f1"), t.soft.val_f1);
        r.push_metrics(&format!("{p}.soft.test"), &t.soft.test);
    }
    r.push_mean("mean.hard.test", &fit.mean_hard);
    r.push_mean("mean.soft.test", &fit.mean_soft);
    r.push_metrics("baseline.test", baseline);

    let header: Vec<String> =
        ["trial", "best_epoch", "hard_acc", "hard_f1", "hard_uap", "soft_acc", "soft_f1", "soft_uap"].map(String::from).into();
    let mut rows: Vec<Vec<String>> = fit
        .trials
        .iter()
        .map(|t| {
            vec![
                t.trial.to_string(),
                t.best_epoch.to_string(),
                fmt3(t.hard.test.accuracy),
                fmt3(t.hard.test.f1),
                fmt3(t.hard.test.micro_ap.unwrap_or(f64::NAN)),
                fmt3(t.soft.test.accuracy),
                fmt3(t.soft.test.f1),
                fmt3(t.soft.test.micro_ap.unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    let (h, s) = (&fit.mean_hard, &fit.mean_soft);
    rows.push(
        ["mean".into(), "-".into(), fmt3(h.accuracy), fmt3(h.f1), fmt3(h.micro_ap), fmt3(s.accuracy), fmt3(s.f1), fmt3(s.micro_ap)]
            .into(),
    );
    r.set_table(&render_table(&header, &rows));
    r
}

/// What `eval` scores.
#[derive(Debug, Clone)]
pub enum EvalModel {
    /// Soft layer plus its discretized circuit, reported side by side.
    Checkpoint(PathBuf),
    Netlist(PathBuf),
    /// Binarized inputs with no model.
    Baseline,
}

#[derive(Debug, Clone)]
pub struct EvalRequest {
    pub model: EvalModel,
    pub data_dir: PathBuf,
    pub preprocess: PreprocessConfig,
    pub similarity: SimilarityStrategy,
    pub split: Split,
    /// Decision threshold; chosen on the validation split when absent.
    pub threshold: Option<f64>,
}

pub fn eval_run(req: &EvalRequest) -> Result<Report> {
    let ds = load_dataset(&req.data_dir)?;
    let data = training_data(&ds, &req.preprocess)?;
    let split: &[Pair] = match req.split {
        Split::Train => &data.train,
        Split::Val => &data.val,
        Split::Test => &data.test,
    };
    let sim = req.similarity;
    let dim = req.preprocess.input_dim();
    let mut regimes: Vec<(&str, MetricsReport)> = Vec::new();
    let source = match &req.model {
        EvalModel::Checkpoint(path) => {
            let layer = load_checkpoint(path)?;
            check_dim(layer.input_dim(), dim)?;
            let circuit = circuit::discretize(&layer);
            regimes.push(("hard", hard_report(&circuit, &data, split, sim, req.threshold)?));
            regimes.push(("soft", soft_report(&layer, &data, split, sim, req.threshold)?));
            "checkpoint"
        }
        EvalModel::Netlist(path) => {
            let circuit = circuit::import_netlist(path)?;
            check_dim(circuit.n_inputs(), dim)?;
            regimes.push(("hard", hard_report(&circuit, &data, split, sim, req.threshold)?));
            "netlist"
        }
        EvalModel::Baseline => {
            let val = training::score_baseline(&data.fragments, &data.val, sim)?;
            let test = training::score_baseline(&data.fragments, split, sim)?;
            regimes.push(("baseline", threshold_then_report(&val, &test, req.threshold)?));
            "baseline"
        }
    };

    let mut r = Report::new("eval");
    r.push("source", source);
    r.push("manifest_sha256", dataset::manifest_hash(&req.data_dir)?);
    r.push("fold", ds.manifest.config.fold);
    r.push("split", req.split);
    r.push("n_pairs", split.len());
    r.push("similarity", sim);
    r.push("threshold_source", if req.threshold.is_some() { "fixed" } else { "validation" });
    for (name, m) in &regimes {
        r.push_metrics(name, m);
    }
    let header: Vec<String> =
        ["regime", "threshold", "accuracy", "precision", "recall", "f1", "uap"].map(String::from).into();
    let rows: Vec<Vec<String>> = regimes
        .iter()
        .map(|(name, m)| {
            vec![
                name.to_string(),
                format!("{:.4}", m.threshold),
                fmt3(m.accuracy),
                fmt3(m.precision),
                fmt3(m.recall),
                fmt3(m.f1),
                fmt3(m.micro_ap.unwrap_or(f64::NAN)),
            ]
        })
        .collect();
    r.set_table(&render_table(&header, &rows));
    Ok(r)
}

fn check_dim(model: usize, pre: usize) -> Result<()> {
    if model != pre {
        return Err(ExperimentError::Config(format!(
            "model expects {model} input bits but the preprocessing produces {pre}"
        )));
    }
    Ok(())
}

fn hard_report(
    circuit: &DiscreteCircuit,
    data: &TrainingData,
    split: &[Pair],
    sim: SimilarityStrategy,
    fixed: Option<f64>,
) -> Result<MetricsReport> {
    let val = if fixed.is_none() { training::score_hard(circuit, &data.fragments, &data.val, sim)? } else { Vec::new() };
    threshold_then_report(&val, &training::score_hard(circuit, &data.fragments, split, sim)?, fixed)
}

fn soft_report(
    layer: &SoftGateLayer,
    data: &TrainingData,
    split: &[Pair],
    sim: SimilarityStrategy,
    fixed: Option<f64>,
) -> Result<MetricsReport> {
    let val = if fixed.is_none() { training::score_soft(layer, &data.fragments, &data.val, sim)? } else { Vec::new() };
    threshold_then_report(&val, &training::score_soft(layer, &data.fragments, split, sim)?, fixed)
}

/// Writes the discretized circuit of a checkpoint as a netlist.
pub fn discretize_file(checkpoint: &Path, out: &Path) -> Result<DiscreteCircuit> {
    let circuit = circuit::discretize(&load_checkpoint(checkpoint)?);
    circuit::export_netlist(&circuit, out)?;
    Ok(circuit)
}

/// Where benchmark frames come from.
#[derive(Debug, Clone)]
pub enum BenchInput {
    /// Test-split pairs of a dataset, resized to the frame size up front.
    Dataset(PathBuf),
    /// Uniform random frames.
    Random(Seed),
}

pub fn bench_pairs(input: &BenchInput, frame_size: usize, n_pairs: usize) -> Result<Vec<FramePair>> {
    if n_pairs == 0 {
        return Err(ExperimentError::Config("need at least one benchmark pair".into()));
    }
    match input {
        BenchInput::Dataset(dir) => {
            let ds = load_dataset(dir)?;
            let thumbs = ds.thumbnails(frame_size)?;
            let test = ds.pairs(Split::Test);
            if test.is_empty() {
                return Err(ExperimentError::Config("dataset has no test pairs".into()));
            }
            Ok((0..n_pairs)
                .map(|i| {
                    let p = test[i % test.len()];
                    (thumbs[p.a as usize].clone(), thumbs[p.b as usize].clone())
                })
                .collect())
        }
        BenchInput::Random(seed) => {
            let mut rng = seed.rng();
            let mut fragment = || -> Vec<Frame> {
                (0..crate::pipeline::FRAGMENT_LEN)
                    .map(|_| Frame {
                        width: frame_size,
                        height: frame_size,
                        data: (0..RGB * frame_size * frame_size).map(|_| rng.random::<f64>()).collect(),
                    })
                    .collect()
            };
            Ok((0..n_pairs).map(|_| (fragment(), fragment())).collect())
        }
    }
}

pub fn bench_run(
    netlist: &Path,
    preprocess: &PreprocessConfig,
    input: &BenchInput,
    n_pairs: usize,
    repetitions: usize,
) -> Result<(BenchReport, Report)> {
    preprocess.validate()?;
    let circuit = circuit::import_netlist(netlist)?;
    check_dim(circuit.n_inputs(), preprocess.input_dim())?;
    let pairs = bench_pairs(input, preprocess.frame_size, n_pairs)?;
    let b = circuit::benchmark(&circuit, preprocess, &pairs, repetitions)?;
    let mut r = Report::new("bench");
    r.push("input", match input {
        BenchInput::Dataset(_) => "dataset",
        BenchInput::Random(_) => "random",
    });
    r.push("sps_mean", format!("{:.1}", b.sps_mean));
    r.push("sps_std", format!("{:.1}", b.sps_std));
    r.push("gates", b.gates);
    r.push("desc_bytes", b.desc_bytes);
    r.push("n_pairs", b.n_pairs);
    r.push("repetitions", b.repetitions);
    r.push("threads", b.threads);
    r.set_table(&b.line());
    Ok((b, r))
}

// ---------------------------------------------------------------------------
// Result tables
// ---------------------------------------------------------------------------

/// Result table layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableKind {
    /// One row per fold and similarity strategy.
    Similarity,
    /// One row per fold, frame size and threshold count.
    Thresholds,
    /// Preprocessing-only baseline against the LGN, per fold.
    Ablation,
    /// Per-fold F1 and fold means for every model variant.
    Folds,
}

impl std::str::FromStr for TableKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "similarity" => Ok(TableKind::Similarity),
            "thresholds" => Ok(TableKind::Thresholds),
            "ablation" => Ok(TableKind::Ablation),
            "folds" => Ok(TableKind::Folds),
            _ => Err(format!("unknown table `{s}` (similarity, thresholds, ablation, folds)")),
        }
    }
}

/// A run directory's configuration and train report.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub config: RunConfig,
    pub report: Report,
}

impl RunSummary {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let report = Report::read(&dir.join(REPORT_FILE))?;
        if report.kind() != Some("train") {
            return Err(report_err(&dir.join(REPORT_FILE).display().to_string(), "not a train report"));
        }
        let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self { name, config, report })
    }

    fn metrics(&self, prefix: &str) -> Result<[f64; 5]> {
        let g = |k: &str| self.report.get_f64(&format!("{prefix}.{k}"));
        Ok([g("accuracy")?, g("precision")?, g("recall")?, g("f1")?, g("micro_ap")?])
    }
}

/// Aggregates run directories into a table; returns `(text, csv)`.
pub fn report_table(runs: &[RunSummary], kind: TableKind) -> Result<(String, String)> {
    if runs.is_empty() {
        return Err(ExperimentError::Config("no run directories given".into()));
    }
    let metric_cols = ["accuracy", "precision", "recall", "f1", "uap"].map(String::from);
    let metric_cells = |m: [f64; 5]| m.map(fmt3).to_vec();
    let (header, mut rows): (Vec<String>, Vec<Vec<String>>) = match kind {
        TableKind::Similarity | TableKind::Thresholds => {
            let mut header: Vec<String> = vec!["fold".into(), "model".into()];
            header.extend(match kind {
                TableKind::Similarity => vec!["similarity".to_string()],
                _ => vec!["frame".to_string(), "thresholds".to_string()],
            });
            header.extend(metric_cols);
            let mut rows = Vec::new();
            for run in runs {
                let c = &run.config;
                let mut row = vec![c.dataset.fold.to_string(), c.model.label()];
                match kind {
                    TableKind::Similarity => row.push(c.train.similarity.to_string()),
                    _ => {
                        row.push(format!("{0}x{0}", c.preprocess.frame_size));
                        row.push(c.preprocess.thresholds.len().to_string());
                    }
                }
                row.extend(metric_cells(run.metrics("mean.hard.test")?));
                rows.push(row);
            }
            (header, rows)
        }
        TableKind::Ablation => {
            let mut header: Vec<String> = vec!["fold".into(), "method".into()];
            header.extend(metric_cols);
            let mut rows = Vec::new();
            for run in runs {
                let fold = run.config.dataset.fold.to_string();
                let mut base = vec![fold.clone(), "preprocessing".into()];
                base.extend(metric_cells(run.metrics("baseline.test")?));
                let mut lgn = vec![fold, format!("lgn {}", run.config.model.label())];
                lgn.extend(metric_cells(run.metrics("mean.hard.test")?));
                rows.push(base);
                rows.push(lgn);
            }
            rows.dedup();
            (header, rows)
        }
        TableKind::Folds => {
            let mut by_variant: BTreeMap<(String, usize), BTreeMap<u8, [f64; 5]>> = BTreeMap::new();
            let mut folds = BTreeSet::new();
            for run in runs {
                let c = &run.config;
                folds.insert(c.dataset.fold);
                by_variant
                    .entry((c.model.label(), c.preprocess.frame_size))
                    .or_default()
                    .insert(c.dataset.fold, run.metrics("mean.hard.test")?);
            }
            let mut header: Vec<String> = vec!["model".into(), "frame".into()];
            header.extend(folds.iter().map(|f| format!("f1_fold{f}")));
            header.extend(["mean_accuracy", "mean_f1", "mean_uap"].map(String::from));
            let rows = by_variant
                .iter()
                .map(|((label, size), per_fold)| {
                    let mut row = vec![label.clone(), format!("{size}x{size}")];
                    row.extend(folds.iter().map(|f| per_fold.get(f).map_or("-".to_string(), |m| fmt3(m[3]))));
                    let n = per_fold.len() as f64;
                    let mean = |i: usize| per_fold.values().map(|m| m[i]).sum::<f64>() / n;
                    row.extend([fmt3(mean(0)), fmt3(mean(3)), fmt3(mean(4))]);
                    row
                })
                .collect();
            (header, rows)
        }
    };
    if kind != TableKind::Folds {
        rows.sort();
    }
    Ok((render_table(&header, &rows), render_csv(&header, &rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.train.max_epochs, c.train.learning_rate, c.train.batch_size), (300, 0.1, 128));
        assert_eq!(c.train.similarity, SimilarityStrategy::FramePairMax);
        assert_eq!(c.trials, 5);
        assert_eq!(c.model.label(), "Top32-2000");
        assert_eq!(c.preprocess.input_dim(), 768);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.model.connectome = ConnectomeKind::Dense;
        c.dataset.fold = 5;
        c.preprocess.thresholds = crate::pipeline::THRESHOLDS_7.to_vec();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::from_toml("trials = 2\n[train]\nmax_epochs = 7\n[preprocess]\nframe_size = 32\n").unwrap();
        assert_eq!((c.trials, c.train.max_epochs, c.train.batch_size), (2, 7, 128));
        assert_eq!(c.preprocess.input_dim(), 32 * 32 * 3 * 4);
        assert!(RunConfig::from_toml("[train]\nmax_epochs = \"x\"\n").is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = RunConfig { trials: 0, ..RunConfig::default() };
        assert!(c.validate().is_err());
        c.trials = 1;
        c.dataset.fold = 13;
        assert!(c.validate().is_err());
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::new("eval");
        r.push("split", Split::Test);
        r.push("hard.f1", 0.875);
        r.set_table("a  b\n1  2\n");
        let text = r.to_string();
        assert!(text.starts_with("format=lgn-vcd-report\nversion=1\nkind=eval\n"));
        let back = Report::parse(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_f64("hard.f1").unwrap(), 0.875);
        assert!(back.get_f64("missing").is_err());
        assert!(Report::parse("kind=x\n").is_err());
        assert!(Report::parse("format=lgn-vcd-report\nversion=9\n").is_err());
        assert!(Report::parse("format=lgn-vcd-report\nversion=1\nnonsense\n").is_err());
    }

    #[test]
    fn tables_align() {
        let h = vec!["a".to_string(), "bb".to_string()];
        let rows = vec![vec!["xxx".to_string(), "1".to_string()]];
        assert_eq!(render_table(&h, &rows), "a    bb\nxxx  1\n");
        assert_eq!(render_csv(&h, &rows), "a,bb\nxxx,1\n");
    }

    #[test]
    fn random_bench_pairs_are_seeded() {
        let a = bench_pairs(&BenchInput::Random(Seed(3)), 8, 4).unwrap();
        let b = bench_pairs(&BenchInput::Random(Seed(3)), 8, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].0.len(), crate::pipeline::FRAGMENT_LEN);
        assert!(bench_pairs(&BenchInput::Random(Seed(3)), 8, 0).is_err());
    }
}
