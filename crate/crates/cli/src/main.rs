//! `lgn-vcd`: dataset generation, training, evaluation, discretization and
//! benchmarking of logic gate network copy detectors.
//!
//! Exit codes: 0 on success, 1 when a command fails, 2 on a usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lgn_vcd::dataset::Split;
use lgn_vcd::experiment::{
    self, BenchInput, EvalModel, EvalRequest, ExperimentError, RunConfig, RunSummary, TableKind, CONFIG_FILE,
    LAYER_FILE,
};
use lgn_vcd::network::ConnectomeKind;
use lgn_vcd::pipeline::{PreprocessConfig, SimilarityStrategy};
use lgn_vcd::training::OptimizerKind;
use lgn_vcd::Seed;

#[derive(Parser)]
#[command(name = "lgn-vcd", version, about = "Logic gate networks for video copy detection")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset for one fold.
    GenData(GenDataArgs),
    /// Train and discretize; writes a run directory.
    Train(TrainArgs),
    /// Score a checkpoint, netlist or the model-free baseline on one split.
    Eval(EvalArgs),
    /// Collapse a checkpoint into a netlist.
    Discretize(DiscretizeArgs),
    /// Measure bit-sliced pair-scoring throughput of a netlist.
    Bench(BenchArgs),
    /// Aggregate run directories into a result table.
    ReportTable(ReportTableArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Frame side after resizing.
    #[arg(long)]
    frame_size: Option<usize>,
    /// Threshold count (4 or 7) or an explicit comma-separated list.
    #[arg(long, value_parser = parse_thresholds)]
    thresholds: Option<Vec<f64>>,
}

impl PreprocessArgs {
    fn apply(&self, pre: &mut PreprocessConfig) {
        if let Some(s) = self.frame_size {
            pre.frame_size = s;
        }
        if let Some(t) = &self.thresholds {
            pre.thresholds = t.clone();
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Fold of the cross-validation table.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=12))]
    fold: Option<u8>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    pairs_per_class: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[arg(long, value_parser = parse_similarity)]
    similarity: Option<SimilarityStrategy>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    gates: Option<usize>,
    /// `dense` or `topk:<k>`.
    #[arg(long)]
    connectome: Option<ConnectomeKind>,
    /// Training seed (trials derive their own seeds from it).
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run directory; its configuration and the chosen trial's checkpoint are used.
    #[arg(long, conflicts_with_all = ["checkpoint", "netlist"])]
    run: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "run")]
    trial: usize,
    #[arg(long, conflicts_with = "netlist")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    netlist: Option<PathBuf>,
    /// Score binarized frames directly, without a model.
    #[arg(long, conflicts_with_all = ["run", "checkpoint", "netlist"])]
    baseline: bool,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[arg(long, value_parser = parse_similarity)]
    similarity: Option<SimilarityStrategy>,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Fixed decision threshold instead of the validation-selected one.
    #[arg(long)]
    threshold: Option<f64>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiscretizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    netlist: PathBuf,
    /// Dataset whose test pairs are scored; random frames when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4096)]
    pairs: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    preprocess: PreprocessArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportTableArgs {
    /// similarity, thresholds, ablation or folds.
    #[arg(long)]
    table: TableKind,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

fn parse_thresholds(s: &str) -> Result<Vec<f64>, String> {
    if let Ok(n) = s.parse::<usize>() {
        return PreprocessConfig::preset_thresholds(n).ok_or_else(|| format!("no preset for {n} thresholds (4 or 7)"));
    }
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad threshold `{v}`"))).collect()
}

fn parse_similarity(s: &str) -> Result<SimilarityStrategy, String> {
    SimilarityStrategy::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("unknown similarity `{s}` (concat, average-pool, framepair-max)"))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig, ExperimentError> {
    match &arg.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn emit(report: &experiment::Report, out: Option<&Path>) -> Result<(), ExperimentError> {
    match out {
        Some(path) => report.write(path),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

fn gen_data(a: GenDataArgs) -> Result<(), ExperimentError> {
    let mut config = load_config(&a.config)?.dataset;
    if let Some(s) = a.seed {
        config.seed = Seed(s);
    }
    if let Some(f) = a.fold {
        config.fold = f;
    }
    if let Some(n) = a.sources {
        config.n_sources = n;
    }
    if let Some(n) = a.pairs_per_class {
        config.pairs_per_class = n;
    }
    let ds = experiment::gen_data(&config, &a.out)?;
    println!(
        "wrote {} fragments, {} pairs to {}",
        ds.fragments.len(),
        Split::ALL.iter().map(|&s| ds.pairs(s).len()).sum::<usize>(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), ExperimentError> {
    let mut config = load_config(&a.config)?;
    a.preprocess.apply(&mut config.preprocess);
    let t = &mut config.train;
    if let Some(v) = a.similarity {
        t.similarity = v;
    }
    if let Some(v) = a.epochs {
        t.max_epochs = v;
    }
    if let Some(v) = a.lr {
        t.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.optimizer {
        t.optimizer = v;
    }
    if let Some(v) = a.seed {
        t.seed = Seed(v);
    }
    if let Some(v) = a.trials {
        config.trials = v;
    }
    if let Some(v) = a.gates {
        config.model.n_gates = v;
    }
    if let Some(v) = a.connectome {
        config.model.connectome = v;
    }
    let quiet = a.quiet;
    experiment::train_run(&config, &a.data, &a.out, |trial, epoch, loss, f1| {
        if !quiet {
            eprintln!("trial {trial} epoch {epoch} loss {loss:.4} val_f1 {f1:.3}");
        }
    })?;
    let report = experiment::Report::read(&a.out.join(experiment::REPORT_FILE))?;
    print!("{report}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), ExperimentError> {
    let (mut config, model) = match (&a.run, &a.checkpoint, &a.netlist, a.baseline) {
        (Some(run), ..) => {
            let config = match &a.config.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::load(&run.join(CONFIG_FILE))?,
            };
            (config, EvalModel::Checkpoint(experiment::trial_dir(run, a.trial).join(LAYER_FILE)))
        }
        (None, Some(ckpt), _, _) => (load_config(&a.config)?, EvalModel::Checkpoint(ckpt.clone())),
        (None, None, Some(net), _) => (load_config(&a.config)?, EvalModel::Netlist(net.clone())),
        (None, None, None, true) => (load_config(&a.config)?, EvalModel::Baseline),
        _ => return Err(ExperimentError::Config("one of --run, --checkpoint, --netlist or --baseline is required".into())),
    };
    a.preprocess.apply(&mut config.preprocess);
    config.preprocess.validate()?;
    let req = EvalRequest {
        model,
        data_dir: a.data,
        preprocess: config.preprocess,
        similarity: a.similarity.unwrap_or(config.train.similarity),
        split: a.split,
        threshold: a.threshold,
    };
    emit(&experiment::eval_run(&req)?, a.out.as_deref())
}

fn discretize(a: DiscretizeArgs) -> Result<(), ExperimentError> {
    let c = experiment::discretize_file(&a.checkpoint, &a.out)?;
    println!("wrote {} gates over {} inputs to {}", c.n_gates(), c.n_inputs(), a.out.display());
    Ok(())
}

fn bench(a: BenchArgs) -> Result<(), ExperimentError> {
    let mut pre = load_config(&a.config)?.preprocess;
    a.preprocess.apply(&mut pre);
    let input = match a.data {
        Some(dir) => BenchInput::Dataset(dir),
        None => BenchInput::Random(Seed(a.seed)),
    };
    let (_, report) = experiment::bench_run(&a.netlist, &pre, &input, a.pairs, a.reps)?;
    emit(&report, a.out.as_deref())
}

fn report_table(a: ReportTableArgs) -> Result<(), ExperimentError> {
    let runs = a.runs.iter().map(|d| RunSummary::load(d)).collect::<Result<Vec<_>, _>>()?;
    let (text, csv) = experiment::report_table(&runs, a.table)?;
    print!("{text}");
    if let Some(path) = a.csv {
        std::fs::write(&path, csv).map_err(|source| ExperimentError::Io { path, source })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(ExperimentError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Discretize(a) => discretize(a),
        Command::Bench(a) => bench(a),
        Command::ReportTable(a) => report_table(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
