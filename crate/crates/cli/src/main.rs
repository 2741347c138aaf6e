//! `ckav`: checkpoint averaging from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 I/O error. Stdout carries only machine-readable JSON payloads;
//! diagnostics go to stderr.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;

use ckav_core::averaging::{
    gradient_step_average, ppl_softmax_weights, uniform_weights, weighted_average, GradStepConfig,
    TemperatureConfig, WeightVector,
};
use ckav_core::selection::SelectionStrategy;
use ckav_core::store::{self, Checkpoint, ReadOptions};
use ckav_core::sweep::{
    self, default_eta_grid, default_tau_grid, records_to_csv, records_to_json, SimplexGridSpec,
    SweepRecord,
};
use ckav_core::toy_model::{
    checkpoint_filename, make_synthetic_data, sample_quadratic_checkpoints, train_with_checkpoints,
    AdamConfig, DevSet, MlpObjective, QuadraticTaskSpec, ToyModelSpec,
};
use ckav_core::weight_optimizer::{one_step_optimize, OptimizeConfig};

#[derive(Parser)]
#[command(name = "ckav", version, about = "Checkpoint averaging engine")]
struct Cli {
    /// Worker threads for averaging and sweeps (CKAV_THREADS as fallback).
    /// Outputs are identical for any value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    /// Accept NaN/Inf tensor values when reading checkpoints.
    #[arg(long, global = true)]
    allow_nonfinite: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the built-in classifier on synthetic data, writing a
    /// checkpoint series with stored gradients and dev perplexities.
    TrainToy(TrainToyArgs),
    /// Sample checkpoints of the quadratic bowl task.
    GenQuadratic(GenQuadraticArgs),
    /// Print the layout and metadata of a checkpoint file as JSON.
    Inspect(InspectArgs),
    /// Average checkpoints into a new checkpoint file.
    Average(AverageArgs),
    /// One-step optimization of interpolation weights on dev data.
    OptimizeWeights(OptimizeWeightsArgs),
    /// Measure the dev loss/perplexity of a checkpoint.
    Eval(EvalArgs),
    /// Hyperparameter scans; results go to a CSV or JSON file.
    #[command(subcommand)]
    Sweep(SweepCmd),
}

#[derive(Args)]
struct TrainToyArgs {
    /// Model spec JSON: {"input_dim", "hidden_dim", "num_classes"}.
    #[arg(long)]
    spec: PathBuf,
    /// Optimizer/schedule JSON; all fields optional (AdamConfig defaults).
    #[arg(long)]
    adam: PathBuf,
    /// Output directory for checkpoints and the train/dev datasets.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the seed from the adam config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of synthetic training examples.
    #[arg(long, default_value_t = 2000)]
    train_size: usize,
    /// Number of synthetic dev examples.
    #[arg(long, default_value_t = 500)]
    dev_size: usize,
    /// Seed for the synthetic data draw; defaults to the training seed + 2
    /// (the trainer itself consumes seed and seed + 1).
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args)]
struct GenQuadraticArgs {
    /// Task spec JSON: {"dim", "center", "noise_sigma", "num_checkpoints", "seed"}.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the seed from the task spec.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct InspectArgs {
    ckpt: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Uniform,
    PplSoftmax,
}

#[derive(Args)]
struct AverageArgs {
    /// Weighting scheme over the input checkpoints.
    #[arg(long, value_enum, default_value_t = Scheme::Uniform, conflicts_with = "weights")]
    scheme: Scheme,
    /// Softmax temperature for --scheme ppl-softmax.
    #[arg(
        long,
        conflicts_with = "weights",
        required_if_eq("scheme", "ppl-softmax")
    )]
    tau: Option<f64>,
    /// Also take a gradient step of this size (requires stored gradients).
    #[arg(long)]
    grad_step: Option<f64>,
    /// Explicit weights, e.g. "0.5,0.3,0.2"; must sum to 1 within 1e-9.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint files; order defines weight alignment.
    #[arg(required = true)]
    ckpts: Vec<PathBuf>,
}

#[derive(Args)]
struct OptimizeWeightsArgs {
    /// Logit step size.
    #[arg(long)]
    eta: f64,
    /// Dev dataset file (container with "inputs"/"labels").
    #[arg(long)]
    dev: PathBuf,
    /// Model spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Also write the report JSON here (stdout always carries it).
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(required = true)]
    ckpts: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    ckpt: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct SweepCommon {
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    spec: PathBuf,
    /// Output file for the records.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
    #[arg(required = true)]
    ckpts: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum SweepCmd {
    /// Uniform average for K = 1..k-max under a selection strategy.
    K {
        #[arg(long, default_value = "top-k")]
        select: String,
        /// Largest K to try; defaults to the series length.
        #[arg(long)]
        k_max: Option<usize>,
        #[command(flatten)]
        common: SweepCommon,
    },
    /// Perplexity-softmax weights over a temperature grid.
    Temp {
        #[arg(long, default_value = "last-k-best")]
        select: String,
        #[arg(long)]
        k: usize,
        /// Temperatures, comma list or JSON array.
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        common: SweepCommon,
    },
    /// Gradient-step extension over a step-size grid.
    GradEta {
        #[arg(long, default_value = "top-k")]
        select: String,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 100.0)]
        tau: f64,
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        common: SweepCommon,
    },
    /// One-step weight optimization over a step-size grid.
    OptEta {
        #[arg(long)]
        grid: Option<String>,
        #[command(flatten)]
        common: SweepCommon,
    },
    /// Barycentric grid over exactly three checkpoints.
    Simplex {
        #[arg(long, default_value_t = 20)]
        resolution: usize,
        #[command(flatten)]
        common: SweepCommon,
    },
}

enum CliError {
    Core(ckav_core::Error),
    Io(std::io::Error),
    Config(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Config(e) => write!(f, "{e}"),
        }
    }
}

impl From<ckav_core::Error> for CliError {
    fn from(e: ckav_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Core(ckav_core::Error::Io(_)) => 3,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    let threads = match resolve_threads(cli.threads) {
        Ok(n) => n,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };

    let read_opts = ReadOptions {
        allow_nonfinite: cli.allow_nonfinite,
    };
    match pool.install(|| execute(cli.command, read_opts)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_threads(flag: Option<u32>) -> CliResult<usize> {
    if let Some(n) = flag {
        return Ok(n as usize);
    }
    match std::env::var("CKAV_THREADS") {
        Ok(s) => s.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::Config(format!(
                "CKAV_THREADS must be a positive integer, got \"{s}\""
            ))
        }),
        Err(_) => Ok(1),
    }
}

fn execute(command: Command, read_opts: ReadOptions) -> CliResult<()> {
    match command {
        Command::TrainToy(args) => train_toy(args),
        Command::GenQuadratic(args) => gen_quadratic(args),
        Command::Inspect(args) => inspect(args, read_opts),
        Command::Average(args) => average(args, read_opts),
        Command::OptimizeWeights(args) => optimize_weights(args, read_opts),
        Command::Eval(args) => eval(args, read_opts),
        Command::Sweep(cmd) => run_sweep(cmd, read_opts),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_checkpoints(paths: &[PathBuf], opts: ReadOptions) -> CliResult<Vec<Checkpoint>> {
    paths
        .iter()
        .map(|p| {
            store::read_checkpoint_with(p, opts)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Loads checkpoints and orders them by training step ascending, as the
/// selection strategies require.
fn load_series(paths: &[PathBuf], opts: ReadOptions) -> CliResult<Vec<Checkpoint>> {
    let mut ckpts = load_checkpoints(paths, opts)?;
    ckpts.sort_by_key(|c| c.meta().step);
    Ok(ckpts)
}

fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let values: Result<Vec<f64>, _> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
            .collect()
    };
    values.map_err(|e| CliError::Config(format!("cannot parse grid \"{text}\": {e}")))
}

fn print_json(value: &serde_json::Value) -> CliResult<()> {
    use std::io::Write;
    let rendered = serde_json::to_string_pretty(value).expect("json");
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{rendered}") {
        // downstream closed the pipe; not our error
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        return Err(e.into());
    }
    Ok(())
}

fn train_toy(args: TrainToyArgs) -> CliResult<()> {
    let spec: ToyModelSpec = read_json(&args.spec)?;
    let mut cfg: AdamConfig = read_json(&args.adam)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.train_size == 0 || args.dev_size == 0 {
        return Err(CliError::Config(
            "train-size and dev-size must be >= 1".into(),
        ));
    }
    fs::create_dir_all(&args.out_dir)?;

    let data_seed = args.data_seed.unwrap_or(cfg.seed.wrapping_add(2));
    let all = make_synthetic_data(&spec, args.train_size + args.dev_size, data_seed)?;
    let (train, dev) = all.split(args.train_size)?;
    train.save(args.out_dir.join("train.ckav"))?;
    dev.save(args.out_dir.join("dev.ckav"))?;

    let metas = train_with_checkpoints(&spec, &train, &dev, &cfg, &args.out_dir)?;
    eprintln!(
        "wrote {} checkpoints to {}",
        metas.len(),
        args.out_dir.display()
    );

    let checkpoints: Vec<_> = metas
        .iter()
        .map(|m| {
            json!({
                "path": checkpoint_filename(m.step),
                "step": m.step,
                "dev_ppl": m.dev_ppl,
            })
        })
        .collect();
    print_json(&json!({
        "out_dir": args.out_dir,
        "train": "train.ckav",
        "dev": "dev.ckav",
        "data_seed": data_seed,
        "checkpoints": checkpoints,
    }))
}

fn gen_quadratic(args: GenQuadraticArgs) -> CliResult<()> {
    let mut spec: QuadraticTaskSpec = read_json(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    fs::create_dir_all(&args.out_dir)?;
    let metas = sample_quadratic_checkpoints(&spec, &args.out_dir)?;
    eprintln!(
        "wrote {} checkpoints to {}",
        metas.len(),
        args.out_dir.display()
    );
    let checkpoints: Vec<_> = metas
        .iter()
        .map(|m| {
            json!({
                "path": checkpoint_filename(m.step),
                "step": m.step,
                "dev_ppl": m.dev_ppl,
            })
        })
        .collect();
    print_json(&json!({
        "out_dir": args.out_dir,
        "checkpoints": checkpoints,
    }))
}

fn inspect(args: InspectArgs, read_opts: ReadOptions) -> CliResult<()> {
    let ckpt = store::read_checkpoint_with(&args.ckpt, read_opts)?;
    let tensors: Vec<_> = ckpt
        .params()
        .iter()
        .map(|(name, t)| json!({"name": name, "shape": t.shape()}))
        .collect();
    print_json(&json!({
        "path": args.ckpt,
        "meta": {
            "step": ckpt.meta().step,
            "dev_ppl": ckpt.meta().dev_ppl,
            "tag": ckpt.meta().tag,
        },
        "tensors": tensors,
        "has_grads": ckpt.has_grads(),
    }))
}

fn average(args: AverageArgs, read_opts: ReadOptions) -> CliResult<()> {
    let ckpts = load_checkpoints(&args.ckpts, read_opts)?;

    let (weights, scheme_name) = if let Some(list) = &args.weights {
        let raw = parse_grid(list)?;
        (WeightVector::from_unnormalized(raw, 1e-9)?, "explicit")
    } else {
        match args.scheme {
            Scheme::Uniform => (uniform_weights(ckpts.len())?, "uniform"),
            Scheme::PplSoftmax => {
                let tau = args.tau.expect("clap enforces --tau for ppl-softmax");
                let ppls: Vec<f64> = ckpts
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        c.meta()
                            .dev_ppl
                            .ok_or(ckav_core::Error::MissingDevPpl { index: i })
                    })
                    .collect::<Result<_, _>>()?;
                (
                    ppl_softmax_weights(&ppls, TemperatureConfig::new(tau)?)?,
                    "ppl-softmax",
                )
            }
        }
    };

    let out_ckpt = match args.grad_step {
        None => weighted_average(&ckpts, &weights)?,
        Some(eta) => gradient_step_average(&ckpts, &weights, GradStepConfig::new(eta)?)?,
    };
    store::write_checkpoint(&args.out, &out_ckpt)?;

    print_json(&json!({
        "out": args.out,
        "scheme": scheme_name,
        "k": ckpts.len(),
        "grad_step": args.grad_step,
        "weights": weights.as_slice(),
    }))
}

fn optimize_weights(args: OptimizeWeightsArgs, read_opts: ReadOptions) -> CliResult<()> {
    let spec: ToyModelSpec = read_json(&args.spec)?;
    let dev = DevSet::load(&args.dev)?;
    let objective = MlpObjective::new(spec, &dev)?;
    let ckpts = load_checkpoints(&args.ckpts, read_opts)?;

    let (_, report) = one_step_optimize(&ckpts, &objective, OptimizeConfig::new(args.eta)?)?;
    let value = serde_json::to_value(&report).expect("report serializes");
    if let Some(path) = &args.report {
        fs::write(path, format!("{:#}\n", value))?;
    }
    print_json(&value)
}

fn eval(args: EvalArgs, read_opts: ReadOptions) -> CliResult<()> {
    let spec: ToyModelSpec = read_json(&args.spec)?;
    let dev = DevSet::load(&args.dev)?;
    let objective = MlpObjective::new(spec, &dev)?;
    let ckpt = store::read_checkpoint_with(&args.ckpt, read_opts)?;
    let loss = ckav_core::objective::DevObjective::loss(&objective, &ckpt.params().cast())?;
    print_json(&json!({
        "dev_loss": loss,
        "dev_ppl": loss.exp(),
    }))
}

fn parse_strategy(text: &str, k: usize) -> CliResult<SelectionStrategy> {
    let base: SelectionStrategy = text.parse()?;
    Ok(base.with_k(k))
}

fn run_sweep(cmd: SweepCmd, read_opts: ReadOptions) -> CliResult<()> {
    match cmd {
        SweepCmd::K {
            select,
            k_max,
            common,
        } => {
            let series = load_series(&common.ckpts, read_opts)?;
            let strategy = parse_strategy(&select, 1)?;
            let k_max = k_max.unwrap_or(series.len());
            with_objective(&common, |obj| {
                sweep::k_sweep(&series, strategy, k_max, obj).map_err(Into::into)
            })
            .and_then(|records| finish_sweep(&common, records, None))
        }
        SweepCmd::Temp {
            select,
            k,
            grid,
            common,
        } => {
            let series = load_series(&common.ckpts, read_opts)?;
            let strategy = parse_strategy(&select, k)?;
            let taus = match grid {
                Some(g) => parse_grid(&g)?,
                None => default_tau_grid(),
            };
            with_objective(&common, |obj| {
                sweep::temp_sweep(&series, strategy, &taus, obj).map_err(Into::into)
            })
            .and_then(|records| finish_sweep(&common, records, None))
        }
        SweepCmd::GradEta {
            select,
            k,
            tau,
            grid,
            common,
        } => {
            let series = load_series(&common.ckpts, read_opts)?;
            let strategy = parse_strategy(&select, k)?;
            let etas = match grid {
                Some(g) => parse_grid(&g)?,
                None => default_eta_grid(),
            };
            let tau = TemperatureConfig::new(tau)?;
            with_objective(&common, |obj| {
                sweep::eta_sweep_grad(&series, strategy, tau, &etas, obj).map_err(Into::into)
            })
            .and_then(|records| finish_sweep(&common, records, None))
        }
        SweepCmd::OptEta { grid, common } => {
            let ckpts = load_checkpoints(&common.ckpts, read_opts)?;
            let etas = match grid {
                Some(g) => parse_grid(&g)?,
                None => default_eta_grid(),
            };
            with_objective(&common, |obj| {
                sweep::eta_sweep_optimize(&ckpts, &etas, obj).map_err(Into::into)
            })
            .and_then(|records| finish_sweep(&common, records, None))
        }
        SweepCmd::Simplex { resolution, common } => {
            let ckpts = load_checkpoints(&common.ckpts, read_opts)?;
            if ckpts.len() != 3 {
                return Err(CliError::Config(format!(
                    "simplex sweep needs exactly 3 checkpoints, got {}",
                    ckpts.len()
                )));
            }
            let grid = SimplexGridSpec::new(resolution)?;
            let records = with_objective(&common, |obj| {
                sweep::simplex_grid(&ckpts[0], &ckpts[1], &ckpts[2], grid, obj).map_err(Into::into)
            })?;
            let flatness = sweep::simplex_flatness(&records)?;
            let flatness = serde_json::to_value(&flatness).expect("report serializes");
            finish_sweep(&common, records, Some(flatness))
        }
    }
}

fn with_objective<T>(
    common: &SweepCommon,
    f: impl FnOnce(&MlpObjective) -> CliResult<T>,
) -> CliResult<T> {
    let spec: ToyModelSpec = read_json(&common.spec)?;
    let dev = DevSet::load(&common.dev)?;
    let objective = MlpObjective::new(spec, &dev)?;
    f(&objective)
}

fn finish_sweep(
    common: &SweepCommon,
    records: Vec<SweepRecord>,
    extra: Option<serde_json::Value>,
) -> CliResult<()> {
    let rendered = match common.format {
        OutputFormat::Csv => records_to_csv(&records)?,
        OutputFormat::Json => records_to_json(&records)?,
    };
    fs::write(&common.out, rendered)?;
    eprintln!(
        "wrote {} records to {}",
        records.len(),
        common.out.display()
    );

    let mut summary = serde_json::Map::new();
    summary.insert("out".into(), json!(common.out));
    summary.insert("records".into(), json!(records.len()));
    if let Some(extra) = extra {
        summary.insert("flatness".into(), extra);
    }
    print_json(&serde_json::Value::Object(summary))
}
