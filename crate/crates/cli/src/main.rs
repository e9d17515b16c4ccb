use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use vran_core::exact::{solve_bruteforce, solve_exact, Proof};
use vran_core::experiment::benchmark::{self, GeneratedScenario};
use vran_core::experiment::{
    revalidate_histogram, revalidate_sweep, run_gap_histogram, run_sweep, run_timing,
    ExperimentSpec, ScenarioSource, SolverKind, Sweep, SweepAxis,
};
use vran_core::infer::{infer, optimality_gap, Strategy as InferStrategy};
use vran_core::io::{save_scenario, scenario_to_json};
use vran_core::model::{evaluate, Scenario, SplitAssignment, SystemParams};
use vran_core::nn::checkpoint::Checkpoint;
use vran_core::topology::{ingest_real_file, WaxmanConfig};
use vran_core::train::{
    train_from, PenaltyMode, TrainConfig, TrainOutput, TrainState, TrainedModel,
};

#[derive(Parser)]
#[command(name = "vransplit", version, about = "Functional-split placement for virtualized RAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file.
    Gen(GenArgs),
    /// Solve a scenario exactly.
    Solve(SolveArgs),
    /// Train one or more policy/critic pairs.
    Train(TrainArgs),
    /// Run trained models on a scenario.
    Infer(InferArgs),
    /// Run an experiment and write CSV results.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    Standard,
    Large,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "benchmark")]
    scenario: Option<PathBuf>,
    /// Built-in benchmark scenario.
    #[arg(long)]
    benchmark: Option<Benchmark>,
}

impl ScenarioArgs {
    fn source(&self) -> Result<ScenarioSource> {
        match (&self.scenario, self.benchmark) {
            (Some(p), _) => Ok(ScenarioSource::File(p.clone())),
            (None, Some(Benchmark::Standard)) => Ok(ScenarioSource::Standard),
            (None, Some(Benchmark::Large)) => Ok(ScenarioSource::Large),
            (None, None) => bail!("pass --scenario FILE or --benchmark NAME"),
        }
    }

    fn load(&self) -> Result<Scenario> {
        Ok(self.source()?.load()?)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Emit a built-in benchmark instead of a random instance.
    #[arg(long, conflicts_with_all = ["config", "real"])]
    benchmark: Option<Benchmark>,
    /// Generator config as JSON (waxman, traffic_range, params).
    #[arg(long, conflicts_with = "real")]
    config: Option<PathBuf>,
    /// Real topology file (nodes with coordinates and links).
    #[arg(long)]
    real: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    n_du: usize,
    #[arg(long, default_value_t = 4)]
    n_router: usize,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 350.0)]
    area_km: f64,
    #[arg(long, default_value_t = 10.0)]
    traffic_min: f64,
    #[arg(long, default_value_t = 150.0)]
    traffic_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Stop the search after this many seconds and report the best found.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Enumerate all assignments instead of branch and bound.
    #[arg(long)]
    oracle: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Ada,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Base config as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr_agent: Option<f64>,
    #[arg(long)]
    lr_critic: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Initial (or fixed) penalty coefficient for every constraint family.
    #[arg(long)]
    mu: Option<f64>,
    /// Dual step size in adaptive mode.
    #[arg(long)]
    mu_lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Number of models; model k uses seed + k.
    #[arg(long, default_value_t = 1)]
    models: usize,
    /// Continue from a checkpoint (single model only).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, env = "VRAN_OUT_DIR")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Temperature,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "greedy")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 15.0)]
    temp: f64,
    #[arg(long, default_value_t = 16)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output of `solve`; adds the optimality gap to the report.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentKind {
    /// Gap distribution over permuted-order tests.
    Histogram(ExperimentArgs),
    /// Routing-cost or traffic sweep.
    Sweep(ExperimentArgs),
    /// Mean wall-clock time per solver.
    Timing(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Routing,
    Traffic,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec as JSON; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_delimiter = ',')]
    solvers: Vec<SolverKind>,
    #[arg(long)]
    tests: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 1..)]
    fixed_models: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    ada_models: Vec<PathBuf>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_enum)]
    axis: Option<AxisArg>,
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    exact_time_budget: Option<f64>,
    #[arg(long, env = "VRAN_OUT_DIR")]
    out: Option<PathBuf>,
}

impl ExperimentArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.spec {
            Some(p) => serde_json::from_str::<ExperimentSpec>(
                &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            )
            .with_context(|| format!("parsing {}", p.display()))?,
            None => ExperimentSpec::new(ScenarioSource::Standard, Vec::new(), PathBuf::from("results")),
        };
        if self.scenario.scenario.is_some() || self.scenario.benchmark.is_some() {
            spec.scenario = self.scenario.source()?;
        }
        if !self.solvers.is_empty() {
            spec.solvers = self.solvers.clone();
        }
        if let Some(v) = self.tests {
            spec.tests = v;
        }
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if !self.fixed_models.is_empty() {
            spec.models.fixed = self.fixed_models.clone();
        }
        if !self.ada_models.is_empty() {
            spec.models.ada = self.ada_models.clone();
        }
        if let Some(v) = self.temp {
            spec.models.temperature = v;
        }
        if let Some(v) = self.samples {
            spec.models.samples = v;
        }
        if let Some(axis) = self.axis {
            let axis = match axis {
                AxisArg::Routing => SweepAxis::Routing,
                AxisArg::Traffic => SweepAxis::Traffic,
            };
            spec.sweep = Some(Sweep { axis, values: self.values.clone() });
        }
        if let Some(v) = self.repetitions {
            spec.repetitions = v;
        }
        if self.exact_time_budget.is_some() {
            spec.exact_time_budget_s = self.exact_time_budget;
        }
        if let Some(o) = &self.out {
            spec.output_dir = o.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn gen(args: &GenArgs) -> Result<()> {
    let scenario = if let Some(b) = args.benchmark {
        match b {
            Benchmark::Standard => benchmark::standard(),
            Benchmark::Large => benchmark::large(),
        }
    } else if let Some(path) = &args.real {
        let topology = ingest_real_file(path)?;
        let spec = GeneratedScenario {
            waxman: WaxmanConfig { seed: args.seed, ..WaxmanConfig::default() },
            traffic_range: (args.traffic_min, args.traffic_max),
            params: SystemParams::default(),
        };
        let traffic = spec.draw_traffic(topology.du_count());
        Scenario::new(topology, traffic, SystemParams::default())?
    } else {
        let spec = match &args.config {
            Some(p) => serde_json::from_str::<GeneratedScenario>(&fs::read_to_string(p)?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => GeneratedScenario {
                waxman: WaxmanConfig {
                    n_du: args.n_du,
                    n_router: args.n_router,
                    alpha: args.alpha,
                    beta: args.beta,
                    area_km: args.area_km,
                    seed: args.seed,
                    ..benchmark::standard_spec().waxman
                },
                traffic_range: (args.traffic_min, args.traffic_max),
                params: SystemParams::default(),
            },
        };
        spec.build()?
    };
    match &args.out {
        Some(p) => save_scenario(&scenario, p)?,
        None => println!("{}", scenario_to_json(&scenario)),
    }
    Ok(())
}

fn solve(args: &SolveArgs) -> Result<()> {
    let scenario = args.scenario.load()?;
    let (assignment, report, proof, nodes) = if args.oracle {
        let (a, r) = solve_bruteforce(&scenario)?;
        (a, r, Proof::Optimal, None)
    } else {
        let s = solve_exact(&scenario, args.time_budget.map(Duration::from_secs_f64))?;
        (s.assignment, s.report, s.proof, Some(s.nodes_expanded))
    };
    let out = json!({
        "assignment": assignment.to_digits(),
        "total_cost": report.total_cost,
        "feasible": report.feasible,
        "proof": proof,
        "nodes_expanded": nodes,
        "report": report,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str::<TrainConfig>(&fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.penalty = match m {
            Mode::Fixed => PenaltyMode::Fixed { mu: cfg.penalty.initial() },
            Mode::Ada => TrainConfig::adaptive().penalty,
        };
    }
    if let Some(mu) = args.mu {
        cfg.penalty = match cfg.penalty {
            PenaltyMode::Fixed { .. } => PenaltyMode::Fixed { mu: [mu; 4] },
            PenaltyMode::Adaptive { lr, .. } => PenaltyMode::Adaptive { mu0: [mu; 4], lr },
        };
    }
    if let Some(step) = args.mu_lr {
        match &mut cfg.penalty {
            PenaltyMode::Adaptive { lr, .. } => *lr = step,
            PenaltyMode::Fixed { .. } => bail!("--mu-lr needs --mode ada"),
        }
    }
    cfg.epochs = args.epochs.unwrap_or(cfg.epochs);
    cfg.batch = args.batch.unwrap_or(cfg.batch);
    cfg.lr_agent = args.lr_agent.unwrap_or(cfg.lr_agent);
    cfg.lr_critic = args.lr_critic.unwrap_or(cfg.lr_critic);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.network.hidden = args.hidden.unwrap_or(cfg.network.hidden);
    cfg.network.embed = args.embed.unwrap_or(cfg.network.embed);
    cfg.checkpoint_every = args.checkpoint_every.unwrap_or(cfg.checkpoint_every);
    if args.no_augment {
        cfg.augment = false;
    }
    if args.clip_norm.is_some() {
        cfg.clip_norm = args.clip_norm;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: &TrainArgs) -> Result<()> {
    let scenario = args.scenario.load()?;
    let cfg = train_config(args)?;
    if args.models == 0 {
        bail!("--models must be at least 1");
    }
    if args.resume.is_some() && args.models != 1 {
        bail!("--resume works with a single model");
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("train_config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    for k in 0..args.models {
        let model_cfg = TrainConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
        let state = match &args.resume {
            Some(p) => TrainState::from_checkpoint(&Checkpoint::load(p)?)?,
            None => TrainState::new(&model_cfg),
        };
        let ckpt_dir = args.out.join(format!("checkpoints_{k}"));
        if model_cfg.checkpoint_every > 0 {
            fs::create_dir_all(&ckpt_dir)?;
        }
        let output = TrainOutput {
            checkpoint_dir: Some(ckpt_dir),
            log_csv: Some(args.out.join(format!("train_log_{k}.csv"))),
        };
        let outcome = train_from(&model_cfg, &scenario, state, &output)?;
        let path = args.out.join(format!("model_{k}.ckpt"));
        let ck = outcome.state.to_checkpoint();
        ck.save(&path)?;
        let last = outcome.log.last();
        println!(
            "{}: {} epochs, sha256 {}, final J {:.4}, feasible rate {:.3}",
            path.display(),
            outcome.state.epoch,
            ck.hash(),
            last.map_or(f64::NAN, |e| e.cost),
            last.map_or(f64::NAN, |e| e.feasible_rate),
        );
    }
    Ok(())
}

fn run_infer(args: &InferArgs) -> Result<()> {
    let scenario = args.scenario.load()?;
    let models = args
        .models
        .iter()
        .map(|p| TrainedModel::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let strategy = match args.strategy {
        StrategyArg::Greedy => InferStrategy::Greedy,
        StrategyArg::Temperature => InferStrategy::Temperature { t: args.temp, samples: args.samples },
    };
    let result = infer(&models, &scenario, strategy, args.seed, None)?;
    let gap = match &args.reference {
        Some(p) => {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p)?)?;
            let digits = v["assignment"].as_str().context("reference has no assignment")?;
            let assignment = SplitAssignment::from_digits(digits).context("bad reference assignment")?;
            let reference = evaluate(&scenario, &assignment)?;
            if result.feasible {
                Some(optimality_gap(&result.report, &reference)?)
            } else {
                None
            }
        }
        None => None,
    };
    let out = json!({
        "assignment": result.assignment.to_digits(),
        "total_cost": result.report.total_cost,
        "feasible": result.feasible,
        "penalized_cost": result.penalized,
        "candidates": result.candidates,
        "gap_percent": gap,
        "report": result.report,
    });
    write_output(args.out.as_deref(), &serde_json::to_string_pretty(&out)?)
}

fn experiment(kind: &ExperimentKind) -> Result<()> {
    match kind {
        ExperimentKind::Histogram(a) => {
            let spec = a.spec()?;
            let report = run_gap_histogram(&spec)?;
            let rows = revalidate_histogram(&report.tests_csv, &spec.scenario.load()?)?;
            for (solver, bins) in &report.bins {
                println!("{solver}: {bins:?}");
            }
            println!("{} rows revalidated in {}", rows, report.tests_csv.display());
        }
        ExperimentKind::Sweep(a) => {
            let spec = a.spec()?;
            if spec.sweep.is_none() {
                bail!("sweep needs --axis and --values (or a sweep in the spec)");
            }
            let report = run_sweep(&spec)?;
            let rows = revalidate_sweep(&report.csv, &spec.scenario.load()?)?;
            println!("{} rows revalidated in {}", rows, report.csv.display());
        }
        ExperimentKind::Timing(a) => {
            let spec = a.spec()?;
            let report = run_timing(&spec)?;
            for r in &report.rows {
                println!("{}: {:.6e} s over {} runs", r.solver, r.mean_s, r.repetitions);
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Solve(a) => solve(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => run_infer(a),
        Command::Experiment { kind } => experiment(kind),
    }
}
