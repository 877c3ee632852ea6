//! `mhs`: simulate switching systems and run the multi-hypothesis smoother.

mod config;
mod error;
mod io;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mhs_core::harness::{
    analyze_stream, run_monte_carlo, run_once, simulate_run, Operation, RunConfig, RunReport,
};
use mhs_core::model::SwitchingSystem;

use config::{Config, Overrides};
use error::CliError;

/// Environment variable holding the log filter (`error`, `info`, `debug`, ...).
const LOG_ENV: &str = "HYBRID_SMOOTHER_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "mhs",
    version,
    about = "Multi-hypothesis smoothing for switching linear systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a trajectory and write `simulation.csv`.
    Simulate(SimulateArgs),
    /// Smoothed mode marginals, MAP sequence and trajectory.
    Smooth(RunArgs),
    /// Online (newest-slot) estimates from the same pass.
    Filter(RunArgs),
    /// Seeded Monte Carlo runs with aggregate curves.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Tuning {
    /// Pruning threshold; overrides the config (default 0.01).
    #[arg(long)]
    theta: Option<f64>,
    /// Keep only the newest N mode slots.
    #[arg(long)]
    lag: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of states.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tuning: Tuning,
    /// Measurement CSV.
    #[arg(long, required_unless_present = "sim", conflicts_with = "sim")]
    input: Option<PathBuf>,
    /// Simulate the input from the config instead.
    #[arg(long)]
    sim: bool,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tuning: Tuning,
    /// Number of runs (default 100).
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Smoother)]
    mode: ModeArg,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Smoother,
    Filter,
}

impl From<ModeArg> for Operation {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Smoother => Operation::Smoother,
            ModeArg::Filter => Operation::Filter,
        }
    }
}

fn operation_name(op: Operation) -> &'static str {
    match op {
        Operation::Smoother => "smoother",
        Operation::Filter => "filter",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Smooth(a) => smooth(a, Operation::Smoother),
        Command::Filter(a) => smooth(a, Operation::Filter),
        Command::Montecarlo(a) => montecarlo(a),
    }
}

struct Setup {
    config: Config,
    system: SwitchingSystem,
}

fn setup(common: &Common) -> Result<Setup, CliError> {
    let config = config::load(&common.config)?;
    let system = config.simulation.scaled(config.system.build()?)?;
    log::info!(
        "system: {} modes {:?}, state {}, measurement {}",
        system.mode_count(),
        system.labels(),
        system.state_dim,
        system.measurement_dim
    );
    std::fs::create_dir_all(&common.out)
        .map_err(|e| CliError::io(format!("{}", common.out.display()), e))?;
    Ok(Setup { config, system })
}

fn run_config(
    s: &Setup,
    common: &Common,
    tuning: Option<&Tuning>,
    steps: Option<usize>,
    operation: Operation,
) -> Result<RunConfig, CliError> {
    let sim = &s.config.simulation;
    let schedule = sim.schedule(&s.system)?;
    let sim_steps = match steps {
        Some(k) => config::SimulationSpec {
            steps: Some(k),
            ..sim.clone()
        },
        None => sim.clone(),
    }
    .steps(schedule.as_ref())?;
    let overrides = tuning.map_or_else(Overrides::default, |t| Overrides {
        theta: t.theta,
        lag: t.lag,
    });
    Ok(RunConfig {
        steps: sim_steps,
        smoother: s.config.smoother.build(&overrides)?,
        operation,
        seed: common.seed.or(sim.seed).unwrap_or(0),
        schedule,
        use_initial_measurement: sim.initial_measurement.unwrap_or(true),
    })
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let s = setup(&a.common)?;
    let cfg = run_config(&s, &a.common, None, a.steps, Operation::Smoother)?;
    let trace = simulate_run(&s.system, &cfg)?;
    let path = a.common.out.join("simulation.csv");
    io::write_simulation(&path, &s.system, &trace)?;
    log::info!("wrote {} states to {}", trace.steps(), path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsFile {
    operation: &'static str,
    seed: Option<u64>,
    slots: usize,
    /// `None` when the true sequence was pruned or is unknown.
    nll_sequence: Option<f64>,
    truth_pruned: Option<bool>,
    cross_entropy: Option<f64>,
    accuracy: Option<f64>,
    accuracy_filter: Option<f64>,
    accuracy_smoother: Option<f64>,
    accuracy_map: Option<f64>,
    state_rmse: Option<f64>,
    wall_time_ms: f64,
    peak_leaves: usize,
}

impl MetricsFile {
    fn new(r: &RunReport) -> Self {
        let m = r.metrics.as_ref();
        let nll = m.map(|m| m.nll_sequence);
        Self {
            operation: operation_name(r.operation),
            seed: r.seed,
            slots: r.marginals.slots(),
            nll_sequence: nll.filter(|v| v.is_finite()),
            truth_pruned: nll.map(|v| v.is_infinite()),
            cross_entropy: m.map(|m| m.cross_entropy),
            accuracy: m.map(|m| m.accuracy),
            accuracy_filter: m.map(|m| m.accuracy_filter),
            accuracy_smoother: m.map(|m| m.accuracy_smoother),
            accuracy_map: m.map(|m| m.accuracy_map),
            state_rmse: m.and_then(|m| m.state_rmse),
            wall_time_ms: r.timing.wall_time_ms,
            peak_leaves: r.peak_leaves,
        }
    }
}

fn write_report(out: &Path, system: &SwitchingSystem, r: &RunReport) -> Result<(), CliError> {
    let labels = system.labels();
    match r.operation {
        Operation::Smoother => {
            io::write_marginals(&out.join("marginals.csv"), &labels, &r.marginals, 0)?;
            io::write_modes(
                &out.join("map.csv"),
                &labels,
                &r.map_modes,
                r.map_first_slot,
            )?;
            io::write_trajectory(
                &out.join("trajectory.csv"),
                &r.map_trajectory,
                r.map_first_slot,
            )?;
        }
        Operation::Filter => {
            io::write_marginals(&out.join("marginals.csv"), &labels, &r.filter_marginals, 0)?;
            io::write_modes(&out.join("map.csv"), &labels, &r.filter_modes, 0)?;
            io::write_trajectory(&out.join("trajectory.csv"), &r.filter_means, 0)?;
        }
    }
    io::write_json(&out.join("metrics.json"), &MetricsFile::new(r))
}

fn smooth(a: RunArgs, operation: Operation) -> Result<(), CliError> {
    let s = setup(&a.common)?;
    let report = match &a.input {
        Some(path) => {
            let overrides = Overrides {
                theta: a.tuning.theta,
                lag: a.tuning.lag,
            };
            let smoother = s.config.smoother.build(&overrides)?;
            let (stream, truth) = io::read_input(path, &s.system, &s.config.input)?;
            log::info!(
                "read {} measurements from {}",
                stream.measurements.len() + 1,
                path.display()
            );
            analyze_stream(&s.system, &smoother, operation, &stream, truth.as_ref())?
        }
        None => {
            let cfg = run_config(&s, &a.common, Some(&a.tuning), a.steps, operation)?;
            run_once(&s.system, &cfg)?
        }
    };
    log::info!(
        "{} slots, peak {} leaves, {:.1} ms",
        report.marginals.slots(),
        report.peak_leaves,
        report.timing.wall_time_ms
    );
    write_report(&a.common.out, &s.system, &report)
}

#[derive(Debug, Serialize)]
struct SummaryFile {
    operation: &'static str,
    runs: usize,
    base_seed: u64,
    slots: usize,
    theta: f64,
    mean_accuracy: f64,
    mean_accuracy_filter: f64,
    mean_accuracy_smoother: f64,
    mean_accuracy_map: f64,
    mean_cross_entropy: f64,
    mean_cross_entropy_filter: f64,
    mean_cross_entropy_smoother: f64,
    /// Runs whose true sequence was pruned.
    truth_pruned_runs: usize,
    max_peak_leaves: usize,
}

fn montecarlo(a: MonteCarloArgs) -> Result<(), CliError> {
    let s = setup(&a.common)?;
    let cfg = run_config(&s, &a.common, Some(&a.tuning), a.steps, a.mode.into())?;
    let runs = a.runs.or(s.config.monte_carlo.runs).unwrap_or(100);
    let base_seed = a
        .common
        .seed
        .or(s.config.monte_carlo.seed)
        .or(s.config.simulation.seed)
        .unwrap_or(0);
    let jobs = (a.jobs > 0).then_some(a.jobs);
    let report = run_monte_carlo(&s.system, &cfg, runs, base_seed, jobs)?;

    let out = &a.common.out;
    let labels = s.system.labels();
    io::write_curves(
        &out.join("curves.csv"),
        &labels,
        &[
            ("filter", &report.mean_filter_curve),
            ("smoother", &report.mean_smoother_curve),
            ("truth", &report.truth_frequency),
        ],
    )?;
    let rows = report
        .summaries
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.seed.to_string(),
                io::float(m.accuracy),
                io::float(m.accuracy_filter),
                io::float(m.accuracy_smoother),
                io::float(m.accuracy_map),
                io::float(m.cross_entropy),
                io::float(m.nll_sequence),
                r.peak_leaves.to_string(),
            ]
        })
        .collect();
    io::write_table(
        &out.join("runs.csv"),
        &[
            "seed",
            "accuracy",
            "accuracy_filter",
            "accuracy_smoother",
            "accuracy_map",
            "cross_entropy",
            "nll_sequence",
            "peak_leaves",
        ],
        rows,
    )?;
    let summary = SummaryFile {
        operation: operation_name(report.operation),
        runs: report.runs,
        base_seed: report.base_seed,
        slots: cfg.steps - 1,
        theta: cfg.smoother.prune_threshold,
        mean_accuracy: report.mean_accuracy,
        mean_accuracy_filter: report.mean_accuracy_filter,
        mean_accuracy_smoother: report.mean_accuracy_smoother,
        mean_accuracy_map: report.mean_accuracy_map,
        mean_cross_entropy: report.mean_cross_entropy,
        mean_cross_entropy_filter: report.mean_cross_entropy_filter,
        mean_cross_entropy_smoother: report.mean_cross_entropy_smoother,
        truth_pruned_runs: report
            .summaries
            .iter()
            .filter(|r| r.metrics.nll_sequence.is_infinite())
            .count(),
        max_peak_leaves: report
            .summaries
            .iter()
            .map(|r| r.peak_leaves)
            .max()
            .unwrap_or(0),
    };
    log::info!(
        "{runs} runs: accuracy filter {:.4}, smoother {:.4}",
        summary.mean_accuracy_filter,
        summary.mean_accuracy_smoother
    );
    io::write_json(&out.join("summary.json"), &summary)
}
