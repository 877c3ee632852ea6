//! Simulation-driven experiments: single runs, seeded Monte Carlo batteries
//! and flight-phase schedules.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::metrics::{accuracy, cross_entropy, nll_sequence, sequence_agreement, GroundTruth};
use crate::model::{simulate_with_controls, ModeSource, SimulationTrace, SwitchingSystem};
use crate::smoother::{MapEstimate, ModeMarginals, MultiHypothesisSmoother, SmootherConfig};

/// Which estimate a run reports as its headline result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Operation {
    /// Final smoothed marginals and the MAP trajectory.
    #[default]
    Smoother,
    /// The newest-slot estimate recorded after every step.
    Filter,
}

/// One segment of a piecewise-constant mode schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub label: String,
    pub duration: usize,
    /// Replaces the mode's own control for every slot of the phase.
    pub control: Option<DVector<f64>>,
}

impl Phase {
    pub fn new(label: impl Into<String>, duration: usize) -> Self {
        Self {
            label: label.into(),
            duration,
            control: None,
        }
    }

    pub fn with_control(mut self, control: DVector<f64>) -> Self {
        self.control = Some(control);
        self
    }
}

/// Per-slot ground-truth modes and control overrides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    pub modes: Vec<usize>,
    pub controls: Vec<Option<DVector<f64>>>,
}

impl Schedule {
    /// Number of mode slots; a run over this schedule has `slots() + 1` states.
    pub fn slots(&self) -> usize {
        self.modes.len()
    }
}

/// Expand phases into a per-slot schedule.
pub fn phase_schedule(system: &SwitchingSystem, phases: &[Phase]) -> Result<Schedule> {
    let mut out = Schedule::default();
    for (i, phase) in phases.iter().enumerate() {
        let mode = system.mode_index(&phase.label).ok_or_else(|| {
            Error::Validation(format!("phases[{i}]: unknown mode label {:?}", phase.label))
        })?;
        if phase.duration == 0 {
            return Err(Error::Validation(format!(
                "phases[{i}]: duration must be at least 1"
            )));
        }
        if let Some(u) = &phase.control {
            check_dim("phase control", system.control_dim, u.len())?;
        }
        out.modes.extend(std::iter::repeat_n(mode, phase.duration));
        out.controls
            .extend(std::iter::repeat_n(phase.control.clone(), phase.duration));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Number of states `K`.
    pub steps: usize,
    pub smoother: SmootherConfig,
    pub operation: Operation,
    pub seed: u64,
    /// Fixed ground truth; sampled from the Markov chain when absent.
    pub schedule: Option<Schedule>,
    /// Fold `z_0` into the prior before the first step.
    pub use_initial_measurement: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            smoother: SmootherConfig::default(),
            operation: Operation::Smoother,
            seed: 0,
            schedule: None,
            use_initial_measurement: true,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Validation(format!(
                "a run needs at least 2 states, got {}",
                self.steps
            )));
        }
        if let Some(s) = &self.schedule {
            check_dim("schedule slots", self.steps - 1, s.slots())?;
        }
        Ok(())
    }
}

/// Measurements and controls fed to the smoother, one entry per step after `z_0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementStream {
    pub initial: Option<DVector<f64>>,
    /// `measurements[k]` is `z_{k+1}`.
    pub measurements: Vec<Option<DVector<f64>>>,
    /// `controls[k]` overrides the control of slot `k`.
    pub controls: Vec<Option<DVector<f64>>>,
}

impl MeasurementStream {
    pub fn from_trace(
        trace: &SimulationTrace,
        controls: &[Option<DVector<f64>>],
        initial: bool,
    ) -> Self {
        Self {
            initial: initial.then(|| trace.measurement(0)),
            measurements: (1..trace.steps())
                .map(|k| Some(trace.measurement(k)))
                .collect(),
            controls: controls.to_vec(),
        }
    }
}

/// Everything recorded while running the smoother over a stream.
#[derive(Debug, Clone)]
pub struct Pass {
    pub smoother: MultiHypothesisSmoother,
    /// Newest-slot distribution after each step.
    pub filter_rows: ModeMarginals,
    /// Mixture mean of the newest state after each step, starting at `x_0`.
    pub filter_means: Vec<DVector<f64>>,
    pub peak_leaves: usize,
}

/// Run the smoother over a measurement stream.
pub fn smooth_stream(
    system: &SwitchingSystem,
    config: &SmootherConfig,
    stream: &MeasurementStream,
) -> Result<Pass> {
    let mut smoother = match &stream.initial {
        Some(z) => {
            MultiHypothesisSmoother::with_initial_measurement(system.clone(), config.clone(), z)?
        }
        None => MultiHypothesisSmoother::new(system.clone(), config.clone())?,
    };
    let mut rows = Vec::with_capacity(stream.measurements.len());
    let mut means = vec![smoother.filter_estimate().mean];
    let mut peak = smoother.leaves().len();
    for (k, z) in stream.measurements.iter().enumerate() {
        let u = stream.controls.get(k).and_then(Option::as_ref);
        let report = smoother.step(z.as_ref(), u)?;
        peak = peak.max(report.leaves_after_extend);
        let estimate = smoother.filter_estimate();
        rows.push(estimate.mode_probabilities);
        means.push(estimate.mean);
    }
    Ok(Pass {
        smoother,
        filter_rows: ModeMarginals { rows },
        filter_means: means,
        peak_leaves: peak,
    })
}

/// Scores of one run against the simulated truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Headline accuracy for the configured [`Operation`].
    pub accuracy: f64,
    pub accuracy_filter: f64,
    pub accuracy_smoother: f64,
    /// Agreement of the MAP sequence with the truth on the live slots.
    pub accuracy_map: f64,
    pub cross_entropy: f64,
    pub cross_entropy_filter: f64,
    pub cross_entropy_smoother: f64,
    pub nll_sequence: f64,
    /// Root-mean-square error of the reported trajectory, when true states are known.
    pub state_rmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Simulation seed; `None` for external data.
    pub seed: Option<u64>,
    pub operation: Operation,
    pub truth: Option<Vec<usize>>,
    /// Final smoothed marginals, one row per slot.
    pub marginals: ModeMarginals,
    /// Newest-slot marginals recorded online, one row per slot.
    pub filter_marginals: ModeMarginals,
    pub filter_modes: Vec<usize>,
    /// First slot covered by `map_modes` and first state of `map_trajectory`.
    pub map_first_slot: usize,
    pub map_modes: Vec<usize>,
    pub map_trajectory: Vec<DVector<f64>>,
    pub filter_means: Vec<DVector<f64>>,
    /// Present when the truth is known.
    pub metrics: Option<RunMetrics>,
    pub peak_leaves: usize,
    /// Kept apart so reports can be compared for determinism.
    pub timing: Timing,
}

fn rmse(estimates: &[DVector<f64>], states: &[DVector<f64>], first: usize) -> Option<f64> {
    if estimates.is_empty() || first + estimates.len() > states.len() {
        return None;
    }
    let total: f64 = estimates
        .iter()
        .zip(&states[first..])
        .map(|(x, t)| (x - t).norm_squared())
        .sum();
    Some((total / estimates.len() as f64).sqrt())
}

/// Known ground truth for a measurement stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// One mode per slot.
    pub modes: Vec<usize>,
    /// States `x_0 ..= x_{K-1}`, when known.
    pub states: Option<Vec<DVector<f64>>>,
}

impl Truth {
    pub fn from_trace(trace: &SimulationTrace) -> Self {
        Self {
            modes: trace.modes.clone(),
            states: Some((0..trace.steps()).map(|k| trace.state(k)).collect()),
        }
    }
}

fn score(
    pass: &Pass,
    marginals: &ModeMarginals,
    map: &MapEstimate,
    operation: Operation,
    truth: &Truth,
) -> Result<RunMetrics> {
    let gt = GroundTruth(truth.modes.clone());
    let accuracy_filter = accuracy(&pass.filter_rows, &gt)?;
    let accuracy_smoother = accuracy(marginals, &gt)?;
    let cross_entropy_filter = cross_entropy(&pass.filter_rows, &gt)?;
    let cross_entropy_smoother = cross_entropy(marginals, &gt)?;
    let live = GroundTruth(gt.0[map.first_slot..].to_vec());
    let states = truth.states.as_deref();
    let (accuracy, cross_entropy, state_rmse) = match operation {
        Operation::Smoother => (
            accuracy_smoother,
            cross_entropy_smoother,
            states.and_then(|s| rmse(&map.trajectory, s, map.first_slot)),
        ),
        Operation::Filter => (
            accuracy_filter,
            cross_entropy_filter,
            states.and_then(|s| rmse(&pass.filter_means, s, 0)),
        ),
    };
    Ok(RunMetrics {
        accuracy,
        accuracy_filter,
        accuracy_smoother,
        accuracy_map: sequence_agreement(&map.modes, &live)?,
        cross_entropy,
        cross_entropy_filter,
        cross_entropy_smoother,
        nll_sequence: nll_sequence(&pass.smoother, &gt)?,
        state_rmse,
    })
}

/// Run the smoother over a stream and score it when the truth is known.
pub fn analyze_stream(
    system: &SwitchingSystem,
    smoother: &SmootherConfig,
    operation: Operation,
    stream: &MeasurementStream,
    truth: Option<&Truth>,
) -> Result<RunReport> {
    let start = Instant::now();
    let pass = smooth_stream(system, smoother, stream)?;
    let marginals = pass.smoother.mode_marginals();
    let map = pass.smoother.map_estimate()?;
    let metrics = truth
        .map(|t| score(&pass, &marginals, &map, operation, t))
        .transpose()?;
    Ok(RunReport {
        seed: None,
        operation,
        truth: truth.map(|t| t.modes.clone()),
        filter_modes: pass.filter_rows.argmax(),
        marginals,
        filter_marginals: pass.filter_rows,
        map_first_slot: map.first_slot,
        map_modes: map.modes,
        map_trajectory: map.trajectory,
        filter_means: pass.filter_means,
        metrics,
        peak_leaves: pass.peak_leaves,
        timing: Timing {
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Simulate one seeded run and score the smoother against it.
pub fn run_once(system: &SwitchingSystem, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    let trace = simulate_run(system, config)?;
    // schedule controls shape the truth only; the smoother keeps its own models
    let stream = MeasurementStream::from_trace(&trace, &[], config.use_initial_measurement);
    let mut report = analyze_stream(
        system,
        &config.smoother,
        config.operation,
        &stream,
        Some(&Truth::from_trace(&trace)),
    )?;
    report.seed = Some(config.seed);
    report.timing.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}

/// The simulated trace behind [`run_once`].
pub fn simulate_run(system: &SwitchingSystem, config: &RunConfig) -> Result<SimulationTrace> {
    config.validate()?;
    let (source, controls) = match &config.schedule {
        Some(s) => (ModeSource::Given(s.modes.clone()), s.controls.clone()),
        None => (ModeSource::Sampled, Vec::new()),
    };
    simulate_with_controls(system, config.steps, &source, &controls, config.seed)
}

/// Per-run figures kept in a Monte Carlo report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub peak_leaves: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub base_seed: u64,
    pub operation: Operation,
    /// Pointwise mean of the per-run filter marginals.
    pub mean_filter_curve: ModeMarginals,
    /// Pointwise mean of the per-run smoothed marginals.
    pub mean_smoother_curve: ModeMarginals,
    /// Fraction of runs in each true mode per slot.
    pub truth_frequency: ModeMarginals,
    pub mean_accuracy: f64,
    pub mean_accuracy_filter: f64,
    pub mean_accuracy_smoother: f64,
    pub mean_accuracy_map: f64,
    pub mean_cross_entropy: f64,
    pub mean_cross_entropy_filter: f64,
    pub mean_cross_entropy_smoother: f64,
    pub summaries: Vec<RunSummary>,
}

fn mean_rows<'a>(curves: impl Iterator<Item = &'a ModeMarginals>, count: usize) -> ModeMarginals {
    let mut acc: Option<Vec<Vec<f64>>> = None;
    for c in curves {
        match &mut acc {
            None => acc = Some(c.rows.clone()),
            Some(rows) => {
                for (a, b) in rows.iter_mut().zip(&c.rows) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let mut rows = acc.unwrap_or_default();
    rows.iter_mut().flatten().for_each(|v| *v /= count as f64);
    ModeMarginals { rows }
}

/// Run `runs` seeded simulations with seeds `base_seed + i`.
///
/// Runs execute on up to `jobs` threads (all available when `None`); results
/// are collected in seed order so the report does not depend on scheduling.
pub fn run_monte_carlo(
    system: &SwitchingSystem,
    config: &RunConfig,
    runs: usize,
    base_seed: u64,
    jobs: Option<usize>,
) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::Validation("runs must be at least 1".into()));
    }
    if jobs == Some(0) {
        return Err(Error::Validation("jobs must be at least 1".into()));
    }
    config.validate()?;
    system.check()?;
    let one = |i: usize| {
        let cfg = RunConfig {
            seed: base_seed.wrapping_add(i as u64),
            ..config.clone()
        };
        run_once(system, &cfg)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    let reports: Vec<RunReport> =
        pool.install(|| (0..runs).into_par_iter().map(one).collect::<Result<_>>())?;

    let modes = system.mode_count();
    let slots = config.steps - 1;
    let mut truth_rows = vec![vec![0.0; modes]; slots];
    let scored: Vec<&RunMetrics> = reports
        .iter()
        .map(|r| r.metrics.as_ref().expect("simulated runs are scored"))
        .collect();
    for r in &reports {
        for (row, &m) in truth_rows.iter_mut().zip(r.truth.iter().flatten()) {
            row[m] += 1.0 / runs as f64;
        }
    }
    let mean = |f: fn(&RunMetrics) -> f64| scored.iter().map(|m| f(m)).sum::<f64>() / runs as f64;
    Ok(MonteCarloReport {
        runs,
        base_seed,
        operation: config.operation,
        mean_filter_curve: mean_rows(reports.iter().map(|r| &r.filter_marginals), runs),
        mean_smoother_curve: mean_rows(reports.iter().map(|r| &r.marginals), runs),
        truth_frequency: ModeMarginals { rows: truth_rows },
        mean_accuracy: mean(|m| m.accuracy),
        mean_accuracy_filter: mean(|m| m.accuracy_filter),
        mean_accuracy_smoother: mean(|m| m.accuracy_smoother),
        mean_accuracy_map: mean(|m| m.accuracy_map),
        mean_cross_entropy: mean(|m| m.cross_entropy),
        mean_cross_entropy_filter: mean(|m| m.cross_entropy_filter),
        mean_cross_entropy_smoother: mean(|m| m.cross_entropy_smoother),
        summaries: reports
            .iter()
            .zip(scored)
            .map(|(r, m)| RunSummary {
                seed: r.seed.expect("simulated runs are seeded"),
                metrics: m.clone(),
                peak_leaves: r.peak_leaves,
            })
            .collect(),
    })
}
