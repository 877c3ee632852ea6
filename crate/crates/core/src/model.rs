//! Switching linear-Gaussian systems: per-mode dynamics, the Markov chain
//! over modes, validation, and simulation.
//!
//! Slot convention: the transition `x_k → x_{k+1}` is governed by mode slot
//! `k` and uses the control at slot `k`. A run with `K` states therefore has
//! `K − 1` mode slots.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result, Violation};
use crate::gaussian::NoiseCovariance;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Control input of one mode: fixed, or a per-slot schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Constant(DVector<f64>),
    Schedule(Vec<DVector<f64>>),
}

/// Linear measurement channel `z = H x + v`, `v ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub matrix: DMatrix<f64>,
    pub noise: NoiseCovariance,
}

/// Dynamics of one discrete mode: `x' = F x + B u + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeModel {
    pub label: String,
    pub transition: DMatrix<f64>,
    pub control_matrix: DMatrix<f64>,
    pub control: Control,
    pub process_noise: NoiseCovariance,
    pub observation: Option<Observation>,
}

impl ModeModel {
    /// Uncontrolled mode without a measurement channel.
    pub fn new(
        label: impl Into<String>,
        transition: DMatrix<f64>,
        process_noise: NoiseCovariance,
    ) -> Self {
        let n = transition.nrows();
        Self {
            label: label.into(),
            transition,
            control_matrix: DMatrix::zeros(n, 0),
            control: Control::Constant(DVector::zeros(0)),
            process_noise,
            observation: None,
        }
    }

    pub fn with_control(mut self, control_matrix: DMatrix<f64>, control: Control) -> Self {
        self.control_matrix = control_matrix;
        self.control = control;
        self
    }

    pub fn with_observation(mut self, matrix: DMatrix<f64>, noise: NoiseCovariance) -> Self {
        self.observation = Some(Observation { matrix, noise });
        self
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    /// Control applied at `slot`, before any override.
    pub fn control_at(&self, slot: usize) -> Result<&DVector<f64>> {
        match &self.control {
            Control::Constant(u) => Ok(u),
            Control::Schedule(s) => s.get(slot).ok_or_else(|| {
                Error::Validation(format!(
                    "control schedule of mode '{}' has {} entries, slot {slot} requested",
                    self.label,
                    s.len()
                ))
            }),
        }
    }

    /// `B u` for `slot`, using `u_override` when supplied.
    pub fn control_offset(
        &self,
        slot: usize,
        u_override: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let u = match u_override {
            Some(u) => u,
            None => self.control_at(slot)?,
        };
        if u.len() != self.control_matrix.ncols() {
            return Err(Error::Dimension {
                context: "control vector",
                expected: self.control_matrix.ncols(),
                actual: u.len(),
            });
        }
        Ok(&self.control_matrix * u)
    }

    /// `½ log|Q⁻¹ R⁻¹|` over the floored covariances; the measurement term is
    /// dropped when `with_measurement` is false or the mode has no channel.
    pub fn half_log_info_det(&self, with_measurement: bool) -> f64 {
        let meas = match (&self.observation, with_measurement) {
            (Some(o), true) => o.noise.log_det(),
            _ => 0.0,
        };
        -0.5 * (self.process_noise.log_det() + meas)
    }
}

/// Initial distribution and row-stochastic transition matrix of the mode chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModePrior {
    pub initial: Vec<f64>,
    pub transition: DMatrix<f64>,
}

impl MarkovModePrior {
    pub fn new(initial: Vec<f64>, transition: DMatrix<f64>) -> Self {
        Self {
            initial,
            transition,
        }
    }

    /// Uniform initial distribution; stay with probability `stay`, switch uniformly otherwise.
    pub fn persistent(modes: usize, stay: f64) -> Self {
        let initial = vec![1.0 / modes as f64; modes];
        let transition = if modes == 1 {
            DMatrix::from_element(1, 1, 1.0)
        } else {
            let other = (1.0 - stay) / (modes - 1) as f64;
            DMatrix::from_fn(modes, modes, |i, j| if i == j { stay } else { other })
        };
        Self {
            initial,
            transition,
        }
    }

    pub fn uniform(modes: usize) -> Self {
        Self::persistent(modes, 1.0 / modes as f64)
    }

    pub fn modes(&self) -> usize {
        self.initial.len()
    }

    pub fn log_initial(&self, mode: usize) -> f64 {
        self.initial[mode].ln()
    }

    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.transition[(from, to)].ln()
    }

    fn violations(&self, modes: usize, out: &mut Vec<Violation>) {
        if self.initial.len() != modes {
            out.push(Violation::new(
                "mode_prior.initial",
                format!("has {} entries for {modes} modes", self.initial.len()),
            ));
        } else {
            check_distribution(&self.initial, "mode_prior.initial", out);
        }
        if self.transition.nrows() != modes || self.transition.ncols() != modes {
            out.push(Violation::new(
                "mode_prior.transition",
                format!(
                    "is {}x{}, expected {modes}x{modes}",
                    self.transition.nrows(),
                    self.transition.ncols()
                ),
            ));
            return;
        }
        for i in 0..modes {
            let row: Vec<f64> = self.transition.row(i).iter().copied().collect();
            let path = format!("mode_prior.transition[{i}]");
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                out.push(Violation::new(path, "has a negative or non-finite entry"));
                continue;
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation::new(path, format!("row {i} sums to {sum}")));
            }
        }
    }
}

fn check_distribution(p: &[f64], path: &str, out: &mut Vec<Violation>) {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        out.push(Violation::new(path, "has a negative or non-finite entry"));
        return;
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        out.push(Violation::new(path, format!("sums to {sum}")));
    }
}

/// A switching linear-Gaussian system with a Markov chain over its modes.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchingSystem {
    pub state_dim: usize,
    pub control_dim: usize,
    /// Zero when the system has no measurement channel.
    pub measurement_dim: usize,
    pub modes: Vec<ModeModel>,
    pub mode_prior: MarkovModePrior,
    pub x0_mean: DVector<f64>,
    pub x0_cov: NoiseCovariance,
}

impl SwitchingSystem {
    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.modes.iter().map(|m| m.label.as_str()).collect()
    }

    pub fn mode_index(&self, label: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.label == label)
    }

    pub fn has_measurements(&self) -> bool {
        self.measurement_dim > 0
    }

    /// Every invariant violation, each tagged with the path of the offending field.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let (n, p, m) = (self.state_dim, self.control_dim, self.measurement_dim);
        if n == 0 {
            out.push(Violation::new("state_dim", "must be positive"));
        }
        if self.modes.is_empty() {
            out.push(Violation::new("modes", "at least one mode is required"));
        }
        let mut seen = HashSet::new();
        for (i, mode) in self.modes.iter().enumerate() {
            let at = |field: &str| format!("modes[{i}].{field}");
            if mode.label.is_empty() {
                out.push(Violation::new(at("label"), "is empty"));
            } else if !seen.insert(mode.label.as_str()) {
                out.push(Violation::new(
                    at("label"),
                    format!("duplicate label '{}'", mode.label),
                ));
            }
            let f = &mode.transition;
            if f.nrows() != n || f.ncols() != n {
                out.push(Violation::new(
                    at("transition"),
                    format!("is {}x{}, expected {n}x{n}", f.nrows(), f.ncols()),
                ));
            }
            let b = &mode.control_matrix;
            if b.nrows() != n || b.ncols() != p {
                out.push(Violation::new(
                    at("control_matrix"),
                    format!("is {}x{}, expected {n}x{p}", b.nrows(), b.ncols()),
                ));
            }
            match &mode.control {
                Control::Constant(u) if u.len() != p => out.push(Violation::new(
                    at("control"),
                    format!("has length {}, expected {p}", u.len()),
                )),
                Control::Schedule(s) => {
                    for (k, u) in s.iter().enumerate() {
                        if u.len() != p {
                            out.push(Violation::new(
                                format!("modes[{i}].control[{k}]"),
                                format!("has length {}, expected {p}", u.len()),
                            ));
                        }
                    }
                }
                _ => {}
            }
            if mode.process_noise.dim() != n {
                out.push(Violation::new(
                    at("process_noise"),
                    format!("has dimension {}, expected {n}", mode.process_noise.dim()),
                ));
            }
            match (&mode.observation, m) {
                (None, 0) => {}
                (None, _) => out.push(Violation::new(
                    at("observation"),
                    "missing although the system declares a measurement channel",
                )),
                (Some(_), 0) => out.push(Violation::new(
                    at("observation"),
                    "present although the system declares no measurement channel",
                )),
                (Some(o), _) => {
                    if o.matrix.nrows() != m || o.matrix.ncols() != n {
                        out.push(Violation::new(
                            at("observation.matrix"),
                            format!(
                                "is {}x{}, expected {m}x{n}",
                                o.matrix.nrows(),
                                o.matrix.ncols()
                            ),
                        ));
                    }
                    if o.noise.dim() != m {
                        out.push(Violation::new(
                            at("observation.noise"),
                            format!("has dimension {}, expected {m}", o.noise.dim()),
                        ));
                    }
                }
            }
        }
        self.mode_prior.violations(self.modes.len(), &mut out);
        if self.x0_mean.len() != n {
            out.push(Violation::new(
                "x0_mean",
                format!("has length {}, expected {n}", self.x0_mean.len()),
            ));
        }
        if self.x0_cov.dim() != n {
            out.push(Violation::new(
                "x0_cov",
                format!("has dimension {}, expected {n}", self.x0_cov.dim()),
            ));
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// [`validate`](Self::validate) folded into an [`Error`].
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidSystem)
    }

    /// Copy with every process and measurement covariance multiplied by `factor`.
    pub fn with_noise_scaled(&self, factor: f64) -> Result<Self> {
        let mut out = self.clone();
        for mode in &mut out.modes {
            mode.process_noise = mode.process_noise.scaled(factor)?;
            if let Some(o) = &mut mode.observation {
                o.noise = o.noise.scaled(factor)?;
            }
        }
        Ok(out)
    }
}

/// Where the simulated mode sequence comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeSource {
    /// A fixed sequence of `K − 1` mode indices.
    Given(Vec<usize>),
    /// Drawn from the system's Markov chain.
    Sampled,
}

/// States, measurements and the ground-truth modes of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    /// `K × n`, row `k` is `x_k`.
    pub states: DMatrix<f64>,
    /// `K × m`, row `k` is `z_k`; zero columns without a measurement channel.
    pub measurements: DMatrix<f64>,
    /// `K − 1` entries; `modes[k]` governs `x_k → x_{k+1}`.
    pub modes: Vec<usize>,
    pub seed: u64,
}

impl SimulationTrace {
    pub fn steps(&self) -> usize {
        self.states.nrows()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }

    pub fn measurement(&self, k: usize) -> DVector<f64> {
        self.measurements.row(k).transpose()
    }
}

fn gaussian_draw(rng: &mut ChaCha8Rng, factor: &DMatrix<f64>) -> DVector<f64> {
    let eps = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    factor * eps
}

fn draw_categorical(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    last
}

/// Simulate `steps` states with the system's own controls.
pub fn simulate(
    system: &SwitchingSystem,
    steps: usize,
    modes: &ModeSource,
    seed: u64,
) -> Result<SimulationTrace> {
    simulate_with_controls(system, steps, modes, &[], seed)
}

/// Simulate `steps` states; `control_overrides[k]`, when present, replaces the
/// mode's control at slot `k`.
///
/// Noise is drawn from the covariances as supplied (before flooring). The
/// initial measurement `z_0` uses the channel of mode 0.
pub fn simulate_with_controls(
    system: &SwitchingSystem,
    steps: usize,
    modes: &ModeSource,
    control_overrides: &[Option<DVector<f64>>],
    seed: u64,
) -> Result<SimulationTrace> {
    system.check()?;
    if steps == 0 {
        return Err(Error::Validation(
            "simulation needs at least one step".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequence = match modes {
        ModeSource::Given(seq) => {
            if seq.len() != steps - 1 {
                return Err(Error::Dimension {
                    context: "given mode sequence",
                    expected: steps - 1,
                    actual: seq.len(),
                });
            }
            if let Some(bad) = seq.iter().find(|&&m| m >= system.mode_count()) {
                return Err(Error::Validation(format!("mode index {bad} out of range")));
            }
            seq.clone()
        }
        ModeSource::Sampled => {
            let prior = &system.mode_prior;
            let mut seq = Vec::with_capacity(steps.saturating_sub(1));
            for k in 0..steps - 1 {
                let m = if k == 0 {
                    draw_categorical(&mut rng, prior.initial.iter().copied())
                } else {
                    let prev = seq[k - 1];
                    draw_categorical(&mut rng, prior.transition.row(prev).iter().copied())
                };
                seq.push(m);
            }
            seq
        }
    };

    let n = system.state_dim;
    let md = system.measurement_dim;
    let mut states = DMatrix::zeros(steps, n);
    let mut measurements = DMatrix::zeros(steps, md);
    let mut x = &system.x0_mean + gaussian_draw(&mut rng, system.x0_cov.sample_factor());
    states.row_mut(0).copy_from(&x.transpose());
    let measure = |rng: &mut ChaCha8Rng, mode: &ModeModel, x: &DVector<f64>| {
        mode.observation
            .as_ref()
            .map(|o| &o.matrix * x + gaussian_draw(rng, o.noise.sample_factor()))
    };
    if let Some(z) = measure(&mut rng, &system.modes[0], &x) {
        measurements.row_mut(0).copy_from(&z.transpose());
    }
    for (k, &m) in sequence.iter().enumerate() {
        let mode = &system.modes[m];
        let u = control_overrides.get(k).and_then(Option::as_ref);
        let offset = mode.control_offset(k, u)?;
        x = &mode.transition * &x
            + offset
            + gaussian_draw(&mut rng, mode.process_noise.sample_factor());
        states.row_mut(k + 1).copy_from(&x.transpose());
        if let Some(z) = measure(&mut rng, mode, &x) {
            measurements.row_mut(k + 1).copy_from(&z.transpose());
        }
    }
    Ok(SimulationTrace {
        states,
        measurements,
        modes: sequence,
        seed,
    })
}
