//! JSON experiment configuration.
//!
//! Matrices are nested arrays in row-major order. Unknown keys are rejected
//! and every error carries the path of the offending field.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use mhs_core::gaussian::{NoiseCovariance, DEFAULT_VARIANCE_FLOOR};
use mhs_core::harness::{phase_schedule, Phase, Schedule};
use mhs_core::model::{Control, MarkovModePrior, ModeModel, SwitchingSystem};
use mhs_core::scenarios::{
    aircraft_with, contact_toy, lane_change_with, AircraftParams, ContactParams, LaneChangeParams,
};
use mhs_core::smoother::{EvidenceRule, Marginalization, SmootherConfig};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSpec,
    #[serde(default)]
    pub smoother: SmootherSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub input: InputSpec,
    #[serde(default)]
    pub monte_carlo: MonteCarloSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Aircraft(AircraftSpec),
    LaneChange(LaneChangeSpec),
    ContactToy(ContactSpec),
    Explicit(ExplicitSystem),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftSpec {
    pub period: Option<f64>,
    pub stay_probability: Option<f64>,
    pub process_std: Option<[f64; 4]>,
    pub measurement_std: Option<[f64; 2]>,
    pub x0_mean: Option<[f64; 4]>,
    pub x0_std: Option<[f64; 4]>,
    pub cv_control: Option<[f64; 2]>,
    pub ct_control: Option<[f64; 2]>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChangeSpec {
    pub period: Option<f64>,
    pub sigma_constant: Option<f64>,
    pub sigma_velocity: Option<f64>,
    pub sigma_measurement: Option<f64>,
    pub stay_probability: Option<f64>,
    pub x0_mean: Option<[f64; 2]>,
    pub x0_std: Option<[f64; 2]>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    /// Length of the synthetic base-motion schedule.
    pub steps: usize,
    pub stay_probability: Option<f64>,
    pub contact_mean: Option<Vec<f64>>,
    pub contact_cov: Option<Vec<Vec<f64>>>,
    pub swing_mean_base: Option<Vec<f64>>,
    pub swing_cov: Option<Vec<Vec<f64>>>,
    pub measurement_cov: Option<Vec<Vec<f64>>>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSystem {
    pub state_dim: usize,
    #[serde(default)]
    pub control_dim: usize,
    #[serde(default)]
    pub measurement_dim: usize,
    pub modes: Vec<ModeSpec>,
    pub mode_prior: PriorSpec,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Vec<Vec<f64>>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub label: String,
    pub transition: Vec<Vec<f64>>,
    pub control_matrix: Option<Vec<Vec<f64>>>,
    pub control: Option<Vec<f64>>,
    /// Per-slot controls; replaces `control`.
    pub control_schedule: Option<Vec<Vec<f64>>>,
    pub process_noise: Vec<Vec<f64>>,
    pub observation: Option<ObservationSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub matrix: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MarginalizationSpec {
    Keep,
    FixedLag,
    BeforeLastFork,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceSpec {
    Exact,
    FragmentOnly,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmootherSpec {
    pub theta: Option<f64>,
    /// Fixed lag `N`; implies `fixed_lag` marginalization.
    pub lag: Option<usize>,
    pub marginalization: Option<MarginalizationSpec>,
    pub leaf_cap: Option<usize>,
    pub include_mode_constant: Option<bool>,
    pub evidence: Option<EvidenceSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub label: String,
    pub duration: usize,
    pub control: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Number of states `K`; defaults to the phase total plus one, else 100.
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub phases: Option<Vec<PhaseSpec>>,
    /// Multiplies every process and measurement covariance.
    pub noise_scale: Option<f64>,
    /// Fold `z_0` into the prior (default true).
    pub initial_measurement: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    /// Columns holding `z`, in order; defaults to `z0..z{m-1}`.
    pub measurement_columns: Option<Vec<String>>,
    /// Column with ground-truth mode indices or labels; defaults to `mode` if present.
    pub mode_column: Option<String>,
    pub initial_measurement: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
}

pub fn load(path: &Path) -> Result<Config, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Config, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("config error at `{}`: {}", e.path(), e.inner())))
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "config error at `{path}[{i}]`: row has {} entries, expected {ncols}",
            r.len()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn covariance(path: &str, rows: &[Vec<f64>], floor: f64) -> Result<NoiseCovariance, CliError> {
    NoiseCovariance::new(matrix(path, rows)?, floor)
        .map_err(|e| CliError::Config(format!("config error at `{path}`: {e}")))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn core(path: &str) -> impl Fn(mhs_core::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("config error at `{path}`: {e}"))
}

impl SystemSpec {
    pub fn build(&self) -> Result<SwitchingSystem, CliError> {
        let system = match self {
            SystemSpec::Aircraft(a) => {
                let d = AircraftParams::default();
                aircraft_with(&AircraftParams {
                    period: a.period.unwrap_or(d.period),
                    stay_probability: a.stay_probability.unwrap_or(d.stay_probability),
                    process_std: a.process_std.unwrap_or(d.process_std),
                    measurement_std: a.measurement_std.unwrap_or(d.measurement_std),
                    x0_mean: a.x0_mean.unwrap_or(d.x0_mean),
                    x0_std: a.x0_std.unwrap_or(d.x0_std),
                    cv_control: a.cv_control.unwrap_or(d.cv_control),
                    ct_control: a.ct_control.unwrap_or(d.ct_control),
                    floor: a.floor.unwrap_or(d.floor),
                })
                .map_err(core("system.aircraft"))?
            }
            SystemSpec::LaneChange(l) => {
                let d = LaneChangeParams::default();
                lane_change_with(&LaneChangeParams {
                    period: l.period.unwrap_or(d.period),
                    sigma_constant: l.sigma_constant.unwrap_or(d.sigma_constant),
                    sigma_velocity: l.sigma_velocity.unwrap_or(d.sigma_velocity),
                    sigma_measurement: l.sigma_measurement.unwrap_or(d.sigma_measurement),
                    stay_probability: l.stay_probability.unwrap_or(d.stay_probability),
                    x0_mean: l.x0_mean.unwrap_or(d.x0_mean),
                    x0_std: l.x0_std.unwrap_or(d.x0_std),
                    floor: l.floor.unwrap_or(d.floor),
                })
                .map_err(core("system.lane_change"))?
            }
            SystemSpec::ContactToy(c) => {
                let mut p = ContactParams::synthetic(c.steps);
                if let Some(v) = c.stay_probability {
                    p.stay_probability = v;
                }
                if let Some(v) = &c.contact_mean {
                    p.contact_mean = vector(v);
                }
                if let Some(v) = &c.swing_mean_base {
                    p.swing_mean_base = vector(v);
                }
                if let Some(m) = &c.contact_cov {
                    p.contact_cov = matrix("system.contact_toy.contact_cov", m)?;
                }
                if let Some(m) = &c.swing_cov {
                    p.swing_cov = matrix("system.contact_toy.swing_cov", m)?;
                }
                if let Some(m) = &c.measurement_cov {
                    p.measurement_cov = matrix("system.contact_toy.measurement_cov", m)?;
                }
                if let Some(f) = c.floor {
                    p.floor = f;
                }
                contact_toy(&p).map_err(core("system.contact_toy"))?
            }
            SystemSpec::Explicit(e) => e.build()?,
        };
        if let Err(violations) = system.validate() {
            let lines: Vec<String> = violations.iter().map(|v| format!("  system.{v}")).collect();
            return Err(CliError::Config(format!(
                "invalid system:\n{}",
                lines.join("\n")
            )));
        }
        Ok(system)
    }
}

impl ExplicitSystem {
    fn build(&self) -> Result<SwitchingSystem, CliError> {
        let floor = self.floor.unwrap_or(DEFAULT_VARIANCE_FLOOR);
        let n = self.state_dim;
        let mut modes = Vec::with_capacity(self.modes.len());
        for (i, m) in self.modes.iter().enumerate() {
            let at = |field: &str| format!("system.explicit.modes[{i}].{field}");
            let mut mode = ModeModel::new(
                m.label.clone(),
                matrix(&at("transition"), &m.transition)?,
                covariance(&at("process_noise"), &m.process_noise, floor)?,
            );
            let control = match (&m.control, &m.control_schedule) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Config(format!(
                        "config error at `{}`: give either control or control_schedule",
                        at("control")
                    )))
                }
                (Some(u), None) => Some(Control::Constant(vector(u))),
                (None, Some(s)) => Some(Control::Schedule(s.iter().map(|u| vector(u)).collect())),
                (None, None) => None,
            };
            match (&m.control_matrix, control) {
                (Some(b), Some(u)) => {
                    mode = mode.with_control(matrix(&at("control_matrix"), b)?, u)
                }
                (Some(b), None) => {
                    let b = matrix(&at("control_matrix"), b)?;
                    let p = b.ncols();
                    mode = mode.with_control(b, Control::Constant(DVector::zeros(p)));
                }
                (None, Some(_)) => {
                    return Err(CliError::Config(format!(
                        "config error at `{}`: control given without control_matrix",
                        at("control")
                    )))
                }
                (None, None) => {
                    mode = mode.with_control(
                        DMatrix::zeros(n, self.control_dim),
                        Control::Constant(DVector::zeros(self.control_dim)),
                    )
                }
            }
            if let Some(o) = &m.observation {
                mode = mode.with_observation(
                    matrix(&at("observation.matrix"), &o.matrix)?,
                    covariance(&at("observation.noise"), &o.noise, floor)?,
                );
            }
            modes.push(mode);
        }
        Ok(SwitchingSystem {
            state_dim: n,
            control_dim: self.control_dim,
            measurement_dim: self.measurement_dim,
            modes,
            mode_prior: MarkovModePrior::new(
                self.mode_prior.initial.clone(),
                matrix(
                    "system.explicit.mode_prior.transition",
                    &self.mode_prior.transition,
                )?,
            ),
            x0_mean: vector(&self.x0_mean),
            x0_cov: covariance("system.explicit.x0_cov", &self.x0_cov, floor)?,
        })
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub theta: Option<f64>,
    pub lag: Option<usize>,
}

/// Threshold used when neither the flag nor the file sets one.
pub const DEFAULT_THETA: f64 = 0.01;

impl SmootherSpec {
    pub fn build(&self, overrides: &Overrides) -> Result<SmootherConfig, CliError> {
        let lag = overrides.lag.or(self.lag);
        let marginalization = match (self.marginalization, lag) {
            (Some(MarginalizationSpec::Keep), None) | (None, None) => Marginalization::Keep,
            (Some(MarginalizationSpec::FixedLag) | None, Some(n)) => Marginalization::FixedLag(n),
            (Some(MarginalizationSpec::FixedLag), None) => return Err(CliError::Config(
                "config error at `smoother.marginalization`: fixed_lag needs smoother.lag or --lag"
                    .into(),
            )),
            (Some(MarginalizationSpec::BeforeLastFork), None) => Marginalization::BeforeLastFork,
            (Some(other), Some(_)) => {
                return Err(CliError::Config(format!(
                    "config error at `smoother.lag`: a lag conflicts with {other:?} marginalization"
                )))
            }
        };
        let defaults = SmootherConfig::default();
        Ok(SmootherConfig {
            prune_threshold: overrides.theta.or(self.theta).unwrap_or(DEFAULT_THETA),
            marginalization,
            leaf_cap: self.leaf_cap,
            include_mode_constant: self
                .include_mode_constant
                .unwrap_or(defaults.include_mode_constant),
            evidence: match self.evidence {
                Some(EvidenceSpec::FragmentOnly) => EvidenceRule::FragmentOnly,
                Some(EvidenceSpec::Exact) | None => EvidenceRule::Exact,
            },
        })
    }
}

impl SimulationSpec {
    pub fn schedule(&self, system: &SwitchingSystem) -> Result<Option<Schedule>, CliError> {
        let Some(phases) = &self.phases else {
            return Ok(None);
        };
        let phases: Vec<Phase> = phases
            .iter()
            .map(|p| Phase {
                label: p.label.clone(),
                duration: p.duration,
                control: p.control.as_deref().map(vector),
            })
            .collect();
        phase_schedule(system, &phases)
            .map(Some)
            .map_err(|e| CliError::Config(format!("config error at `simulation.phases`: {e}")))
    }

    /// Number of states, reconciled with the phase schedule.
    pub fn steps(&self, schedule: Option<&Schedule>) -> Result<usize, CliError> {
        match (self.steps, schedule) {
            (Some(k), Some(s)) if k != s.slots() + 1 => Err(CliError::Config(format!(
                "config error at `simulation.steps`: {k} states but the phases cover {} slots",
                s.slots()
            ))),
            (Some(k), _) => Ok(k),
            (None, Some(s)) => Ok(s.slots() + 1),
            (None, None) => Ok(100),
        }
    }

    /// The configured system with the noise scale applied.
    pub fn scaled(&self, system: SwitchingSystem) -> Result<SwitchingSystem, CliError> {
        match self.noise_scale {
            Some(f) => system
                .with_noise_scaled(f)
                .map_err(core("simulation.noise_scale")),
            None => Ok(system),
        }
    }
}
