//! Concrete switching systems: two-mode aircraft maneuvering, lateral
//! lane-change dynamics, and a 3D foot-contact toy model.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{NoiseCovariance, DEFAULT_VARIANCE_FLOOR};
use crate::model::{Control, MarkovModePrior, ModeModel, SwitchingSystem};

/// Two-mode aircraft tracking model: constant velocity and coordinated turn.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftParams {
    pub period: f64,
    /// Probability of staying in the current mode for one step.
    pub stay_probability: f64,
    pub process_std: [f64; 4],
    pub measurement_std: [f64; 2],
    /// State order is `[x, ẋ, y, ẏ]`.
    pub x0_mean: [f64; 4],
    pub x0_std: [f64; 4],
    pub cv_control: [f64; 2],
    pub ct_control: [f64; 2],
    pub floor: f64,
}

impl Default for AircraftParams {
    fn default() -> Self {
        Self {
            period: 1.0,
            stay_probability: 0.95,
            process_std: [1.0; 4],
            measurement_std: [1.0; 2],
            x0_mean: [10_000.0, 246.93, 15_000.0, 0.0],
            x0_std: [1.0; 4],
            cv_control: [0.0, 0.0],
            ct_control: [1.5, 1.5],
            floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

/// Aircraft system with default parameters and sample period `period`.
pub fn aircraft(period: f64) -> Result<SwitchingSystem> {
    aircraft_with(&AircraftParams {
        period,
        ..AircraftParams::default()
    })
}

fn squared(std: &[f64]) -> Vec<f64> {
    std.iter().map(|s| s * s).collect()
}

pub fn aircraft_with(p: &AircraftParams) -> Result<SwitchingSystem> {
    let t = p.period;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Validation(format!(
            "sample period must be positive, got {t}"
        )));
    }
    #[rustfmt::skip]
    let f = DMatrix::from_row_slice(4, 4, &[
        1.0, t,   0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, t,
        0.0, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        t * t / 2.0, 0.0,
        t,           0.0,
        0.0,         t * t / 2.0,
        0.0,         t,
    ]);
    #[rustfmt::skip]
    let h = DMatrix::from_row_slice(2, 4, &[
        1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    ]);
    let q = NoiseCovariance::from_diagonal(&squared(&p.process_std), p.floor)?;
    let r = NoiseCovariance::from_diagonal(&squared(&p.measurement_std), p.floor)?;
    let mode = |label: &str, u: [f64; 2]| {
        ModeModel::new(label, f.clone(), q.clone())
            .with_control(b.clone(), Control::Constant(DVector::from_row_slice(&u)))
            .with_observation(h.clone(), r.clone())
    };
    Ok(SwitchingSystem {
        state_dim: 4,
        control_dim: 2,
        measurement_dim: 2,
        modes: vec![mode("CV", p.cv_control), mode("CT", p.ct_control)],
        mode_prior: MarkovModePrior::persistent(2, p.stay_probability),
        x0_mean: DVector::from_row_slice(&p.x0_mean),
        x0_cov: NoiseCovariance::from_diagonal(&squared(&p.x0_std), p.floor)?,
    })
}

/// Lateral lane-change model: a "constant" mode that holds position and
/// zeroes lateral velocity, and a constant-velocity mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneChangeParams {
    pub period: f64,
    pub sigma_constant: f64,
    pub sigma_velocity: f64,
    /// Standard deviation of the lateral position measurement.
    pub sigma_measurement: f64,
    pub stay_probability: f64,
    pub x0_mean: [f64; 2],
    pub x0_std: [f64; 2],
    pub floor: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self {
            period: 0.1,
            sigma_constant: 0.05,
            sigma_velocity: 0.3,
            sigma_measurement: 0.1,
            stay_probability: 0.95,
            x0_mean: [0.0, 0.0],
            x0_std: [0.5, 0.5],
            floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

pub fn lane_change(
    period: f64,
    sigma_constant: f64,
    sigma_velocity: f64,
) -> Result<SwitchingSystem> {
    lane_change_with(&LaneChangeParams {
        period,
        sigma_constant,
        sigma_velocity,
        ..LaneChangeParams::default()
    })
}

pub fn lane_change_with(p: &LaneChangeParams) -> Result<SwitchingSystem> {
    for (name, v) in [
        ("period", p.period),
        ("sigma_constant", p.sigma_constant),
        ("sigma_velocity", p.sigma_velocity),
        ("sigma_measurement", p.sigma_measurement),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Validation(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    let t = p.period;
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let r = NoiseCovariance::from_diagonal(&[p.sigma_measurement.powi(2)], p.floor)?;
    let hold = ModeModel::new(
        "constant",
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
        NoiseCovariance::from_diagonal(&[p.sigma_constant.powi(2), 0.0], p.floor)?,
    )
    .with_observation(h.clone(), r.clone());
    let drift = ModeModel::new(
        "constant-velocity",
        DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]),
        NoiseCovariance::from_diagonal(&[0.0, p.sigma_velocity.powi(2)], p.floor)?,
    )
    .with_observation(h, r);
    Ok(SwitchingSystem {
        state_dim: 2,
        control_dim: 0,
        measurement_dim: 1,
        modes: vec![hold, drift],
        mode_prior: MarkovModePrior::persistent(2, p.stay_probability),
        x0_mean: DVector::from_row_slice(&p.x0_mean),
        x0_cov: NoiseCovariance::from_diagonal(&squared(&p.x0_std), p.floor)?,
    })
}

/// Parameters of the foot-contact toy model. States are foot positions in
/// the odometry frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactParams {
    /// Mean foot displacement per step while in contact.
    pub contact_mean: DVector<f64>,
    pub contact_cov: DMatrix<f64>,
    /// Mean foot displacement per step in the base frame while swinging.
    pub swing_mean_base: DVector<f64>,
    pub swing_cov: DMatrix<f64>,
    /// Base position `t_k` for every timestep.
    pub base_translation: Vec<DVector<f64>>,
    /// Base orientation `R_k` (base to odometry) for every timestep.
    pub base_rotation: Vec<DMatrix<f64>>,
    /// Covariance of the kinematic foot-position readings.
    pub measurement_cov: DMatrix<f64>,
    pub stay_probability: f64,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
    pub floor: f64,
}

impl ContactParams {
    /// A base walking forward at constant speed while yawing slowly, sampled
    /// over `steps` timesteps.
    pub fn synthetic(steps: usize) -> Self {
        let speed = 0.02;
        let yaw_rate: f64 = 0.01;
        let base_rotation: Vec<_> = (0..steps)
            .map(|k| {
                let (s, c) = (yaw_rate * k as f64).sin_cos();
                DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
            })
            .collect();
        let mut base_translation = Vec::with_capacity(steps);
        let mut pos = DVector::zeros(3);
        for (k, rot) in base_rotation.iter().enumerate() {
            if k > 0 {
                pos += rot.column(0) * speed;
            }
            base_translation.push(pos.clone());
        }
        Self {
            contact_mean: DVector::zeros(3),
            contact_cov: DMatrix::identity(3, 3) * 1e-6,
            swing_mean_base: DVector::from_vec(vec![0.03, 0.0, 0.0]),
            swing_cov: DMatrix::identity(3, 3) * 1e-4,
            base_translation,
            base_rotation,
            measurement_cov: DMatrix::identity(3, 3) * 1e-4,
            stay_probability: 0.8,
            x0_mean: DVector::from_vec(vec![0.3, 0.2, 0.0]),
            x0_cov: DMatrix::identity(3, 3) * 1e-4,
            floor: DEFAULT_VARIANCE_FLOOR,
        }
    }
}

fn strictly_positive_definite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != 3 || m.ncols() != 3 {
        return Err(Error::Validation(format!("{name} must be 3x3")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Validation(format!(
            "{name} is not positive definite"
        )));
    }
    Ok(())
}

/// Two-mode foot model: `contact` keeps the foot near-stationary, `swing`
/// moves it rigidly with the base.
pub fn contact_toy(p: &ContactParams) -> Result<SwitchingSystem> {
    strictly_positive_definite("contact_cov", &p.contact_cov)?;
    strictly_positive_definite("swing_cov", &p.swing_cov)?;
    strictly_positive_definite("measurement_cov", &p.measurement_cov)?;
    strictly_positive_definite("x0_cov", &p.x0_cov)?;
    if p.base_translation.len() != p.base_rotation.len() || p.base_translation.is_empty() {
        return Err(Error::Validation(
            "base translation and rotation schedules must be non-empty and equally long".into(),
        ));
    }
    for v in [&p.contact_mean, &p.swing_mean_base, &p.x0_mean] {
        if v.len() != 3 {
            return Err(Error::Validation(
                "contact model vectors must have length 3".into(),
            ));
        }
    }
    let swing_offsets = p
        .base_translation
        .windows(2)
        .zip(&p.base_rotation[1..])
        .map(|(t, rot)| &t[1] - &t[0] + rot * &p.swing_mean_base)
        .collect();
    let eye = DMatrix::identity(3, 3);
    let r = NoiseCovariance::new(p.measurement_cov.clone(), p.floor)?;
    let contact = ModeModel::new(
        "contact",
        eye.clone(),
        NoiseCovariance::new(p.contact_cov.clone(), p.floor)?,
    )
    .with_control(eye.clone(), Control::Constant(p.contact_mean.clone()))
    .with_observation(eye.clone(), r.clone());
    let swing = ModeModel::new(
        "swing",
        eye.clone(),
        NoiseCovariance::new(p.swing_cov.clone(), p.floor)?,
    )
    .with_control(eye.clone(), Control::Schedule(swing_offsets))
    .with_observation(eye, r);
    Ok(SwitchingSystem {
        state_dim: 3,
        control_dim: 3,
        measurement_dim: 3,
        modes: vec![contact, swing],
        mode_prior: MarkovModePrior::persistent(2, p.stay_probability),
        x0_mean: p.x0_mean.clone(),
        x0_cov: NoiseCovariance::new(p.x0_cov.clone(), p.floor)?,
    })
}
