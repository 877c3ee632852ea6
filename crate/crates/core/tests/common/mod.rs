//! Test-only oracles that never touch the square-root machinery: dense
//! joint-Gaussian algebra per mode sequence, and a covariance-form
//! Kalman filter with an RTS backward pass.
#![allow(dead_code)]

use std::f64::consts::PI;

use mhs_core::gaussian::NoiseCovariance;
use mhs_core::model::{Control, MarkovModePrior, ModeModel, SwitchingSystem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, base: f64) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, 1.0);
    let m = &g * g.transpose() * 0.3 + DMatrix::identity(n, n) * base;
    (&m + m.transpose()) * 0.5
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // force an exact unit sum
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    p
}

/// A random switching system whose modes differ in every matrix.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, modes: usize) -> SwitchingSystem {
    let m = rng.random_range(1..=n);
    let p = 1;
    let mode_models = (0..modes)
        .map(|i| {
            let f = DMatrix::identity(n, n) * 0.8 + random_matrix(rng, n, n, 0.4);
            let q = NoiseCovariance::with_default_floor(random_spd(rng, n, 0.2)).unwrap();
            let h = random_matrix(rng, m, n, 1.0) + DMatrix::identity(m, n);
            let r = NoiseCovariance::with_default_floor(random_spd(rng, m, 0.3)).unwrap();
            ModeModel::new(format!("m{i}"), f, q)
                .with_control(
                    random_matrix(rng, n, p, 1.0),
                    Control::Constant(random_vector(rng, p, 1.0)),
                )
                .with_observation(h, r)
        })
        .collect();
    let initial = random_distribution(rng, modes);
    let rows: Vec<Vec<f64>> = (0..modes)
        .map(|_| random_distribution(rng, modes))
        .collect();
    let transition = DMatrix::from_fn(modes, modes, |i, j| rows[i][j]);
    SwitchingSystem {
        state_dim: n,
        control_dim: p,
        measurement_dim: m,
        modes: mode_models,
        mode_prior: MarkovModePrior::new(initial, transition),
        x0_mean: random_vector(rng, n, 1.0),
        x0_cov: NoiseCovariance::with_default_floor(random_spd(rng, n, 0.5)).unwrap(),
    }
}

/// A random single-mode system.
pub fn random_single_mode(rng: &mut ChaCha8Rng, n: usize) -> SwitchingSystem {
    random_system(rng, n, 1)
}

/// Everything the oracle knows about one mode sequence.
#[derive(Debug, Clone)]
pub struct SequenceOracle {
    pub modes: Vec<usize>,
    pub log_evidence: f64,
    pub log_prior: f64,
    pub posterior: f64,
    /// Posterior means of `x_0 ..= x_{K-1}`.
    pub trajectory: Vec<DVector<f64>>,
    pub terminal_covariance: DMatrix<f64>,
}

fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let chol = cov
        .clone()
        .cholesky()
        .expect("evidence covariance must be SPD");
    let d = x - mean;
    let sol = chol.solve(&d);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d.dot(&sol) + log_det + x.len() as f64 * (2.0 * PI).ln())
}

/// State index, `H`, `R` and `z` of one measurement.
type Observed<'a> = (usize, &'a DMatrix<f64>, &'a DMatrix<f64>, &'a DVector<f64>);
/// Dense Gaussian conditioning for one mode sequence.
///
/// `zs[k]` is `z_{k+1}`; `z0` is read through mode 0's channel when present.
pub fn condition_sequence(
    sys: &SwitchingSystem,
    modes: &[usize],
    z0: Option<&DVector<f64>>,
    zs: &[Option<DVector<f64>>],
) -> (f64, Vec<DVector<f64>>, DMatrix<f64>) {
    let n = sys.state_dim;
    let states = modes.len() + 1;
    let dim = n * states;
    let mut mean = DVector::zeros(dim);
    let mut cov = DMatrix::zeros(dim, dim);
    mean.rows_mut(0, n).copy_from(&sys.x0_mean);
    cov.view_mut((0, 0), (n, n))
        .copy_from(sys.x0_cov.effective());
    for (k, &m) in modes.iter().enumerate() {
        let mode = &sys.modes[m];
        let f = &mode.transition;
        let offset = &mode.control_matrix * mode.control_at(k).unwrap();
        let prev = mean.rows(k * n, n).into_owned();
        mean.rows_mut((k + 1) * n, n)
            .copy_from(&(f * prev + offset));
        for j in 0..=k {
            let block = f * cov.view((k * n, j * n), (n, n)).into_owned();
            cov.view_mut(((k + 1) * n, j * n), (n, n)).copy_from(&block);
            cov.view_mut((j * n, (k + 1) * n), (n, n))
                .copy_from(&block.transpose());
        }
        let diag = f * cov.view((k * n, (k + 1) * n), (n, n)).into_owned()
            + mode.process_noise.effective();
        let diag = (&diag + diag.transpose()) * 0.5;
        cov.view_mut(((k + 1) * n, (k + 1) * n), (n, n))
            .copy_from(&diag);
    }

    let mut obs: Vec<Observed> = Vec::new();
    if let Some(z) = z0 {
        let o = sys.modes[0].observation.as_ref().unwrap();
        obs.push((0, &o.matrix, o.noise.effective(), z));
    }
    for (k, z) in zs.iter().enumerate() {
        if let Some(z) = z {
            let o = sys.modes[modes[k]].observation.as_ref().unwrap();
            obs.push((k + 1, &o.matrix, o.noise.effective(), z));
        }
    }
    let zdim: usize = obs.iter().map(|o| o.3.len()).sum();
    let mut h = DMatrix::zeros(zdim, dim);
    let mut r = DMatrix::zeros(zdim, zdim);
    let mut z = DVector::zeros(zdim);
    let mut row = 0;
    for (k, hk, rk, zk) in &obs {
        let m = zk.len();
        h.view_mut((row, k * n), (m, n)).copy_from(*hk);
        r.view_mut((row, row), (m, m)).copy_from(*rk);
        z.rows_mut(row, m).copy_from(*zk);
        row += m;
    }
    if zdim == 0 {
        let traj = (0..states)
            .map(|k| mean.rows(k * n, n).into_owned())
            .collect();
        let last = cov
            .view(((states - 1) * n, (states - 1) * n), (n, n))
            .into_owned();
        return (0.0, traj, last);
    }
    let s = &h * &cov * h.transpose() + r;
    let s = (&s + s.transpose()) * 0.5;
    let predicted = &h * &mean;
    let log_evidence = log_gaussian(&z, &predicted, &s);
    let s_inv = s.clone().cholesky().unwrap().inverse();
    let gain = &cov * h.transpose() * &s_inv;
    let post_mean = &mean + &gain * (&z - predicted);
    let post_cov = &cov - &gain * &h * &cov;
    let traj = (0..states)
        .map(|k| post_mean.rows(k * n, n).into_owned())
        .collect();
    let last = post_cov
        .view(((states - 1) * n, (states - 1) * n), (n, n))
        .into_owned();
    (log_evidence, traj, (&last + last.transpose()) * 0.5)
}

fn all_sequences(modes: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..modes).map(move |m| {
                    let mut p = prefix.clone();
                    p.push(m);
                    p
                })
            })
            .collect();
    }
    out
}

/// Enumerate every mode sequence of length `zs.len()`, in lexicographic order.
pub fn enumerate(
    sys: &SwitchingSystem,
    z0: Option<&DVector<f64>>,
    zs: &[Option<DVector<f64>>],
) -> Vec<SequenceOracle> {
    let prior = &sys.mode_prior;
    let mut out: Vec<SequenceOracle> = all_sequences(sys.mode_count(), zs.len())
        .into_iter()
        .map(|modes| {
            let (log_evidence, trajectory, terminal_covariance) =
                condition_sequence(sys, &modes, z0, zs);
            let mut log_prior = 0.0;
            for (k, &m) in modes.iter().enumerate() {
                log_prior += if k == 0 {
                    prior.initial[m].ln()
                } else {
                    prior.transition[(modes[k - 1], m)].ln()
                };
            }
            SequenceOracle {
                modes,
                log_evidence,
                log_prior,
                posterior: 0.0,
                trajectory,
                terminal_covariance,
            }
        })
        .collect();
    let max = out
        .iter()
        .map(|s| s.log_evidence + s.log_prior)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = out
        .iter()
        .map(|s| (s.log_evidence + s.log_prior - max).exp())
        .sum();
    for s in &mut out {
        s.posterior = (s.log_evidence + s.log_prior - max).exp() / total;
    }
    out
}

/// Oracle mode marginals: `rows[k][m]`.
pub fn oracle_marginals(seqs: &[SequenceOracle], modes: usize) -> Vec<Vec<f64>> {
    let slots = seqs.first().map_or(0, |s| s.modes.len());
    let mut rows = vec![vec![0.0; modes]; slots];
    for s in seqs {
        for (k, &m) in s.modes.iter().enumerate() {
            rows[k][m] += s.posterior;
        }
    }
    rows
}

/// Covariance-form Kalman filter plus RTS backward pass for a single-mode system.
/// Returns smoothed means and the filtered covariance of the last state.
pub fn rts_smoother(
    sys: &SwitchingSystem,
    z0: Option<&DVector<f64>>,
    zs: &[Option<DVector<f64>>],
) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let mode = &sys.modes[0];
    let f = &mode.transition;
    let q = mode.process_noise.effective();
    let obs = mode.observation.as_ref();
    let update = |x: &DVector<f64>, p: &DMatrix<f64>, z: &DVector<f64>| {
        let o = obs.unwrap();
        let h = &o.matrix;
        let s = h * p * h.transpose() + o.noise.effective();
        let k = p * h.transpose() * s.try_inverse().unwrap();
        let x = x + &k * (z - h * x);
        let eye = DMatrix::identity(p.nrows(), p.nrows());
        let p = (&eye - &k * h) * p;
        (x.clone(), (&p + p.transpose()) * 0.5)
    };
    let mut x = sys.x0_mean.clone();
    let mut p = sys.x0_cov.effective().clone();
    if let Some(z) = z0 {
        (x, p) = update(&x, &p, z);
    }
    let mut filtered = vec![(x.clone(), p.clone())];
    let mut predicted = Vec::new();
    for (k, z) in zs.iter().enumerate() {
        let offset = &mode.control_matrix * mode.control_at(k).unwrap();
        let xp = f * &x + offset;
        let pp = f * &p * f.transpose() + q;
        predicted.push((xp.clone(), pp.clone()));
        (x, p) = (xp, pp);
        if let Some(z) = z {
            (x, p) = update(&x, &p, z);
        }
        filtered.push((x.clone(), p.clone()));
    }
    let terminal_cov = p.clone();
    let mut smoothed = vec![x];
    for k in (0..zs.len()).rev() {
        let (xf, pf) = &filtered[k];
        let (xp, pp) = &predicted[k];
        let gain = pf * f.transpose() * pp.clone().try_inverse().unwrap();
        let next = smoothed.last().unwrap();
        smoothed.push(xf + gain * (next - xp));
    }
    smoothed.reverse();
    (smoothed, terminal_cov)
}
