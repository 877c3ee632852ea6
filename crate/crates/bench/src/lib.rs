//! Fixtures shared by the benchmarks.

use nalgebra::{DMatrix, DVector};

use mhs_core::gaussian::{GaussianDensity, Key, NoiseCovariance, QuadraticFactor};
use mhs_core::harness::{simulate_run, MeasurementStream, RunConfig};
use mhs_core::model::SwitchingSystem;
use mhs_core::scenarios::aircraft;

/// The two-mode aircraft model and a simulated stream of `steps` states.
pub fn aircraft_stream(
    period: f64,
    steps: usize,
    seed: u64,
) -> (SwitchingSystem, MeasurementStream) {
    let system = aircraft(period).expect("aircraft model");
    let config = RunConfig {
        steps,
        seed,
        ..RunConfig::default()
    };
    let trace = simulate_run(&system, &config).expect("simulation");
    let stream = MeasurementStream::from_trace(&trace, &[], true);
    (system, stream)
}

/// Deterministic, well-conditioned inputs for one elimination in dimension `n`.
pub fn fragment(n: usize, m: usize) -> (GaussianDensity, QuadraticFactor, QuadraticFactor) {
    let (a, b) = (Key::state(0), Key::state(1));
    let wave = |r: usize, c: usize, s: f64| ((r * 7 + c * 3) as f64 * s).sin() * 0.3;
    let f = DMatrix::from_fn(
        n,
        n,
        |r, c| if r == c { 1.0 } else { 0.0 } + wave(r, c, 0.7),
    );
    let h = DMatrix::from_fn(m, n, |r, c| if r == c { 1.0 } else { wave(r, c, 1.3) });
    let spd = |d: usize| {
        let l = DMatrix::from_fn(d, d, |r, c| if r >= c { wave(r, c, 0.4) } else { 0.0 });
        NoiseCovariance::with_default_floor(&l * l.transpose() + DMatrix::identity(d, d))
            .expect("positive definite")
    };
    let prior = GaussianDensity::from_mean_covariance(a, &DVector::from_element(n, 0.5), &spd(n))
        .expect("prior");
    let motion = QuadraticFactor::motion(a, b, &f, DVector::zeros(n), spd(n)).expect("motion");
    let meas = QuadraticFactor::measurement(b, &h, DVector::from_element(m, 1.0), spd(m))
        .expect("measurement");
    (prior, motion, meas)
}
