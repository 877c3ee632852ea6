//! Multi-hypothesis smoothing for switching linear-Gaussian systems.
//!
//! States are inferred jointly with the discrete mode sequence by keeping a
//! tree of square-root information conditionals, one branch per mode history.

pub mod error;
pub mod gaussian;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod scenarios;
pub mod smoother;

pub use error::{Error, Result, Violation};
pub use gaussian::{GaussianConditional, GaussianDensity, NoiseCovariance, QuadraticFactor};
pub use harness::{
    analyze_stream, phase_schedule, run_monte_carlo, run_once, MeasurementStream, MonteCarloReport,
    Operation, Phase, RunConfig, RunReport, Schedule, Truth,
};
pub use metrics::{accuracy, cross_entropy, nll_sequence, GroundTruth};
pub use model::{
    simulate, Control, MarkovModePrior, ModeModel, ModeSource, SimulationTrace, SwitchingSystem,
};
pub use smoother::{
    EvidenceRule, Marginalization, ModeMarginals, MultiHypothesisSmoother, SmootherConfig,
};
