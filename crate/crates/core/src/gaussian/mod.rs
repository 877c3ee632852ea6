//! Dense linear-Gaussian machinery: noise whitening, quadratic factors,
//! QR elimination of chain fragments, batch solves and back-substitution.
//!
//! Densities are kept in square-root information form. A factor
//! `‖Ax − b‖²_Σ` is whitened to `‖WAx − Wb‖²` with `WᵀW = Σ⁻¹`, and a
//! fragment `prior(x_{k-1}) · motion(x_{k-1}, x_k) · measurement(x_k)` is
//! triangularized into `p(x_{k-1} | x_k) · p(x_k)` plus a scalar residual.

mod batch;
mod density;
mod eliminate;
mod factor;
mod noise;

pub use batch::{back_substitute, objective, solve_batch, BatchSolution};
pub use density::{GaussianConditional, GaussianDensity, SINGULAR_DIAGONAL_TOL};
pub use eliminate::{eliminate_factors, eliminate_fragment, EliminationResult};
pub use factor::{Key, QuadraticFactor, WhitenedFactor};
pub use noise::{NoiseCovariance, DEFAULT_VARIANCE_FLOOR};
