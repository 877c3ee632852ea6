use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Variance floor applied to degenerate eigen-directions unless configured otherwise.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;
const NEGATIVE_EIGEN_TOL: f64 = -1e-10;

/// A symmetric positive-semidefinite noise covariance.
///
/// The raw matrix is kept for sampling. Every density computation goes
/// through the floored version, where each eigenvalue is raised to at least
/// the variance floor so an inverse square root always exists.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    matrix: DMatrix<f64>,
    floor: f64,
    floored: DMatrix<f64>,
    whitener: DMatrix<f64>,
    sample_factor: DMatrix<f64>,
    log_det: f64,
}

impl NoiseCovariance {
    pub fn new(matrix: DMatrix<f64>, floor: f64) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Validation(format!(
                "covariance must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::Validation(format!(
                "variance floor must be positive, got {floor}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "covariance has non-finite entries".into(),
            ));
        }
        let scale = matrix.amax().max(1.0);
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (matrix[(i, j)] - matrix[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale {
                    return Err(Error::Validation(format!(
                        "covariance is not symmetric at ({i},{j}): {} vs {}",
                        matrix[(i, j)],
                        matrix[(j, i)]
                    )));
                }
            }
        }
        if n == 0 {
            return Ok(Self {
                floored: matrix.clone(),
                whitener: matrix.clone(),
                sample_factor: matrix.clone(),
                matrix,
                floor,
                log_det: 0.0,
            });
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
            if min < NEGATIVE_EIGEN_TOL * scale {
                return Err(Error::Validation(format!(
                    "covariance has negative eigenvalue {min}"
                )));
            }
        }
        let vecs = &eig.eigenvectors;
        let clamped = eig.eigenvalues.map(|l| l.max(floor));
        let floored = vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose();
        let whitener =
            vecs * DMatrix::from_diagonal(&clamped.map(|l| l.sqrt().recip())) * vecs.transpose();
        let sample_factor =
            vecs * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
        let log_det = clamped.iter().map(|l| l.ln()).sum();
        Ok(Self {
            matrix,
            floor,
            floored,
            whitener,
            sample_factor,
            log_det,
        })
    }

    pub fn with_default_floor(matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(matrix, DEFAULT_VARIANCE_FLOOR)
    }

    pub fn identity(dim: usize) -> Self {
        Self::with_default_floor(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn from_diagonal(variances: &[f64], floor: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
            floor,
        )
    }

    /// Same covariance multiplied by `factor` (a variance scale), keeping the floor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(&self.matrix * factor, self.floor)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The matrix as supplied, before flooring.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The floored matrix used for all density computations.
    pub fn effective(&self) -> &DMatrix<f64> {
        &self.floored
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Symmetric inverse square root of the floored covariance.
    pub fn whitener(&self) -> &DMatrix<f64> {
        &self.whitener
    }

    /// `L` with `L Lᵀ` equal to the raw (unfloored) matrix; used to draw samples.
    pub fn sample_factor(&self) -> &DMatrix<f64> {
        &self.sample_factor
    }

    /// `log|Σ|` of the floored covariance.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}
