use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::factor::{Key, QuadraticFactor};
use super::noise::NoiseCovariance;
use crate::error::{check_dim, Error, Result};

/// Smallest admissible magnitude on the diagonal of a square-root factor.
pub const SINGULAR_DIAGONAL_TOL: f64 = 1e-12;

/// Gaussian on one variable in square-root information form:
/// mean `T⁻¹v`, covariance `T⁻¹T⁻ᵀ`, with `T` upper triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    t_upper: DMatrix<f64>,
    v_rhs: DVector<f64>,
    key: Key,
}

/// `p(frontal | parent) = N(R⁻¹(d − S·parent), R⁻¹R⁻ᵀ)` with `R` upper triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    r_upper: DMatrix<f64>,
    s_cross: DMatrix<f64>,
    d_rhs: DVector<f64>,
    frontal: Key,
    parent: Key,
}

fn check_upper_triangular(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Validation(format!("{what} must be square")));
    }
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            if m[(i, j)] != 0.0 {
                return Err(Error::Validation(format!(
                    "{what} is not upper triangular at ({i},{j})"
                )));
            }
        }
    }
    check_nonsingular(m, what)
}

pub(crate) fn check_nonsingular(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for i in 0..m.nrows() {
        let d = m[(i, i)];
        if d.is_nan() || d.abs() <= SINGULAR_DIAGONAL_TOL {
            return Err(Error::Singular(format!(
                "{what} has diagonal entry {d} at index {i}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn log_abs_diagonal(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().map(|d| d.abs().ln()).sum()
}

fn solve_upper(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    m.solve_upper_triangular(b)
        .expect("triangular factor validated as nonsingular")
}

fn inverse_gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let inv = m
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("triangular factor validated as nonsingular");
    let cov = &inv * inv.transpose();
    (&cov + cov.transpose()) * 0.5
}

impl GaussianDensity {
    pub fn new(t_upper: DMatrix<f64>, v_rhs: DVector<f64>, key: Key) -> Result<Self> {
        check_upper_triangular(&t_upper, "density square-root factor")?;
        check_dim("density rhs", t_upper.nrows(), v_rhs.len())?;
        Ok(Self {
            t_upper,
            v_rhs,
            key,
        })
    }

    /// Square-root information form of `N(mean, cov)` using the floored covariance.
    pub fn from_mean_covariance(
        key: Key,
        mean: &DVector<f64>,
        cov: &NoiseCovariance,
    ) -> Result<Self> {
        check_dim("density mean", cov.dim(), mean.len())?;
        let r = cov.whitener().clone().qr().r();
        let v = &r * mean;
        Self::new(r, v, key)
    }

    pub fn key(&self) -> Key {
        self.key
    }

    pub fn dim(&self) -> usize {
        self.v_rhs.len()
    }

    pub fn t_upper(&self) -> &DMatrix<f64> {
        &self.t_upper
    }

    pub fn v_rhs(&self) -> &DVector<f64> {
        &self.v_rhs
    }

    pub fn mean(&self) -> DVector<f64> {
        solve_upper(&self.t_upper, &self.v_rhs)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        inverse_gram(&self.t_upper)
    }

    pub fn information(&self) -> DMatrix<f64> {
        self.t_upper.transpose() * &self.t_upper
    }

    /// `log|det T|`.
    pub fn log_det_t(&self) -> f64 {
        log_abs_diagonal(&self.t_upper)
    }

    /// Normalized log density at `x`.
    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        -0.5 * n * (2.0 * PI).ln() + self.log_det_t()
            - 0.5 * (&self.t_upper * x - &self.v_rhs).norm_squared()
    }

    /// Multiply in a unary factor on the same variable and renormalize.
    pub fn condition_on(&self, factor: &QuadraticFactor) -> Result<GaussianDensity> {
        if factor.keys() != [self.key] {
            return Err(Error::Validation(format!(
                "factor must be unary on {}",
                self.key
            )));
        }
        let n = self.dim();
        check_dim("conditioning factor columns", n, factor.blocks()[0].ncols())?;
        let w = factor.whiten();
        let m = factor.rows();
        let mut stacked = DMatrix::zeros(n + m, n + 1);
        stacked.view_mut((0, 0), (n, n)).copy_from(&self.t_upper);
        stacked.view_mut((0, n), (n, 1)).copy_from(&self.v_rhs);
        stacked.view_mut((n, 0), (m, n)).copy_from(&w.blocks[0]);
        stacked.view_mut((n, n), (m, 1)).copy_from(&w.rhs);
        let upper = stacked.qr().r();
        let t = upper.view((0, 0), (n, n)).into_owned();
        let v = upper.view((0, n), (n, 1)).column(0).into_owned();
        GaussianDensity::new(t, v, self.key)
    }

    /// The density as a unary factor with unit noise.
    pub fn to_factor(&self) -> QuadraticFactor {
        QuadraticFactor::new(
            vec![self.key],
            vec![self.t_upper.clone()],
            self.v_rhs.clone(),
            NoiseCovariance::identity(self.dim()),
        )
        .expect("density blocks are consistent")
    }
}

impl GaussianConditional {
    pub fn new(
        r_upper: DMatrix<f64>,
        s_cross: DMatrix<f64>,
        d_rhs: DVector<f64>,
        frontal: Key,
        parent: Key,
    ) -> Result<Self> {
        check_upper_triangular(&r_upper, "conditional square-root factor")?;
        check_dim("conditional rhs", r_upper.nrows(), d_rhs.len())?;
        check_dim(
            "conditional cross-term rows",
            r_upper.nrows(),
            s_cross.nrows(),
        )?;
        Ok(Self {
            r_upper,
            s_cross,
            d_rhs,
            frontal,
            parent,
        })
    }

    pub fn frontal(&self) -> Key {
        self.frontal
    }

    pub fn parent(&self) -> Key {
        self.parent
    }

    pub fn r_upper(&self) -> &DMatrix<f64> {
        &self.r_upper
    }

    pub fn s_cross(&self) -> &DMatrix<f64> {
        &self.s_cross
    }

    pub fn d_rhs(&self) -> &DVector<f64> {
        &self.d_rhs
    }

    pub fn dim(&self) -> usize {
        self.d_rhs.len()
    }

    pub fn parent_dim(&self) -> usize {
        self.s_cross.ncols()
    }

    /// Conditional mean given a value of the parent.
    pub fn mean(&self, parent_value: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(
            "conditional parent value",
            self.parent_dim(),
            parent_value.len(),
        )?;
        Ok(solve_upper(
            &self.r_upper,
            &(&self.d_rhs - &self.s_cross * parent_value),
        ))
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        inverse_gram(&self.r_upper)
    }

    pub fn log_det_r(&self) -> f64 {
        log_abs_diagonal(&self.r_upper)
    }

    /// Normalized log density of `x` given `parent_value`.
    pub fn log_density(&self, x: &DVector<f64>, parent_value: &DVector<f64>) -> f64 {
        let n = self.dim() as f64;
        let r = &self.r_upper * x + &self.s_cross * parent_value - &self.d_rhs;
        -0.5 * n * (2.0 * PI).ln() + self.log_det_r() - 0.5 * r.norm_squared()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_covariance_round_trip() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let mean = DVector::from_vec(vec![1.0, -4.0]);
        let noise = NoiseCovariance::with_default_floor(cov.clone()).unwrap();
        let d = GaussianDensity::from_mean_covariance(Key::state(0), &mean, &noise).unwrap();
        assert!((d.mean() - mean).amax() < 1e-12);
        assert!((d.covariance() - cov.clone()).amax() < 1e-12);
        assert!((d.log_det_t() + 0.5 * cov.determinant().ln()).abs() < 1e-12);
    }

    #[test]
    fn conditioning_matches_kalman_update() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let mean = DVector::from_vec(vec![0.5, -1.0]);
        let d = GaussianDensity::from_mean_covariance(
            Key::state(0),
            &mean,
            &NoiseCovariance::with_default_floor(p.clone()).unwrap(),
        )
        .unwrap();
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let r = 0.5;
        let z = DVector::from_element(1, 2.0);
        let f = QuadraticFactor::measurement(
            Key::state(0),
            &h,
            z.clone(),
            NoiseCovariance::from_diagonal(&[r], 1e-9).unwrap(),
        )
        .unwrap();
        let post = d.condition_on(&f).unwrap();
        let s = (&h * &p * h.transpose())[(0, 0)] + r;
        let gain = &p * h.transpose() / s;
        let expect_mean = &mean + &gain * (z - &h * &mean);
        let expect_cov = &p - &gain * &h * &p;
        assert!((post.mean() - expect_mean).amax() < 1e-12);
        assert!((post.covariance() - expect_cov).amax() < 1e-12);
    }

    #[test]
    fn rejects_singular_or_lower() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            GaussianDensity::new(t, DVector::zeros(2), Key::state(0)),
            Err(Error::Singular(_))
        ));
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            GaussianDensity::new(t, DVector::zeros(2), Key::state(0)),
            Err(Error::Validation(_))
        ));
    }
}
