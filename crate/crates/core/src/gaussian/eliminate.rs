use nalgebra::DMatrix;

use super::density::{check_nonsingular, log_abs_diagonal, GaussianConditional, GaussianDensity};
use super::factor::QuadraticFactor;
use crate::error::{check_dim, Error, Result};

/// Output of eliminating one chain fragment.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationResult {
    /// `p(x_{K-1} | x_K)`.
    pub conditional: GaussianConditional,
    /// `p(x_K)` after integrating out `x_{K-1}`.
    pub density: GaussianDensity,
    /// `½‖e‖²`, the whitened residual left at the fragment minimum.
    pub half_residual_sq: f64,
    /// `log|det T|` of the new density.
    pub log_det_t: f64,
    /// `log|det R|` of the new conditional.
    pub log_det_r: f64,
}

/// Eliminate `prior(x_{K-1}) · motion(x_{K-1}, x_K) · measurement(x_K)`.
///
/// The whitened fragment is stacked with columns ordered `[x_{K-1}, x_K | rhs]`
/// and reduced by Householder QR; only the triangular factor and the
/// transformed right-hand side are kept.
pub fn eliminate_fragment(
    prior: &GaussianDensity,
    motion: &QuadraticFactor,
    measurement: Option<&QuadraticFactor>,
) -> Result<EliminationResult> {
    eliminate_factors(&prior.to_factor(), motion, measurement)
}

/// Same as [`eliminate_fragment`] but accepts any unary factor on `x_{K-1}`
/// as the prior, including one with fewer rows than the state dimension.
pub fn eliminate_factors(
    prior: &QuadraticFactor,
    motion: &QuadraticFactor,
    measurement: Option<&QuadraticFactor>,
) -> Result<EliminationResult> {
    if prior.keys().len() != 1 {
        return Err(Error::Validation("fragment prior must be unary".into()));
    }
    let old = prior.keys()[0];
    let n = prior.blocks()[0].ncols();
    if motion.keys().len() != 2 || motion.keys()[0] != old {
        return Err(Error::Validation(format!(
            "motion factor must connect {old} to the next state"
        )));
    }
    let new = motion.keys()[1];
    check_dim(
        "motion block columns (previous state)",
        n,
        motion.blocks()[0].ncols(),
    )?;
    check_dim(
        "motion block columns (next state)",
        n,
        motion.blocks()[1].ncols(),
    )?;
    if let Some(meas) = measurement {
        if meas.keys() != [new] {
            return Err(Error::Validation(format!(
                "measurement factor must be unary on {new}"
            )));
        }
        check_dim("measurement block columns", n, meas.blocks()[0].ncols())?;
    }

    let rows = prior.rows() + motion.rows() + measurement.map_or(0, QuadraticFactor::rows);
    if rows < 2 * n {
        return Err(Error::Singular(format!(
            "fragment has {rows} rows for {} unknowns",
            2 * n
        )));
    }
    let cols = 2 * n + 1;
    let mut stacked = DMatrix::<f64>::zeros(rows, cols);
    let mut r0 = 0;

    let w = prior.whiten();
    let m = prior.rows();
    stacked.view_mut((r0, 0), (m, n)).copy_from(&w.blocks[0]);
    stacked.view_mut((r0, 2 * n), (m, 1)).copy_from(&w.rhs);
    r0 += m;

    let w = motion.whiten();
    let m = motion.rows();
    stacked.view_mut((r0, 0), (m, n)).copy_from(&w.blocks[0]);
    stacked.view_mut((r0, n), (m, n)).copy_from(&w.blocks[1]);
    stacked.view_mut((r0, 2 * n), (m, 1)).copy_from(&w.rhs);
    r0 += m;

    if let Some(meas) = measurement {
        let w = meas.whiten();
        let m = meas.rows();
        stacked.view_mut((r0, n), (m, n)).copy_from(&w.blocks[0]);
        stacked.view_mut((r0, 2 * n), (m, 1)).copy_from(&w.rhs);
    }

    let upper = stacked.qr().r();
    let r_upper = upper.view((0, 0), (n, n)).into_owned();
    let s_cross = upper.view((0, n), (n, n)).into_owned();
    let d_rhs = upper.view((0, 2 * n), (n, 1)).column(0).into_owned();
    let t_upper = upper.view((n, n), (n, n)).into_owned();
    let v_rhs = upper.view((n, 2 * n), (n, 1)).column(0).into_owned();
    let residual = if upper.nrows() > 2 * n {
        upper[(2 * n, 2 * n)]
    } else {
        0.0
    };

    check_nonsingular(&t_upper, "marginal square-root factor")?;
    check_nonsingular(&r_upper, "conditional square-root factor")?;
    let log_det_t = log_abs_diagonal(&t_upper);
    let log_det_r = log_abs_diagonal(&r_upper);
    Ok(EliminationResult {
        conditional: GaussianConditional::new(r_upper, s_cross, d_rhs, old, new)?,
        density: GaussianDensity::new(t_upper, v_rhs, new)?,
        half_residual_sq: 0.5 * residual * residual,
        log_det_t,
        log_det_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Key, NoiseCovariance};
    use nalgebra::DVector;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_random_walk_without_measurement() {
        let prior = GaussianDensity::new(scalar(1.0), DVector::zeros(1), Key::state(0)).unwrap();
        let motion = QuadraticFactor::motion(
            Key::state(0),
            Key::state(1),
            &scalar(1.0),
            DVector::zeros(1),
            NoiseCovariance::identity(1),
        )
        .unwrap();
        let out = eliminate_fragment(&prior, &motion, None).unwrap();
        // p(x0|x1) = N(x1/2, 1/2), p(x1) = N(0, 2)
        let c = &out.conditional;
        let x1 = DVector::from_element(1, 3.0);
        assert!((c.mean(&x1).unwrap()[0] - 1.5).abs() < 1e-12);
        assert!((c.covariance()[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(out.density.mean()[0].abs() < 1e-12);
        assert!((out.density.covariance()[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(out.half_residual_sq.abs() < 1e-20);
        assert_eq!(c.frontal(), Key::state(0));
        assert_eq!(c.parent(), Key::state(1));
    }

    #[test]
    fn square_fragment_has_zero_residual() {
        // prior on 1 of 2 components + 2 motion rows + 1 measurement row = 4 = 2n rows
        let prior = QuadraticFactor::new(
            vec![Key::state(0)],
            vec![DMatrix::from_row_slice(1, 2, &[1.0, 0.5])],
            DVector::from_element(1, 2.0),
            NoiseCovariance::identity(1),
        )
        .unwrap();
        let f = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let motion = QuadraticFactor::motion(
            Key::state(0),
            Key::state(1),
            &f,
            DVector::from_vec(vec![0.2, -0.1]),
            NoiseCovariance::from_diagonal(&[0.5, 2.0], 1e-9).unwrap(),
        )
        .unwrap();
        let meas = QuadraticFactor::measurement(
            Key::state(1),
            &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::from_element(1, 7.0),
            NoiseCovariance::from_diagonal(&[0.3], 1e-9).unwrap(),
        )
        .unwrap();
        let out = eliminate_factors(&prior, &motion, Some(&meas)).unwrap();
        assert!(out.half_residual_sq < 1e-10);
    }

    #[test]
    fn rejects_mismatched_keys() {
        let prior = GaussianDensity::new(scalar(1.0), DVector::zeros(1), Key::state(0)).unwrap();
        let motion = QuadraticFactor::motion(
            Key::state(4),
            Key::state(5),
            &scalar(1.0),
            DVector::zeros(1),
            NoiseCovariance::identity(1),
        )
        .unwrap();
        assert!(matches!(
            eliminate_fragment(&prior, &motion, None),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let prior = GaussianDensity::new(scalar(1.0), DVector::zeros(1), Key::state(0)).unwrap();
        let motion = QuadraticFactor::motion(
            Key::state(0),
            Key::state(1),
            &DMatrix::identity(2, 2),
            DVector::zeros(2),
            NoiseCovariance::identity(2),
        )
        .unwrap();
        assert!(matches!(
            eliminate_fragment(&prior, &motion, None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn singular_marginal_is_reported() {
        // x1 is unconstrained in its second component: the motion row is zeroed
        let prior = QuadraticFactor::new(
            vec![Key::state(0)],
            vec![DMatrix::identity(2, 2)],
            DVector::zeros(2),
            NoiseCovariance::identity(2),
        )
        .unwrap();
        let motion = QuadraticFactor::new(
            vec![Key::state(0), Key::state(1)],
            vec![
                DMatrix::zeros(2, 2),
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            ],
            DVector::zeros(2),
            NoiseCovariance::identity(2),
        )
        .unwrap();
        assert!(matches!(
            eliminate_factors(&prior, &motion, None),
            Err(Error::Singular(_))
        ));
    }
}
