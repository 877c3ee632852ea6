use std::fmt;

use nalgebra::{DMatrix, DVector};

use super::noise::NoiseCovariance;
use crate::error::{check_dim, Error, Result};

/// Identifies a variable by timestep and a per-timestep variable id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key {
    pub timestep: usize,
    pub variable: u32,
}

impl Key {
    /// The continuous state at `timestep`.
    pub const fn state(timestep: usize) -> Self {
        Self {
            timestep,
            variable: 0,
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}[{}]", self.variable, self.timestep)
    }
}

/// Quadratic factor `‖Σᵢ Aᵢ xᵢ − b‖²_Σ` over an ordered set of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFactor {
    keys: Vec<Key>,
    blocks: Vec<DMatrix<f64>>,
    rhs: DVector<f64>,
    noise: NoiseCovariance,
}

/// A factor premultiplied by the inverse square root of its noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenedFactor {
    pub keys: Vec<Key>,
    pub blocks: Vec<DMatrix<f64>>,
    pub rhs: DVector<f64>,
}

impl QuadraticFactor {
    pub fn new(
        keys: Vec<Key>,
        blocks: Vec<DMatrix<f64>>,
        rhs: DVector<f64>,
        noise: NoiseCovariance,
    ) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Validation("factor has no variables".into()));
        }
        check_dim("factor block count", keys.len(), blocks.len())?;
        for block in &blocks {
            check_dim("factor block rows", rhs.len(), block.nrows())?;
        }
        check_dim("factor noise dimension", rhs.len(), noise.dim())?;
        for (i, k) in keys.iter().enumerate() {
            if keys[..i].contains(k) {
                return Err(Error::Validation(format!("factor repeats variable {k}")));
            }
        }
        Ok(Self {
            keys,
            blocks,
            rhs,
            noise,
        })
    }

    /// Prior `‖x − mean‖²_cov`.
    pub fn prior(key: Key, mean: DVector<f64>, cov: NoiseCovariance) -> Result<Self> {
        let n = mean.len();
        Self::new(vec![key], vec![DMatrix::identity(n, n)], mean, cov)
    }

    /// Motion factor `‖x_to − (F x_from + offset)‖²_Q`; `offset` is `B u`.
    pub fn motion(
        from: Key,
        to: Key,
        transition: &DMatrix<f64>,
        offset: DVector<f64>,
        noise: NoiseCovariance,
    ) -> Result<Self> {
        let n = transition.nrows();
        if !transition.is_square() {
            return Err(Error::Validation("transition matrix must be square".into()));
        }
        Self::new(
            vec![from, to],
            vec![-transition.clone(), DMatrix::identity(n, n)],
            offset,
            noise,
        )
    }

    /// Measurement factor `‖H x − z‖²_R`.
    pub fn measurement(
        key: Key,
        observation: &DMatrix<f64>,
        z: DVector<f64>,
        noise: NoiseCovariance,
    ) -> Result<Self> {
        Self::new(vec![key], vec![observation.clone()], z, noise)
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn noise(&self) -> &NoiseCovariance {
        &self.noise
    }

    pub fn rows(&self) -> usize {
        self.rhs.len()
    }

    /// Column count of the block attached to `key`, if the factor touches it.
    pub fn dim_of(&self, key: Key) -> Option<usize> {
        self.keys
            .iter()
            .position(|k| *k == key)
            .map(|i| self.blocks[i].ncols())
    }

    pub fn whiten(&self) -> WhitenedFactor {
        let w = self.noise.whitener();
        WhitenedFactor {
            keys: self.keys.clone(),
            blocks: self.blocks.iter().map(|b| w * b).collect(),
            rhs: w * &self.rhs,
        }
    }

    /// Unwhitened residual `Σᵢ Aᵢ xᵢ − b`; values are in key order.
    pub fn residual(&self, values: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("factor values", self.keys.len(), values.len())?;
        let mut r = -self.rhs.clone();
        for (block, x) in self.blocks.iter().zip(values) {
            check_dim("factor value length", block.ncols(), x.len())?;
            r += block * x;
        }
        Ok(r)
    }

    /// Squared Mahalanobis error `rᵀ Σ⁻¹ r` under the floored covariance.
    pub fn error(&self, values: &[DVector<f64>]) -> Result<f64> {
        let r = self.residual(values)?;
        Ok((self.noise.whitener() * r).norm_squared())
    }
}

impl WhitenedFactor {
    /// Blocks concatenated horizontally in key order.
    pub fn stacked(&self) -> DMatrix<f64> {
        let rows = self.rhs.len();
        let cols = self.blocks.iter().map(|b| b.ncols()).sum();
        let mut out = DMatrix::zeros(rows, cols);
        let mut c = 0;
        for b in &self.blocks {
            out.view_mut((0, c), (rows, b.ncols())).copy_from(b);
            c += b.ncols();
        }
        out
    }
}
