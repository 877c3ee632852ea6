use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::density::{check_nonsingular, GaussianConditional};
use super::factor::{Key, QuadraticFactor};
use crate::error::{check_dim, Error, Result};

/// MAP values of a batch least-squares problem and its information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSolution {
    pub order: Vec<Key>,
    /// One vector per key, in `order`.
    pub values: Vec<DVector<f64>>,
    /// `AᵀA` of the whitened stacked Jacobian, columns in `order`.
    pub information: DMatrix<f64>,
}

impl BatchSolution {
    pub fn value(&self, key: Key) -> Option<&DVector<f64>> {
        self.order
            .iter()
            .position(|k| *k == key)
            .map(|i| &self.values[i])
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        self.information
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::Singular("information matrix is not positive definite".into()))
    }
}

/// Minimize `Σ ‖Aᵢx − bᵢ‖²_Σᵢ` over the variables in `order` with a dense QR.
pub fn solve_batch(factors: &[QuadraticFactor], order: &[Key]) -> Result<BatchSolution> {
    let mut dims: HashMap<Key, usize> = HashMap::new();
    for f in factors {
        for (k, b) in f.keys().iter().zip(f.blocks()) {
            match dims.get(k) {
                Some(&d) => check_dim("batch variable dimension", d, b.ncols())?,
                None => {
                    dims.insert(*k, b.ncols());
                }
            }
        }
    }
    let mut offsets = HashMap::new();
    let mut cols = 0;
    for k in order {
        let d = *dims.get(k).ok_or_else(|| {
            Error::Validation(format!("variable {k} is not touched by any factor"))
        })?;
        if offsets.insert(*k, cols).is_some() {
            return Err(Error::Validation(format!(
                "variable {k} listed twice in ordering"
            )));
        }
        cols += d;
    }
    if let Some(k) = dims.keys().find(|k| !offsets.contains_key(k)) {
        return Err(Error::Validation(format!(
            "variable {k} missing from ordering"
        )));
    }
    let rows: usize = factors.iter().map(QuadraticFactor::rows).sum();
    if rows < cols {
        return Err(Error::Singular(format!("{rows} rows for {cols} unknowns")));
    }

    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut b = DVector::<f64>::zeros(rows);
    let mut r0 = 0;
    for f in factors {
        let w = f.whiten();
        let m = f.rows();
        for (k, block) in w.keys.iter().zip(&w.blocks) {
            a.view_mut((r0, offsets[k]), (m, block.ncols()))
                .copy_from(block);
        }
        b.rows_mut(r0, m).copy_from(&w.rhs);
        r0 += m;
    }

    let information = a.transpose() * &a;
    let qr = a.qr();
    let r = qr.r();
    check_nonsingular(&r, "batch square-root information")?;
    let qtb = qr.q().transpose() * &b;
    let x = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("batch triangular solve failed".into()))?;

    let values = order
        .iter()
        .map(|k| x.rows(offsets[k], dims[k]).into_owned())
        .collect();
    Ok(BatchSolution {
        order: order.to_vec(),
        values,
        information,
    })
}

/// Sum of squared Mahalanobis errors of `factors` at `solution`-style values.
pub fn objective(factors: &[QuadraticFactor], values: &HashMap<Key, DVector<f64>>) -> Result<f64> {
    let mut total = 0.0;
    for f in factors {
        let vals = f
            .keys()
            .iter()
            .map(|k| {
                values
                    .get(k)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("no value for {k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        total += f.error(&vals)?;
    }
    Ok(total)
}

/// Recover the means of a conditional chain, oldest first, ending with `terminal_mean`.
///
/// `chain[i]` must have `chain[i+1]`'s frontal variable as its parent.
pub fn back_substitute(
    chain: &[GaussianConditional],
    terminal_mean: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    for pair in chain.windows(2) {
        if pair[0].parent() != pair[1].frontal() {
            return Err(Error::Validation(format!(
                "broken chain: {} does not feed {}",
                pair[1].frontal(),
                pair[0].parent()
            )));
        }
    }
    let mut out = vec![terminal_mean.clone()];
    for c in chain.iter().rev() {
        let next = c.mean(out.last().expect("non-empty"))?;
        out.push(next);
    }
    out.reverse();
    Ok(out)
}
