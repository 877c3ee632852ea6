use nalgebra::{DMatrix, DVector};

use super::MultiHypothesisSmoother;
use crate::error::Result;
use crate::gaussian::{back_substitute, GaussianConditional};

/// Log posteriors closer than this are treated as tied.
pub(crate) const TIE_TOL: f64 = 1e-12;

/// Per-slot categorical distributions over modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMarginals {
    /// `rows[k][m] = p(M_k = m)`, one row per mode slot.
    pub rows: Vec<Vec<f64>>,
}

impl ModeMarginals {
    pub fn slots(&self) -> usize {
        self.rows.len()
    }

    pub fn modes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Most probable mode per slot; lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(r)).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.slots(), self.modes(), |i, j| self.rows[i][j])
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate().skip(1) {
        if p > row[best] {
            best = i;
        }
    }
    best
}

/// A live mode history with its normalized posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Modes for slots `first_slot..`, oldest first.
    pub modes: Vec<usize>,
    pub first_slot: usize,
    pub posterior: f64,
    pub log_posterior: f64,
    pub log_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub leaf: usize,
    /// First mode slot (and first state timestep) covered below.
    pub first_slot: usize,
    pub modes: Vec<usize>,
    /// States `x_{first_slot} ..= x_{K-1}`.
    pub trajectory: Vec<DVector<f64>>,
    pub log_posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimate {
    /// Most probable newest mode; `None` before the first step.
    pub mode: Option<usize>,
    pub mode_probabilities: Vec<f64>,
    /// Posterior-weighted mixture mean of the newest state.
    pub mean: DVector<f64>,
    /// Moment-matched mixture covariance of the newest state.
    pub covariance: DMatrix<f64>,
}

impl MultiHypothesisSmoother {
    /// Live modes of leaf `index`, oldest first, starting at [`first_live_slot`](Self::first_live_slot).
    pub fn leaf_history(&self, index: usize) -> Vec<usize> {
        let mut modes: Vec<usize> = self
            .forest
            .lineage(self.leaves[index].tail)
            .map(|n| n.mode)
            .collect();
        modes.reverse();
        modes
    }

    /// Conditionals along the branch of leaf `index`, oldest first.
    pub fn leaf_chain(&self, index: usize) -> Vec<GaussianConditional> {
        let mut chain: Vec<_> = self
            .forest
            .lineage(self.leaves[index].tail)
            .map(|n| n.conditional.clone())
            .collect();
        chain.reverse();
        chain
    }

    /// Back-substituted means for the live states of leaf `index`.
    pub fn leaf_trajectory(&self, index: usize) -> Result<Vec<DVector<f64>>> {
        back_substitute(&self.leaf_chain(index), &self.leaves[index].density.mean())
    }

    pub fn hypotheses(&self) -> Vec<Hypothesis> {
        (0..self.leaves.len())
            .map(|i| {
                let leaf = &self.leaves[i];
                Hypothesis {
                    modes: self.leaf_history(i),
                    first_slot: self.first_live_slot,
                    posterior: leaf.log_posterior.exp(),
                    log_posterior: leaf.log_posterior,
                    log_tau: leaf.log_tau,
                }
            })
            .collect()
    }

    pub(crate) fn live_marginal_rows(&self) -> Vec<Vec<f64>> {
        let m = self.system.mode_count();
        let live = self.slots() - self.first_live_slot;
        let mut rows = vec![vec![0.0; m]; live];
        for i in 0..self.leaves.len() {
            let p = self.leaves[i].log_posterior.exp();
            for (k, mode) in self.leaf_history(i).into_iter().enumerate() {
                rows[k][mode] += p;
            }
        }
        for row in &mut rows {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            }
        }
        rows
    }

    /// Marginals for every slot: frozen rows for marginalized slots followed by live rows.
    pub fn mode_marginals(&self) -> ModeMarginals {
        let mut rows = self.retired.clone();
        rows.extend(self.live_marginal_rows());
        ModeMarginals { rows }
    }

    /// Distribution of the newest mode slot; empty before the first step.
    pub fn newest_mode_probabilities(&self) -> Vec<f64> {
        if self.slots() == 0 {
            return Vec::new();
        }
        let mut row = vec![0.0; self.system.mode_count()];
        for leaf in &self.leaves {
            if let Some(m) = leaf.last_mode {
                row[m] += leaf.log_posterior.exp();
            }
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        row
    }

    /// Highest-posterior hypothesis and its back-substituted trajectory.
    pub fn map_estimate(&self) -> Result<MapEstimate> {
        let leaf = super::best_leaf(&self.leaves);
        Ok(MapEstimate {
            leaf,
            first_slot: self.first_live_slot,
            modes: self.leaf_history(leaf),
            trajectory: self.leaf_trajectory(leaf)?,
            log_posterior: self.leaves[leaf].log_posterior,
        })
    }

    /// Online estimate of the newest mode and state.
    pub fn filter_estimate(&self) -> FilterEstimate {
        let probs = self.newest_mode_probabilities();
        let n = self.system.state_dim;
        let mut mean = DVector::zeros(n);
        let weighted: Vec<(f64, DVector<f64>)> = self
            .leaves
            .iter()
            .map(|l| (l.log_posterior.exp(), l.density.mean()))
            .collect();
        let total: f64 = weighted.iter().map(|(w, _)| w).sum();
        for (w, mu) in &weighted {
            mean += mu * (*w / total);
        }
        let mut covariance = DMatrix::zeros(n, n);
        for (leaf, (w, mu)) in self.leaves.iter().zip(&weighted) {
            let d = mu - &mean;
            covariance += (leaf.density.covariance() + &d * d.transpose()) * (*w / total);
        }
        FilterEstimate {
            mode: (!probs.is_empty()).then(|| argmax(&probs)),
            mode_probabilities: probs,
            mean,
            covariance,
        }
    }
}
