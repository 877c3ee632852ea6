//! Scores of estimated mode posteriors against a ground-truth sequence.

use crate::error::{check_dim, Error, Result};
use crate::smoother::{ModeMarginals, MultiHypothesisSmoother};

/// Floor applied to each probability inside [`cross_entropy`].
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Ground-truth mode indices, one per slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth(pub Vec<usize>);

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_modes(&self, modes: usize) -> Result<()> {
        match self.0.iter().find(|&&m| m >= modes) {
            Some(m) => Err(Error::Validation(format!(
                "ground-truth mode {m} out of range"
            ))),
            None => Ok(()),
        }
    }
}

/// `−log p(truth)` over the live hypotheses; `+∞` if the truth was pruned.
///
/// After marginalization only the live slots are compared, and the mass of
/// every leaf agreeing with the truth on those slots is summed.
pub fn nll_sequence(smoother: &MultiHypothesisSmoother, truth: &GroundTruth) -> Result<f64> {
    check_dim("ground-truth length", smoother.slots(), truth.len())?;
    truth.check_modes(smoother.system().mode_count())?;
    let first = smoother.first_live_slot();
    let window = &truth.0[first..];
    let mass: f64 = smoother
        .hypotheses()
        .iter()
        .filter(|h| h.modes == window)
        .map(|h| h.posterior)
        .sum();
    Ok(if mass > 0.0 {
        -mass.ln().min(0.0)
    } else {
        f64::INFINITY
    })
}

fn check_shape(marginals: &ModeMarginals, truth: &GroundTruth) -> Result<()> {
    check_dim("marginal rows", truth.len(), marginals.slots())?;
    truth.check_modes(marginals.modes())
}

/// Categorical cross entropy `−Σ_k log p(M_k = y_k)`.
pub fn cross_entropy(marginals: &ModeMarginals, truth: &GroundTruth) -> Result<f64> {
    check_shape(marginals, truth)?;
    Ok(marginals
        .rows
        .iter()
        .zip(&truth.0)
        .map(|(row, &y)| -row[y].max(PROBABILITY_FLOOR).ln())
        .sum::<f64>()
        .max(0.0))
}

/// Fraction of slots whose most probable mode (lowest index on ties) is the true one.
pub fn accuracy(marginals: &ModeMarginals, truth: &GroundTruth) -> Result<f64> {
    check_shape(marginals, truth)?;
    if truth.is_empty() {
        return Ok(1.0);
    }
    let hits = marginals
        .argmax()
        .iter()
        .zip(&truth.0)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Fraction of positions where two mode sequences agree.
pub fn sequence_agreement(estimate: &[usize], truth: &GroundTruth) -> Result<f64> {
    check_dim("estimated sequence length", truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Ok(1.0);
    }
    let hits = estimate
        .iter()
        .zip(&truth.0)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}
