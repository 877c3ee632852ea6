//! Incremental multi-hypothesis smoother.
//!
//! Every mode history is a root-to-leaf path in a tree whose nodes hold the
//! Gaussian conditionals eliminated under that history prefix. Each step:
//!
//! 1. prune leaves whose normalized posterior is below the threshold,
//! 2. extend every surviving leaf once per mode by eliminating
//!    `leaf density · motion · measurement`,
//! 3. score each child with its evidence term and the Markov prior, then
//!    renormalize in log space,
//! 4. marginalize old tree levels according to the configured policy.

mod estimates;
mod tree;

use std::f64::consts::PI;

use log::warn;
use nalgebra::DVector;

pub use estimates::{FilterEstimate, Hypothesis, MapEstimate, ModeMarginals};
use tree::Forest;
pub use tree::{Leaf, NodeId, TreeNode};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{eliminate_fragment, GaussianDensity, Key, QuadraticFactor};
use crate::model::SwitchingSystem;

/// Treatment of old tree levels after each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Marginalization {
    /// Keep the whole history.
    #[default]
    Keep,
    /// Keep only the newest `N` mode slots.
    FixedLag(usize),
    /// Drop the shared chain that precedes the oldest branching point.
    BeforeLastFork,
}

/// Which per-step likelihood term scores a child hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvidenceRule {
    /// The full predictive density `p(z_K | Z^{K-1}, M^K)`. Also accounts for
    /// the normalizers of the previous leaf density and the new conditional.
    #[default]
    Exact,
    /// Only `½‖e‖² + log|T| − ½log|Q⁻¹R⁻¹|`. Agrees with [`Exact`](Self::Exact)
    /// up to a shared constant when the dynamics and noise are mode-independent.
    FragmentOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherConfig {
    /// Leaves with normalized posterior below this are not extended.
    pub prune_threshold: f64,
    pub marginalization: Marginalization,
    /// Hard cap on live leaves after each step; the most probable are kept.
    pub leaf_cap: Option<usize>,
    /// Include `½ log|Q⁻¹ R⁻¹|` in each score.
    pub include_mode_constant: bool,
    pub evidence: EvidenceRule,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            prune_threshold: 0.0,
            marginalization: Marginalization::Keep,
            leaf_cap: None,
            include_mode_constant: true,
            evidence: EvidenceRule::Exact,
        }
    }
}

impl SmootherConfig {
    pub fn with_threshold(prune_threshold: f64) -> Self {
        Self {
            prune_threshold,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::Validation(format!(
                "prune threshold must lie in [0, 1), got {}",
                self.prune_threshold
            )));
        }
        if self.marginalization == Marginalization::FixedLag(0) {
            return Err(Error::Validation("lag must be positive".into()));
        }
        if self.leaf_cap == Some(0) {
            return Err(Error::Validation("leaf cap must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of the pruning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneOutcome {
    pub before: usize,
    pub after: usize,
    /// Every leaf fell below the threshold and only the best one was kept.
    pub kept_best_only: bool,
}

/// Per-mode summary of the children created in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: usize,
    pub children: usize,
    /// Largest per-step log τ among this mode's children.
    pub best_log_tau: f64,
    /// Posterior mass of children whose newest mode is this one.
    pub posterior_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Timestep of the state added by this step.
    pub timestep: usize,
    pub prune: PruneOutcome,
    pub leaves_after_extend: usize,
    /// Children dropped because the Markov chain gives them zero probability.
    pub impossible: usize,
    /// Leaves dropped by the leaf cap.
    pub capped: usize,
    pub leaves_final: usize,
    pub modes: Vec<ModeSummary>,
}

/// The incremental multi-hypothesis smoother.
#[derive(Debug, Clone)]
pub struct MultiHypothesisSmoother {
    system: SwitchingSystem,
    config: SmootherConfig,
    leaves: Vec<Leaf>,
    forest: Forest,
    /// Number of states so far; the newest state is `x_{step_index-1}`.
    step_index: usize,
    /// Oldest mode slot still represented in the tree.
    first_live_slot: usize,
    /// Marginal rows of slots removed from the tree, frozen at removal time.
    retired: Vec<Vec<f64>>,
    /// `½ log|Q⁻¹ R⁻¹|` per mode with and without the measurement term.
    mode_constants: Vec<(f64, f64)>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize(leaves: &mut [Leaf]) {
    let total = log_sum_exp(leaves.iter().map(|l| l.log_posterior));
    for leaf in leaves.iter_mut() {
        leaf.log_posterior -= total;
    }
}

/// Index of the most probable leaf; earlier (lexicographically smaller) leaves win ties.
fn best_leaf(leaves: &[Leaf]) -> usize {
    let mut best = 0;
    for (i, leaf) in leaves.iter().enumerate().skip(1) {
        if leaf.log_posterior > leaves[best].log_posterior + estimates::TIE_TOL {
            best = i;
        }
    }
    best
}

impl MultiHypothesisSmoother {
    /// Start from the bare `x_0` prior.
    pub fn new(system: SwitchingSystem, config: SmootherConfig) -> Result<Self> {
        Self::build(system, config, None)
    }

    /// Start from the `x_0` prior conditioned on `z_0`, read through the
    /// measurement channel of mode 0.
    pub fn with_initial_measurement(
        system: SwitchingSystem,
        config: SmootherConfig,
        z0: &DVector<f64>,
    ) -> Result<Self> {
        Self::build(system, config, Some(z0))
    }

    fn build(
        system: SwitchingSystem,
        config: SmootherConfig,
        z0: Option<&DVector<f64>>,
    ) -> Result<Self> {
        system.check()?;
        config.validate()?;
        let key = Key::state(0);
        let mut density =
            GaussianDensity::from_mean_covariance(key, &system.x0_mean, &system.x0_cov)?;
        if let Some(z) = z0 {
            let obs = system.modes[0].observation.as_ref().ok_or_else(|| {
                Error::Validation(
                    "initial measurement given but the system has no measurement channel".into(),
                )
            })?;
            check_dim("initial measurement", system.measurement_dim, z.len())?;
            let f = QuadraticFactor::measurement(key, &obs.matrix, z.clone(), obs.noise.clone())?;
            density = density.condition_on(&f)?;
        }
        let mode_constants = system
            .modes
            .iter()
            .map(|m| (m.half_log_info_det(true), m.half_log_info_det(false)))
            .collect();
        Ok(Self {
            system,
            config,
            leaves: vec![Leaf {
                density,
                tail: None,
                last_mode: None,
                log_posterior: 0.0,
                log_tau: 0.0,
            }],
            forest: Forest::default(),
            step_index: 1,
            first_live_slot: 0,
            retired: Vec::new(),
            mode_constants,
        })
    }

    pub fn system(&self) -> &SwitchingSystem {
        &self.system
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.forest.nodes
    }

    /// Number of states `K` seen so far.
    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Number of mode slots consumed, `K − 1`.
    pub fn slots(&self) -> usize {
        self.step_index - 1
    }

    pub fn first_live_slot(&self) -> usize {
        self.first_live_slot
    }

    /// Number of trees in the forest (zero before the first step).
    pub fn tree_count(&self) -> usize {
        self.forest.roots()
    }

    /// Consume measurement `z_K` (or none) and mode slot `K − 1`.
    pub fn step(
        &mut self,
        z: Option<&DVector<f64>>,
        u_override: Option<&DVector<f64>>,
    ) -> Result<StepReport> {
        if let Some(z) = z {
            if !self.system.has_measurements() {
                return Err(Error::Validation(
                    "system has no measurement channel".into(),
                ));
            }
            check_dim("measurement", self.system.measurement_dim, z.len())?;
        }
        if let Some(u) = u_override {
            check_dim("control override", self.system.control_dim, u.len())?;
        }
        let slot = self.step_index - 1;
        let new_key = Key::state(self.step_index);
        let mode_count = self.system.mode_count();

        // Build every motion and measurement factor before touching the tree so
        // that a failure leaves the smoother unchanged.
        let mut factors = Vec::with_capacity(mode_count);
        for mode in &self.system.modes {
            let offset = mode.control_offset(slot, u_override)?;
            let old_key = self.leaves[0].density.key();
            let motion = QuadraticFactor::motion(
                old_key,
                new_key,
                &mode.transition,
                offset,
                mode.process_noise.clone(),
            )?;
            let meas = match (z, &mode.observation) {
                (Some(z), Some(o)) => Some(QuadraticFactor::measurement(
                    new_key,
                    &o.matrix,
                    z.clone(),
                    o.noise.clone(),
                )?),
                _ => None,
            };
            factors.push((motion, meas));
        }
        let mut children = Vec::with_capacity(self.leaves.len() * mode_count);
        let mut prune = PruneOutcome {
            before: self.leaves.len(),
            after: self.leaves.len(),
            kept_best_only: false,
        };
        let survivors = self.surviving(self.config.prune_threshold, &mut prune);
        let meas_dim = z.map_or(0, |z| z.len()) as f64;
        for &li in &survivors {
            let leaf = &self.leaves[li];
            for (m, (motion, meas)) in factors.iter().enumerate() {
                let elim = eliminate_fragment(&leaf.density, motion, meas.as_ref())?;
                let mut neg_log_tau = elim.half_residual_sq + elim.log_det_t;
                if self.config.include_mode_constant {
                    let (with_z, without_z) = self.mode_constants[m];
                    neg_log_tau -= if z.is_some() { with_z } else { without_z };
                }
                if self.config.evidence == EvidenceRule::Exact {
                    neg_log_tau += elim.log_det_r - leaf.density.log_det_t()
                        + 0.5 * meas_dim * (2.0 * PI).ln();
                }
                let log_prior = match leaf.last_mode {
                    None => self.system.mode_prior.log_initial(m),
                    Some(prev) => self.system.mode_prior.log_transition(prev, m),
                };
                children.push((li, m, elim, neg_log_tau, log_prior));
            }
        }

        let mut impossible = 0;
        let mut new_leaves = Vec::with_capacity(children.len());
        let mut step_tau = Vec::with_capacity(children.len());
        for (li, m, elim, neg_log_tau, log_prior) in children {
            let parent = &self.leaves[li];
            let log_posterior = parent.log_posterior + log_prior - neg_log_tau;
            if log_posterior == f64::NEG_INFINITY {
                impossible += 1;
                continue;
            }
            if !log_posterior.is_finite() {
                return Err(Error::Singular(format!(
                    "non-finite score for mode {m} at timestep {}",
                    self.step_index
                )));
            }
            let node = self.forest.push(TreeNode {
                conditional: elim.conditional,
                mode: m,
                parent: parent.tail,
                slot,
            });
            step_tau.push((m, -neg_log_tau));
            new_leaves.push(Leaf {
                density: elim.density,
                tail: Some(node),
                last_mode: Some(m),
                log_posterior,
                log_tau: parent.log_tau - neg_log_tau,
            });
        }
        normalize(&mut new_leaves);
        let leaves_after_extend = new_leaves.len();

        let mut capped = 0;
        if let Some(cap) = self.config.leaf_cap {
            if new_leaves.len() > cap {
                capped = new_leaves.len() - cap;
                let keep = top_indices(&new_leaves, cap);
                let mut i = 0;
                new_leaves.retain(|_| {
                    let k = keep[i];
                    i += 1;
                    k
                });
                // step_tau is only used for summaries over all created children
                normalize(&mut new_leaves);
            }
        }

        let mut modes: Vec<ModeSummary> = (0..mode_count)
            .map(|mode| ModeSummary {
                mode,
                children: 0,
                best_log_tau: f64::NEG_INFINITY,
                posterior_mass: 0.0,
            })
            .collect();
        for &(m, tau) in &step_tau {
            modes[m].children += 1;
            modes[m].best_log_tau = modes[m].best_log_tau.max(tau);
        }
        for leaf in &new_leaves {
            modes[leaf.last_mode.expect("extended leaf")].posterior_mass +=
                leaf.log_posterior.exp();
        }

        self.leaves = new_leaves;
        self.step_index += 1;
        match self.config.marginalization {
            Marginalization::Keep => {}
            Marginalization::FixedLag(n) => self.retire_before(self.fixed_lag_cut(n)),
            Marginalization::BeforeLastFork => self.retire_before(self.last_fork_cut()),
        }
        self.forest.compact(&mut self.leaves);

        Ok(StepReport {
            timestep: self.step_index - 1,
            prune,
            leaves_after_extend,
            impossible,
            capped,
            leaves_final: self.leaves.len(),
            modes,
        })
    }

    /// Indices of leaves at or above `threshold`, or the best leaf alone.
    fn surviving(&self, threshold: f64, outcome: &mut PruneOutcome) -> Vec<usize> {
        let mut keep: Vec<usize> = (0..self.leaves.len())
            .filter(|&i| self.leaves[i].log_posterior.exp() >= threshold)
            .collect();
        if keep.is_empty() {
            let best = best_leaf(&self.leaves);
            warn!(
                "prune threshold {threshold} removes every hypothesis; keeping the best one (p = {})",
                self.leaves[best].log_posterior.exp()
            );
            keep.push(best);
            outcome.kept_best_only = true;
        }
        outcome.after = keep.len();
        keep
    }

    /// Drop leaves below `threshold` and renormalize the survivors.
    pub fn prune(&mut self, threshold: f64) -> Result<PruneOutcome> {
        if !(0.0..1.0).contains(&threshold) {
            return Err(Error::Validation(format!(
                "prune threshold must lie in [0, 1), got {threshold}"
            )));
        }
        let mut outcome = PruneOutcome {
            before: self.leaves.len(),
            after: self.leaves.len(),
            kept_best_only: false,
        };
        let keep = self.surviving(threshold, &mut outcome);
        if keep.len() != self.leaves.len() {
            let mut i = 0;
            let mut j = 0;
            self.leaves.retain(|_| {
                let k = j < keep.len() && keep[j] == i;
                if k {
                    j += 1;
                }
                i += 1;
                k
            });
            normalize(&mut self.leaves);
            self.forest.compact(&mut self.leaves);
        }
        Ok(outcome)
    }

    /// Keep only the newest `lag` mode slots in the tree.
    pub fn marginalize(&mut self, lag: usize) -> Result<()> {
        if lag == 0 {
            return Err(Error::Validation("lag must be positive".into()));
        }
        self.retire_before(self.fixed_lag_cut(lag));
        self.forest.compact(&mut self.leaves);
        Ok(())
    }

    /// Drop the chain shared by every hypothesis before the oldest fork.
    pub fn drop_before_last_fork(&mut self) {
        self.retire_before(self.last_fork_cut());
        self.forest.compact(&mut self.leaves);
    }

    fn fixed_lag_cut(&self, lag: usize) -> usize {
        self.slots().saturating_sub(lag).max(self.first_live_slot)
    }

    fn last_fork_cut(&self) -> usize {
        let slots = self.slots();
        if slots == 0 {
            return 0;
        }
        let newest = slots - 1;
        let widths = self.forest.level_widths(self.first_live_slot, newest);
        match widths.iter().position(|&w| w > 1) {
            Some(0) => self.first_live_slot,
            Some(i) => self.first_live_slot + i - 1,
            None => newest,
        }
    }

    /// Freeze marginals of slots before `cut` and detach them from the tree.
    fn retire_before(&mut self, cut: usize) {
        if cut <= self.first_live_slot {
            return;
        }
        let live = self.live_marginal_rows();
        self.retired
            .extend(live.into_iter().take(cut - self.first_live_slot));
        self.forest.cut_before(cut);
        self.first_live_slot = cut;
    }
}

/// Mask of the `cap` most probable leaves; earlier leaves win ties.
fn top_indices(leaves: &[Leaf], cap: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..leaves.len()).collect();
    order.sort_by(|&a, &b| {
        leaves[b]
            .log_posterior
            .partial_cmp(&leaves[a].log_posterior)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; leaves.len()];
    for &i in order.iter().take(cap) {
        keep[i] = true;
    }
    keep
}
