use crate::gaussian::{GaussianConditional, GaussianDensity};

/// Index of a node in the smoother's arena.
pub type NodeId = usize;

/// One eliminated conditional `p(x_k | x_{k+1})` under mode `mode` at slot `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub conditional: GaussianConditional,
    /// Mode governing the transition this node eliminated.
    pub mode: usize,
    /// `None` for a root, either the original root or one created by marginalization.
    pub parent: Option<NodeId>,
    /// Mode slot, equal to the timestep of the conditional's frontal variable.
    pub slot: usize,
}

/// Terminal density of one hypothesis together with its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    /// Density on the newest state under this mode history.
    pub density: GaussianDensity,
    /// Newest conditional on this branch; `None` before the first step.
    pub tail: Option<NodeId>,
    /// Newest mode of the history, kept even if the branch is marginalized.
    pub last_mode: Option<usize>,
    /// Normalized log posterior of the mode history.
    pub log_posterior: f64,
    /// Accumulated log likelihood factor, without the Markov prior.
    pub log_tau: f64,
}

/// Arena of tree nodes shared by all leaves. Parents always precede children.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct Forest {
    pub nodes: Vec<TreeNode>,
}

impl Forest {
    pub fn push(&mut self, node: TreeNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Node ids from `tail` back to its root, newest first.
    pub fn lineage(&self, tail: Option<NodeId>) -> impl Iterator<Item = &TreeNode> + '_ {
        let mut cur = tail;
        std::iter::from_fn(move || {
            let id = cur?;
            let node = &self.nodes[id];
            cur = node.parent;
            Some(node)
        })
    }

    /// Detach every node older than `first_slot` and drop unreferenced nodes.
    pub fn cut_before(&mut self, first_slot: usize) {
        let slots: Vec<usize> = self.nodes.iter().map(|n| n.slot).collect();
        for node in &mut self.nodes {
            if let Some(p) = node.parent {
                if slots[p] < first_slot {
                    node.parent = None;
                }
            }
        }
    }

    /// Keep only nodes reachable from `leaves`, rewriting ids in place.
    pub fn compact(&mut self, leaves: &mut [Leaf]) {
        let mut live = vec![false; self.nodes.len()];
        for leaf in leaves.iter() {
            let mut cur = leaf.tail;
            while let Some(id) = cur {
                if live[id] {
                    break;
                }
                live[id] = true;
                cur = self.nodes[id].parent;
            }
        }
        if live.iter().all(|&l| l) {
            return;
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut kept = Vec::with_capacity(live.iter().filter(|&&l| l).count());
        for (id, node) in self.nodes.drain(..).enumerate() {
            if live[id] {
                remap[id] = kept.len();
                kept.push(node);
            }
        }
        for node in &mut kept {
            node.parent = node.parent.map(|p| remap[p]);
        }
        for leaf in leaves.iter_mut() {
            leaf.tail = leaf.tail.map(|t| remap[t]);
        }
        self.nodes = kept;
    }

    /// Number of roots among live nodes.
    pub fn roots(&self) -> usize {
        self.nodes.iter().filter(|n| n.parent.is_none()).count()
    }

    /// Number of distinct nodes at each slot in `first..=last`.
    pub fn level_widths(&self, first: usize, last: usize) -> Vec<usize> {
        let mut widths = vec![0; last + 1 - first];
        for n in &self.nodes {
            if n.slot >= first && n.slot <= last {
                widths[n.slot - first] += 1;
            }
        }
        widths
    }
}
