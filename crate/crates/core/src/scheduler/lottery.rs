//! Hierarchical lottery over the plan tree.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::hierarchy::{NodeId, ResourcePlan};

/// Draws a leaf by descending the tree, picking one eligible child per level
/// with probability proportional to its shares. A draw touches only the
/// eligible leaves' ancestor paths and the children of the nodes it descends
/// through, never the whole tree.
#[derive(Debug, Clone)]
pub struct Lottery {
    /// Node is on an eligible leaf's path when its stamp equals `epoch`.
    stamp: Vec<u64>,
    epoch: u64,
    draws: u64,
}

impl Lottery {
    pub fn new(plan: &ResourcePlan) -> Self {
        Lottery { stamp: vec![0; plan.id_bound()], epoch: 0, draws: 0 }
    }

    /// Random numbers consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn draw(&mut self, plan: &ResourcePlan, eligible: &[NodeId], rng: &mut ChaCha8Rng) -> Option<NodeId> {
        if eligible.is_empty() {
            return None;
        }
        if self.stamp.len() < plan.id_bound() {
            self.stamp.resize(plan.id_bound(), 0);
        }
        self.epoch += 1;
        let epoch = self.epoch;
        for &leaf in eligible {
            let mut cur = Some(leaf);
            while let Some(id) = cur.filter(|id| self.stamp[id.index()] != epoch) {
                self.stamp[id.index()] = epoch;
                cur = plan.node(id).parent;
            }
        }
        let mut cur = NodeId::ROOT;
        loop {
            let node = plan.node(cur);
            if node.children.is_empty() {
                return Some(cur);
            }
            let mut candidates = node.children.iter().filter(|c| self.stamp[c.index()] == epoch);
            let total: u64 = candidates.clone().map(|c| plan.node(*c).shares as u64).sum();
            if candidates.clone().count() == 1 {
                cur = *candidates.next().expect("one candidate");
                continue;
            }
            self.draws += 1;
            let mut ticket = rng.random_range(0..total);
            cur = *candidates
                .find(|c| {
                    let s = plan.node(**c).shares as u64;
                    if ticket < s {
                        true
                    } else {
                        ticket -= s;
                        false
                    }
                })
                .expect("ticket within total");
        }
    }
}
