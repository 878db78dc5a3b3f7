//! Workload-adaptive scheduling modes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::devices::IoShape;
use crate::hierarchy::{NodeId, Objective};
use crate::tags::Priority;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Normal,
    Solo,
    LatencySensitive,
    ThroughputOriented,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LeafWindow {
    pub requests: u64,
    pub small: u64,
    pub high: u64,
}

/// Request mix observed since the last evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowStats {
    pub leaves: BTreeMap<NodeId, LeafWindow>,
}

impl WindowStats {
    pub fn record(&mut self, leaf: NodeId, shape: &IoShape) {
        let w = self.leaves.entry(leaf).or_default();
        w.requests += 1;
        w.small += shape.is_small() as u64;
        w.high += (shape.priority == Priority::High) as u64;
    }

    pub fn clear(&mut self) {
        self.leaves.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeThresholds {
    /// Share of small requests that marks a High-priority leaf interactive.
    pub small_fraction: f64,
    /// Share of large requests that marks the window as batch traffic.
    pub large_fraction: f64,
}

impl Default for ModeThresholds {
    fn default() -> Self {
        ModeThresholds { small_fraction: 0.7, large_fraction: 0.7 }
    }
}

pub fn evaluate_mode(stats: &WindowStats, objective: Objective, th: &ModeThresholds) -> Mode {
    match objective {
        Objective::LowLatency => return Mode::LatencySensitive,
        Objective::HighThroughput => return Mode::ThroughputOriented,
        Objective::Balanced => return Mode::Normal,
        Objective::Auto => {}
    }
    let active: Vec<&LeafWindow> = stats.leaves.values().filter(|w| w.requests > 0).collect();
    if active.len() == 1 {
        return Mode::Solo;
    }
    let interactive = active
        .iter()
        .any(|w| 2 * w.high > w.requests && w.small as f64 > th.small_fraction * w.requests as f64);
    if interactive {
        return Mode::LatencySensitive;
    }
    let total: u64 = active.iter().map(|w| w.requests).sum();
    let large: u64 = active.iter().map(|w| w.requests - w.small).sum();
    if total > 0 && large as f64 > th.large_fraction * total as f64 {
        return Mode::ThroughputOriented;
    }
    Mode::Normal
}
