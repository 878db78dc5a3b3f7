//! Cost-based utilization accounting.
//!
//! Cost is device busy time normalized by the device's rated capacity and
//! is charged when a request completes. Every node on the request's path
//! accumulates it, so CDB and PDB totals are sums of their leaves.
//!
//! Nodes that carry their own limit are enforcement points. Each point has
//! a budget equal to the product of limits along its path, a carry-forward
//! credit clamped to a few percentage points, and a throttle flag. Within a
//! one-second frame of five quanta, a point may dispatch while its
//! frame-to-date consumption plus in-flight reservations stays below
//! `(budget + carry) × available × j`, where `j` is the quantum in which the
//! new request is expected to complete. At each quantum boundary the flag is
//! set when frame-to-date utilization exceeds `budget + carry`; at each frame
//! boundary the carry absorbs `budget − utilization`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::{DeviceModel, IoShape};
use crate::hierarchy::{NodeId, ResourcePlan};
use crate::time::{Micros, SimTime, MICROS_PER_SEC};

/// Slack for floating-point comparisons against budgets.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountingConfig {
    pub quantum_us: Micros,
    pub quanta_per_interval: u32,
    /// Carry-forward bound as a fraction (0.03 = 3 percentage points).
    pub clamp: f64,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        AccountingConfig { quantum_us: 200_000, quanta_per_interval: 5, clamp: 0.03 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccountingError {
    #[error("target needs {0:.4} of the device set")]
    InfeasibleTarget(f64),
    #[error("empty device set or I/O profile")]
    EmptyInput,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct NodeAcct {
    budget: Option<f64>,
    carry: f64,
    throttled: bool,
    consumed_quantum: f64,
    consumed_frame: f64,
    consumed_total: f64,
    in_flight: f64,
    last_frame_util: f64,
    throttled_quanta: u64,
    evaluated_quanta: u64,
}

/// Outcome of a quantum boundary for one enforcement point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrottleDecision {
    pub node: NodeId,
    pub utilization: f64,
    pub threshold: f64,
    pub throttled: bool,
}

/// One row of the per-interval utilization report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationRow {
    pub path: String,
    pub utilization: f64,
    pub effective_budget: Option<f64>,
    pub throttled: bool,
    pub carry_forward: f64,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    cfg: AccountingConfig,
    /// Cost units available per quantum across all devices.
    available: f64,
    nodes: Vec<NodeAcct>,
    points: Vec<NodeId>,
    quantum_start: SimTime,
    /// Zero-based quantum index within the current frame.
    quantum_index: u32,
    quanta: u64,
    intervals: u64,
}

impl Ledger {
    pub fn new(cfg: AccountingConfig, device_count: usize, plan: &ResourcePlan) -> Self {
        let available = cfg.quantum_us as f64 * device_count as f64;
        let mut ledger = Ledger {
            cfg,
            available,
            nodes: Vec::new(),
            points: Vec::new(),
            quantum_start: SimTime::ZERO,
            quantum_index: 0,
            quanta: 0,
            intervals: 0,
        };
        ledger.rebind(plan);
        ledger
    }

    pub fn config(&self) -> &AccountingConfig {
        &self.cfg
    }

    /// Adopts a new plan. Ids are stable across plan versions, so state of
    /// surviving nodes carries over.
    pub fn rebind(&mut self, plan: &ResourcePlan) {
        if self.nodes.len() < plan.id_bound() {
            self.nodes.resize(plan.id_bound(), NodeAcct::default());
        }
        for acct in &mut self.nodes {
            acct.budget = None;
        }
        self.points.clear();
        for id in plan.limited_nodes() {
            let alloc = plan.effective_allocation(id).expect("plan node");
            self.nodes[id.index()].budget = Some(alloc.effective_limit);
            self.points.push(id);
        }
        for acct in self.nodes.iter_mut().filter(|a| a.budget.is_none()) {
            acct.carry = 0.0;
            acct.throttled = false;
        }
    }

    pub fn enforcement_points(&self) -> &[NodeId] {
        &self.points
    }

    pub fn available_per_quantum(&self) -> f64 {
        self.available
    }

    fn threshold(&self, id: NodeId) -> Option<f64> {
        let a = &self.nodes[id.index()];
        a.budget.map(|b| b + a.carry)
    }

    /// Whether every enforcement point on `path` can take another request
    /// that should finish `service` microseconds from `now`.
    pub fn has_headroom(&self, path: &[NodeId], now: SimTime, service: Micros) -> bool {
        let into = now.since(self.quantum_start) + service;
        let ahead = (into / self.cfg.quantum_us) as u32;
        let j = (self.quantum_index + 1 + ahead).min(self.cfg.quanta_per_interval) as f64;
        path.iter().all(|id| {
            let a = &self.nodes[id.index()];
            match a.budget {
                None => true,
                Some(b) => !a.throttled && a.consumed_frame + a.in_flight < (b + a.carry) * self.available * j - EPS,
            }
        })
    }

    /// Like [`has_headroom`](Self::has_headroom) but ignores the dispatch
    /// gate and looks only at boundary flags.
    pub fn is_throttled(&self, path: &[NodeId]) -> bool {
        path.iter().any(|id| self.nodes[id.index()].throttled)
    }

    pub fn reserve(&mut self, path: &[NodeId], expected_cost: f64) {
        for id in path {
            let a = &mut self.nodes[id.index()];
            if a.budget.is_some() {
                a.in_flight += expected_cost;
            }
        }
    }

    /// Charges a completed request to every node on its path and releases
    /// the reservation taken at dispatch.
    pub fn record_completion(&mut self, path: &[NodeId], reserved: f64, service: Micros, rated_capacity: f64) -> f64 {
        let cost = service as f64 / rated_capacity;
        for id in path {
            let a = &mut self.nodes[id.index()];
            a.consumed_quantum += cost;
            a.consumed_frame += cost;
            a.consumed_total += cost;
            if a.budget.is_some() {
                a.in_flight = (a.in_flight - reserved).max(0.0);
            }
        }
        cost
    }

    /// Closes the current quantum; closes the frame as well every
    /// `quanta_per_interval` quanta.
    pub fn quantum_boundary(&mut self, now: SimTime) -> Vec<ThrottleDecision> {
        let j = (self.quantum_index + 1) as f64;
        let mut decisions = Vec::with_capacity(self.points.len());
        for &id in &self.points {
            let threshold = self.threshold(id).expect("enforcement point");
            let a = &mut self.nodes[id.index()];
            let utilization = a.consumed_frame / (self.available * j);
            a.throttled = utilization > threshold + EPS;
            a.evaluated_quanta += 1;
            a.throttled_quanta += a.throttled as u64;
            decisions.push(ThrottleDecision { node: id, utilization, threshold, throttled: a.throttled });
        }
        for a in &mut self.nodes {
            a.consumed_quantum = 0.0;
        }
        self.quanta += 1;
        self.quantum_start = now;
        self.quantum_index += 1;
        if self.quantum_index == self.cfg.quanta_per_interval {
            self.interval_reconcile();
            self.quantum_index = 0;
        }
        decisions
    }

    fn interval_reconcile(&mut self) {
        let frame = self.available * self.cfg.quanta_per_interval as f64;
        let clamp = self.cfg.clamp;
        for a in &mut self.nodes {
            a.last_frame_util = a.consumed_frame / frame;
            if let Some(b) = a.budget {
                a.carry = (a.carry + b - a.last_frame_util).clamp(-clamp, clamp);
            }
            a.consumed_frame = 0.0;
        }
        self.intervals += 1;
    }

    pub fn quanta(&self) -> u64 {
        self.quanta
    }

    pub fn intervals(&self) -> u64 {
        self.intervals
    }

    pub fn carry_forward(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].carry
    }

    pub fn throttled(&self, id: NodeId) -> bool {
        self.nodes[id.index()].throttled
    }

    pub fn throttle_stats(&self, id: NodeId) -> (u64, u64) {
        let a = &self.nodes[id.index()];
        (a.throttled_quanta, a.evaluated_quanta)
    }

    pub fn consumed_total(&self, id: NodeId) -> f64 {
        self.nodes.get(id.index()).map_or(0.0, |a| a.consumed_total)
    }

    pub fn in_flight(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].in_flight
    }

    /// Utilization of the last closed frame.
    pub fn last_frame_utilization(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].last_frame_util
    }

    /// Rows for the last closed frame, one per plan node.
    pub fn report(&self, plan: &ResourcePlan) -> Vec<UtilizationRow> {
        plan.nodes()
            .filter(|n| n.id != NodeId::ROOT)
            .map(|n| {
                let a = &self.nodes[n.id.index()];
                UtilizationRow {
                    path: plan.path(n.id),
                    utilization: a.last_frame_util,
                    effective_budget: plan
                        .effective_allocation(n.id)
                        .ok()
                        .filter(|e| e.binding_node.is_some())
                        .map(|e| e.effective_limit),
                    throttled: a.throttled,
                    carry_forward: a.carry,
                }
            })
            .collect()
    }
}

/// Renders report rows as aligned columns.
pub fn format_report(rows: &[UtilizationRow]) -> String {
    let width = rows.iter().map(|r| r.path.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<width$}  {:>8}  {:>8}  {:>9}  {:>6}\n", "path", "util%", "budget%", "carry_pp", "thr");
    for r in rows {
        let budget = r.effective_budget.map_or("-".to_owned(), |b| format!("{:.3}", b * 100.0));
        out.push_str(&format!(
            "{:<width$}  {:>8.3}  {:>8}  {:>9.3}  {:>6}\n",
            r.path,
            r.utilization * 100.0,
            budget,
            r.carry_forward * 100.0,
            if r.throttled { "yes" } else { "no" }
        ));
    }
    out
}

/// Mean normalized cost per I/O of a weighted profile spread evenly over
/// `devices`.
fn mean_cost(profile: &[(IoShape, f64)], devices: &[DeviceModel]) -> Result<f64, AccountingError> {
    let total_weight: f64 = profile.iter().map(|(_, w)| w).sum();
    if devices.is_empty() || profile.is_empty() || !(total_weight > 0.0) {
        return Err(AccountingError::EmptyInput);
    }
    let per_device = devices
        .iter()
        .map(|d| profile.iter().map(|(s, w)| w * d.mean_service_time(s, false)).sum::<f64>() / total_weight / d.rated_capacity);
    Ok(per_device.sum::<f64>() / devices.len() as f64)
}

/// Converts an IOPS target into a fraction of the device set's capacity.
pub fn iops_to_percent(iops: f64, profile: &[(IoShape, f64)], devices: &[DeviceModel]) -> Result<f64, AccountingError> {
    let fraction = iops * mean_cost(profile, devices)? / (devices.len() as f64 * MICROS_PER_SEC as f64);
    if fraction > 1.0 {
        return Err(AccountingError::InfeasibleTarget(fraction));
    }
    Ok(fraction)
}

pub fn percent_to_iops(fraction: f64, profile: &[(IoShape, f64)], devices: &[DeviceModel]) -> Result<f64, AccountingError> {
    if fraction > 1.0 {
        return Err(AccountingError::InfeasibleTarget(fraction));
    }
    Ok(fraction * devices.len() as f64 * MICROS_PER_SEC as f64 / mean_cost(profile, devices)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{Direction, Locality, KIB};
    use crate::hierarchy::{build_plan, Level, NodeSpec, PlanSpec};
    use crate::tags::Priority;

    fn plan(limit: f64) -> ResourcePlan {
        build_plan(PlanSpec::new(
            1,
            vec![
                NodeSpec::new("A", Level::Cdb, None).limit(limit),
                NodeSpec::new("B", Level::Cdb, None).default_leaf(),
            ],
        ))
        .unwrap()
    }

    fn leaf_path(plan: &ResourcePlan, name: &str) -> Vec<NodeId> {
        let id = plan.lookup(name).unwrap();
        let leaf = *plan.leaves().iter().find(|l| plan.ancestry(**l).contains(&id)).unwrap();
        plan.ancestry(leaf)
    }

    fn run_quanta(ledger: &mut Ledger, n: u64, per_quantum: Micros) -> Vec<ThrottleDecision> {
        let mut out = Vec::new();
        for _ in 0..n {
            let now = SimTime(ledger.quanta() * 200_000 + 200_000);
            if per_quantum > 0 {
                let p = ledger.points.clone();
                ledger.record_completion(&p, 0.0, per_quantum, 1.0);
            }
            out.extend(ledger.quantum_boundary(now));
        }
        out
    }

    #[test]
    fn normalization() {
        let p = plan(0.1);
        let mut l = Ledger::new(AccountingConfig::default(), 1, &p);
        let path = leaf_path(&p, "A");
        assert_eq!(l.record_completion(&path, 0.0, 6000, 1.0), 6000.0);
        assert_eq!(l.record_completion(&path, 0.0, 6000, 2.0), 3000.0);
        let b = leaf_path(&p, "B");
        assert_eq!(l.consumed_total(b[0]), 0.0);
        // Costs sum upward through every ancestor.
        assert_eq!(l.consumed_total(path[0]), l.consumed_total(*path.last().unwrap()));
    }

    #[test]
    fn throttle_rule() {
        let p = plan(0.1);
        let a = p.lookup("A").unwrap();
        let mut l = Ledger::new(AccountingConfig::default(), 1, &p);
        let d = run_quanta(&mut l, 1, 24_000);
        assert!(d[0].throttled, "12% against a 10% limit");
        let mut l = Ledger::new(AccountingConfig::default(), 1, &p);
        l.nodes[a.index()].carry = 0.03;
        let d = run_quanta(&mut l, 1, 24_000);
        assert!(!d[0].throttled, "12% against 10% + 3pp");
        let unlimited = p.lookup("B").unwrap();
        assert!(!l.enforcement_points().contains(&unlimited));
    }

    #[test]
    fn reconcile_equilibrium_and_clamp() {
        let p = plan(0.1);
        let a = p.lookup("A").unwrap();
        let mut l = Ledger::new(AccountingConfig::default(), 1, &p);
        run_quanta(&mut l, 5, 20_000);
        assert!(l.carry_forward(a).abs() < 1e-12);
        // Idle for ten intervals: credit stops at the clamp.
        run_quanta(&mut l, 50, 0);
        assert!((l.carry_forward(a) - 0.03).abs() < 1e-12);
        // Over-consumer goes negative.
        run_quanta(&mut l, 10, 40_000);
        assert!((l.carry_forward(a) + 0.03).abs() < 1e-12);
    }

    #[test]
    fn gate_blocks_at_budget() {
        let p = plan(0.1);
        let path = leaf_path(&p, "A");
        let mut l = Ledger::new(AccountingConfig::default(), 1, &p);
        assert!(l.has_headroom(&path, SimTime(0), 500));
        l.reserve(&path, 19_999.0);
        assert!(l.has_headroom(&path, SimTime(0), 500));
        l.reserve(&path, 1.0);
        assert!(!l.has_headroom(&path, SimTime(0), 500));
        // Completion expected in the next quantum sees that quantum's budget.
        assert!(l.has_headroom(&path, SimTime(199_800), 500));
        l.record_completion(&path, 20_000.0, 20_000, 1.0);
        assert_eq!(l.in_flight(path[0]), 0.0);
    }

    #[test]
    fn report_shows_multiplicative_budget() {
        let spec = PlanSpec::new(
            1,
            vec![
                NodeSpec::new("C", Level::Cdb, None).limit(0.5),
                NodeSpec::new("P", Level::Pdb, Some("C")).limit(0.2).default_leaf(),
            ],
        );
        let p = build_plan(spec).unwrap();
        let l = Ledger::new(AccountingConfig::default(), 1, &p);
        let rows = l.report(&p);
        let row = rows.iter().find(|r| r.path == "C/P").unwrap();
        assert!((row.effective_budget.unwrap() - 0.1).abs() < 1e-12);
        assert!(format_report(&rows).contains("10.000"));
    }

    #[test]
    fn iops_percent_round_trip() {
        let profile = [(IoShape::new(8 * KIB, Direction::Read, Locality::Random, Priority::High), 1.0)];
        let one = [DeviceModel::hdd()];
        let two = [DeviceModel::hdd(), DeviceModel::hdd()];
        assert_eq!(iops_to_percent(0.0, &profile, &one).unwrap(), 0.0);
        let f1 = iops_to_percent(100.0, &profile, &one).unwrap();
        let f2 = iops_to_percent(100.0, &profile, &two).unwrap();
        assert!((f1 / f2 - 2.0).abs() < 1e-12);
        // 100 IOPS at 6039 µs each is 60.39% of one disk.
        assert!((f1 - 100.0 * (6000.0 + 8192.0 / (1048576.0 / 5000.0)) / 1e6).abs() < 1e-12);
        let back = percent_to_iops(f1, &profile, &one).unwrap();
        assert!((back - 100.0).abs() / 100.0 < 1e-6);
        assert!(matches!(iops_to_percent(1000.0, &profile, &one), Err(AccountingError::InfeasibleTarget(_))));
    }
}
