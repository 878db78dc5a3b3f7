//! Per-device dispatcher.
//!
//! Requests wait in per-leaf FIFO queues. Each dispatch step first serves
//! the starved list (requests promoted by the deadline scan, admitted as if
//! they were High priority but still subject to limits), then draws a
//! leaf by hierarchical lottery among leaves whose head request both fits
//! the device's admission rules and has limit headroom on its whole path.
//! Drawing only among admissible leaves gives the same distribution as
//! re-drawing from the top after a rejection.

mod fragment;
mod lottery;
mod mode;

use std::collections::{BTreeSet, VecDeque};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use fragment::fragment;
pub use lottery::Lottery;
pub use mode::{evaluate_mode, LeafWindow, Mode, ModeThresholds, WindowStats};

use crate::accounting::Ledger;
use crate::cache::BlockAddr;
use crate::devices::{Device, DeviceKind, Direction, IoShape, Posture, SMALL_IO_MAX};
use crate::hierarchy::{NodeId, ResourcePlan};
use crate::tags::{Classification, Priority};
use crate::time::{Micros, SimTime};

#[derive(Debug, Clone, PartialEq)]
pub struct IoRequest {
    pub id: u64,
    pub class: Classification,
    pub shape: IoShape,
    pub addr: BlockAddr,
    pub arrival: SimTime,
    pub enqueue: SimTime,
    /// Set on fragments.
    pub parent: Option<u64>,
    pub promoted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    #[default]
    Iorm,
    /// IORM disabled: global FIFO up to the raw device queue limit.
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub deadline_threshold_us: Micros,
    pub deadline_scan_us: Micros,
    pub mode_eval_us: Micros,
    pub thresholds: ModeThresholds,
    /// Outstanding low-priority requests per HDD in latency-sensitive mode.
    pub low_priority_cap: u32,
    pub fragment_chunk: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            deadline_threshold_us: 1_000_000,
            deadline_scan_us: 100_000,
            mode_eval_us: 5_000_000,
            thresholds: ModeThresholds::default(),
            low_priority_cap: 2,
            fragment_chunk: SMALL_IO_MAX,
        }
    }
}

/// Statistics exported each simulated second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerSnapshot {
    pub mode: Mode,
    pub queued: usize,
    pub starved: usize,
    pub promotions: u64,
    pub starved_dispatches: u64,
    pub lottery_draws: u64,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    cfg: SchedulerConfig,
    mode: Mode,
    plan: Arc<ResourcePlan>,
    paths: Vec<Vec<NodeId>>,
    lottery: Lottery,
    queues: Vec<VecDeque<IoRequest>>,
    fifo: VecDeque<IoRequest>,
    starved: VecDeque<IoRequest>,
    /// Leaves with a non-empty queue.
    backlogged: BTreeSet<NodeId>,
    eligible: Vec<NodeId>,
    rng: ChaCha8Rng,
    promotions: u64,
    promotions_by_leaf: Vec<u64>,
    starved_dispatches: u64,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, cfg: SchedulerConfig, plan: Arc<ResourcePlan>, rng: ChaCha8Rng) -> Self {
        let mut s = Scheduler {
            kind,
            cfg,
            mode: Mode::Normal,
            lottery: Lottery::new(&plan),
            plan: plan.clone(),
            paths: Vec::new(),
            queues: Vec::new(),
            fifo: VecDeque::new(),
            starved: VecDeque::new(),
            backlogged: BTreeSet::new(),
            eligible: Vec::new(),
            rng,
            promotions: 0,
            promotions_by_leaf: Vec::new(),
            starved_dispatches: 0,
        };
        s.set_plan(plan);
        s
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn plan(&self) -> &Arc<ResourcePlan> {
        &self.plan
    }

    /// Path of a leaf, leaf first.
    pub fn path(&self, leaf: NodeId) -> &[NodeId] {
        &self.paths[leaf.index()]
    }

    /// Adopts a new plan snapshot. Requests queued at ids that are no longer
    /// leaves move to the default leaf.
    pub fn set_plan(&mut self, plan: Arc<ResourcePlan>) {
        let bound = plan.id_bound();
        self.queues.resize_with(bound.max(self.queues.len()), VecDeque::new);
        self.promotions_by_leaf.resize(bound.max(self.promotions_by_leaf.len()), 0);
        self.paths = vec![Vec::new(); bound];
        for &leaf in plan.leaves() {
            self.paths[leaf.index()] = plan.ancestry(leaf);
        }
        self.lottery = Lottery::new(&plan);
        let default = plan.default_leaf();
        let mut orphans = Vec::new();
        for (i, q) in self.queues.iter_mut().enumerate() {
            if !q.is_empty() && !plan.is_leaf(NodeId(i as u32)) {
                orphans.extend(q.drain(..));
            }
        }
        orphans.sort_by_key(|r| (r.enqueue, r.id));
        for mut r in orphans {
            r.class.leaf = default;
            self.queues[default.index()].push_back(r);
        }
        for r in self.starved.iter_mut().chain(self.fifo.iter_mut()) {
            if !plan.is_leaf(r.class.leaf) {
                r.class.leaf = default;
            }
        }
        self.backlogged = (0..self.queues.len())
            .filter(|&i| !self.queues[i].is_empty())
            .map(|i| NodeId(i as u32))
            .collect();
        self.plan = plan;
    }

    pub fn posture(&self, kind: DeviceKind) -> Posture {
        match self.kind {
            SchedulerKind::Bypass => Posture { bypass: true, ..Posture::default() },
            SchedulerKind::Iorm => Posture {
                bypass: false,
                low_cap: (self.mode == Mode::LatencySensitive && kind == DeviceKind::Hdd)
                    .then_some(self.cfg.low_priority_cap),
                solo: self.mode == Mode::Solo,
            },
        }
    }

    /// Whether a request would be split on this device in the current mode.
    pub fn should_fragment(&self, kind: DeviceKind, req: &IoRequest) -> bool {
        self.kind == SchedulerKind::Iorm
            && self.mode == Mode::LatencySensitive
            && kind == DeviceKind::Hdd
            && req.shape.priority == Priority::Low
            && req.shape.direction == Direction::Read
            && req.shape.size > self.cfg.fragment_chunk
    }

    /// Queues a request, fragmenting it when the mode calls for it. Returns
    /// the number of pieces queued.
    pub fn enqueue(&mut self, mut req: IoRequest, now: SimTime, kind: DeviceKind, next_id: &mut u64) -> usize {
        req.enqueue = now;
        if !self.plan.is_leaf(req.class.leaf) {
            req.class.leaf = self.plan.default_leaf();
        }
        let pieces = if self.should_fragment(kind, &req) {
            fragment(&req, self.cfg.fragment_chunk, || {
                let id = *next_id;
                *next_id += 1;
                id
            })
        } else {
            vec![req]
        };
        let n = pieces.len();
        for p in pieces {
            match self.kind {
                SchedulerKind::Bypass => self.fifo.push_back(p),
                SchedulerKind::Iorm => {
                    self.backlogged.insert(p.class.leaf);
                    self.queues[p.class.leaf.index()].push_back(p);
                }
            }
        }
        n
    }

    fn admissible(&self, req: &IoRequest, now: SimTime, device: &mut Device, ledger: &Ledger, posture: Posture) -> bool {
        device.can_admit(now, &req.shape, posture)
            && ledger.has_headroom(&self.paths[req.class.leaf.index()], now, device.expected_service(&req.shape) as Micros)
    }

    /// Picks the next request to dispatch on `device`, or `None` when no
    /// queued request is both admissible and within its limits.
    pub fn next(&mut self, now: SimTime, device: &mut Device, ledger: &Ledger) -> Option<IoRequest> {
        let posture = self.posture(device.kind());
        if self.kind == SchedulerKind::Bypass {
            let head = self.fifo.front()?;
            return device.can_admit(now, &head.shape, posture).then(|| self.fifo.pop_front()).flatten();
        }
        // Promotion ignores the original priority, never the limits.
        let starved_posture = Posture { low_cap: None, ..posture };
        if let Some(pos) = (0..self.starved.len()).find(|&i| {
            let mut r = self.starved[i].clone();
            r.shape.priority = Priority::High;
            self.admissible(&r, now, device, ledger, starved_posture)
        }) {
            self.starved_dispatches += 1;
            return self.starved.remove(pos);
        }
        let mut eligible = std::mem::take(&mut self.eligible);
        eligible.clear();
        eligible.extend(self.backlogged.iter().copied().filter(|l| {
            let head = self.queues[l.index()].front().expect("backlogged leaf has a head");
            self.admissible(head, now, device, ledger, posture)
        }));
        let leaf = if self.mode == Mode::Solo {
            eligible.iter().copied().min_by_key(|l| {
                let h = self.queues[l.index()].front().expect("eligible leaf has a head");
                (h.enqueue, h.id)
            })
        } else {
            self.lottery.draw(&self.plan, &eligible, &mut self.rng)
        };
        self.eligible = eligible;
        let leaf = leaf?;
        let req = self.queues[leaf.index()].pop_front();
        if self.queues[leaf.index()].is_empty() {
            self.backlogged.remove(&leaf);
        }
        req
    }

    /// Moves requests that have waited longer than the threshold to the
    /// starved list, skipping entities without limit headroom.
    pub fn deadline_scan(&mut self, now: SimTime, ledger: &Ledger) -> u64 {
        if self.kind == SchedulerKind::Bypass {
            return 0;
        }
        let mut promoted = 0;
        let mut batch = Vec::new();
        let backlogged: Vec<NodeId> = self.backlogged.iter().copied().collect();
        for leaf in backlogged {
            if !ledger.has_headroom(&self.paths[leaf.index()], now, 0) {
                continue;
            }
            let q = &mut self.queues[leaf.index()];
            while q.front().is_some_and(|r| now.since(r.enqueue) > self.cfg.deadline_threshold_us) {
                let mut r = q.pop_front().expect("front exists");
                r.promoted = true;
                batch.push(r);
                self.promotions_by_leaf[leaf.index()] += 1;
                promoted += 1;
            }
            if q.is_empty() {
                self.backlogged.remove(&leaf);
            }
        }
        batch.sort_by_key(|r| (r.enqueue, r.id));
        self.starved.extend(batch);
        self.promotions += promoted;
        promoted
    }

    pub fn queued(&self) -> usize {
        self.fifo.len() + self.starved.len() + self.queues.iter().map(VecDeque::len).sum::<usize>()
    }

    pub fn queue_len(&self, leaf: NodeId) -> usize {
        self.queues.get(leaf.index()).map_or(0, VecDeque::len)
    }

    /// Every queued request, in no particular order.
    pub fn queued_requests(&self) -> impl Iterator<Item = &IoRequest> {
        self.fifo.iter().chain(self.starved.iter()).chain(self.queues.iter().flatten())
    }

    pub fn promotions(&self) -> u64 {
        self.promotions
    }

    pub fn promotions_for(&self, leaf: NodeId) -> u64 {
        self.promotions_by_leaf.get(leaf.index()).copied().unwrap_or(0)
    }

    pub fn lottery_draws(&self) -> u64 {
        self.lottery.draws()
    }

    pub fn snapshot(&self) -> SchedulerSnapshot {
        SchedulerSnapshot {
            mode: self.mode,
            queued: self.queued(),
            starved: self.starved.len(),
            promotions: self.promotions,
            starved_dispatches: self.starved_dispatches,
            lottery_draws: self.lottery.draws(),
        }
    }
}
