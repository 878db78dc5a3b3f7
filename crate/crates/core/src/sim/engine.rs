//! Single-threaded discrete-event engine.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{Ledger, UtilizationRow};
use crate::cache::{BlockAddr, EntityCacheStats, FlashCache, Lookup};
use crate::devices::{Device, DeviceError, DeviceKind, Direction, IoShape, Started};
use crate::hierarchy::{NodeId, ResourcePlan, IMPLICIT_SUFFIX};
use crate::scheduler::{evaluate_mode, IoRequest, Mode, Scheduler, WindowStats};
use crate::sim::config::{ConfigError, ScenarioConfig};
use crate::sim::event::{Event, EventQueue};
use crate::sim::metrics::EntityMetrics;
use crate::sim::seed::{splitmix64, stream};
use crate::sim::workload::{ArrivalSpec, Generator, Tier};
use crate::tags::{encode_tag, CachePolicy, Classification, ClassificationRegistry};
use crate::time::{Micros, SimTime, MICROS_PER_SEC};

/// First mode evaluation happens this early even when the period is longer.
const FIRST_MODE_EVAL_US: Micros = MICROS_PER_SEC;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl From<DeviceError> for SimError {
    fn from(e: DeviceError) -> Self {
        SimError::Invariant(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
}

/// Request accounting checked at the end of every run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audit {
    pub generated: u64,
    pub completed: u64,
    pub outstanding: u64,
    pub pieces_queued: u64,
    pub pieces_dispatched: u64,
    pub pieces_completed: u64,
    pub pieces_waiting: u64,
    pub pieces_in_flight: u64,
}

impl Audit {
    pub fn check(&self) -> Result<(), String> {
        if self.generated != self.completed + self.outstanding {
            return Err(format!(
                "generated {} != completed {} + outstanding {}",
                self.generated, self.completed, self.outstanding
            ));
        }
        if self.pieces_queued != self.pieces_dispatched + self.pieces_waiting {
            return Err(format!(
                "queued pieces {} != dispatched {} + waiting {}",
                self.pieces_queued, self.pieces_dispatched, self.pieces_waiting
            ));
        }
        if self.pieces_dispatched != self.pieces_completed + self.pieces_in_flight {
            return Err(format!(
                "dispatched pieces {} != completed {} + in flight {}",
                self.pieces_dispatched, self.pieces_completed, self.pieces_in_flight
            ));
        }
        Ok(())
    }
}

/// Utilization rows for one closed frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub end_s: f64,
    pub rows: Vec<UtilizationRow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitStats {
    /// Quanta after warmup closing with the node throttled.
    pub throttled_quanta: u64,
    pub evaluated_quanta: u64,
    pub max_abs_carry: f64,
}

impl LimitStats {
    pub fn throttled_fraction(&self) -> f64 {
        if self.evaluated_quanta == 0 {
            0.0
        } else {
            self.throttled_quanta as f64 / self.evaluated_quanta as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub scheduler: String,
    /// Per leaf path, requests that arrived after warmup.
    pub entities: BTreeMap<String, EntityMetrics>,
    /// Per node path, measured utilization after warmup.
    pub utilization: BTreeMap<String, f64>,
    pub limits: BTreeMap<String, LimitStats>,
    pub intervals: Vec<IntervalReport>,
    /// Per leaf path, bytes completed in each simulated second.
    pub bytes_per_second: BTreeMap<String, Vec<u64>>,
    pub cache: BTreeMap<String, EntityCacheStats>,
    pub modes: Vec<(f64, Mode)>,
    pub promotions: u64,
    pub lottery_draws: u64,
    /// Longest IORM queue wait of any request with no limit on its path.
    pub max_unlimited_wait_us: Micros,
    pub audit: Audit,
    #[serde(skip)]
    pub trace: Option<String>,
}

impl RunResult {
    pub fn measured_s(&self) -> f64 {
        (self.duration_s - self.warmup_s).max(0.0)
    }

    /// Entity named by `key`; see [`path_matches`].
    pub fn entity(&self, key: &str) -> Option<&EntityMetrics> {
        self.entities.iter().find(|(p, _)| path_matches(p, key)).map(|(_, m)| m)
    }

    pub fn mb_per_sec(&self, suffix: &str) -> f64 {
        self.entity(suffix).map_or(0.0, |m| m.mb_per_sec(self.measured_s()))
    }

    pub fn ops_per_sec(&self, suffix: &str) -> f64 {
        self.entity(suffix).map_or(0.0, |m| m.ops_per_sec(self.measured_s()))
    }

    pub fn utilization_of(&self, key: &str) -> f64 {
        self.utilization.iter().find(|(p, _)| path_matches(p, key)).map_or(0.0, |(_, u)| *u)
    }

    /// Per-second completed bytes of the entity named by `key`.
    pub fn bytes_per_second_of(&self, key: &str) -> &[u64] {
        self.bytes_per_second.iter().find(|(p, _)| path_matches(p, key)).map_or(&[], |(_, v)| v.as_slice())
    }
}

/// True when `path` ends with `key`, ignoring trailing implicit default
/// components, so `CDB-A` names `CDB-A/default/default`.
pub fn path_matches(path: &str, key: &str) -> bool {
    let mut trimmed = path;
    loop {
        if trimmed == key || trimmed.ends_with(&format!("/{key}")) {
            return true;
        }
        match trimmed.strip_suffix(&format!("/{IMPLICIT_SUFFIX}")) {
            Some(rest) => trimmed = rest,
            None => return false,
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    workload: u32,
    session: u32,
    class: Classification,
    addr: BlockAddr,
    size: u64,
    direction: Direction,
    arrival: SimTime,
    pieces: u32,
    /// Read missed the flash cache and should be admitted on completion.
    fill_cache: bool,
    measured: bool,
}

#[derive(Debug, Clone)]
struct InFlight {
    parent: u64,
    path: Vec<NodeId>,
    reserved: f64,
    service: Micros,
}

pub struct Engine {
    cfg: ScenarioConfig,
    seed: u64,
    plans: Vec<Arc<ResourcePlan>>,
    registries: Vec<ClassificationRegistry>,
    current: usize,
    /// Path strings of the current plan's nodes, by id.
    names: Vec<String>,
    pending_swap: Option<usize>,
    events: EventQueue,
    devices: Vec<Device>,
    scheds: Vec<Scheduler>,
    hdds: Vec<usize>,
    flashes: Vec<usize>,
    ledger: Ledger,
    cache: Option<FlashCache>,
    gens: Vec<Generator>,
    requests: HashMap<u64, Pending>,
    in_flight: HashMap<u64, InFlight>,
    next_id: u64,
    window: WindowStats,
    end: SimTime,
    warmup: SimTime,
    warm_snapshot: Option<(SimTime, Vec<f64>)>,
    metrics: BTreeMap<String, EntityMetrics>,
    limits: BTreeMap<NodeId, LimitStats>,
    intervals: Vec<IntervalReport>,
    bytes_per_second: BTreeMap<String, Vec<u64>>,
    modes: Vec<(f64, Mode)>,
    max_unlimited_wait: Micros,
    audit: Audit,
    trace: Option<String>,
}

fn device_hash(addr: &BlockAddr, n: usize) -> usize {
    let h = splitmix64(((addr.database_id as u64) << 32 | addr.file_number as u64) ^ splitmix64(addr.block));
    (h % n as u64) as usize
}

impl Engine {
    pub fn new(cfg: ScenarioConfig, seed: u64, opts: RunOptions) -> Result<Self, SimError> {
        let resolved = cfg.validate()?;
        let plan = resolved.plans[0].clone();
        let mut devices = Vec::new();
        for spec in &cfg.devices {
            for _ in 0..spec.count {
                let i = devices.len();
                devices.push(Device::new(i, spec.model(), spec.targets(), stream(seed, "device", i as u64)));
            }
        }
        let hdds: Vec<usize> = (0..devices.len()).filter(|&i| devices[i].kind() == DeviceKind::Hdd).collect();
        let flashes: Vec<usize> = (0..devices.len()).filter(|&i| devices[i].kind() == DeviceKind::Flash).collect();
        for &i in &hdds {
            devices[i].set_degraded_mode(cfg.cache.is_some());
        }
        let scheds = (0..devices.len())
            .map(|i| Scheduler::new(cfg.scheduler, cfg.sched.clone(), plan.clone(), stream(seed, "scheduler", i as u64)))
            .collect();
        let ledger = Ledger::new(cfg.accounting.clone(), devices.len(), &plan);
        let mut cache = cfg.cache.as_ref().map(|c| {
            let mut fc = FlashCache::new(c.config.clone());
            for (name, q) in &c.quotas {
                fc.set_quota(plan.id_of(name).expect("validated quota node"), *q);
            }
            fc
        });
        let gens: Vec<Generator> = cfg
            .workloads
            .iter()
            .enumerate()
            .map(|(i, w)| Generator::new(w.clone(), stream(seed, "workload", i as u64)))
            .collect();
        if let Some(fc) = cache.as_mut() {
            for g in &gens {
                if g.spec.prewarm_fraction > 0.0 {
                    let probe = crate::tags::IoTag::new(g.spec.database_id, g.spec.file, 0, 1, g.spec.priority())
                        .with_workload_key(g.spec.workload_key);
                    let owner = resolved.registries[0].classify(g.spec.tagged.then_some(&probe)).leaf;
                    fc.prewarm(owner, g.prewarm_blocks());
                }
            }
        }
        let names = node_paths(&plan);
        Ok(Engine {
            end: SimTime::from_secs_f64(cfg.duration_s),
            warmup: SimTime::from_secs_f64(cfg.warmup_s),
            cfg,
            seed,
            names,
            plans: resolved.plans,
            registries: resolved.registries,
            current: 0,
            pending_swap: None,
            events: EventQueue::new(),
            devices,
            scheds,
            hdds,
            flashes,
            ledger,
            cache,
            gens,
            requests: HashMap::new(),
            in_flight: HashMap::new(),
            next_id: 0,
            window: WindowStats::default(),
            warm_snapshot: None,
            metrics: BTreeMap::new(),
            limits: BTreeMap::new(),
            intervals: Vec::new(),
            bytes_per_second: BTreeMap::new(),
            modes: Vec::new(),
            max_unlimited_wait: 0,
            audit: Audit::default(),
            trace: opts.trace.then(String::new),
        })
    }

    fn plan(&self) -> &Arc<ResourcePlan> {
        &self.plans[self.current]
    }

    fn objective(&self) -> crate::hierarchy::Objective {
        self.cfg.objective.unwrap_or(self.plan().objective())
    }

    fn trace_line(&mut self, now: SimTime, kind: &str, id: u64, leaf: NodeId, device: Option<usize>) {
        if self.trace.is_none() {
            return;
        }
        let path = &self.names[leaf.index()];
        let dev = device.map_or("-".to_owned(), |d| d.to_string());
        let t = self.trace.as_mut().expect("trace enabled");
        let _ = writeln!(t, "{} {kind} {id} {path} {dev}", now.micros());
    }

    pub fn run(mut self) -> Result<RunResult, SimError> {
        if self.end > SimTime::ZERO {
            self.schedule_initial();
        }
        if self.warmup == SimTime::ZERO {
            self.take_snapshot(SimTime::ZERO);
        }
        while let Some(t) = self.events.peek_time() {
            if t >= self.end {
                break;
            }
            let (now, ev) = self.events.pop().expect("peeked");
            match ev {
                Event::Arrival { workload, session } => self.on_arrival(now, workload, session)?,
                Event::DeviceComplete { device, request } => self.on_complete(now, device as usize, request)?,
                Event::QuantumBoundary => self.on_quantum(now)?,
                Event::DeadlineScan => {
                    for i in 0..self.scheds.len() {
                        self.scheds[i].deadline_scan(now, &self.ledger);
                    }
                    self.dispatch_all(now)?;
                    self.events.push(now + self.cfg.sched.deadline_scan_us, Event::DeadlineScan);
                }
                Event::ModeEval => {
                    let mode = evaluate_mode(&self.window, self.objective(), &self.cfg.sched.thresholds);
                    self.window.clear();
                    if self.modes.last().is_none_or(|(_, m)| *m != mode) {
                        self.modes.push((now.as_secs_f64(), mode));
                    }
                    for s in &mut self.scheds {
                        s.set_mode(mode);
                    }
                    self.dispatch_all(now)?;
                    self.events.push(now + self.cfg.sched.mode_eval_us, Event::ModeEval);
                }
                Event::PlanSwap { index } => self.pending_swap = Some(index as usize + 1),
            }
        }
        self.finish()
    }

    fn schedule_initial(&mut self) {
        for w in 0..self.gens.len() {
            for (session, t) in self.gens[w].initial_arrivals() {
                self.events.push(t, Event::Arrival { workload: w as u32, session });
            }
        }
        self.events.push(SimTime(self.cfg.accounting.quantum_us), Event::QuantumBoundary);
        self.events.push(SimTime(self.cfg.sched.deadline_scan_us), Event::DeadlineScan);
        self.events.push(SimTime(self.cfg.sched.mode_eval_us.min(FIRST_MODE_EVAL_US)), Event::ModeEval);
        for (i, swap) in self.cfg.plan_swaps.iter().enumerate() {
            self.events.push(SimTime::from_secs_f64(swap.at_s), Event::PlanSwap { index: i as u32 });
        }
    }

    fn take_snapshot(&mut self, now: SimTime) {
        let bound = self.plans.iter().map(|p| p.id_bound()).max().unwrap_or(0);
        let totals = (0..bound).map(|i| self.ledger.consumed_total(NodeId(i as u32))).collect();
        self.warm_snapshot = Some((now, totals));
    }

    fn route(&mut self, gen: usize, class: &Classification, addr: &BlockAddr, direction: Direction) -> (usize, bool) {
        let tier = self.gens[gen].spec.tier;
        let has_cache = self.cache.is_some();
        let pick = |set: &[usize]| set[device_hash(addr, set.len())];
        if direction == Direction::Write {
            if has_cache && class.cache_policy == CachePolicy::WriteBack {
                return (pick(&self.flashes), false);
            }
            return match tier {
                Tier::Hdd => (pick(&self.hdds), false),
                Tier::Flash => (pick(&self.flashes), false),
            };
        }
        match tier {
            Tier::Flash => (pick(&self.flashes), false),
            Tier::Hdd => match self.cache.as_mut().map(|c| c.lookup(class.leaf, addr)) {
                Some(Lookup::Hit) => (pick(&self.flashes), false),
                Some(Lookup::Miss) => (pick(&self.hdds), true),
                None => (pick(&self.hdds), false),
            },
        }
    }

    fn on_arrival(&mut self, now: SimTime, workload: u32, session: u32) -> Result<(), SimError> {
        let w = workload as usize;
        if !self.gens[w].active_at(now) {
            return Ok(());
        }
        if let ArrivalSpec::Closed { sessions, .. } = self.gens[w].spec.arrival {
            if self.gens[w].outstanding() >= sessions {
                return Err(SimError::Invariant(format!(
                    "workload `{}` exceeded {sessions} sessions",
                    self.gens[w].spec.name
                )));
            }
        }
        let g = self.gens[w].generate(session);
        let bytes = encode_tag(&g.tag);
        let tagged = self.gens[w].spec.tagged;
        let class = self.registries[self.current].classify_bytes(tagged.then_some(&bytes[..]));
        let shape = IoShape::new(g.size, g.direction, g.locality, class.priority);
        self.window.record(class.leaf, &shape);
        let (device, fill_cache) = self.route(w, &class, &g.addr, g.direction);
        let id = self.next_id;
        self.next_id += 1;
        self.audit.generated += 1;
        let measured = now >= self.warmup;
        let req = IoRequest {
            id,
            class,
            shape,
            addr: g.addr,
            arrival: now,
            enqueue: now,
            parent: None,
            promoted: false,
        };
        self.trace_line(now, "ARR", id, class.leaf, Some(device));
        let kind = self.devices[device].kind();
        let pieces = self.scheds[device].enqueue(req, now, kind, &mut self.next_id);
        self.audit.pieces_queued += pieces as u64;
        self.requests.insert(
            id,
            Pending {
                workload,
                session,
                class,
                addr: g.addr,
                size: g.size,
                direction: g.direction,
                arrival: now,
                pieces: pieces as u32,
                fill_cache,
                measured,
            },
        );
        if let Some(t) = self.gens[w].next_open_arrival(now) {
            self.events.push(t, Event::Arrival { workload, session });
        }
        self.dispatch(now, device)
    }

    fn dispatch_all(&mut self, now: SimTime) -> Result<(), SimError> {
        for d in 0..self.devices.len() {
            self.dispatch(now, d)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, now: SimTime, d: usize) -> Result<(), SimError> {
        while let Some(req) = self.scheds[d].next(now, &mut self.devices[d], &self.ledger) {
            let path = self.scheds[d].path(req.class.leaf).to_vec();
            let throttled = self.ledger.is_throttled(&path);
            let reserved = self.devices[d].expected_cost(&req.shape);
            self.ledger.reserve(&path, reserved);
            let started = self.devices[d].dispatch(now, req.id, req.shape)?;
            self.audit.pieces_dispatched += 1;
            let parent = req.parent.unwrap_or(req.id);
            let wait = now.since(req.enqueue);
            if path.iter().all(|id| self.plans[self.current].node(*id).limit.is_none()) {
                self.max_unlimited_wait = self.max_unlimited_wait.max(wait);
            }
            let measured = self.requests.get(&parent).is_some_and(|p| p.measured);
            if measured {
                let m = self.entity(req.class.leaf);
                m.queue_us.record(wait as f64);
                m.promotions += req.promoted as u64;
                m.throttled_dispatches += throttled as u64;
            }
            self.trace_line(now, if req.promoted { "DSP*" } else { "DSP" }, req.id, req.class.leaf, Some(d));
            self.in_flight.insert(req.id, InFlight { parent, path, reserved, service: 0 });
            if let Some(s) = started {
                self.on_started(d, s);
            }
        }
        Ok(())
    }

    fn on_started(&mut self, d: usize, s: Started) {
        if let Some(f) = self.in_flight.get_mut(&s.id) {
            f.service = s.service;
        }
        self.events.push(s.done, Event::DeviceComplete { device: d as u32, request: s.id });
    }

    fn entity(&mut self, leaf: NodeId) -> &mut EntityMetrics {
        let path = &self.names[leaf.index()];
        if !self.metrics.contains_key(path) {
            self.metrics.insert(path.clone(), EntityMetrics::new(path.clone()));
        }
        self.metrics.get_mut(path).expect("inserted")
    }

    fn on_complete(&mut self, now: SimTime, d: usize, id: u64) -> Result<(), SimError> {
        let (_, next) = self.devices[d].complete(now, id)?;
        if let Some(s) = next {
            self.on_started(d, s);
        }
        let piece = self
            .in_flight
            .remove(&id)
            .ok_or_else(|| SimError::Invariant(format!("piece {id} completed without dispatch")))?;
        self.audit.pieces_completed += 1;
        let rated = self.devices[d].model.rated_capacity;
        self.ledger.record_completion(&piece.path, piece.reserved, piece.service, rated);
        let parent = self
            .requests
            .get_mut(&piece.parent)
            .ok_or_else(|| SimError::Invariant(format!("piece {id} has no parent request")))?;
        parent.pieces -= 1;
        if parent.pieces == 0 {
            let req = self.requests.remove(&piece.parent).expect("present");
            self.finish_request(now, piece.parent, d, req);
        }
        self.dispatch(now, d)
    }

    fn finish_request(&mut self, now: SimTime, id: u64, d: usize, req: Pending) {
        self.audit.completed += 1;
        self.trace_line(now, "CMP", id, req.class.leaf, Some(d));
        let latency = now.since(req.arrival);
        let sec = now.micros() / MICROS_PER_SEC;
        let path = &self.names[req.class.leaf.index()];
        if !self.bytes_per_second.contains_key(path) {
            self.bytes_per_second.insert(path.clone(), Vec::new());
        }
        let per_sec = self.bytes_per_second.get_mut(path).expect("inserted");
        if per_sec.len() <= sec as usize {
            per_sec.resize(sec as usize + 1, 0);
        }
        per_sec[sec as usize] += req.size;
        if req.measured {
            let m = self.entity(req.class.leaf);
            m.completed += 1;
            m.bytes += req.size;
            m.latency_us.record(latency as f64);
            m.histogram.record(latency);
            if req.fill_cache {
                m.cache_misses += 1;
            } else if self.devices[d].kind() == DeviceKind::Flash
                && self.gens[req.workload as usize].spec.tier == Tier::Hdd
                && req.direction == Direction::Read
            {
                self.entity(req.class.leaf).cache_hits += 1;
            }
        }
        if let Some(cache) = self.cache.as_mut() {
            let admit = req.fill_cache || (req.direction == Direction::Write && req.class.cache_policy == CachePolicy::WriteBack);
            if admit {
                // A zero quota only means the block stays out of the cache.
                let _ = cache.admit(&req.class, req.addr, req.size);
            }
        }
        let g = &mut self.gens[req.workload as usize];
        g.completed();
        if let Some(t) = g.next_closed_arrival(now) {
            self.events.push(t, Event::Arrival { workload: req.workload, session: req.session });
        }
    }

    fn on_quantum(&mut self, now: SimTime) -> Result<(), SimError> {
        let before = self.ledger.intervals();
        let decisions = self.ledger.quantum_boundary(now);
        if now > self.warmup {
            for d in &decisions {
                let st = self.limits.entry(d.node).or_default();
                st.evaluated_quanta += 1;
                st.throttled_quanta += d.throttled as u64;
            }
        }
        if self.ledger.intervals() > before {
            for &p in self.ledger.enforcement_points() {
                let c = self.ledger.carry_forward(p).abs();
                let st = self.limits.entry(p).or_default();
                st.max_abs_carry = st.max_abs_carry.max(c);
            }
            let rows = self.ledger.report(self.plan());
            self.intervals.push(IntervalReport { end_s: now.as_secs_f64(), rows });
        }
        if self.warm_snapshot.is_none() && now >= self.warmup {
            self.take_snapshot(now);
        }
        if let Some(next) = self.pending_swap.take() {
            self.apply_plan(next);
        }
        if let Some(c) = self.cache.as_mut() {
            c.destage(self.cfg.accounting.quantum_us);
        }
        self.dispatch_all(now)?;
        self.events.push(now + self.cfg.accounting.quantum_us, Event::QuantumBoundary);
        Ok(())
    }

    fn apply_plan(&mut self, index: usize) {
        self.current = index;
        let plan = self.plans[index].clone();
        self.names = node_paths(&plan);
        self.ledger.rebind(&plan);
        for s in &mut self.scheds {
            s.set_plan(plan.clone());
        }
    }

    fn finish(mut self) -> Result<RunResult, SimError> {
        let now = self.end;
        let plan = self.plan().clone();
        for s in &self.scheds {
            for r in s.queued_requests() {
                let path = plan.ancestry(r.class.leaf);
                if path.iter().all(|id| plan.node(*id).limit.is_none()) {
                    self.max_unlimited_wait = self.max_unlimited_wait.max(now.since(r.enqueue));
                }
            }
        }
        self.audit.outstanding = self.requests.len() as u64;
        self.audit.pieces_waiting = self.scheds.iter().map(|s| s.queued() as u64).sum();
        self.audit.pieces_in_flight = self.in_flight.len() as u64;
        self.audit.check().map_err(SimError::Invariant)?;

        let mut utilization = BTreeMap::new();
        if let Some((t0, snap)) = &self.warm_snapshot {
            let span = now.since(*t0) as f64 * self.devices.len() as f64;
            if span > 0.0 {
                for n in plan.nodes().filter(|n| n.id != NodeId::ROOT) {
                    let used = self.ledger.consumed_total(n.id) - snap.get(n.id.index()).copied().unwrap_or(0.0);
                    utilization.insert(plan.path(n.id), used / span);
                }
            }
        }
        let limits = self
            .limits
            .iter()
            .filter(|(id, _)| plan.contains(**id))
            .map(|(id, st)| (plan.path(*id), st.clone()))
            .collect();
        let cache = self
            .cache
            .as_ref()
            .map(|c| {
                c.all_stats()
                    .into_iter()
                    .filter(|(id, _)| plan.contains(*id))
                    .map(|(id, st)| (plan.path(id), st))
                    .collect()
            })
            .unwrap_or_default();
        Ok(RunResult {
            scenario: self.cfg.name.clone(),
            seed: self.seed,
            duration_s: self.cfg.duration_s,
            warmup_s: self.cfg.warmup_s,
            scheduler: match self.cfg.scheduler {
                crate::scheduler::SchedulerKind::Iorm => "iorm".to_owned(),
                crate::scheduler::SchedulerKind::Bypass => "bypass".to_owned(),
            },
            entities: self.metrics,
            utilization,
            limits,
            intervals: self.intervals,
            bytes_per_second: self.bytes_per_second,
            cache,
            modes: self.modes,
            promotions: self.scheds.iter().map(|s| s.promotions()).sum(),
            lottery_draws: self.scheds.iter().map(|s| s.lottery_draws()).sum(),
            max_unlimited_wait_us: self.max_unlimited_wait,
            audit: self.audit,
            trace: self.trace,
        })
    }
}

fn node_paths(plan: &ResourcePlan) -> Vec<String> {
    (0..plan.id_bound())
        .map(|i| {
            let id = NodeId(i as u32);
            if plan.contains(id) { plan.path(id) } else { String::new() }
        })
        .collect()
}

/// Validates `cfg` and runs it to completion.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64, opts: RunOptions) -> Result<RunResult, SimError> {
    Engine::new(cfg.clone(), seed, opts)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::suite::{builtin, share_ratio};

    fn short(name: &str, secs: f64) -> ScenarioConfig {
        let mut cfg = builtin(name).unwrap();
        cfg.duration_s = secs;
        cfg.warmup_s = 0.0;
        cfg.plan_swaps.retain(|s| s.at_s < secs);
        cfg
    }

    #[test]
    fn zero_duration_is_empty() {
        let r = run_scenario(&short("noisy-neighbor", 0.0), 1, RunOptions::default()).unwrap();
        assert!(r.entities.is_empty());
        assert_eq!(r.audit, Audit::default());
    }

    #[test]
    fn same_seed_same_result() {
        let cfg = short("noisy-neighbor", 3.0);
        let a = run_scenario(&cfg, 7, RunOptions { trace: true }).unwrap();
        let b = run_scenario(&cfg, 7, RunOptions { trace: true }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace, b.trace);
        let c = run_scenario(&cfg, 8, RunOptions::default()).unwrap();
        assert_ne!(a.entities, c.entities);
    }

    #[test]
    fn trace_lines_balance() {
        let r = run_scenario(&short("deadline:adversarial", 3.0), 1, RunOptions { trace: true }).unwrap();
        let t = r.trace.unwrap();
        let count = |k: &str| t.lines().filter(|l| l.split(' ').nth(1) == Some(k)).count() as u64;
        assert_eq!(count("ARR"), r.audit.generated);
        assert_eq!(count("CMP"), r.audit.completed);
        assert_eq!(count("DSP") + count("DSP*"), r.audit.pieces_dispatched);
        assert!(count("DSP*") > 0);
    }

    #[test]
    fn histogram_matches_completions() {
        let r = run_scenario(&short("cache-governance:50", 4.0), 1, RunOptions::default()).unwrap();
        for m in r.entities.values() {
            assert_eq!(m.histogram.total(), m.completed);
            assert_eq!(m.latency_us.n, m.completed);
        }
    }

    #[test]
    fn fragments_complete_as_one_request() {
        let r = run_scenario(&short("noisy-neighbor", 4.0), 1, RunOptions::default()).unwrap();
        assert!(r.audit.pieces_queued > r.audit.generated);
        r.audit.check().unwrap();
    }

    #[test]
    fn warmup_excludes_early_arrivals() {
        let mut cfg = share_ratio(1);
        cfg.duration_s = 3.0;
        cfg.warmup_s = 0.0;
        let all = run_scenario(&cfg, 1, RunOptions::default()).unwrap();
        cfg.warmup_s = 1.5;
        let late = run_scenario(&cfg, 1, RunOptions::default()).unwrap();
        let n = |r: &RunResult| r.entities.values().map(|m| m.completed).sum::<u64>();
        assert!(n(&late) < n(&all));
        assert_eq!(late.audit, all.audit);
    }
}
