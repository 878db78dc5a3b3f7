//! Synthetic HDD and flash devices.
//!
//! A [`Device`] couples three pieces: the service-time model, the
//! cost-weighted admission counters ([`InFlightState`]) that the scheduler
//! consults before dispatching, and a small channel server that turns
//! admitted requests into completion times. Admitted requests that find no
//! free channel wait inside the device in FIFO order.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tags::Priority;
use crate::time::{Micros, SimTime, MICROS_PER_SEC};

pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * KIB;
/// Requests up to this size are small; fragments are small by construction.
pub const SMALL_IO_MAX: u64 = 128 * KIB;
/// In-flight cost of a large read relative to a small one.
pub const LARGE_COST: u32 = 3;

/// z-score of the 99th percentile of a standard normal.
const Z99: f64 = 2.326_347_874;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviceKind {
    Hdd,
    Flash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Locality {
    Random,
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoClass {
    SmallRead,
    LargeRead,
    Write,
}

impl IoClass {
    pub fn of(size: u64, direction: Direction) -> IoClass {
        match direction {
            Direction::Write => IoClass::Write,
            Direction::Read if size <= SMALL_IO_MAX => IoClass::SmallRead,
            Direction::Read => IoClass::LargeRead,
        }
    }

    /// Weighted read-budget cost; writes use their own counter.
    pub fn read_cost(self) -> u32 {
        match self {
            IoClass::SmallRead => 1,
            IoClass::LargeRead => LARGE_COST,
            IoClass::Write => 0,
        }
    }
}

/// What the device needs to know about a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoShape {
    pub size: u64,
    pub direction: Direction,
    pub locality: Locality,
    pub priority: Priority,
}

impl IoShape {
    pub fn new(size: u64, direction: Direction, locality: Locality, priority: Priority) -> Self {
        IoShape { size, direction, locality, priority }
    }

    pub fn class(&self) -> IoClass {
        IoClass::of(self.size, self.direction)
    }

    pub fn is_small(&self) -> bool {
        self.size <= SMALL_IO_MAX
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HddParams {
    /// Mean of the lognormal positioning time for random I/O.
    pub random_mean_us: f64,
    pub random_sigma: f64,
    /// Fixed positioning time before a sequential transfer.
    pub sequential_position_us: f64,
    pub transfer_bytes_per_sec: f64,
    pub cached_write_min_us: f64,
    pub cached_write_max_us: f64,
}

impl Default for HddParams {
    fn default() -> Self {
        HddParams {
            random_mean_us: 6000.0,
            random_sigma: 0.42,
            sequential_position_us: 2000.0,
            // 1 MiB in 5 ms.
            transfer_bytes_per_sec: MIB as f64 / 0.005,
            cached_write_min_us: 100.0,
            cached_write_max_us: 500.0,
        }
    }
}

impl HddParams {
    fn lognormal(&self) -> LogNormal<f64> {
        let mu = self.random_mean_us.ln() - self.random_sigma * self.random_sigma / 2.0;
        LogNormal::new(mu, self.random_sigma).expect("validated lognormal parameters")
    }

    /// 99th percentile of the random positioning time.
    pub fn random_p99_us(&self) -> f64 {
        let mu = self.random_mean_us.ln() - self.random_sigma * self.random_sigma / 2.0;
        (mu + Z99 * self.random_sigma).exp()
    }

    fn transfer_us(&self, size: u64) -> f64 {
        size as f64 / self.transfer_bytes_per_sec * MICROS_PER_SEC as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlashParams {
    pub read_min_us: f64,
    pub read_max_us: f64,
    /// Bytes above this size add linear transfer time to small reads.
    pub read_base_bytes: u64,
    pub read_bytes_per_sec: f64,
    pub write_min_us: f64,
    pub write_max_us: f64,
    pub write_bytes_per_sec: f64,
}

impl Default for FlashParams {
    fn default() -> Self {
        FlashParams {
            read_min_us: 80.0,
            read_max_us: 200.0,
            read_base_bytes: 8 * KIB,
            read_bytes_per_sec: 2e9,
            write_min_us: 20.0,
            write_max_us: 60.0,
            write_bytes_per_sec: 1e9,
        }
    }
}

impl FlashParams {
    fn read_transfer_us(&self, size: u64) -> f64 {
        size as f64 / self.read_bytes_per_sec * MICROS_PER_SEC as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ServiceModel {
    Hdd(HddParams),
    Flash(FlashParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WriteCacheConfig {
    pub capacity_bytes: u64,
    pub flush_bytes_per_sec: f64,
    pub pressure_threshold: f64,
}

impl Default for WriteCacheConfig {
    fn default() -> Self {
        WriteCacheConfig { capacity_bytes: 64 * MIB, flush_bytes_per_sec: 40e6, pressure_threshold: 0.8 }
    }
}

/// Battery-backed write cache that drains to the platter at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteCacheState {
    pub capacity: u64,
    pub fill: f64,
    pub flush_rate: f64,
    pub pressure_threshold: f64,
}

impl WriteCacheState {
    pub fn new(cfg: &WriteCacheConfig) -> Self {
        WriteCacheState {
            capacity: cfg.capacity_bytes,
            fill: 0.0,
            flush_rate: cfg.flush_bytes_per_sec,
            pressure_threshold: cfg.pressure_threshold,
        }
    }

    /// Drains for `elapsed` microseconds and reports pressure.
    pub fn tick(&mut self, elapsed: Micros) -> bool {
        self.fill = (self.fill - self.flush_rate * elapsed as f64 / MICROS_PER_SEC as f64).max(0.0);
        self.pressure()
    }

    pub fn pressure(&self) -> bool {
        self.fill / self.capacity as f64 > self.pressure_threshold
    }

    /// Absorbs a write if it fits.
    pub fn absorb(&mut self, size: u64) -> bool {
        if self.fill + size as f64 <= self.capacity as f64 {
            self.fill += size as f64;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueueTargets {
    pub read_target: u32,
    pub degraded_read_target: u32,
    pub small_read_floor: u32,
    pub large_read_cap: u32,
    pub write_target: u32,
    pub flash_lowprio_target: u32,
    /// Outstanding limit when IORM is bypassed (and for flash solo mode).
    pub raw_limit: u32,
}

impl QueueTargets {
    pub fn hdd() -> Self {
        QueueTargets {
            read_target: 62,
            degraded_read_target: 32,
            small_read_floor: 32,
            large_read_cap: 10,
            write_target: 8,
            flash_lowprio_target: 8,
            raw_limit: 128,
        }
    }

    pub fn flash() -> Self {
        QueueTargets { raw_limit: 256, ..QueueTargets::hdd() }
    }

    pub fn for_kind(kind: DeviceKind) -> Self {
        match kind {
            DeviceKind::Hdd => QueueTargets::hdd(),
            DeviceKind::Flash => QueueTargets::flash(),
        }
    }
}

impl Default for QueueTargets {
    fn default() -> Self {
        QueueTargets::hdd()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    pub kind: DeviceKind,
    pub service: ServiceModel,
    /// Cost units per second of wall time; service time divided by this is
    /// the normalized cost charged to entities.
    pub rated_capacity: f64,
    pub channels: u32,
    pub write_cache: Option<WriteCacheConfig>,
}

impl DeviceModel {
    pub fn hdd() -> Self {
        DeviceModel {
            kind: DeviceKind::Hdd,
            service: ServiceModel::Hdd(HddParams::default()),
            rated_capacity: 1.0,
            channels: 1,
            write_cache: Some(WriteCacheConfig::default()),
        }
    }

    pub fn flash(channels: u32) -> Self {
        DeviceModel {
            kind: DeviceKind::Flash,
            service: ServiceModel::Flash(FlashParams::default()),
            rated_capacity: channels as f64,
            channels,
            write_cache: None,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let bad = |what: &str| Err(DeviceError::InvalidModel(what.to_owned()));
        if !(self.rated_capacity > 0.0) || !self.rated_capacity.is_finite() {
            return bad("rated_capacity must be positive");
        }
        if self.channels == 0 {
            return bad("channels must be at least 1");
        }
        match &self.service {
            ServiceModel::Hdd(p) => {
                if !(p.random_mean_us > 0.0 && p.random_sigma > 0.0 && p.transfer_bytes_per_sec > 0.0) {
                    return bad("hdd parameters must be positive");
                }
                if !(p.sequential_position_us >= 0.0 && p.cached_write_min_us > 0.0)
                    || p.cached_write_max_us < p.cached_write_min_us
                {
                    return bad("hdd write/position parameters out of range");
                }
            }
            ServiceModel::Flash(p) => {
                if !(p.read_min_us > 0.0 && p.write_min_us > 0.0)
                    || p.read_max_us < p.read_min_us
                    || p.write_max_us < p.write_min_us
                    || !(p.read_bytes_per_sec > 0.0 && p.write_bytes_per_sec > 0.0)
                {
                    return bad("flash parameters out of range");
                }
            }
        }
        if let Some(wc) = &self.write_cache {
            if wc.capacity_bytes == 0 || !(wc.flush_bytes_per_sec > 0.0) || !(0.0..=1.0).contains(&wc.pressure_threshold) {
                return bad("write cache parameters out of range");
            }
        }
        Ok(())
    }

    /// Draws a service time. `cached` says whether an HDD write landed in
    /// the write cache.
    pub fn sample(&self, shape: &IoShape, cached: bool, rng: &mut ChaCha8Rng) -> Micros {
        let us = match &self.service {
            ServiceModel::Hdd(p) => match (shape.direction, shape.locality) {
                (Direction::Write, _) if cached => rng.random_range(p.cached_write_min_us..=p.cached_write_max_us),
                (_, Locality::Sequential) => p.sequential_position_us + p.transfer_us(shape.size),
                (_, Locality::Random) => p.lognormal().sample(rng) + p.transfer_us(shape.size),
            },
            ServiceModel::Flash(p) => match shape.direction {
                Direction::Read if shape.is_small() => {
                    rng.random_range(p.read_min_us..=p.read_max_us)
                        + p.read_transfer_us(shape.size.saturating_sub(p.read_base_bytes))
                }
                Direction::Read => p.read_transfer_us(shape.size),
                Direction::Write => {
                    rng.random_range(p.write_min_us..=p.write_max_us)
                        + shape.size as f64 / p.write_bytes_per_sec * MICROS_PER_SEC as f64
                }
            },
        };
        (us.round() as Micros).max(1)
    }

    /// Closed-form mean of [`sample`](Self::sample).
    pub fn mean_service_time(&self, shape: &IoShape, cached: bool) -> f64 {
        match &self.service {
            ServiceModel::Hdd(p) => match (shape.direction, shape.locality) {
                (Direction::Write, _) if cached => (p.cached_write_min_us + p.cached_write_max_us) / 2.0,
                (_, Locality::Sequential) => p.sequential_position_us + p.transfer_us(shape.size),
                (_, Locality::Random) => p.random_mean_us + p.transfer_us(shape.size),
            },
            ServiceModel::Flash(p) => match shape.direction {
                Direction::Read if shape.is_small() => {
                    (p.read_min_us + p.read_max_us) / 2.0
                        + p.read_transfer_us(shape.size.saturating_sub(p.read_base_bytes))
                }
                Direction::Read => p.read_transfer_us(shape.size),
                Direction::Write => {
                    (p.write_min_us + p.write_max_us) / 2.0
                        + shape.size as f64 / p.write_bytes_per_sec * MICROS_PER_SEC as f64
                }
            },
        }
        .max(1.0)
    }

    pub fn cost_of(&self, service: Micros) -> f64 {
        service as f64 / self.rated_capacity
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("request {0} completed twice or was never admitted")]
    DoubleCompletion(u64),
    #[error("request {0} admitted twice")]
    DoubleAdmission(u64),
    #[error("invalid device model: {0}")]
    InvalidModel(String),
}

/// Per-call admission posture chosen by the scheduler.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Posture {
    /// IORM disabled: FIFO up to the raw device limit.
    pub bypass: bool,
    /// Cap on outstanding low-priority requests (HDD latency posture).
    pub low_cap: Option<u32>,
    /// Solo workload: flash low-priority target opens up to the raw limit.
    pub solo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Admitted {
    pub class: IoClass,
    pub priority: Priority,
}

/// Cost-weighted in-flight counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InFlightState {
    pub total_cost: u32,
    pub small_count: u32,
    pub large_count: u32,
    pub write_count: u32,
    /// Outstanding requests at [`Priority::Low`].
    pub low_count: u32,
    pub low_write_count: u32,
    /// Outstanding requests below [`Priority::High`].
    pub non_high_count: u32,
    outstanding: HashMap<u64, Admitted>,
}

impl InFlightState {
    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn is_outstanding(&self, id: u64) -> bool {
        self.outstanding.contains_key(&id)
    }

    /// Pure admission check.
    pub fn can_admit(
        &self,
        kind: DeviceKind,
        targets: &QueueTargets,
        read_target: u32,
        shape: &IoShape,
        posture: Posture,
        write_pressure: bool,
    ) -> bool {
        if posture.bypass {
            return (self.outstanding.len() as u32) < targets.raw_limit;
        }
        let low = shape.priority == Priority::Low;
        match kind {
            DeviceKind::Flash => {
                if shape.priority == Priority::High {
                    return true;
                }
                let target = if posture.solo { targets.raw_limit } else { targets.flash_lowprio_target };
                self.non_high_count < target
            }
            DeviceKind::Hdd => {
                if low && posture.low_cap.is_some_and(|cap| self.low_count >= cap) {
                    return false;
                }
                match shape.class() {
                    IoClass::SmallRead => {
                        self.total_cost + 1 <= read_target || self.small_count < targets.small_read_floor
                    }
                    IoClass::LargeRead => {
                        self.large_count < targets.large_read_cap && self.total_cost + LARGE_COST <= read_target
                    }
                    IoClass::Write => {
                        if low && write_pressure && self.low_write_count >= 1 {
                            return false;
                        }
                        self.write_count < targets.write_target
                    }
                }
            }
        }
    }

    /// Records an admission without checking targets.
    pub fn admit(&mut self, id: u64, shape: &IoShape) -> Result<(), DeviceError> {
        let adm = Admitted { class: shape.class(), priority: shape.priority };
        if self.outstanding.insert(id, adm).is_some() {
            return Err(DeviceError::DoubleAdmission(id));
        }
        self.bump(adm, true);
        Ok(())
    }

    pub fn complete(&mut self, id: u64) -> Result<Admitted, DeviceError> {
        let adm = self.outstanding.remove(&id).ok_or(DeviceError::DoubleCompletion(id))?;
        self.bump(adm, false);
        Ok(adm)
    }

    fn bump(&mut self, adm: Admitted, up: bool) {
        let step = |v: &mut u32, n: u32| {
            if up {
                *v += n
            } else {
                *v -= n
            }
        };
        match adm.class {
            IoClass::SmallRead => step(&mut self.small_count, 1),
            IoClass::LargeRead => step(&mut self.large_count, 1),
            IoClass::Write => step(&mut self.write_count, 1),
        }
        step(&mut self.total_cost, adm.class.read_cost());
        if adm.priority == Priority::Low {
            step(&mut self.low_count, 1);
            if adm.class == IoClass::Write {
                step(&mut self.low_write_count, 1);
            }
        }
        if adm.priority != Priority::High {
            step(&mut self.non_high_count, 1);
        }
    }
}

/// A request occupying a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Started {
    pub id: u64,
    pub start: SimTime,
    pub service: Micros,
    pub done: SimTime,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub index: usize,
    pub model: DeviceModel,
    pub targets: QueueTargets,
    pub inflight: InFlightState,
    cache_available: bool,
    write_cache: Option<WriteCacheState>,
    last_tick: SimTime,
    busy_channels: u32,
    waiting: VecDeque<(u64, IoShape)>,
    rng: ChaCha8Rng,
    busy_time: Micros,
}

impl Device {
    pub fn new(index: usize, model: DeviceModel, targets: QueueTargets, rng: ChaCha8Rng) -> Self {
        let write_cache = model.write_cache.as_ref().map(WriteCacheState::new);
        Device {
            index,
            model,
            targets,
            inflight: InFlightState::default(),
            cache_available: true,
            write_cache,
            last_tick: SimTime::ZERO,
            busy_channels: 0,
            waiting: VecDeque::new(),
            rng,
            busy_time: 0,
        }
    }

    pub fn kind(&self) -> DeviceKind {
        self.model.kind
    }

    /// Switches the HDD read budget between normal and degraded.
    pub fn set_degraded_mode(&mut self, cache_available: bool) {
        self.cache_available = cache_available;
    }

    pub fn read_target(&self) -> u32 {
        if self.cache_available {
            self.targets.read_target
        } else {
            self.targets.degraded_read_target
        }
    }

    pub fn write_pressure(&mut self, now: SimTime) -> bool {
        self.drain(now);
        self.write_cache.as_ref().is_some_and(WriteCacheState::pressure)
    }

    pub fn write_cache(&self) -> Option<&WriteCacheState> {
        self.write_cache.as_ref()
    }

    fn drain(&mut self, now: SimTime) {
        let elapsed = now.since(self.last_tick);
        if let Some(wc) = self.write_cache.as_mut() {
            if elapsed > 0 {
                wc.tick(elapsed);
            }
        }
        self.last_tick = self.last_tick.max(now);
    }

    pub fn can_admit(&mut self, now: SimTime, shape: &IoShape, posture: Posture) -> bool {
        let pressure = shape.direction == Direction::Write && self.write_pressure(now);
        self.inflight
            .can_admit(self.model.kind, &self.targets, self.read_target(), shape, posture, pressure)
    }

    /// Closed-form mean service time of a request on this device.
    pub fn expected_service(&self, shape: &IoShape) -> f64 {
        let cached = self.model.kind == DeviceKind::Hdd
            && shape.direction == Direction::Write
            && self.write_cache.as_ref().is_some_and(|wc| wc.fill + (shape.size as f64) <= wc.capacity as f64);
        self.model.mean_service_time(shape, cached)
    }

    /// Expected normalized cost of a request, used for in-flight reservations.
    pub fn expected_cost(&self, shape: &IoShape) -> f64 {
        self.expected_service(shape) / self.model.rated_capacity
    }

    /// Admits a request and starts it if a channel is free.
    pub fn dispatch(&mut self, now: SimTime, id: u64, shape: IoShape) -> Result<Option<Started>, DeviceError> {
        self.inflight.admit(id, &shape)?;
        if self.busy_channels < self.model.channels {
            Ok(Some(self.start(now, id, shape)))
        } else {
            self.waiting.push_back((id, shape));
            Ok(None)
        }
    }

    fn start(&mut self, now: SimTime, id: u64, shape: IoShape) -> Started {
        self.drain(now);
        let cached = shape.direction == Direction::Write
            && self.write_cache.as_mut().is_some_and(|wc| wc.absorb(shape.size));
        let service = self.model.sample(&shape, cached, &mut self.rng);
        self.busy_channels += 1;
        self.busy_time += service;
        Started { id, start: now, service, done: now + service }
    }

    /// Completes a request, frees its channel and starts the next waiter.
    pub fn complete(&mut self, now: SimTime, id: u64) -> Result<(Admitted, Option<Started>), DeviceError> {
        let adm = self.inflight.complete(id)?;
        self.busy_channels -= 1;
        let next = self.waiting.pop_front().map(|(nid, shape)| self.start(now, nid, shape));
        Ok((adm, next))
    }

    pub fn busy_time(&self) -> Micros {
        self.busy_time
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }
}
