//! Workload generators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::cache::{BlockAddr, BLOCK_SIZE};
use crate::devices::{Direction, Locality, KIB, MIB};
use crate::tags::{IoTag, Priority};
use crate::time::{Micros, SimTime, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    /// Small random reads within the working set.
    PointRead,
    /// Large sequential reads.
    Scan,
    /// Large sequential writes.
    BulkWrite,
    /// Large sequential reads issued by backup.
    Backup,
    /// Small random I/O with the given fraction of writes.
    Mixed { write_fraction: f64 },
}

impl Pattern {
    pub fn default_size(self) -> u64 {
        match self {
            Pattern::PointRead | Pattern::Mixed { .. } => 8 * KIB,
            Pattern::Scan | Pattern::BulkWrite | Pattern::Backup => MIB,
        }
    }

    pub fn default_priority(self) -> Priority {
        match self {
            Pattern::PointRead | Pattern::Mixed { .. } => Priority::High,
            Pattern::Scan | Pattern::BulkWrite | Pattern::Backup => Priority::Low,
        }
    }

    fn sequential(self) -> bool {
        matches!(self, Pattern::Scan | Pattern::BulkWrite | Pattern::Backup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum ArrivalSpec {
    /// Fixed session count; each session issues, waits for completion,
    /// thinks for an exponential time with the given mean, and repeats.
    Closed { sessions: u32, think_us: Micros },
    /// Poisson arrivals.
    Open { rate_per_s: f64 },
    /// One request every `interval_us`, the first at `phase_us`.
    Periodic { interval_us: Micros, phase_us: Micros },
}

/// Storage tier that holds the workload's data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tier {
    #[default]
    Hdd,
    Flash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    pub database_id: u32,
    #[serde(default)]
    pub workload_key: u16,
    pub file: u32,
    pub pattern: Pattern,
    pub arrival: ArrivalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Priority>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size_bytes: Option<u64>,
    pub working_set_bytes: u64,
    #[serde(default)]
    pub tier: Tier,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_s: Option<f64>,
    /// Fraction of the working set loaded into the flash cache at start.
    #[serde(default)]
    pub prewarm_fraction: f64,
    /// Untagged requests exercise the classification fallback.
    #[serde(default = "yes")]
    pub tagged: bool,
}

fn yes() -> bool {
    true
}

impl WorkloadSpec {
    pub fn new(name: &str, database_id: u32, file: u32, pattern: Pattern, arrival: ArrivalSpec, working_set_bytes: u64) -> Self {
        WorkloadSpec {
            name: name.to_owned(),
            database_id,
            workload_key: 0,
            file,
            pattern,
            arrival,
            priority: None,
            size_bytes: None,
            working_set_bytes,
            tier: Tier::Hdd,
            start_s: 0.0,
            stop_s: None,
            prewarm_fraction: 0.0,
            tagged: true,
        }
    }

    pub fn size(&self) -> u64 {
        self.size_bytes.unwrap_or(self.pattern.default_size())
    }

    pub fn priority(&self) -> Priority {
        self.priority.unwrap_or(self.pattern.default_priority())
    }

    pub fn validate(&self) -> Result<(), String> {
        let size = self.size();
        if size == 0 {
            return Err(format!("workload `{}`: size must be positive", self.name));
        }
        if self.working_set_bytes < size {
            return Err(format!("workload `{}`: working set smaller than one request", self.name));
        }
        match self.arrival {
            ArrivalSpec::Closed { sessions: 0, .. } => Err(format!("workload `{}`: zero sessions", self.name)),
            ArrivalSpec::Open { rate_per_s } if !(rate_per_s > 0.0) => {
                Err(format!("workload `{}`: rate must be positive", self.name))
            }
            ArrivalSpec::Periodic { interval_us: 0, .. } => Err(format!("workload `{}`: zero interval", self.name)),
            _ if !(0.0..=1.0).contains(&self.prewarm_fraction) => {
                Err(format!("workload `{}`: prewarm_fraction outside [0, 1]", self.name))
            }
            _ => Ok(()),
        }
    }
}

/// One generated request before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Generated {
    pub tag: IoTag,
    pub addr: BlockAddr,
    pub size: u64,
    pub direction: Direction,
    pub locality: Locality,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub spec: WorkloadSpec,
    rng: ChaCha8Rng,
    cursors: Vec<u64>,
    think: Option<Exp<f64>>,
    outstanding: u32,
}

impl Generator {
    pub fn new(spec: WorkloadSpec, rng: ChaCha8Rng) -> Self {
        let sessions = match spec.arrival {
            ArrivalSpec::Closed { sessions, .. } => sessions as usize,
            _ => 1,
        };
        let slots = (spec.working_set_bytes / spec.size()).max(1);
        // Sessions start scanning at evenly spaced offsets.
        let cursors = (0..sessions as u64).map(|s| s * slots / sessions as u64).collect();
        let think = match spec.arrival {
            ArrivalSpec::Closed { think_us, .. } if think_us > 0 => Some(Exp::new(1.0 / think_us as f64).expect("positive rate")),
            _ => None,
        };
        Generator { spec, rng, cursors, think, outstanding: 0 }
    }

    pub fn outstanding(&self) -> u32 {
        self.outstanding
    }

    pub fn start(&self) -> SimTime {
        SimTime::from_secs_f64(self.spec.start_s)
    }

    pub fn active_at(&self, t: SimTime) -> bool {
        t >= self.start() && self.spec.stop_s.is_none_or(|s| t < SimTime::from_secs_f64(s))
    }

    /// Arrival times of the first request of each session.
    pub fn initial_arrivals(&mut self) -> Vec<(u32, SimTime)> {
        let start = self.start();
        match self.spec.arrival {
            ArrivalSpec::Closed { sessions, .. } => (0..sessions)
                .map(|s| {
                    let stagger = self.think_time();
                    (s, start + stagger)
                })
                .collect(),
            ArrivalSpec::Open { .. } => {
                let gap = self.open_gap();
                vec![(0, start + gap)]
            }
            ArrivalSpec::Periodic { phase_us, .. } => vec![(0, start + phase_us)],
        }
    }

    fn think_time(&mut self) -> Micros {
        self.think.map_or(0, |d| d.sample(&mut self.rng).round() as Micros)
    }

    fn open_gap(&mut self) -> Micros {
        let ArrivalSpec::Open { rate_per_s } = self.spec.arrival else { return 0 };
        let exp = Exp::new(rate_per_s / MICROS_PER_SEC as f64).expect("positive rate");
        (exp.sample(&mut self.rng).round() as Micros).max(1)
    }

    /// For open and periodic arrivals, the time of the next arrival.
    pub fn next_open_arrival(&mut self, now: SimTime) -> Option<SimTime> {
        match self.spec.arrival {
            ArrivalSpec::Closed { .. } => None,
            ArrivalSpec::Open { .. } => Some(now + self.open_gap()),
            ArrivalSpec::Periodic { interval_us, .. } => Some(now + interval_us),
        }
    }

    /// For closed-loop sessions, the time of the session's next request.
    pub fn next_closed_arrival(&mut self, now: SimTime) -> Option<SimTime> {
        match self.spec.arrival {
            ArrivalSpec::Closed { .. } => Some(now + self.think_time()),
            _ => None,
        }
    }

    pub fn generate(&mut self, session: u32) -> Generated {
        let size = self.spec.size();
        let slots = (self.spec.working_set_bytes / size).max(1);
        let slot = if self.spec.pattern.sequential() {
            let n = self.cursors.len();
            let c = &mut self.cursors[session as usize % n];
            let s = *c;
            *c = (*c + 1) % slots;
            s
        } else {
            self.rng.random_range(0..slots)
        };
        let direction = match self.spec.pattern {
            Pattern::BulkWrite => Direction::Write,
            Pattern::Mixed { write_fraction } if self.rng.random::<f64>() < write_fraction => Direction::Write,
            _ => Direction::Read,
        };
        let offset = slot * size;
        let block = offset / BLOCK_SIZE;
        let tag = IoTag::new(
            self.spec.database_id,
            self.spec.file,
            block,
            size.div_ceil(BLOCK_SIZE) as u32,
            self.spec.priority(),
        )
        .with_workload_key(self.spec.workload_key);
        self.outstanding += 1;
        Generated {
            tag,
            addr: BlockAddr::new(self.spec.database_id, self.spec.file, block),
            size,
            direction,
            locality: if self.spec.pattern.sequential() { Locality::Sequential } else { Locality::Random },
        }
    }

    pub fn completed(&mut self) {
        self.outstanding -= 1;
    }

    /// Block addresses of the first `fraction` of the working set.
    pub fn prewarm_blocks(&self) -> Vec<(BlockAddr, u64)> {
        let size = self.spec.size();
        let slots = self.spec.working_set_bytes / size;
        let n = (slots as f64 * self.spec.prewarm_fraction).floor() as u64;
        (0..n)
            .map(|s| (BlockAddr::new(self.spec.database_id, self.spec.file, s * size / BLOCK_SIZE), size))
            .collect()
    }
}
