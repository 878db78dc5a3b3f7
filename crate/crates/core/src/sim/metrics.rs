//! Latency histograms and per-entity counters.

use serde::{Deserialize, Serialize};

use crate::time::Micros;

/// Upper bucket edges in microseconds; the last bucket is unbounded.
pub const BUCKET_EDGES_US: [Micros; 7] = [512, 1000, 2000, 4000, 8000, 16_000, 32_000];
pub const BUCKET_LABELS: [&str; 8] = ["<512us", "<1ms", "<2ms", "<4ms", "<8ms", "<16ms", "<32ms", ">=32ms"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    pub counts: [u64; 8],
}

impl LatencyHistogram {
    pub fn bucket(latency: Micros) -> usize {
        BUCKET_EDGES_US.iter().position(|e| latency < *e).unwrap_or(BUCKET_EDGES_US.len())
    }

    pub fn record(&mut self, latency: Micros) {
        self.counts[Self::bucket(latency)] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of samples in buckets `from..`.
    pub fn fraction_at_least(&self, from: usize) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.counts[from..].iter().sum::<u64>() as f64 / t as f64
        }
    }

    /// Fraction of samples below the upper edge of bucket `upto`.
    pub fn fraction_below(&self, upto: usize) -> f64 {
        1.0 - self.fraction_at_least(upto + 1)
    }
}

/// Running mean and variance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub max: f64,
}

impl Moments {
    pub fn record(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
        self.max = self.max.max(x);
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn stddev(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let m = self.mean();
        ((self.sum_sq / self.n as f64 - m * m).max(0.0) * self.n as f64 / (self.n - 1) as f64).sqrt()
    }
}

/// Counters for one leaf entity over the measured window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub path: String,
    pub completed: u64,
    pub bytes: u64,
    pub latency_us: Moments,
    pub histogram: LatencyHistogram,
    /// Time between enqueue and dispatch, per dispatched piece.
    pub queue_us: Moments,
    pub promotions: u64,
    /// Dispatches issued while a boundary throttle flag was set on the path.
    pub throttled_dispatches: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

impl EntityMetrics {
    pub fn new(path: String) -> Self {
        EntityMetrics { path, ..EntityMetrics::default() }
    }

    pub fn ops_per_sec(&self, secs: f64) -> f64 {
        if secs > 0.0 {
            self.completed as f64 / secs
        } else {
            0.0
        }
    }

    pub fn mb_per_sec(&self, secs: f64) -> f64 {
        if secs > 0.0 {
            self.bytes as f64 / 1e6 / secs
        } else {
            0.0
        }
    }
}
