//! Deterministic discrete-event simulator.

pub mod config;
pub mod engine;
pub mod event;
pub mod metrics;
pub mod report;
pub mod seed;
pub mod suite;
pub mod workload;

pub use config::{CacheSpec, ConfigError, DeviceSpec, PlanSwapSpec, ScenarioConfig, TargetOverrides};
pub use engine::{path_matches, run_scenario, Audit, Engine, IntervalReport, LimitStats, RunOptions, RunResult, SimError};
pub use metrics::{EntityMetrics, LatencyHistogram, Moments, BUCKET_EDGES_US, BUCKET_LABELS};
pub use suite::{builtin, scenario_names, CATALOG};
pub use workload::{ArrivalSpec, Generator, Pattern, Tier, WorkloadSpec};
