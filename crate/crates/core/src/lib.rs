//! Hierarchical I/O resource management for shared storage.
//!
//! The crate models a consolidated storage tier: a resource plan tree of
//! container databases, pluggable databases and workloads; per-device
//! schedulers combining proportional shares, hard limits and priority
//! classes; quantum-based utilization accounting; cache governance; and a
//! discrete-event simulator that exercises all of them.

pub mod accounting;
pub mod cache;
pub mod devices;
pub mod hierarchy;
pub mod scheduler;
pub mod sim;
pub mod tags;
pub mod time;

pub use accounting::{format_report, iops_to_percent, percent_to_iops, AccountingConfig, AccountingError, Ledger, UtilizationRow};
pub use cache::{BlockAddr, CacheConfig, CacheError, ConditionalAdmission, FlashCache};
pub use devices::{Device, DeviceError, DeviceKind, DeviceModel, Direction, IoShape, Locality, QueueTargets};
pub use hierarchy::{
    build_plan, swap_plan, EffectiveAllocation, HierarchyError, HierarchyNode, Level, NodeId, NodeSpec, Objective,
    PlanHandle, PlanSpec, ResourcePlan,
};
pub use scheduler::{IoRequest, Lottery, Mode, Scheduler, SchedulerConfig, SchedulerKind};
pub use sim::{run_scenario, RunOptions, RunResult, ScenarioConfig, SimError};
pub use tags::{
    decode_tag, encode_tag, CachePolicy, Category, Classification, ClassificationRegistry, IoTag, Priority,
    RegistrySpec, TagError,
};
pub use time::{Micros, SimTime};
