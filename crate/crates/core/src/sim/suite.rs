//! Built-in scenarios.
//!
//! Names take an optional `:variant` suffix, e.g. `share-ratios:5`.

use crate::cache::{CacheConfig, ConditionalAdmission};
use crate::devices::{DeviceKind, FlashParams, MIB};
use crate::hierarchy::{Level, NodeSpec, PlanSpec};
use crate::scheduler::{SchedulerConfig, SchedulerKind};
use crate::sim::config::{CacheSpec, DeviceSpec, PlanSwapSpec, ScenarioConfig};
use crate::sim::workload::{ArrivalSpec, Pattern, Tier, WorkloadSpec};
use crate::tags::{Category, DatabaseEntry, FileRange, Priority, RegistrySpec};

pub const FILE_DATA: u32 = 1;
pub const FILE_SCAN: u32 = 2;
pub const FILE_BACKUP: u32 = 3;

/// A built-in scenario and its variants.
#[derive(Debug, Clone, Copy)]
pub struct Entry {
    pub name: &'static str,
    pub description: &'static str,
    pub variants: &'static [&'static str],
    pub default_variant: &'static str,
}

pub const CATALOG: &[Entry] = &[
    Entry {
        name: "noisy-neighbor",
        description: "OLTP point reads sharing four disks with a 1MB scan",
        variants: &["mixed", "alone", "bypass", "bypass-alone"],
        default_variant: "mixed",
    },
    Entry {
        name: "bypass-baseline",
        description: "noisy-neighbor with the scheduler disabled",
        variants: &["mixed", "alone"],
        default_variant: "mixed",
    },
    Entry {
        name: "queue-depth-sweep",
        description: "OLTP and scan on flash at a given low-priority queue target",
        variants: &["8", "16", "32", "64"],
        default_variant: "8",
    },
    Entry {
        name: "limit-cases",
        description: "two containers of five tenants under six limit combinations",
        variants: &["1", "2", "3", "4", "5", "6"],
        default_variant: "3",
    },
    Entry {
        name: "three-level-limits",
        description: "workload, tenant and container limits composed",
        variants: &["1", "2", "3", "4"],
        default_variant: "2",
    },
    Entry {
        name: "share-ratios",
        description: "two saturating containers with configured share ratio",
        variants: &["1", "2", "5", "10"],
        default_variant: "2",
    },
    Entry {
        name: "share-switch",
        description: "share ratio 2:1 swapped to 1:2 mid-run",
        variants: &["default"],
        default_variant: "default",
    },
    Entry {
        name: "cache-governance",
        description: "cache quota sweep and backup exclusion",
        variants: &["0", "50", "75", "100", "bg", "bg-noexcl"],
        default_variant: "100",
    },
    Entry {
        name: "deadline",
        description: "high-priority flood against a low-priority trickle on one disk",
        variants: &["adversarial", "healthy", "limited"],
        default_variant: "adversarial",
    },
    Entry {
        name: "accounting-straddle",
        description: "periodic reads at exactly a 10% limit, straddling quantum boundaries",
        variants: &["default"],
        default_variant: "default",
    },
];

/// Every `name:variant` the catalog accepts.
pub fn scenario_names() -> Vec<String> {
    CATALOG
        .iter()
        .flat_map(|e| e.variants.iter().map(move |v| format!("{}:{v}", e.name)))
        .collect()
}

/// Looks up a built-in scenario by `name` or `name:variant`.
pub fn builtin(spec: &str) -> Option<ScenarioConfig> {
    let (name, variant) = spec.split_once(':').unwrap_or((spec, ""));
    let entry = CATALOG.iter().find(|e| e.name == name)?;
    let variant = if variant.is_empty() { entry.default_variant } else { variant };
    if !entry.variants.contains(&variant) {
        return None;
    }
    let mut cfg = match name {
        "noisy-neighbor" => noisy_neighbor(variant.starts_with("bypass"), !variant.ends_with("alone")),
        "bypass-baseline" => noisy_neighbor(true, variant == "mixed"),
        "queue-depth-sweep" => queue_depth(variant.parse().ok()?),
        "limit-cases" => limit_case(variant.parse().ok()?),
        "three-level-limits" => three_level(variant.parse().ok()?),
        "share-ratios" => share_ratio(variant.parse().ok()?),
        "share-switch" => share_switch(),
        "cache-governance" => match variant {
            "bg" => cache_governance(1.0, Some(true)),
            "bg-noexcl" => cache_governance(1.0, Some(false)),
            pct => cache_governance(pct.parse::<f64>().ok()? / 100.0, None),
        },
        "deadline" => match variant {
            "adversarial" => deadline_adversarial(),
            "healthy" => deadline_healthy(),
            _ => limit_deadline(),
        },
        "accounting-straddle" => accounting_straddle(),
        _ => return None,
    };
    cfg.name = format!("{name}:{variant}");
    Some(cfg)
}

fn files() -> Vec<FileRange> {
    vec![
        FileRange { first: FILE_DATA, last: FILE_DATA, category: Category::BufferCacheRead },
        FileRange { first: FILE_SCAN, last: FILE_SCAN, category: Category::DirectPathRead },
        FileRange { first: FILE_BACKUP, last: FILE_BACKUP, category: Category::Backup },
    ]
}

fn registry(map: &[(u32, &str)]) -> RegistrySpec {
    RegistrySpec {
        databases: map
            .iter()
            .map(|(id, node)| DatabaseEntry { id: *id, node: (*node).to_owned(), workloads: Vec::new(), files: files() })
            .collect(),
    }
}

fn cdb(name: &str) -> NodeSpec {
    NodeSpec::new(name, Level::Cdb, None)
}

fn pdb(name: &str, parent: &str) -> NodeSpec {
    NodeSpec::new(name, Level::Pdb, Some(parent))
}

fn leaf(name: &str, parent: &str) -> NodeSpec {
    NodeSpec::new(name, Level::Workload, Some(parent))
}

/// Idle default container every plan carries.
fn other() -> NodeSpec {
    cdb("OTHER").default_leaf()
}

fn base(name: &str, duration_s: f64, warmup_s: f64, plan: PlanSpec, devices: Vec<DeviceSpec>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_owned(),
        description: String::new(),
        duration_s,
        warmup_s,
        seed: 1,
        scheduler: SchedulerKind::Iorm,
        objective: None,
        accounting: Default::default(),
        sched: SchedulerConfig::default(),
        plan,
        plan_swaps: Vec::new(),
        registry: RegistrySpec::default(),
        devices,
        cache: None,
        workloads: Vec::new(),
    }
}

fn closed(sessions: u32, think_us: u64) -> ArrivalSpec {
    ArrivalSpec::Closed { sessions, think_us }
}

const OLTP_WS: u64 = 800 * MIB;

/// OLTP (200 sessions, 8KB High reads, cache holding 99% of its working set)
/// against a 48-session 1MB scan on four disks.
pub fn noisy_neighbor(bypass: bool, with_scan: bool) -> ScenarioConfig {
    let plan = PlanSpec::new(1, vec![cdb("PROD"), pdb("SALES", "PROD"), leaf("OLTP", "SALES"), leaf("SCAN", "SALES"), other()]);
    let mut cfg = base(
        "noisy-neighbor",
        70.0,
        10.0,
        plan,
        vec![DeviceSpec::new(DeviceKind::Hdd, 4), DeviceSpec::new(DeviceKind::Flash, 2)],
    );
    cfg.scheduler = if bypass { SchedulerKind::Bypass } else { SchedulerKind::Iorm };
    cfg.registry = registry(&[(1, "OLTP"), (2, "SCAN")]);
    cfg.cache = Some(CacheSpec {
        config: CacheConfig {
            capacity_bytes: OLTP_WS / 100 * 99,
            conditional: ConditionalAdmission::Bypass,
            ..CacheConfig::default()
        },
        quotas: Default::default(),
    });
    let mut oltp = WorkloadSpec::new("oltp", 1, FILE_DATA, Pattern::PointRead, closed(200, 30_000), OLTP_WS);
    oltp.prewarm_fraction = 0.99;
    cfg.workloads.push(oltp);
    if with_scan {
        cfg.workloads.push(WorkloadSpec::new("scan", 2, FILE_SCAN, Pattern::Scan, closed(48, 0), 200 * 1024 * MIB));
    }
    cfg
}

/// OLTP and a 256-session scan on one flash device.
pub fn queue_depth(target: u32) -> ScenarioConfig {
    let plan = PlanSpec::new(1, vec![cdb("PROD"), pdb("SALES", "PROD"), leaf("OLTP", "SALES"), leaf("SCAN", "SALES"), other()]);
    let mut flash = DeviceSpec::new(DeviceKind::Flash, 1);
    flash.targets.flash_lowprio_target = Some(target);
    let mut cfg = base("queue-depth-sweep", 22.0, 2.0, plan, vec![flash]);
    cfg.registry = registry(&[(1, "OLTP"), (2, "SCAN")]);
    let mut oltp = WorkloadSpec::new("oltp", 1, FILE_DATA, Pattern::PointRead, closed(64, 10_000), OLTP_WS);
    oltp.tier = Tier::Flash;
    let mut scan = WorkloadSpec::new("scan", 2, FILE_SCAN, Pattern::Scan, closed(256, 0), 200 * 1024 * MIB);
    scan.tier = Tier::Flash;
    cfg.workloads = vec![oltp, scan];
    cfg
}

/// Two containers of five tenants each; tenants 1, 5, 6 and 8 run
/// saturating Medium-priority point reads on flash.
pub fn limit_case(case: u32) -> ScenarioConfig {
    let (cdb_a, pdb5) = match case {
        1 => (None, None),
        2 => (Some(0.10), None),
        3 => (Some(0.10), Some(0.20)),
        4 => (None, Some(0.01)),
        5 => (Some(0.01), Some(0.10)),
        _ => (Some(0.01), Some(0.01)),
    };
    let mut a = cdb("CDB-A");
    if let Some(l) = cdb_a {
        a = a.limit(l);
    }
    let mut nodes = vec![a, cdb("CDB-B")];
    for i in 1..=10 {
        let parent = if i <= 5 { "CDB-A" } else { "CDB-B" };
        let mut p = pdb(&format!("PDB{i}"), parent);
        if i == 5 {
            if let Some(l) = pdb5 {
                p = p.limit(l);
            }
        }
        nodes.push(p);
    }
    nodes.push(other());
    let mut cfg = base("limit-cases", 32.0, 2.0, PlanSpec::new(1, nodes), vec![DeviceSpec::new(DeviceKind::Flash, 2)]);
    let loaded = [1u32, 5, 6, 8];
    let names: Vec<String> = loaded.iter().map(|i| format!("PDB{i}")).collect();
    cfg.registry = registry(&loaded.iter().zip(&names).map(|(i, n)| (*i, n.as_str())).collect::<Vec<_>>());
    for i in loaded {
        let mut w = WorkloadSpec::new(&format!("pdb{i}"), i, FILE_DATA, Pattern::PointRead, closed(48, 0), 1024 * MIB);
        w.tier = Tier::Flash;
        w.priority = Some(Priority::Medium);
        cfg.workloads.push(w);
    }
    cfg
}

/// Every workload capped at 10%, with container and tenant limits per row.
pub fn three_level(row: u32) -> ScenarioConfig {
    let (cdb_a, pdb5) = match row {
        1 => (Some(0.50), Some(0.05)),
        2 => (Some(0.10), Some(0.01)),
        3 => (Some(0.01), Some(0.01)),
        _ => (None, None),
    };
    let mut a = cdb("CDB-A");
    if let Some(l) = cdb_a {
        a = a.limit(l);
    }
    let mut p5 = pdb("PDB5", "CDB-A");
    if let Some(l) = pdb5 {
        p5 = p5.limit(l);
    }
    let nodes = vec![
        a,
        cdb("CDB-B"),
        pdb("PDB1", "CDB-A"),
        p5,
        pdb("PDB6", "CDB-B"),
        leaf("W1", "PDB1").limit(0.10),
        leaf("W5", "PDB5").limit(0.10),
        leaf("W6", "PDB6").limit(0.10),
        other(),
    ];
    let mut cfg = base("three-level-limits", 62.0, 2.0, PlanSpec::new(1, nodes), vec![DeviceSpec::new(DeviceKind::Flash, 2)]);
    cfg.registry = registry(&[(1, "W1"), (5, "W5"), (6, "W6")]);
    for i in [1u32, 5, 6] {
        let mut w = WorkloadSpec::new(&format!("w{i}"), i, FILE_DATA, Pattern::PointRead, closed(48, 0), 1024 * MIB);
        w.tier = Tier::Flash;
        w.priority = Some(Priority::Medium);
        cfg.workloads.push(w);
    }
    cfg
}

fn share_plan(version: u64, a: u32, b: u32) -> PlanSpec {
    PlanSpec::new(version, vec![cdb("CDB-A").shares(a), cdb("CDB-B").shares(b), other()])
}

fn share_workloads(cfg: &mut ScenarioConfig) {
    cfg.registry = registry(&[(1, "CDB-A"), (2, "CDB-B")]);
    for (i, name) in [(1u32, "a"), (2, "b")] {
        let mut w = WorkloadSpec::new(name, i, FILE_SCAN, Pattern::Scan, closed(200, 0), 100 * 1024 * MIB);
        w.tier = Tier::Flash;
        cfg.workloads.push(w);
    }
}

/// Two saturating 1MB readers with shares `ratio`:1.
pub fn share_ratio(ratio: u32) -> ScenarioConfig {
    let mut cfg = base("share-ratios", 62.0, 2.0, share_plan(1, ratio, 1), vec![DeviceSpec::new(DeviceKind::Flash, 2)]);
    share_workloads(&mut cfg);
    cfg
}

/// Shares 2:1 until the midpoint, then 1:2.
pub fn share_switch() -> ScenarioConfig {
    let mut cfg = base("share-switch", 60.0, 0.0, share_plan(1, 2, 1), vec![DeviceSpec::new(DeviceKind::Flash, 2)]);
    cfg.plan_swaps.push(PlanSwapSpec { at_s: 30.0, plan: share_plan(2, 1, 2) });
    share_workloads(&mut cfg);
    cfg
}

const GOV_WS: u64 = 256 * MIB;

/// A latency-sensitive tenant whose working set equals the cache, given
/// `quota` of it; optionally with a concurrent backup and the exclusion
/// toggle set as given.
pub fn cache_governance(quota: f64, backup_exclusion: Option<bool>) -> ScenarioConfig {
    let plan = PlanSpec::new(1, vec![cdb("PROD"), pdb("SALES", "PROD"), leaf("OLTP", "SALES"), leaf("BACKUP", "SALES"), other()]);
    let mut cfg = base(
        "cache-governance",
        32.0,
        2.0,
        plan,
        vec![DeviceSpec::new(DeviceKind::Hdd, 4), DeviceSpec::new(DeviceKind::Flash, 2)],
    );
    cfg.registry = registry(&[(1, "OLTP"), (2, "BACKUP")]);
    cfg.cache = Some(CacheSpec {
        config: CacheConfig {
            capacity_bytes: GOV_WS,
            exclusion_enabled: backup_exclusion.unwrap_or(true),
            ..CacheConfig::default()
        },
        quotas: [("OLTP".to_owned(), quota)].into_iter().collect(),
    });
    let mut oltp = WorkloadSpec::new("oltp", 1, FILE_DATA, Pattern::PointRead, closed(8, 20_000), GOV_WS);
    oltp.prewarm_fraction = quota;
    cfg.workloads.push(oltp);
    if backup_exclusion.is_some() {
        cfg.workloads.push(WorkloadSpec::new("backup", 2, FILE_BACKUP, Pattern::Backup, closed(8, 0), 200 * 1024 * MIB));
    }
    cfg
}

fn deadline_plan(flood_limit: Option<f64>) -> PlanSpec {
    let mut flood = cdb("FLOOD").shares(1000);
    if let Some(l) = flood_limit {
        flood = flood.limit(l);
    }
    PlanSpec::new(1, vec![flood, cdb("TRICKLE").shares(1), other()])
}

fn deadline_base(flood: WorkloadSpec, flood_limit: Option<f64>) -> ScenarioConfig {
    let mut cfg = base("deadline", 30.0, 0.0, deadline_plan(flood_limit), vec![DeviceSpec::new(DeviceKind::Hdd, 1)]);
    cfg.registry = registry(&[(1, "FLOOD"), (2, "TRICKLE")]);
    let mut trickle = WorkloadSpec::new("trickle", 2, FILE_DATA, Pattern::PointRead, ArrivalSpec::Open { rate_per_s: 5.0 }, 1024 * MIB);
    trickle.priority = Some(Priority::Low);
    cfg.workloads = vec![flood, trickle];
    cfg
}

/// A continuous High-priority flood starving a Low-priority trickle.
pub fn deadline_adversarial() -> ScenarioConfig {
    deadline_base(WorkloadSpec::new("flood", 1, FILE_DATA, Pattern::PointRead, closed(120, 0), 1024 * MIB), None)
}

/// The same tenants at a load the disk absorbs easily.
pub fn deadline_healthy() -> ScenarioConfig {
    deadline_base(WorkloadSpec::new("flood", 1, FILE_DATA, Pattern::PointRead, closed(20, 200_000), 1024 * MIB), None)
}

/// A backlogged tenant held at a 1% cap next to an unlimited one.
pub fn limit_deadline() -> ScenarioConfig {
    let mut flood = WorkloadSpec::new("flood", 1, FILE_DATA, Pattern::PointRead, closed(50, 0), 1024 * MIB);
    flood.priority = Some(Priority::Medium);
    let mut cfg = deadline_base(flood, Some(0.01));
    cfg.workloads[1] = WorkloadSpec::new("rival", 2, FILE_DATA, Pattern::PointRead, closed(50, 0), 1024 * MIB);
    cfg
}

/// Deterministic 1,000,000-byte reads every 5ms on a single-channel flash
/// device, exactly filling a 10% limit.
pub fn accounting_straddle() -> ScenarioConfig {
    let mut flash = DeviceSpec::new(DeviceKind::Flash, 1);
    flash.channels = Some(1);
    flash.flash = Some(FlashParams { read_bytes_per_sec: 2e9, ..FlashParams::default() });
    let plan = PlanSpec::new(1, vec![cdb("CDB-A").limit(0.10), other()]);
    let mut cfg = base("accounting-straddle", 120.0, 0.0, plan, vec![flash]);
    cfg.registry = registry(&[(1, "CDB-A")]);
    let mut w = WorkloadSpec::new(
        "periodic",
        1,
        FILE_SCAN,
        Pattern::Scan,
        ArrivalSpec::Periodic { interval_us: 5000, phase_us: 4800 },
        100 * 1024 * MIB,
    );
    w.size_bytes = Some(1_000_000);
    w.tier = Tier::Flash;
    cfg.workloads.push(w);
    cfg
}

