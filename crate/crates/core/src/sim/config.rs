//! Scenario files.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::AccountingConfig;
use crate::cache::CacheConfig;
use crate::devices::{DeviceKind, DeviceModel, FlashParams, HddParams, QueueTargets, ServiceModel, WriteCacheConfig};
use crate::hierarchy::{build_plan, Objective, PlanSpec, ResourcePlan};
use crate::scheduler::{SchedulerConfig, SchedulerKind};
use crate::sim::workload::{Tier, WorkloadSpec};
use crate::tags::{ClassificationRegistry, RegistrySpec};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    fn new(msg: impl Into<String>) -> Self {
        ConfigError(msg.into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_target: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degraded_read_target: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_read_floor: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub large_read_cap: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_target: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash_lowprio_target: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_limit: Option<u32>,
}

impl TargetOverrides {
    pub fn apply(&self, mut t: QueueTargets) -> QueueTargets {
        let set = |dst: &mut u32, v: Option<u32>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.read_target, self.read_target);
        set(&mut t.degraded_read_target, self.degraded_read_target);
        set(&mut t.small_read_floor, self.small_read_floor);
        set(&mut t.large_read_cap, self.large_read_cap);
        set(&mut t.write_target, self.write_target);
        set(&mut t.flash_lowprio_target, self.flash_lowprio_target);
        set(&mut t.raw_limit, self.raw_limit);
        t
    }
}

/// Default channel count of a flash device.
pub const FLASH_CHANNELS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub kind: DeviceKind,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rated_capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub targets: TargetOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hdd: Option<HddParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<FlashParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write_cache: Option<WriteCacheConfig>,
}

fn one() -> u32 {
    1
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl DeviceSpec {
    pub fn new(kind: DeviceKind, count: u32) -> Self {
        DeviceSpec {
            kind,
            count,
            channels: None,
            rated_capacity: None,
            targets: TargetOverrides::default(),
            hdd: None,
            flash: None,
            write_cache: None,
        }
    }

    pub fn model(&self) -> DeviceModel {
        let mut m = match self.kind {
            DeviceKind::Hdd => DeviceModel::hdd(),
            DeviceKind::Flash => DeviceModel::flash(self.channels.unwrap_or(FLASH_CHANNELS)),
        };
        if let Some(c) = self.channels {
            m.channels = c;
            m.rated_capacity = c as f64;
        }
        if let Some(r) = self.rated_capacity {
            m.rated_capacity = r;
        }
        match (self.kind, &self.hdd, &self.flash) {
            (DeviceKind::Hdd, Some(p), _) => m.service = ServiceModel::Hdd(p.clone()),
            (DeviceKind::Flash, _, Some(p)) => m.service = ServiceModel::Flash(p.clone()),
            _ => {}
        }
        if self.kind == DeviceKind::Hdd {
            if let Some(wc) = &self.write_cache {
                m.write_cache = Some(wc.clone());
            }
        }
        m
    }

    pub fn targets(&self) -> QueueTargets {
        self.targets.apply(QueueTargets::for_kind(self.kind))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSpec {
    #[serde(flatten)]
    pub config: CacheConfig,
    /// Quota per leaf name, as a fraction of capacity.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub quotas: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSwapSpec {
    pub at_s: f64,
    pub plan: PlanSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub duration_s: f64,
    #[serde(default)]
    pub warmup_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheduler: SchedulerKind,
    /// Overrides the plan's objective when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<Objective>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub accounting: AccountingConfig,
    #[serde(default, skip_serializing_if = "is_default")]
    pub sched: SchedulerConfig,
    pub plan: PlanSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plan_swaps: Vec<PlanSwapSpec>,
    #[serde(default)]
    pub registry: RegistrySpec,
    pub devices: Vec<DeviceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheSpec>,
    pub workloads: Vec<WorkloadSpec>,
}

/// Plans and registries resolved from a config, one per plan version.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plans: Vec<Arc<ResourcePlan>>,
    pub registries: Vec<ClassificationRegistry>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::new(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn device_count(&self, kind: DeviceKind) -> usize {
        self.devices.iter().filter(|d| d.kind == kind).map(|d| d.count as usize).sum()
    }

    pub fn validate(&self) -> Result<Resolved, ConfigError> {
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return Err(ConfigError::new("duration_s must be a non-negative number"));
        }
        if !(self.warmup_s >= 0.0) || (self.duration_s > 0.0 && self.warmup_s >= self.duration_s) {
            return Err(ConfigError::new("warmup_s must be in [0, duration_s)"));
        }
        if self.accounting.quantum_us == 0 || self.accounting.quanta_per_interval == 0 || !(self.accounting.clamp >= 0.0) {
            return Err(ConfigError::new("accounting: quantum and interval must be positive"));
        }
        if self.sched.deadline_scan_us == 0 || self.sched.mode_eval_us == 0 || self.sched.fragment_chunk == 0 {
            return Err(ConfigError::new("sched: periods and fragment chunk must be positive"));
        }
        let plan = build_plan(self.plan.clone()).map_err(|e| ConfigError::new(format!("plan: {e}")))?;
        let mut plans = vec![Arc::new(plan)];
        let mut last_at = 0.0;
        for (i, swap) in self.plan_swaps.iter().enumerate() {
            if !(swap.at_s >= last_at) {
                return Err(ConfigError::new(format!("plan_swaps[{i}]: times must be non-decreasing")));
            }
            last_at = swap.at_s;
            let next = plans
                .last()
                .expect("at least one plan")
                .build_next(swap.plan.clone())
                .map_err(|e| ConfigError::new(format!("plan_swaps[{i}]: {e}")))?;
            plans.push(Arc::new(next));
        }
        let registries = plans
            .iter()
            .map(|p| ClassificationRegistry::provision(&self.registry, p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ConfigError::new(format!("registry: {e}")))?;
        if self.devices.is_empty() || self.devices.iter().all(|d| d.count == 0) {
            return Err(ConfigError::new("at least one device is required"));
        }
        for (i, d) in self.devices.iter().enumerate() {
            d.model().validate().map_err(|e| ConfigError::new(format!("devices[{i}]: {e}")))?;
        }
        let has_flash = self.device_count(DeviceKind::Flash) > 0;
        let has_hdd = self.device_count(DeviceKind::Hdd) > 0;
        let mut names = std::collections::BTreeSet::new();
        for w in &self.workloads {
            w.validate().map_err(ConfigError::new)?;
            if !names.insert(w.name.as_str()) {
                return Err(ConfigError::new(format!("duplicate workload `{}`", w.name)));
            }
            match w.tier {
                Tier::Hdd if !has_hdd => {
                    return Err(ConfigError::new(format!("workload `{}` needs an hdd device", w.name)))
                }
                Tier::Flash if !has_flash => {
                    return Err(ConfigError::new(format!("workload `{}` needs a flash device", w.name)))
                }
                _ => {}
            }
        }
        if let Some(cache) = &self.cache {
            if !has_flash {
                return Err(ConfigError::new("cache requires a flash device"));
            }
            for (name, q) in &cache.quotas {
                if !plans[0].id_of(name).is_some_and(|id| plans[0].is_leaf(id)) {
                    return Err(ConfigError::new(format!("cache quota for `{name}`, which is not a leaf")));
                }
                if !(0.0..=1.0).contains(q) {
                    return Err(ConfigError::new(format!("cache quota for `{name}` outside [0, 1]")));
                }
            }
        }
        Ok(Resolved { plans, registries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::suite::builtin;

    #[test]
    fn builtins_roundtrip_through_toml() {
        for name in crate::sim::suite::scenario_names() {
            let cfg = builtin(&name).expect("catalog entry");
            let text = cfg.to_toml();
            let back = ScenarioConfig::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}\n{text}"));
            assert_eq!(back, cfg, "{name}");
            back.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn parse_errors_name_line_and_field() {
        let text = "name = \"x\"\nduration_s = 1.0\nbogus = 3\n";
        let err = ScenarioConfig::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn semantic_errors() {
        let mut cfg = builtin("share-ratios:2").unwrap();
        cfg.warmup_s = cfg.duration_s;
        assert!(cfg.validate().is_err());

        let mut cfg = builtin("share-ratios:2").unwrap();
        cfg.devices.clear();
        assert!(cfg.validate().unwrap_err().to_string().contains("device"));

        let mut cfg = builtin("cache-governance:50").unwrap();
        cfg.cache.as_mut().unwrap().quotas.insert("SALES".into(), 0.5);
        assert!(cfg.validate().unwrap_err().to_string().contains("SALES"));

        let mut cfg = builtin("noisy-neighbor").unwrap();
        cfg.workloads[1].name = cfg.workloads[0].name.clone();
        assert!(cfg.validate().unwrap_err().to_string().contains("duplicate"));

        let mut cfg = builtin("share-ratios:2").unwrap();
        cfg.workloads[0].tier = Tier::Hdd;
        assert!(cfg.validate().unwrap_err().to_string().contains("hdd"));
    }

    #[test]
    fn device_overrides_apply() {
        let mut d = DeviceSpec::new(DeviceKind::Flash, 1);
        d.channels = Some(2);
        d.targets.flash_lowprio_target = Some(32);
        assert_eq!(d.model().rated_capacity, 2.0);
        assert_eq!(d.targets().flash_lowprio_target, 32);
        assert_eq!(d.targets().raw_limit, QueueTargets::flash().raw_limit);
    }
}
