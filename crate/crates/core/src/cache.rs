//! Flash cache with category-driven admission and per-entity quotas.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::NodeId;
use crate::tags::{CachePolicy, Classification};
use crate::time::{Micros, MICROS_PER_SEC};

/// Granularity of block addresses.
pub const BLOCK_SIZE: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockAddr {
    pub database_id: u32,
    pub file_number: u32,
    pub block: u64,
}

impl BlockAddr {
    pub fn new(database_id: u32, file_number: u32, block: u64) -> Self {
        BlockAddr { database_id, file_number, block }
    }
}

/// Admission rule for [`CachePolicy::CacheConditional`] traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionalAdmission {
    #[default]
    Admit,
    Bypass,
    /// Admit blocks no larger than this many bytes.
    MaxSize(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
    pub exclusion_enabled: bool,
    pub conditional: ConditionalAdmission,
    /// Rate at which dirty write-back bytes are destaged.
    pub destage_bytes_per_sec: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            capacity_bytes: 1 << 30,
            exclusion_enabled: true,
            conditional: ConditionalAdmission::Admit,
            destage_bytes_per_sec: 100e6,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("entity {0:?} has a zero cache quota")]
    QuotaExhausted(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmitOutcome {
    Admitted,
    Bypassed,
    EvictedAndAdmitted(u32),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub resident_bytes: u64,
}

impl EntityCacheStats {
    pub fn hit_rate(&self) -> f64 {
        let n = self.hits + self.misses;
        if n == 0 {
            0.0
        } else {
            self.hits as f64 / n as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    size: u64,
    tick: u64,
    owner: NodeId,
    dirty: bool,
}

#[derive(Debug, Clone)]
pub struct FlashCache {
    cfg: CacheConfig,
    resident: HashMap<BlockAddr, Entry>,
    lru: BTreeMap<u64, BlockAddr>,
    owner_lru: HashMap<NodeId, BTreeMap<u64, BlockAddr>>,
    quotas: HashMap<NodeId, f64>,
    stats: HashMap<NodeId, EntityCacheStats>,
    used: u64,
    dirty: f64,
    tick: u64,
}

impl FlashCache {
    pub fn new(cfg: CacheConfig) -> Self {
        FlashCache {
            cfg,
            resident: HashMap::new(),
            lru: BTreeMap::new(),
            owner_lru: HashMap::new(),
            quotas: HashMap::new(),
            stats: HashMap::new(),
            used: 0,
            dirty: 0.0,
            tick: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.cfg.capacity_bytes
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn exclusion_enabled(&self) -> bool {
        self.cfg.exclusion_enabled
    }

    pub fn set_exclusion_enabled(&mut self, enabled: bool) {
        self.cfg.exclusion_enabled = enabled;
    }

    /// Sets an entity's quota as a fraction of capacity.
    pub fn set_quota(&mut self, entity: NodeId, fraction: f64) {
        self.quotas.insert(entity, fraction.clamp(0.0, 1.0));
    }

    pub fn quota_bytes(&self, entity: NodeId) -> Option<u64> {
        self.quotas.get(&entity).map(|f| (f * self.cfg.capacity_bytes as f64).floor() as u64)
    }

    pub fn stats(&self, entity: NodeId) -> EntityCacheStats {
        self.stats.get(&entity).copied().unwrap_or_default()
    }

    pub fn all_stats(&self) -> BTreeMap<NodeId, EntityCacheStats> {
        self.stats.iter().map(|(k, v)| (*k, *v)).collect()
    }

    pub fn contains(&self, addr: &BlockAddr) -> bool {
        self.resident.contains_key(addr)
    }

    pub fn dirty_bytes(&self) -> f64 {
        self.dirty
    }

    /// Checks residency on behalf of `entity`; hits refresh recency.
    pub fn lookup(&mut self, entity: NodeId, addr: &BlockAddr) -> Lookup {
        let hit = self.touch(addr);
        let st = self.stats.entry(entity).or_default();
        if hit {
            st.hits += 1;
            Lookup::Hit
        } else {
            st.misses += 1;
            Lookup::Miss
        }
    }

    fn touch(&mut self, addr: &BlockAddr) -> bool {
        let Some(e) = self.resident.get_mut(addr) else {
            return false;
        };
        self.tick += 1;
        self.lru.remove(&e.tick);
        let own = self.owner_lru.get_mut(&e.owner).expect("owner index");
        own.remove(&e.tick);
        e.tick = self.tick;
        self.lru.insert(self.tick, *addr);
        own.insert(self.tick, *addr);
        true
    }

    /// Policy after applying the exclusion toggle and the conditional rule.
    pub fn eligible(&self, class: &Classification, size: u64) -> bool {
        match class.cache_policy {
            CachePolicy::CacheYes | CachePolicy::WriteBack => true,
            CachePolicy::CacheNo => !self.cfg.exclusion_enabled,
            CachePolicy::CacheConditional => match self.cfg.conditional {
                ConditionalAdmission::Admit => true,
                ConditionalAdmission::Bypass => false,
                ConditionalAdmission::MaxSize(max) => size <= max,
            },
        }
    }

    pub fn admit(&mut self, class: &Classification, addr: BlockAddr, size: u64) -> Result<AdmitOutcome, CacheError> {
        if !self.eligible(class, size) {
            return Ok(AdmitOutcome::Bypassed);
        }
        let owner = class.leaf;
        let quota = self.quota_bytes(owner);
        if quota == Some(0) {
            return Err(CacheError::QuotaExhausted(owner));
        }
        if self.touch(&addr) {
            if class.cache_policy == CachePolicy::WriteBack {
                self.mark_dirty(&addr);
            }
            return Ok(AdmitOutcome::Admitted);
        }
        if size > self.cfg.capacity_bytes || quota.is_some_and(|q| size > q) {
            return Ok(AdmitOutcome::Bypassed);
        }
        let mut evicted = 0;
        if let Some(q) = quota {
            while self.stats(owner).resident_bytes + size > q {
                let victim = *self.owner_lru[&owner].values().next().expect("resident bytes imply entries");
                self.evict(&victim);
                evicted += 1;
            }
        }
        while self.used + size > self.cfg.capacity_bytes {
            let victim = *self.lru.values().next().expect("used bytes imply entries");
            self.evict(&victim);
            evicted += 1;
        }
        self.insert(owner, addr, size, class.cache_policy == CachePolicy::WriteBack);
        Ok(if evicted == 0 { AdmitOutcome::Admitted } else { AdmitOutcome::EvictedAndAdmitted(evicted) })
    }

    /// Fills the cache for `owner` without touching hit statistics.
    pub fn prewarm(&mut self, owner: NodeId, blocks: impl IntoIterator<Item = (BlockAddr, u64)>) {
        for (addr, size) in blocks {
            let fits = self.used + size <= self.cfg.capacity_bytes
                && self.quota_bytes(owner).is_none_or(|q| self.stats(owner).resident_bytes + size <= q);
            if !fits {
                break;
            }
            if !self.resident.contains_key(&addr) {
                self.insert(owner, addr, size, false);
            }
        }
    }

    fn insert(&mut self, owner: NodeId, addr: BlockAddr, size: u64, dirty: bool) {
        self.tick += 1;
        self.resident.insert(addr, Entry { size, tick: self.tick, owner, dirty });
        self.lru.insert(self.tick, addr);
        self.owner_lru.entry(owner).or_default().insert(self.tick, addr);
        self.used += size;
        self.stats.entry(owner).or_default().resident_bytes += size;
        if dirty {
            self.dirty += size as f64;
        }
    }

    fn mark_dirty(&mut self, addr: &BlockAddr) {
        let e = self.resident.get_mut(addr).expect("resident");
        if !e.dirty {
            e.dirty = true;
            self.dirty += e.size as f64;
        }
    }

    fn evict(&mut self, addr: &BlockAddr) {
        let e = self.resident.remove(addr).expect("resident");
        self.lru.remove(&e.tick);
        self.owner_lru.get_mut(&e.owner).expect("owner index").remove(&e.tick);
        self.used -= e.size;
        let st = self.stats.entry(e.owner).or_default();
        st.resident_bytes -= e.size;
        st.evictions += 1;
        if e.dirty {
            self.dirty = (self.dirty - e.size as f64).max(0.0);
        }
    }

    /// Destages dirty bytes off the latency path.
    pub fn destage(&mut self, elapsed: Micros) {
        self.dirty = (self.dirty - self.cfg.destage_bytes_per_sec * elapsed as f64 / MICROS_PER_SEC as f64).max(0.0);
    }
}
