//! I/O tags: the wire codec and the storage-side classification registry.
//!
//! Wire layout (version 1, 32 bytes, all multi-byte fields big-endian):
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! |      0 |    1 | version                                 |
//! |      1 |    1 | encoded length (32)                     |
//! |      2 |    1 | priority hint (0 high, 1 medium, 2 low) |
//! |      3 |    1 | flags, must be zero                     |
//! |      4 |    4 | database id                             |
//! |      8 |    4 | file number                             |
//! |     12 |    8 | block offset                            |
//! |     20 |    4 | block count                             |
//! |     24 |    2 | workload sub-key (provisioned metadata) |
//! |     26 |    6 | reserved, must be zero                  |
//!
//! Only primitives travel on the wire. Workload, category and priority are
//! derived at arrival from metadata provisioned per database.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{NodeId, ResourcePlan};

pub const TAG_VERSION: u8 = 1;
pub const TAG_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::High, Priority::Medium, Priority::Low];

    fn wire(self) -> u8 {
        match self {
            Priority::High => 0,
            Priority::Medium => 1,
            Priority::Low => 2,
        }
    }

    fn from_wire(b: u8) -> Option<Priority> {
        match b {
            0 => Some(Priority::High),
            1 => Some(Priority::Medium),
            2 => Some(Priority::Low),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    RedoLogWrite,
    BufferCacheRead,
    DirectPathRead,
    DatabaseWrite,
    TempWrite,
    UndoWrite,
    Backup,
    StorageRebalance,
    Untagged,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::RedoLogWrite,
        Category::BufferCacheRead,
        Category::DirectPathRead,
        Category::DatabaseWrite,
        Category::TempWrite,
        Category::UndoWrite,
        Category::Backup,
        Category::StorageRebalance,
        Category::Untagged,
    ];

    /// Default cache eligibility of the category.
    pub fn cache_policy(self) -> CachePolicy {
        match self {
            Category::RedoLogWrite | Category::DatabaseWrite => CachePolicy::WriteBack,
            Category::BufferCacheRead | Category::UndoWrite => CachePolicy::CacheYes,
            Category::DirectPathRead => CachePolicy::CacheConditional,
            Category::TempWrite | Category::Backup | Category::StorageRebalance | Category::Untagged => {
                CachePolicy::CacheNo
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    WriteBack,
    CacheYes,
    CacheConditional,
    CacheNo,
}

/// Primitives carried with every request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IoTag {
    pub version: u8,
    pub database_id: u32,
    pub file_number: u32,
    pub block_offset: u64,
    pub block_count: u32,
    pub priority_hint: Priority,
    pub workload_key: u16,
}

impl IoTag {
    pub fn new(database_id: u32, file_number: u32, block_offset: u64, block_count: u32, priority_hint: Priority) -> Self {
        IoTag {
            version: TAG_VERSION,
            database_id,
            file_number,
            block_offset,
            block_count,
            priority_hint,
            workload_key: 0,
        }
    }

    pub fn with_workload_key(mut self, key: u16) -> Self {
        self.workload_key = key;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagError {
    #[error("unknown tag version {0}")]
    UnknownVersion(u8),
    #[error("truncated tag: {0} bytes")]
    TruncatedTag(usize),
    #[error("invalid tag field: {0}")]
    InvalidField(&'static str),
}

pub fn encode_tag(tag: &IoTag) -> [u8; TAG_LEN] {
    let mut out = [0u8; TAG_LEN];
    out[0] = tag.version;
    out[1] = TAG_LEN as u8;
    out[2] = tag.priority_hint.wire();
    out[4..8].copy_from_slice(&tag.database_id.to_be_bytes());
    out[8..12].copy_from_slice(&tag.file_number.to_be_bytes());
    out[12..20].copy_from_slice(&tag.block_offset.to_be_bytes());
    out[20..24].copy_from_slice(&tag.block_count.to_be_bytes());
    out[24..26].copy_from_slice(&tag.workload_key.to_be_bytes());
    out
}

pub fn decode_tag(bytes: &[u8]) -> Result<IoTag, TagError> {
    let Some(&version) = bytes.first() else {
        return Err(TagError::TruncatedTag(0));
    };
    if version != TAG_VERSION {
        return Err(TagError::UnknownVersion(version));
    }
    if bytes.len() < TAG_LEN {
        return Err(TagError::TruncatedTag(bytes.len()));
    }
    if bytes[1] as usize != TAG_LEN {
        return Err(TagError::InvalidField("length"));
    }
    let priority_hint = Priority::from_wire(bytes[2]).ok_or(TagError::InvalidField("priority"))?;
    if bytes[3] != 0 || bytes[26..TAG_LEN].iter().any(|b| *b != 0) {
        return Err(TagError::InvalidField("reserved"));
    }
    let be32 = |r: std::ops::Range<usize>| u32::from_be_bytes(bytes[r].try_into().expect("4 bytes"));
    Ok(IoTag {
        version,
        database_id: be32(4..8),
        file_number: be32(8..12),
        block_offset: u64::from_be_bytes(bytes[12..20].try_into().expect("8 bytes")),
        block_count: be32(20..24),
        priority_hint,
        workload_key: u16::from_be_bytes(bytes[24..26].try_into().expect("2 bytes")),
    })
}

/// Storage-side view of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub leaf: NodeId,
    pub category: Category,
    pub priority: Priority,
    pub cache_policy: CachePolicy,
}

impl Classification {
    pub fn new(leaf: NodeId, category: Category, priority: Priority) -> Self {
        Classification { leaf, category, priority, cache_policy: category.cache_policy() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRange {
    pub first: u32,
    pub last: u32,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadKey {
    pub key: u16,
    pub leaf: String,
}

/// Metadata provisioned when a PDB is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseEntry {
    pub id: u32,
    /// PDB (or workload) node the database maps to.
    pub node: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub workloads: Vec<WorkloadKey>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<FileRange>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrySpec {
    #[serde(default, rename = "database")]
    pub databases: Vec<DatabaseEntry>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("database {db} maps to unknown node `{node}`")]
    UnknownNode { db: u32, node: String },
    #[error("database {0} provisioned twice")]
    Duplicate(u32),
    #[error("database {db}: file range {first}..={last} is empty")]
    EmptyRange { db: u32, first: u32, last: u32 },
}

#[derive(Debug, Clone)]
struct DatabaseMeta {
    leaf: NodeId,
    workloads: HashMap<u16, NodeId>,
    files: Vec<FileRange>,
}

/// Total map from tag primitives to a [`Classification`].
#[derive(Debug, Clone)]
pub struct ClassificationRegistry {
    databases: HashMap<u32, DatabaseMeta>,
    fallback: Classification,
}

impl ClassificationRegistry {
    pub fn provision(spec: &RegistrySpec, plan: &ResourcePlan) -> Result<Self, RegistryError> {
        let resolve = |db: u32, name: &str| -> Result<NodeId, RegistryError> {
            let id = plan
                .id_of(name)
                .ok_or_else(|| RegistryError::UnknownNode { db, node: name.to_owned() })?;
            Ok(first_leaf(plan, id))
        };
        let mut databases = HashMap::new();
        for entry in &spec.databases {
            let leaf = resolve(entry.id, &entry.node)?;
            let mut workloads = HashMap::new();
            for w in &entry.workloads {
                workloads.insert(w.key, resolve(entry.id, &w.leaf)?);
            }
            for f in &entry.files {
                if f.first > f.last {
                    return Err(RegistryError::EmptyRange { db: entry.id, first: f.first, last: f.last });
                }
            }
            let meta = DatabaseMeta { leaf, workloads, files: entry.files.clone() };
            if databases.insert(entry.id, meta).is_some() {
                return Err(RegistryError::Duplicate(entry.id));
            }
        }
        Ok(ClassificationRegistry {
            databases,
            fallback: Classification::new(plan.default_leaf(), Category::Untagged, Priority::Low),
        })
    }

    pub fn fallback(&self) -> Classification {
        self.fallback
    }

    pub fn classify(&self, tag: Option<&IoTag>) -> Classification {
        let Some(tag) = tag else {
            return self.fallback;
        };
        let Some(db) = self.databases.get(&tag.database_id) else {
            return self.fallback;
        };
        let leaf = db.workloads.get(&tag.workload_key).copied().unwrap_or(db.leaf);
        let category = db
            .files
            .iter()
            .find(|f| (f.first..=f.last).contains(&tag.file_number))
            .map_or(Category::Untagged, |f| f.category);
        Classification::new(leaf, category, tag.priority_hint)
    }

    /// Decodes raw tag bytes; anything undecodable is treated as untagged.
    pub fn classify_bytes(&self, bytes: Option<&[u8]>) -> Classification {
        match bytes.map(decode_tag) {
            Some(Ok(tag)) => self.classify(Some(&tag)),
            _ => self.fallback,
        }
    }
}

/// Follows implicit/first children down to a leaf.
fn first_leaf(plan: &ResourcePlan, mut id: NodeId) -> NodeId {
    loop {
        let node = plan.node(id);
        match node.children.iter().find(|c| plan.node(**c).implicit).or(node.children.first()) {
            Some(c) => id = *c,
            None => return id,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
