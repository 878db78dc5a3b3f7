//! Resource tree (Root → CDB → PDB → workload) and the share/limit composition
//! that turns per-level directives into effective allocations.
//!
//! Plans are immutable once built. A successor plan is built from its
//! predecessor with [`ResourcePlan::build_next`], which keeps the [`NodeId`] of
//! every node whose name survives, so queued requests and ledger entries keep
//! their identity across a swap.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Suffix given to implicitly created default children.
pub const IMPLICIT_SUFFIX: &str = "default";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("malformed hierarchy: {0}")]
    MalformedHierarchy(String),
    #[error("invalid directive: {0}")]
    InvalidDirective(String),
    #[error("plan has no default leaf for untagged I/O")]
    MissingDefault,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` has no children")]
    NotAParent(String),
    #[error("stale plan: version {next} does not follow {current}")]
    StalePlan { current: u64, next: u64 },
    #[error("plan spec parse error: {0}")]
    Parse(String),
}

/// Stable identifier of a node. Index 0 is always the synthetic root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Hierarchy level. The shipped configuration uses CDB/PDB/workload; deeper
/// levels are expressed as `Sub(rank)` with rank ≥ 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Level {
    Root,
    Cdb,
    Pdb,
    Workload,
    Sub(u8),
}

impl Level {
    pub fn rank(self) -> u8 {
        match self {
            Level::Root => 0,
            Level::Cdb => 1,
            Level::Pdb => 2,
            Level::Workload => 3,
            Level::Sub(r) => r,
        }
    }

    fn from_rank(rank: u8) -> Level {
        match rank {
            0 => Level::Root,
            1 => Level::Cdb,
            2 => Level::Pdb,
            3 => Level::Workload,
            r => Level::Sub(r),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Root => f.write_str("root"),
            Level::Cdb => f.write_str("cdb"),
            Level::Pdb => f.write_str("pdb"),
            Level::Workload => f.write_str("workload"),
            Level::Sub(r) => write!(f, "level{r}"),
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "root" => Ok(Level::Root),
            "cdb" => Ok(Level::Cdb),
            "pdb" => Ok(Level::Pdb),
            "workload" => Ok(Level::Workload),
            other => other
                .strip_prefix("level")
                .and_then(|r| r.parse::<u8>().ok())
                .filter(|r| *r >= 4)
                .map(Level::Sub)
                .ok_or_else(|| format!("unknown level `{other}`")),
        }
    }
}

impl TryFrom<String> for Level {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Level> for String {
    fn from(l: Level) -> String {
        l.to_string()
    }
}

/// Global scheduling objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    LowLatency,
    HighThroughput,
    Balanced,
    #[default]
    Auto,
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low-latency" => Ok(Objective::LowLatency),
            "high-throughput" => Ok(Objective::HighThroughput),
            "balanced" => Ok(Objective::Balanced),
            "auto" => Ok(Objective::Auto),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

/// Declarative description of one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub default: bool,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, level: Level, parent: Option<&str>) -> Self {
        NodeSpec {
            name: name.into(),
            level,
            parent: parent.map(str::to_owned),
            shares: None,
            limit: None,
            default: false,
        }
    }

    pub fn shares(mut self, shares: u32) -> Self {
        self.shares = Some(shares);
        self
    }

    pub fn limit(mut self, limit: f64) -> Self {
        self.limit = Some(limit);
        self
    }

    pub fn default_leaf(mut self) -> Self {
        self.default = true;
        self
    }
}

/// The plan file: objective, revision and the flat node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSpec {
    #[serde(default)]
    pub objective: Objective,
    #[serde(default = "default_version")]
    pub version: u64,
    #[serde(default, rename = "node")]
    pub nodes: Vec<NodeSpec>,
}

fn default_version() -> u64 {
    1
}

impl PlanSpec {
    pub fn new(version: u64, nodes: Vec<NodeSpec>) -> Self {
        PlanSpec { objective: Objective::Auto, version, nodes }
    }

    pub fn from_toml(text: &str) -> Result<Self, HierarchyError> {
        toml::from_str(text).map_err(|e| HierarchyError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan spec always serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyNode {
    pub id: NodeId,
    pub name: String,
    pub level: Level,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub shares: u32,
    pub limit: Option<f64>,
    pub implicit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveAllocation {
    pub node: NodeId,
    /// Product of sibling share proportions along the root-to-node path.
    pub share_fraction: f64,
    /// Product of every limit on the path (absent limit counts as 1.0).
    pub effective_limit: f64,
    /// Deepest limited node on the path; its cascaded budget is the one that binds.
    pub binding_node: Option<NodeId>,
}

/// Validated, immutable resource plan.
#[derive(Debug, Clone)]
pub struct ResourcePlan {
    nodes: Vec<Option<HierarchyNode>>,
    by_name: HashMap<String, NodeId>,
    leaves: Vec<NodeId>,
    default_leaf: NodeId,
    objective: Objective,
    version: u64,
    share_fraction: Vec<f64>,
    effective_limit: Vec<f64>,
    spec: PlanSpec,
}

/// Validates `spec` and returns the plan. Node ids are assigned in spec order.
pub fn build_plan(spec: PlanSpec) -> Result<ResourcePlan, HierarchyError> {
    ResourcePlan::build(spec, None)
}

/// Checks that `next` may replace `current` and returns it as a shareable snapshot.
pub fn swap_plan(current: &ResourcePlan, next: ResourcePlan) -> Result<Arc<ResourcePlan>, HierarchyError> {
    if next.version <= current.version {
        return Err(HierarchyError::StalePlan { current: current.version, next: next.version });
    }
    Ok(Arc::new(next))
}

impl ResourcePlan {
    /// Builds a successor plan, keeping ids for every node name that `self` knows.
    pub fn build_next(&self, spec: PlanSpec) -> Result<ResourcePlan, HierarchyError> {
        ResourcePlan::build(spec, Some(self))
    }

    fn build(spec: PlanSpec, prev: Option<&ResourcePlan>) -> Result<ResourcePlan, HierarchyError> {
        let mut specs: Vec<NodeSpec> = spec.nodes.clone();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, n) in specs.iter().enumerate() {
            if n.name.is_empty() {
                return Err(HierarchyError::MalformedHierarchy("empty node name".into()));
            }
            if n.level == Level::Root {
                return Err(HierarchyError::MalformedHierarchy(format!(
                    "node `{}` declares the reserved root level",
                    n.name
                )));
            }
            if index.insert(n.name.clone(), i).is_some() {
                return Err(HierarchyError::MalformedHierarchy(format!("duplicate node `{}`", n.name)));
            }
            if n.shares == Some(0) {
                return Err(HierarchyError::InvalidDirective(format!("node `{}`: shares must be ≥ 1", n.name)));
            }
            if let Some(l) = n.limit {
                if !(l > 0.0 && l <= 1.0) {
                    return Err(HierarchyError::InvalidDirective(format!(
                        "node `{}`: limit {l} outside (0, 1]",
                        n.name
                    )));
                }
            }
        }

        // Parent existence, level ordering and cycles.
        for n in &specs {
            let parent_rank = match &n.parent {
                None => 0,
                Some(p) => match index.get(p) {
                    Some(&pi) => specs[pi].level.rank(),
                    None => {
                        return Err(HierarchyError::MalformedHierarchy(format!(
                            "node `{}` names unknown parent `{p}`",
                            n.name
                        )))
                    }
                },
            };
            if n.level.rank() <= parent_rank {
                return Err(HierarchyError::MalformedHierarchy(format!(
                    "level inversion: `{}` ({}) under a parent of rank {parent_rank}",
                    n.name, n.level
                )));
            }
            let mut cur = n.parent.clone();
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if steps > specs.len() {
                    return Err(HierarchyError::MalformedHierarchy(format!("cycle through `{}`", n.name)));
                }
                cur = specs[index[&p]].parent.clone();
            }
        }

        // Implicit default children down to the workload level.
        let mut i = 0;
        while i < specs.len() {
            let name = specs[i].name.clone();
            let rank = specs[i].level.rank();
            let has_child = specs.iter().any(|s| s.parent.as_deref() == Some(name.as_str()));
            if !has_child && rank < Level::Workload.rank() {
                let child = NodeSpec::new(
                    format!("{name}/{IMPLICIT_SUFFIX}"),
                    Level::from_rank(rank + 1),
                    Some(&name),
                );
                if index.contains_key(&child.name) {
                    return Err(HierarchyError::MalformedHierarchy(format!("name `{}` is reserved", child.name)));
                }
                index.insert(child.name.clone(), specs.len());
                specs.push(NodeSpec { default: false, ..child });
            }
            i += 1;
        }
        let declared = spec.nodes.len();

        // Id assignment: reuse predecessor ids where names match.
        let mut next_free = prev.map_or(1, |p| p.nodes.len() as u32);
        let mut ids = Vec::with_capacity(specs.len());
        for s in &specs {
            let id = prev.and_then(|p| p.by_name.get(&s.name).copied()).unwrap_or_else(|| {
                let id = NodeId(next_free);
                next_free += 1;
                id
            });
            ids.push(id);
        }
        let slots = next_free as usize;
        let mut nodes: Vec<Option<HierarchyNode>> = vec![None; slots];
        nodes[0] = Some(HierarchyNode {
            id: NodeId::ROOT,
            name: "root".into(),
            level: Level::Root,
            parent: None,
            children: Vec::new(),
            shares: 1,
            limit: None,
            implicit: true,
        });
        let mut by_name = HashMap::new();
        for (k, s) in specs.iter().enumerate() {
            let parent = Some(s.parent.as_ref().map_or(NodeId::ROOT, |p| ids[index[p]]));
            nodes[ids[k].index()] = Some(HierarchyNode {
                id: ids[k],
                name: s.name.clone(),
                level: s.level,
                parent,
                children: Vec::new(),
                shares: s.shares.unwrap_or(1),
                limit: s.limit,
                implicit: k >= declared,
            });
            by_name.insert(s.name.clone(), ids[k]);
        }
        for &id in &ids {
            let parent = nodes[id.index()].as_ref().and_then(|n| n.parent).expect("non-root has parent");
            nodes[parent.index()].as_mut().expect("parent exists").children.push(id);
        }

        let mut leaves = Vec::new();
        for n in nodes.iter().flatten() {
            if n.id != NodeId::ROOT && n.children.is_empty() {
                if n.level.rank() < Level::Workload.rank() {
                    return Err(HierarchyError::MalformedHierarchy(format!("leaf `{}` above workload level", n.name)));
                }
                leaves.push(n.id);
            }
        }
        if leaves.is_empty() {
            return Err(HierarchyError::MissingDefault);
        }

        let flagged: Vec<&NodeSpec> = spec.nodes.iter().filter(|n| n.default).collect();
        if flagged.len() > 1 {
            return Err(HierarchyError::InvalidDirective("more than one node flagged as default".into()));
        }
        let default_leaf = match flagged.first() {
            None => return Err(HierarchyError::MissingDefault),
            Some(f) => {
                let mut id = by_name[&f.name];
                loop {
                    let n = nodes[id.index()].as_ref().expect("present");
                    if n.children.is_empty() {
                        break id;
                    }
                    // A flagged interior node resolves through its implicit chain only.
                    match n.children.as_slice() {
                        [only] if nodes[only.index()].as_ref().is_some_and(|c| c.implicit) => id = *only,
                        _ => {
                            return Err(HierarchyError::MalformedHierarchy(format!(
                                "default node `{}` is not a leaf",
                                f.name
                            )))
                        }
                    }
                }
            }
        };

        let mut plan = ResourcePlan {
            nodes,
            by_name,
            leaves,
            default_leaf,
            objective: spec.objective,
            version: spec.version,
            share_fraction: vec![0.0; slots],
            effective_limit: vec![1.0; slots],
            spec,
        };
        plan.compose_top_down();
        Ok(plan)
    }

    fn compose_top_down(&mut self) {
        let mut stack = vec![(NodeId::ROOT, 1.0f64, 1.0f64)];
        while let Some((id, share, limit)) = stack.pop() {
            self.share_fraction[id.index()] = share;
            self.effective_limit[id.index()] = limit;
            let node = self.nodes[id.index()].as_ref().expect("present");
            let total: u64 = node.children.iter().map(|c| self.node(*c).shares as u64).sum();
            for &c in &node.children {
                let child = self.node(c);
                let frac = child.shares as f64 / total as f64;
                stack.push((c, share * frac, limit * child.limit.unwrap_or(1.0)));
            }
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn spec(&self) -> &PlanSpec {
        &self.spec
    }

    pub fn default_leaf(&self) -> NodeId {
        self.default_leaf
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Upper bound on node ids in this plan (for id-indexed tables).
    pub fn id_bound(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.get(id.index()).is_some_and(Option::is_some)
    }

    /// Panics if `id` is not part of the plan.
    pub fn node(&self, id: NodeId) -> &HierarchyNode {
        self.nodes[id.index()].as_ref().expect("node id not in plan")
    }

    pub fn get(&self, id: NodeId) -> Option<&HierarchyNode> {
        self.nodes.get(id.index()).and_then(Option::as_ref)
    }

    pub fn id_of(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn lookup(&self, name: &str) -> Result<NodeId, HierarchyError> {
        self.id_of(name).ok_or_else(|| HierarchyError::UnknownNode(name.to_owned()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &HierarchyNode> {
        self.nodes.iter().flatten()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.get(id).is_some_and(|n| n.children.is_empty() && id != NodeId::ROOT)
    }

    /// Ancestors from the node up to (excluding) the root, node first.
    pub fn ancestry(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(4);
        let mut cur = Some(id);
        while let Some(c) = cur {
            if c == NodeId::ROOT {
                break;
            }
            out.push(c);
            cur = self.node(c).parent;
        }
        out
    }

    /// Slash-joined path of node names below the root.
    pub fn path(&self, id: NodeId) -> String {
        let mut names: Vec<&str> = self
            .ancestry(id)
            .iter()
            .map(|a| {
                let n = self.node(*a);
                if n.implicit { IMPLICIT_SUFFIX } else { n.name.as_str() }
            })
            .collect();
        names.reverse();
        names.join("/")
    }

    pub fn effective_allocation(&self, id: NodeId) -> Result<EffectiveAllocation, HierarchyError> {
        if !self.contains(id) {
            return Err(HierarchyError::UnknownNode(format!("#{}", id.0)));
        }
        let binding_node = self.ancestry(id).into_iter().find(|a| self.node(*a).limit.is_some());
        Ok(EffectiveAllocation {
            node: id,
            share_fraction: self.share_fraction[id.index()],
            effective_limit: self.effective_limit[id.index()],
            binding_node,
        })
    }

    /// Same composition as [`Self::effective_allocation`] but walked leaf-to-root.
    pub fn compose_bottom_up(&self, id: NodeId) -> Result<(f64, f64), HierarchyError> {
        if !self.contains(id) {
            return Err(HierarchyError::UnknownNode(format!("#{}", id.0)));
        }
        let mut share = 1.0;
        let mut limit = 1.0;
        for a in self.ancestry(id) {
            let node = self.node(a);
            let parent = self.node(node.parent.expect("non-root"));
            let total: u64 = parent.children.iter().map(|c| self.node(*c).shares as u64).sum();
            share *= node.shares as f64 / total as f64;
            limit *= node.limit.unwrap_or(1.0);
        }
        Ok((share, limit))
    }

    /// Proportions among the children of `parent`.
    pub fn sibling_share_fractions(&self, parent: NodeId) -> Result<BTreeMap<NodeId, f64>, HierarchyError> {
        let node = self.get(parent).ok_or_else(|| HierarchyError::UnknownNode(format!("#{}", parent.0)))?;
        if node.children.is_empty() {
            return Err(HierarchyError::NotAParent(node.name.clone()));
        }
        let total: u64 = node.children.iter().map(|c| self.node(*c).shares as u64).sum();
        Ok(node
            .children
            .iter()
            .map(|c| (*c, self.node(*c).shares as f64 / total as f64))
            .collect())
    }

    /// Nodes that carry their own limit, i.e. the enforcement points.
    pub fn limited_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes().filter(|n| n.limit.is_some()).map(|n| n.id)
    }
}

/// Single-writer, many-reader publication of plan snapshots.
#[derive(Debug)]
pub struct PlanHandle {
    current: RwLock<Arc<ResourcePlan>>,
}

impl PlanHandle {
    pub fn new(plan: ResourcePlan) -> Self {
        PlanHandle { current: RwLock::new(Arc::new(plan)) }
    }

    pub fn load(&self) -> Arc<ResourcePlan> {
        self.current.read().expect("plan lock poisoned").clone()
    }

    pub fn publish(&self, next: ResourcePlan) -> Result<Arc<ResourcePlan>, HierarchyError> {
        let mut guard = self.current.write().expect("plan lock poisoned");
        let next = swap_plan(&guard, next)?;
        *guard = next.clone();
        Ok(next)
    }
}
