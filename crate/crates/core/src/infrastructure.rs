//! Multi-tier node topology: capacities, power profiles, links and the tier
//! hierarchy (0 = cloud, 1 = proxy, 2 = gateway).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TopologyError};
use crate::mobility::{Location, MobilityTrace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Anything that can host a module instance or terminate a link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Host {
    Node(NodeId),
    Device(EntityId),
}

impl fmt::Display for Host {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Host::Node(n) => write!(f, "n{n}"),
            Host::Device(e) => write!(f, "{e}"),
        }
    }
}

pub const TIER_CLOUD: u8 = 0;
pub const TIER_PROXY: u8 = 1;
pub const TIER_GATEWAY: u8 = 2;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FogNode {
    pub id: NodeId,
    pub name: String,
    pub tier: u8,
    /// Total over all servers.
    pub mips: f64,
    /// Identical CPU servers sharing the node's queue; a tuple runs on one.
    pub servers: u32,
    pub ram_total: f64,
    pub ram_free: f64,
    pub uplink_bw: f64,
    pub downlink_bw: f64,
    pub busy_power: f64,
    pub idle_power: f64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub location: Location,
    pub comm_range: f64,
    #[serde(with = "unbounded")]
    pub latency_threshold: f64,
    pub cluster_members: Vec<NodeId>,
    pub cm_latency: BTreeMap<NodeId, f64>,
}

impl FogNode {
    pub fn ram_used(&self) -> f64 {
        self.ram_total - self.ram_free
    }
}

/// A mobile user or IoT device attached below the gateway tier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MobileEntity {
    pub id: EntityId,
    pub name: String,
    pub tier: u8,
    pub current_parent: Option<NodeId>,
    pub trace: MobilityTrace,
    pub hosted_modules: BTreeSet<String>,
    pub mips: f64,
    pub uplink_bw: f64,
    pub downlink_bw: f64,
    pub busy_power: f64,
    pub idle_power: f64,
}

/// Per-tier default hop latencies in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierLatency {
    pub device_gateway: f64,
    pub gateway_proxy: f64,
    pub proxy_cloud: f64,
}

impl Default for TierLatency {
    fn default() -> Self {
        TierLatency {
            device_gateway: 2.0,
            gateway_proxy: 2.0,
            proxy_cloud: 100.0,
        }
    }
}

/// Direct gateway-to-gateway channel used by the non-hierarchical baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    pub enabled: bool,
    pub bandwidth: f64,
    pub latency_ms: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            enabled: false,
            bandwidth: 100.0,
            latency_ms: 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    #[serde(default)]
    pub name: String,
    pub tier: u8,
    pub mips: f64,
    #[serde(default = "one_server")]
    pub servers: u32,
    pub ram: f64,
    pub uplink: f64,
    pub downlink: f64,
    pub busy_power: f64,
    pub idle_power: f64,
    #[serde(default)]
    pub parent: Option<NodeId>,
    pub location: Location,
    #[serde(default = "default_range")]
    pub comm_range_km: f64,
    /// Absent or `null` means no threshold.
    #[serde(default = "default_latency_threshold", with = "unbounded")]
    pub latency_threshold_ms: f64,
}

fn one_server() -> u32 {
    1
}

fn default_range() -> f64 {
    1.0
}

fn default_latency_threshold() -> f64 {
    f64::INFINITY
}

/// Infinite values travel as `null`, which JSON can represent.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub id: u32,
    pub proxy: NodeId,
    pub gateways: Vec<NodeId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyOverride {
    pub a: NodeId,
    pub b: NodeId,
    pub ms: f64,
    #[serde(default = "yes")]
    pub symmetric: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub link_latency: Vec<LatencyOverride>,
    #[serde(default)]
    pub tier_latency: TierLatency,
    #[serde(default)]
    pub mesh: MeshConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct Topology {
    pub nodes: BTreeMap<NodeId, FogNode>,
    pub link_latency: BTreeMap<(NodeId, NodeId), f64>,
    pub tier_latency: TierLatency,
    pub mesh: MeshConfig,
    pub blocks: Vec<BlockSpec>,
}

pub fn build_topology(config: &TopologyConfig) -> Result<Topology> {
    let mut nodes = BTreeMap::new();
    for spec in &config.nodes {
        let invalid = |reason: String| TopologyError::InvalidNode {
            node: spec.id,
            reason,
        };
        if !(spec.mips > 0.0) {
            return Err(invalid(format!("mips must be positive, got {}", spec.mips)).into());
        }
        if spec.servers == 0 {
            return Err(invalid("a node needs at least one server".into()).into());
        }
        if !(spec.ram >= 0.0) {
            return Err(invalid(format!("ram must be non-negative, got {}", spec.ram)).into());
        }
        if !(spec.idle_power >= 0.0 && spec.busy_power >= spec.idle_power) {
            return Err(invalid(format!(
                "power profile needs busy >= idle >= 0, got busy {} idle {}",
                spec.busy_power, spec.idle_power
            ))
            .into());
        }
        if !(spec.uplink > 0.0 && spec.downlink > 0.0) {
            return Err(invalid("bandwidths must be positive".into()).into());
        }
        spec.location
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        let node = FogNode {
            id: spec.id,
            name: if spec.name.is_empty() {
                format!("node-{}", spec.id)
            } else {
                spec.name.clone()
            },
            tier: spec.tier,
            mips: spec.mips,
            servers: spec.servers,
            ram_total: spec.ram,
            ram_free: spec.ram,
            uplink_bw: spec.uplink,
            downlink_bw: spec.downlink,
            busy_power: spec.busy_power,
            idle_power: spec.idle_power,
            parent: spec.parent,
            children: Vec::new(),
            location: spec.location,
            comm_range: spec.comm_range_km,
            latency_threshold: spec.latency_threshold_ms,
            cluster_members: Vec::new(),
            cm_latency: BTreeMap::new(),
        };
        if nodes.insert(spec.id, node).is_some() {
            return Err(TopologyError::DuplicateId(spec.id).into());
        }
    }

    for node in nodes.values() {
        match node.parent {
            None if node.tier > TIER_CLOUD => return Err(TopologyError::Orphan(node.id).into()),
            Some(_) if node.tier == TIER_CLOUD => {
                return Err(TopologyError::RootWithParent(node.id).into())
            }
            Some(p) if !nodes.contains_key(&p) => {
                return Err(TopologyError::UnknownParent {
                    node: node.id,
                    parent: p,
                }
                .into())
            }
            _ => {}
        }
    }

    // cycles first, so a loop among same-tier nodes is reported as a cycle
    for &start in nodes.keys() {
        let mut seen = BTreeSet::new();
        let mut cur = Some(start);
        while let Some(id) = cur {
            if !seen.insert(id) {
                return Err(TopologyError::ParentCycle(start).into());
            }
            cur = nodes[&id].parent;
        }
    }

    for node in nodes.values() {
        if let Some(p) = node.parent {
            let parent_tier = nodes[&p].tier;
            if parent_tier + 1 != node.tier {
                return Err(TopologyError::TierMismatch {
                    node: node.id,
                    tier: node.tier,
                    parent: p,
                    parent_tier,
                }
                .into());
            }
        }
    }

    let links: Vec<(NodeId, NodeId)> = nodes
        .values()
        .filter_map(|n| n.parent.map(|p| (p, n.id)))
        .collect();
    for (p, c) in links {
        nodes.get_mut(&p).expect("validated").children.push(c);
    }
    for node in nodes.values_mut() {
        node.children.sort();
    }

    for block in &config.blocks {
        let proxy = nodes
            .get(&block.proxy)
            .ok_or(TopologyError::UnknownNode(block.proxy))?;
        if proxy.tier != TIER_PROXY {
            return Err(TopologyError::InvalidNode {
                node: block.proxy,
                reason: format!("block {} proxy must be tier 1", block.id),
            }
            .into());
        }
        for g in &block.gateways {
            let gw = nodes.get(g).ok_or(TopologyError::UnknownNode(*g))?;
            if gw.tier != TIER_GATEWAY || gw.parent != Some(block.proxy) {
                return Err(TopologyError::InvalidNode {
                    node: *g,
                    reason: format!(
                        "block {} gateway must be tier 2 under proxy {}",
                        block.id, block.proxy
                    ),
                }
                .into());
            }
        }
    }

    let mut link_latency = BTreeMap::new();
    for o in &config.link_latency {
        for id in [o.a, o.b] {
            if !nodes.contains_key(&id) {
                return Err(TopologyError::UnknownNode(id).into());
            }
        }
        if !(o.ms >= 0.0) {
            return Err(Error::Config(format!(
                "latency between {} and {} must be non-negative",
                o.a, o.b
            )));
        }
        link_latency.insert((o.a, o.b), o.ms);
        if o.symmetric {
            link_latency.insert((o.b, o.a), o.ms);
        }
    }

    Ok(Topology {
        nodes,
        link_latency,
        tier_latency: config.tier_latency,
        mesh: config.mesh,
        blocks: config.blocks.clone(),
    })
}

impl Topology {
    pub fn node(&self, id: NodeId) -> Result<&FogNode> {
        self.nodes
            .get(&id)
            .ok_or_else(|| TopologyError::UnknownNode(id).into())
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut FogNode> {
        self.nodes
            .get_mut(&id)
            .ok_or_else(|| TopologyError::UnknownNode(id).into())
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    /// Node ids at `tier`, ascending.
    pub fn tier_nodes(&self, tier: u8) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.tier == tier)
            .map(|n| n.id)
            .collect()
    }

    pub fn max_tier(&self) -> u8 {
        self.nodes.values().map(|n| n.tier).max().unwrap_or(0)
    }

    /// `[n, parent(n), ..., root]`.
    pub fn path_to_root(&self, n: NodeId) -> Result<Vec<NodeId>> {
        let mut path = vec![n];
        let mut cur = self.node(n)?;
        while let Some(p) = cur.parent {
            let parent = self
                .nodes
                .get(&p)
                .ok_or(TopologyError::BrokenChain(cur.id))?;
            if path.len() > self.nodes.len() {
                return Err(TopologyError::BrokenChain(n).into());
            }
            path.push(p);
            cur = parent;
        }
        if cur.tier != TIER_CLOUD {
            return Err(TopologyError::BrokenChain(cur.id).into());
        }
        Ok(path)
    }

    /// First node on `a`'s root-ward path that also lies on `b`'s.
    pub fn common_accessible_node(&self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let pa = self.path_to_root(a)?;
        let pb = self.path_to_root(b)?;
        for x in &pa {
            if pb.contains(x) {
                return Ok(*x);
            }
        }
        Err(Error::DisjointComponents(a, b))
    }

    pub fn are_tree_neighbors(&self, a: NodeId, b: NodeId) -> bool {
        let (Some(na), Some(nb)) = (self.nodes.get(&a), self.nodes.get(&b)) else {
            return false;
        };
        na.parent == Some(b) || nb.parent == Some(a)
    }

    /// Latency of a parent-child hop, honouring explicit overrides.
    pub fn tree_latency(&self, a: NodeId, b: NodeId) -> f64 {
        if let Some(ms) = self.link_latency.get(&(a, b)) {
            return *ms;
        }
        let ta = self.nodes.get(&a).map(|n| n.tier).unwrap_or(0);
        let tb = self.nodes.get(&b).map(|n| n.tier).unwrap_or(0);
        match ta.min(tb) {
            TIER_CLOUD => self.tier_latency.proxy_cloud,
            _ => self.tier_latency.gateway_proxy,
        }
    }

    /// Explicit override between two nodes, if configured.
    pub fn latency_override(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.link_latency.get(&(a, b)).copied()
    }

    /// Sender uplink limited by receiver downlink.
    pub fn hop_bandwidth(&self, from: NodeId, to: NodeId) -> f64 {
        let up = self.nodes.get(&from).map(|n| n.uplink_bw).unwrap_or(f64::INFINITY);
        let down = self.nodes.get(&to).map(|n| n.downlink_bw).unwrap_or(f64::INFINITY);
        up.min(down)
    }

    pub fn reserve_ram(&mut self, id: NodeId, amount: f64) -> Result<()> {
        let node = self.node_mut(id)?;
        if node.ram_free + 1e-9 < amount {
            return Err(Error::Invariant(format!(
                "node {id} has {:.3} GB free, cannot reserve {amount:.3} GB",
                node.ram_free
            )));
        }
        node.ram_free = (node.ram_free - amount).max(0.0);
        Ok(())
    }

    pub fn release_ram(&mut self, id: NodeId, amount: f64) -> Result<()> {
        let node = self.node_mut(id)?;
        node.ram_free = (node.ram_free + amount).min(node.ram_total);
        Ok(())
    }
}
