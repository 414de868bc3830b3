//! Dynamic distributed clustering: every node builds its own cluster-member
//! list from its siblings by communication range and, optionally, a latency
//! threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{EventKind, SimTime};
use crate::error::Result;
use crate::infrastructure::{NodeId, Topology, TIER_GATEWAY};
use crate::mobility::haversine;

/// Latency estimate used when no pairwise latency is configured.
pub const LATENCY_BASE_MS: f64 = 1.0;
pub const LATENCY_PER_KM_MS: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipMode {
    /// a and b are members of each other only if both lists agree.
    #[default]
    Symmetric,
    /// Each node keeps exactly what its own range/latency test admitted.
    Asymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "when", content = "value")]
pub enum ClusterTrigger {
    AtStart,
    /// Simulated time in seconds.
    AtTime(f64),
    OnEvent(EventKind),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeCluster {
    pub members: Vec<NodeId>,
    pub latency: BTreeMap<NodeId, f64>,
    pub formed_at: SimTime,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub mode: MembershipMode,
    pub nodes: BTreeMap<NodeId, NodeCluster>,
}

/// Configured pairwise latency if present, else a distance-proportional
/// estimate.
pub fn check_latency(topo: &Topology, a: NodeId, b: NodeId) -> f64 {
    if let Some(ms) = topo.latency_override(a, b) {
        return ms;
    }
    match (topo.nodes.get(&a), topo.nodes.get(&b)) {
        (Some(na), Some(nb)) => {
            LATENCY_BASE_MS + LATENCY_PER_KM_MS * haversine(&na.location, &nb.location)
        }
        _ => f64::INFINITY,
    }
}

/// Cluster members of `f` among its siblings, with their latencies.
///
/// Siblings within `f.comm_range` are admitted; when `latency_filter` is set,
/// members slower than `f.latency_threshold` are pruned. Visit order follows
/// the parent's (ascending) child list.
pub fn form_cluster(
    f: NodeId,
    topo: &Topology,
    latency_filter: bool,
) -> Result<(Vec<NodeId>, BTreeMap<NodeId, f64>)> {
    let node = topo.node(f)?;
    let Some(parent) = node.parent else {
        return Ok((Vec::new(), BTreeMap::new()));
    };
    let siblings = &topo.node(parent)?.children;
    let mut members = Vec::new();
    let mut latency = BTreeMap::new();
    for &s in siblings {
        if s == f {
            continue;
        }
        let other = topo.node(s)?;
        if haversine(&node.location, &other.location) <= node.comm_range {
            members.push(s);
            latency.insert(s, check_latency(topo, f, s));
        }
    }
    if latency_filter {
        members.retain(|m| {
            let keep = latency[m] <= node.latency_threshold;
            if !keep {
                latency.remove(m);
            }
            keep
        });
    }
    Ok((members, latency))
}

/// Runs [`form_cluster`] on every node of the given tiers and reconciles the
/// lists according to `mode`.
pub fn form_all(
    topo: &Topology,
    tiers: &[u8],
    latency_filter: bool,
    mode: MembershipMode,
    now: SimTime,
) -> Result<ClusterView> {
    let mut raw = BTreeMap::new();
    for node in topo.nodes.values() {
        if node.parent.is_none() || !tiers.contains(&node.tier) {
            continue;
        }
        raw.insert(node.id, form_cluster(node.id, topo, latency_filter)?);
    }
    let mut view = ClusterView {
        mode,
        nodes: BTreeMap::new(),
    };
    for (&id, (members, latency)) in &raw {
        let mut cluster = NodeCluster {
            members: Vec::new(),
            latency: BTreeMap::new(),
            formed_at: now,
        };
        for &m in members {
            let mutual = raw.get(&m).map(|(ms, _)| ms.contains(&id)).unwrap_or(false);
            if mode == MembershipMode::Asymmetric || mutual {
                cluster.members.push(m);
                cluster.latency.insert(m, latency[&m]);
            }
        }
        view.nodes.insert(id, cluster);
    }
    Ok(view)
}

/// Default clustering tiers: the gateways.
pub fn default_tiers() -> Vec<u8> {
    vec![TIER_GATEWAY]
}

impl ClusterView {
    pub fn members(&self, n: NodeId) -> &[NodeId] {
        self.nodes.get(&n).map(|c| c.members.as_slice()).unwrap_or(&[])
    }

    pub fn latency(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.nodes.get(&a).and_then(|c| c.latency.get(&b).copied())
    }

    /// Whether `a` sees `b` as a cluster member (both directions under
    /// symmetric membership). Reflexive by convention.
    pub fn in_same_cluster(&self, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return true;
        }
        let a_sees_b = self.members(a).contains(&b);
        match self.mode {
            MembershipMode::Symmetric => a_sees_b && self.members(b).contains(&a),
            MembershipMode::Asymmetric => a_sees_b,
        }
    }

    /// Directed pairs `(a, b)` where `a` may send to `b` over a cluster
    /// link.
    pub fn links(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (&a, c) in &self.nodes {
            for &b in &c.members {
                if a != b && self.in_same_cluster(a, b) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Number of sibling probes one clustering round sends.
    pub fn probe_count(topo: &Topology, tiers: &[u8]) -> usize {
        topo.nodes
            .values()
            .filter(|n| n.parent.is_some() && tiers.contains(&n.tier))
            .map(|n| {
                n.parent
                    .and_then(|p| topo.nodes.get(&p))
                    .map(|p| p.children.len().saturating_sub(1))
                    .unwrap_or(0)
            })
            .sum()
    }

    /// Copies member lists into the topology's node records.
    pub fn apply(&self, topo: &mut Topology) {
        for node in topo.nodes.values_mut() {
            match self.nodes.get(&node.id) {
                Some(c) => {
                    node.cluster_members = c.members.clone();
                    node.cm_latency = c.latency.clone();
                }
                None => {
                    node.cluster_members.clear();
                    node.cm_latency.clear();
                }
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
