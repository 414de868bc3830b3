//! Link model shared by tuple routing and module migration.
//!
//! A hop of `S` MB over a link takes `S * 8 / bw` seconds of transmission
//! plus the link latency. Bandwidth is the sender's uplink capped by the
//! receiver's downlink unless the link type fixes it (mesh).

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterView;
use crate::infrastructure::{MobileEntity, NodeId, Topology, TIER_GATEWAY};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    /// Parent-child link of the hierarchy.
    Tree,
    /// Horizontal link between cluster members.
    Cluster,
    /// Gateway mesh channel of the non-hierarchical baseline.
    Mesh,
    /// Wireless hop between a mobile entity and its gateway.
    Access,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kind: LinkKind,
    /// Mbit/s.
    pub bandwidth: f64,
    pub latency_ms: f64,
}

impl LinkSpec {
    pub fn transmission_ms(&self, mb: f64) -> f64 {
        mb * 8.0 / self.bandwidth * 1000.0
    }

    pub fn hop_ms(&self, mb: f64) -> f64 {
        self.transmission_ms(mb) + self.latency_ms
    }
}

/// Link of the requested kind between two infrastructure nodes, if it exists.
pub fn node_link(
    topo: &Topology,
    clusters: &ClusterView,
    from: NodeId,
    to: NodeId,
    kind: LinkKind,
) -> Option<LinkSpec> {
    match kind {
        LinkKind::Tree if topo.are_tree_neighbors(from, to) => Some(LinkSpec {
            kind,
            bandwidth: topo.hop_bandwidth(from, to),
            latency_ms: topo.tree_latency(from, to),
        }),
        LinkKind::Cluster if from != to && clusters.in_same_cluster(from, to) => {
            let latency_ms = clusters
                .latency(from, to)
                .or_else(|| clusters.latency(to, from))
                .unwrap_or_else(|| crate::clustering::check_latency(topo, from, to));
            Some(LinkSpec {
                kind,
                bandwidth: topo.hop_bandwidth(from, to),
                latency_ms,
            })
        }
        LinkKind::Mesh if topo.mesh.enabled && from != to => {
            let both_gateways = [from, to]
                .iter()
                .all(|n| topo.nodes.get(n).map(|x| x.tier == TIER_GATEWAY).unwrap_or(false));
            both_gateways.then_some(LinkSpec {
                kind,
                bandwidth: topo.mesh.bandwidth,
                latency_ms: topo.mesh.latency_ms,
            })
        }
        _ => None,
    }
}

/// Cheapest-latency link between two nodes among the enabled kinds.
pub fn best_link(
    topo: &Topology,
    clusters: &ClusterView,
    from: NodeId,
    to: NodeId,
    use_mesh: bool,
) -> Option<LinkSpec> {
    let mut kinds = vec![LinkKind::Tree, LinkKind::Cluster];
    if use_mesh {
        kinds.push(LinkKind::Mesh);
    }
    kinds
        .into_iter()
        .filter_map(|k| node_link(topo, clusters, from, to, k))
        .min_by(|a, b| a.latency_ms.total_cmp(&b.latency_ms))
}

/// Wireless hop between a device and its gateway; `uplink` is device to
/// gateway.
pub fn access_link(topo: &Topology, device: &MobileEntity, gateway: NodeId, uplink: bool) -> LinkSpec {
    let gw = topo.nodes.get(&gateway);
    let bandwidth = if uplink {
        device.uplink_bw.min(gw.map(|g| g.downlink_bw).unwrap_or(f64::INFINITY))
    } else {
        gw.map(|g| g.uplink_bw).unwrap_or(f64::INFINITY).min(device.downlink_bw)
    };
    LinkSpec {
        kind: LinkKind::Access,
        bandwidth,
        latency_ms: topo.tier_latency.device_gateway,
    }
}
