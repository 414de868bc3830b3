use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::clustering::ClusterView;
use crate::error::{Error, Result};
use crate::infrastructure::{NodeId, Topology, TIER_GATEWAY};
use crate::network::{best_link, LinkSpec};

/// Shortest-latency next hops between infrastructure nodes.
#[derive(Clone, Debug, Default)]
pub struct RoutingTable {
    next: BTreeMap<(NodeId, NodeId), NodeId>,
    cost: BTreeMap<(NodeId, NodeId), f64>,
    links: BTreeMap<(NodeId, NodeId), LinkSpec>,
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// All-pairs routes over tree links, usable cluster links and, when
/// `use_mesh` is set, the gateway mesh.
///
/// Costs are summed hop latencies. Among equal-cost paths the one with the
/// lexicographically smallest node sequence wins.
pub fn compute_routes(topo: &Topology, clusters: &ClusterView, use_mesh: bool) -> Result<RoutingTable> {
    let ids: Vec<NodeId> = topo.ids().collect();
    let mut adj: BTreeMap<NodeId, Vec<(NodeId, LinkSpec)>> = BTreeMap::new();
    let mut links = BTreeMap::new();
    let mut consider = |a: NodeId, b: NodeId| {
        if links.contains_key(&(a, b)) {
            return;
        }
        if let Some(l) = best_link(topo, clusters, a, b, use_mesh) {
            links.insert((a, b), l);
            adj.entry(a).or_default().push((b, l));
        }
    };
    for node in topo.nodes.values() {
        if let Some(p) = node.parent {
            consider(node.id, p);
            consider(p, node.id);
        }
    }
    for (a, b) in clusters.links() {
        consider(a, b);
    }
    if use_mesh && topo.mesh.enabled {
        let gws = topo.tier_nodes(TIER_GATEWAY);
        for &a in &gws {
            for &b in &gws {
                if a != b {
                    consider(a, b);
                }
            }
        }
    }
    // reverse adjacency for per-destination Dijkstra
    let mut radj: BTreeMap<NodeId, Vec<(NodeId, f64)>> = BTreeMap::new();
    for (&(a, b), l) in &links {
        radj.entry(b).or_default().push((a, l.latency_ms));
    }
    let mut table = RoutingTable {
        links,
        ..Default::default()
    };
    for &dst in &ids {
        let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        dist.insert(dst, 0.0);
        heap.push(Reverse((Dist(0.0), dst)));
        while let Some(Reverse((Dist(d), u))) = heap.pop() {
            if d > dist[&u] {
                continue;
            }
            for &(v, w) in radj.get(&u).map(|v| v.as_slice()).unwrap_or(&[]) {
                let nd = d + w;
                if dist.get(&v).map(|&old| nd < old).unwrap_or(true) {
                    dist.insert(v, nd);
                    heap.push(Reverse((Dist(nd), v)));
                }
            }
        }
        for &src in &ids {
            let Some(&ds) = dist.get(&src) else {
                return Err(Error::Unreachable { from: src, to: dst });
            };
            table.cost.insert((src, dst), ds);
            if src == dst {
                continue;
            }
            let mut hops: Vec<&(NodeId, LinkSpec)> = adj.get(&src).map(|v| v.iter().collect()).unwrap_or_default();
            hops.sort_by_key(|(v, _)| *v);
            let next = hops
                .into_iter()
                .find(|(v, l)| dist.get(v).map(|dv| close(l.latency_ms + dv, ds)).unwrap_or(false))
                .map(|(v, _)| *v)
                .ok_or(Error::Unreachable { from: src, to: dst })?;
            table.next.insert((src, dst), next);
        }
    }
    Ok(table)
}

impl RoutingTable {
    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Result<NodeId> {
        if from == to {
            return Ok(to);
        }
        self.next
            .get(&(from, to))
            .copied()
            .ok_or(Error::Unreachable { from, to })
    }

    /// Summed latency of the chosen route.
    pub fn cost(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.cost.get(&(from, to)).copied()
    }

    pub fn link(&self, from: NodeId, to: NodeId) -> Option<LinkSpec> {
        self.links.get(&(from, to)).copied()
    }

    /// Full node sequence from `from` to `to`.
    pub fn path(&self, from: NodeId, to: NodeId) -> Result<Vec<NodeId>> {
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            cur = self.next_hop(cur, to)?;
            if path.len() > self.cost.len() + 1 {
                return Err(Error::Invariant(format!("routing loop from {from} to {to}")));
            }
            path.push(cur);
        }
        Ok(path)
    }
}
