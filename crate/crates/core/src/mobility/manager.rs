//! Mobility management: nearest-parent selection and the module migration
//! route for intra-cluster, inter-cluster, cloud-centric and mesh handover.

use serde::{Deserialize, Serialize};

use super::location::{haversine, Location};
use crate::clustering::ClusterView;
use crate::engine::SimTime;
use crate::error::{Error, Result};
use crate::infrastructure::{EntityId, MobileEntity, NodeId, Topology};
use crate::network::{node_link, LinkKind, LinkSpec};

/// Default distance beyond which no upper-tier node is considered reachable.
pub const DEFAULT_MAX_DISTANCE_KM: f64 = 500.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MobilityPolicy {
    /// Source gateway pushes modules up to the cloud, which pushes them down.
    CloudCentric,
    /// Gateways exchange modules directly over a mesh channel.
    NonHierarchical,
    /// Cluster link when both gateways share a cluster, otherwise relay via
    /// the first common ancestor.
    IntraInterCluster,
}

impl MobilityPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            MobilityPolicy::CloudCentric => "cloud-centric",
            MobilityPolicy::NonHierarchical => "non-hierarchical",
            MobilityPolicy::IntraInterCluster => "intra-inter",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    IntraCluster,
    InterCluster,
    CloudCentric,
    Mesh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigratingModule {
    pub name: String,
    pub size_mb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationHop {
    pub from: NodeId,
    pub to: NodeId,
    pub link: LinkSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationDecision {
    pub entity: EntityId,
    pub old_parent: NodeId,
    pub new_parent: NodeId,
    /// Nodes the modules traverse, `old_parent` first and `new_parent` last.
    pub route: Vec<NodeId>,
    pub hops: Vec<MigrationHop>,
    pub route_kind: RouteKind,
    pub common_node: Option<NodeId>,
    pub modules: Vec<MigratingModule>,
    pub trigger_time: SimTime,
    pub policy: MobilityPolicy,
}

impl MigrationDecision {
    pub fn payload_mb(&self) -> f64 {
        self.modules.iter().map(|m| m.size_mb).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParentSelection {
    pub parent: Option<NodeId>,
    pub distance_km: f64,
    pub candidates_visited: usize,
}

/// Nearest node of `tier` to `location` within `max_distance_km`.
///
/// Candidates are visited in ascending id and only a strictly closer one
/// replaces the best so far, so ties go to the lowest id. If the current
/// parent is as close as the winner it is kept.
pub fn select_parent(
    topo: &Topology,
    location: &Location,
    current: Option<NodeId>,
    tier: u8,
    max_distance_km: f64,
) -> ParentSelection {
    let mut best: Option<(NodeId, f64)> = None;
    let mut visited = 0;
    let mut current_distance = None;
    for node in topo.nodes.values().filter(|n| n.tier == tier) {
        visited += 1;
        let d = haversine(location, &node.location);
        if Some(node.id) == current {
            current_distance = Some(d);
        }
        if d > max_distance_km {
            continue;
        }
        if best.map(|(_, bd)| d < bd).unwrap_or(true) {
            best = Some((node.id, d));
        }
    }
    if let (Some((_, bd)), Some(cur), Some(cd)) = (best, current, current_distance) {
        if cd <= bd {
            best = Some((cur, cd));
        }
    }
    ParentSelection {
        parent: best.map(|(id, _)| id),
        distance_km: best.map(|(_, d)| d).unwrap_or(f64::INFINITY),
        candidates_visited: visited,
    }
}

/// Hops modules take from `from` to `to` under `policy`, plus the relay
/// node when the route goes through the hierarchy.
pub fn plan_route(
    policy: MobilityPolicy,
    from: NodeId,
    to: NodeId,
    topo: &Topology,
    clusters: &ClusterView,
) -> Result<(Vec<MigrationHop>, RouteKind, Option<NodeId>)> {
    let hop = |a: NodeId, b: NodeId, kind: LinkKind| -> Result<MigrationHop> {
        let link = node_link(topo, clusters, a, b, kind).ok_or_else(|| {
            Error::Invariant(format!("no {kind:?} link between {a} and {b}"))
        })?;
        Ok(MigrationHop { from: a, to: b, link })
    };
    match policy {
        MobilityPolicy::NonHierarchical => {
            if !topo.mesh.enabled {
                return Err(Error::Config(
                    "non-hierarchical migration needs the gateway mesh enabled".into(),
                ));
            }
            Ok((vec![hop(from, to, LinkKind::Mesh)?], RouteKind::Mesh, None))
        }
        MobilityPolicy::IntraInterCluster if clusters.in_same_cluster(to, from) => {
            Ok((vec![hop(from, to, LinkKind::Cluster)?], RouteKind::IntraCluster, None))
        }
        MobilityPolicy::IntraInterCluster => {
            let kappa = topo.common_accessible_node(to, from)?;
            let nodes = tree_route(topo, from, to, kappa)?;
            let hops = nodes
                .windows(2)
                .map(|w| hop(w[0], w[1], LinkKind::Tree))
                .collect::<Result<Vec<_>>>()?;
            Ok((hops, RouteKind::InterCluster, Some(kappa)))
        }
        MobilityPolicy::CloudCentric => {
            let up = topo.path_to_root(from)?;
            let root = *up.last().expect("non-empty path");
            let down_root = *topo.path_to_root(to)?.last().expect("non-empty path");
            if root != down_root {
                return Err(Error::DisjointComponents(from, to));
            }
            let nodes = tree_route(topo, from, to, root)?;
            let hops = nodes
                .windows(2)
                .map(|w| hop(w[0], w[1], LinkKind::Tree))
                .collect::<Result<Vec<_>>>()?;
            Ok((hops, RouteKind::CloudCentric, Some(root)))
        }
    }
}

/// `from` up to `via`, then down to `to`.
fn tree_route(topo: &Topology, from: NodeId, to: NodeId, via: NodeId) -> Result<Vec<NodeId>> {
    let up = topo.path_to_root(from)?;
    let down = topo.path_to_root(to)?;
    let up_len = up
        .iter()
        .position(|&n| n == via)
        .ok_or(Error::DisjointComponents(from, via))?;
    let down_len = down
        .iter()
        .position(|&n| n == via)
        .ok_or(Error::DisjointComponents(to, via))?;
    let mut route: Vec<NodeId> = up[..=up_len].to_vec();
    route.extend(down[..down_len].iter().rev());
    Ok(route)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MobilityOutcome {
    /// Nearest parent is unchanged.
    Stay { candidates_visited: usize },
    /// No upper-tier node lies within the sentinel distance.
    Unreachable { candidates_visited: usize },
    Migrate {
        decision: Box<MigrationDecision>,
        candidates_visited: usize,
    },
}

/// Picks the nearest upper-tier node for `entity` at `t` and, when it differs
/// from the current parent, plans moving `modules` there.
pub fn manage_mobility(
    entity: &MobileEntity,
    t: SimTime,
    topo: &Topology,
    clusters: &ClusterView,
    policy: MobilityPolicy,
    max_distance_km: f64,
    modules: Vec<MigratingModule>,
) -> Result<MobilityOutcome> {
    let location = entity.trace.location_at(t);
    let upper_tier = entity
        .tier
        .checked_sub(1)
        .ok_or_else(|| Error::Config(format!("{} has no upper tier", entity.id)))?;
    let sel = select_parent(topo, &location, entity.current_parent, upper_tier, max_distance_km);
    let visited = sel.candidates_visited;
    let Some(new_parent) = sel.parent else {
        return Ok(MobilityOutcome::Unreachable {
            candidates_visited: visited,
        });
    };
    let Some(old_parent) = entity.current_parent else {
        // first attachment, nothing to migrate
        return Ok(MobilityOutcome::Stay {
            candidates_visited: visited,
        });
    };
    if new_parent == old_parent {
        return Ok(MobilityOutcome::Stay {
            candidates_visited: visited,
        });
    }
    let decision = decide_migration(entity.id, old_parent, new_parent, t, topo, clusters, policy, modules)?;
    Ok(MobilityOutcome::Migrate {
        decision: Box::new(decision),
        candidates_visited: visited,
    })
}

/// Plans moving `modules` of `entity` from `from` to `to`.
#[allow(clippy::too_many_arguments)]
pub fn decide_migration(
    entity: EntityId,
    from: NodeId,
    to: NodeId,
    t: SimTime,
    topo: &Topology,
    clusters: &ClusterView,
    policy: MobilityPolicy,
    modules: Vec<MigratingModule>,
) -> Result<MigrationDecision> {
    let (hops, route_kind, common_node) = plan_route(policy, from, to, topo, clusters)?;
    let mut route = vec![from];
    route.extend(hops.iter().map(|h| h.to));
    Ok(MigrationDecision {
        entity,
        old_parent: from,
        new_parent: to,
        route,
        hops,
        route_kind,
        common_node,
        modules,
        trigger_time: t,
        policy,
    })
}

/// Unloaded end-to-end migration time in ms: per hop, payload transmission
/// plus latency.
pub fn migration_latency(decision: &MigrationDecision) -> f64 {
    let mb = decision.payload_mb();
    decision.hops.iter().map(|h| h.link.hop_ms(mb)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{form_all, MembershipMode};
    use crate::infrastructure::tests::spec;
    use crate::infrastructure::{build_topology, MeshConfig, TopologyConfig};
    use crate::mobility::{destination, MobilityTrace};
    use std::collections::BTreeSet;

    fn at(base: &Location, bearing: f64, km: f64) -> (f64, f64) {
        let p = destination(base, bearing, km);
        (p.latitude, p.longitude)
    }

    /// cloud 0; proxies 1, 2; gateways 10, 11 under 1 (0.3 km apart) and 20
    /// under 2 (5 km east).
    fn desk() -> Topology {
        let base = Location::new(-37.81, 144.96).unwrap();
        let g11 = at(&base, 90.0, 0.3);
        let p2 = at(&base, 90.0, 5.0);
        let g20 = at(&base, 90.0, 5.2);
        let mut cfg = TopologyConfig {
            nodes: vec![
                spec(0, 0, None, base.latitude, base.longitude),
                spec(1, 1, Some(0), base.latitude, base.longitude),
                spec(2, 1, Some(0), p2.0, p2.1),
                spec(10, 2, Some(1), base.latitude, base.longitude),
                spec(11, 2, Some(1), g11.0, g11.1),
                spec(20, 2, Some(2), g20.0, g20.1),
            ],
            mesh: MeshConfig {
                enabled: true,
                ..Default::default()
            },
            ..Default::default()
        };
        for n in cfg.nodes.iter_mut() {
            n.comm_range_km = 0.5;
        }
        build_topology(&cfg).unwrap()
    }

    fn entity(parent: u32, at: Location) -> MobileEntity {
        MobileEntity {
            id: EntityId(0),
            name: "phone".into(),
            tier: 3,
            current_parent: Some(NodeId(parent)),
            trace: MobilityTrace::stationary(EntityId(0), at),
            hosted_modules: BTreeSet::new(),
            mips: 500.0,
            uplink_bw: 100.0,
            downlink_bw: 200.0,
            busy_power: 60.0,
            idle_power: 35.0,
        }
    }

    fn state() -> MigratingModule {
        MigratingModule {
            name: "state".into(),
            size_mb: 2.5,
        }
    }

    #[test]
    fn staying_near_parent_means_no_migration() {
        let topo = desk();
        let clusters = ClusterView::default();
        let loc = topo.node(NodeId(10)).unwrap().location;
        let out = manage_mobility(
            &entity(10, loc),
            SimTime::ZERO,
            &topo,
            &clusters,
            MobilityPolicy::IntraInterCluster,
            DEFAULT_MAX_DISTANCE_KM,
            vec![state()],
        )
        .unwrap();
        assert_eq!(out, MobilityOutcome::Stay { candidates_visited: 3 });
    }

    #[test]
    fn equidistant_current_parent_is_kept() {
        let topo = desk();
        let a = topo.node(NodeId(10)).unwrap().location;
        let b = topo.node(NodeId(11)).unwrap().location;
        let mid = Location {
            latitude: 0.5 * (a.latitude + b.latitude),
            longitude: 0.5 * (a.longitude + b.longitude),
            block: None,
        };
        let from_11 = select_parent(&topo, &mid, Some(NodeId(11)), 2, 500.0);
        let d10 = haversine(&mid, &a);
        let d11 = haversine(&mid, &b);
        if d11 <= d10 {
            assert_eq!(from_11.parent, Some(NodeId(11)));
        } else {
            assert_eq!(from_11.parent, Some(NodeId(10)));
        }
    }

    #[test]
    fn same_cluster_moves_over_cluster_link() {
        let topo = desk();
        let clusters = form_all(&topo, &[2], false, MembershipMode::Symmetric, SimTime::ZERO).unwrap();
        let loc = topo.node(NodeId(11)).unwrap().location;
        let out = manage_mobility(
            &entity(10, loc),
            SimTime::ZERO,
            &topo,
            &clusters,
            MobilityPolicy::IntraInterCluster,
            DEFAULT_MAX_DISTANCE_KM,
            vec![state()],
        )
        .unwrap();
        let MobilityOutcome::Migrate { decision, .. } = out else {
            panic!("expected migration")
        };
        assert_eq!(decision.route, vec![NodeId(10), NodeId(11)]);
        assert_eq!(decision.route_kind, RouteKind::IntraCluster);
        assert_eq!(decision.hops[0].link.kind, LinkKind::Cluster);
    }

    #[test]
    fn unclustered_siblings_relay_via_proxy() {
        let topo = desk();
        let clusters = ClusterView::default();
        let loc = topo.node(NodeId(11)).unwrap().location;
        let MobilityOutcome::Migrate { decision, .. } = manage_mobility(
            &entity(10, loc),
            SimTime::ZERO,
            &topo,
            &clusters,
            MobilityPolicy::IntraInterCluster,
            DEFAULT_MAX_DISTANCE_KM,
            vec![state()],
        )
        .unwrap() else {
            panic!("expected migration")
        };
        assert_eq!(decision.route, vec![NodeId(10), NodeId(1), NodeId(11)]);
        assert_eq!(decision.common_node, Some(NodeId(1)));
    }

    #[test]
    fn cross_block_relays_via_cloud() {
        let topo = desk();
        let clusters = form_all(&topo, &[2], false, MembershipMode::Symmetric, SimTime::ZERO).unwrap();
        let loc = topo.node(NodeId(20)).unwrap().location;
        let MobilityOutcome::Migrate { decision, .. } = manage_mobility(
            &entity(10, loc),
            SimTime::ZERO,
            &topo,
            &clusters,
            MobilityPolicy::IntraInterCluster,
            DEFAULT_MAX_DISTANCE_KM,
            vec![state()],
        )
        .unwrap() else {
            panic!("expected migration")
        };
        assert_eq!(
            decision.route,
            vec![NodeId(10), NodeId(1), NodeId(0), NodeId(2), NodeId(20)]
        );
        assert_eq!(decision.common_node, Some(NodeId(0)));
    }

    #[test]
    fn cloud_centric_always_climbs_to_the_root() {
        let topo = desk();
        let clusters = form_all(&topo, &[2], false, MembershipMode::Symmetric, SimTime::ZERO).unwrap();
        let (hops, kind, via) =
            plan_route(MobilityPolicy::CloudCentric, NodeId(10), NodeId(11), &topo, &clusters).unwrap();
        assert_eq!(kind, RouteKind::CloudCentric);
        assert_eq!(via, Some(NodeId(0)));
        let nodes: Vec<NodeId> = std::iter::once(hops[0].from).chain(hops.iter().map(|h| h.to)).collect();
        assert_eq!(nodes, vec![NodeId(10), NodeId(1), NodeId(0), NodeId(1), NodeId(11)]);
    }

    #[test]
    fn mesh_route_is_one_hop() {
        let topo = desk();
        let (hops, kind, _) = plan_route(
            MobilityPolicy::NonHierarchical,
            NodeId(10),
            NodeId(20),
            &topo,
            &ClusterView::default(),
        )
        .unwrap();
        assert_eq!(kind, RouteKind::Mesh);
        assert_eq!(hops.len(), 1);
        assert_eq!(hops[0].link.bandwidth, 100.0);
    }

    #[test]
    fn far_away_entity_is_unreachable() {
        let topo = desk();
        let out = manage_mobility(
            &entity(10, Location::new(0.0, 0.0).unwrap()),
            SimTime::ZERO,
            &topo,
            &ClusterView::default(),
            MobilityPolicy::IntraInterCluster,
            DEFAULT_MAX_DISTANCE_KM,
            vec![],
        )
        .unwrap();
        assert_eq!(out, MobilityOutcome::Unreachable { candidates_visited: 3 });
    }

    #[test]
    fn latency_is_sum_of_hop_terms() {
        let link = LinkSpec {
            kind: LinkKind::Tree,
            bandwidth: 50.0,
            latency_ms: 2.0,
        };
        let mut d = MigrationDecision {
            entity: EntityId(0),
            old_parent: NodeId(1),
            new_parent: NodeId(2),
            route: vec![NodeId(1), NodeId(2)],
            hops: vec![MigrationHop {
                from: NodeId(1),
                to: NodeId(2),
                link,
            }],
            route_kind: RouteKind::IntraCluster,
            common_node: None,
            modules: vec![state()],
            trigger_time: SimTime::ZERO,
            policy: MobilityPolicy::IntraInterCluster,
        };
        assert_eq!(migration_latency(&d), 402.0);
        d.modules.clear();
        assert_eq!(migration_latency(&d), 2.0);
        d.modules.push(state());
        d.hops = vec![d.hops[0]; 3];
        assert_eq!(migration_latency(&d), 3.0 * 402.0);
    }
}
