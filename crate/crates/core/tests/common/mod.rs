//! Checks shared by the acceptance run and the per-suite tests. Each check
//! returns a one-line summary of what it measured, or why it failed.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use fogsim::clustering::{form_all, form_cluster, ClusterView, MembershipMode};
use fogsim::engine::{RngStream, SimTime};
use fogsim::infrastructure::{
    build_topology, EntityId, Host, LatencyOverride, MeshConfig, NodeId, NodeSpec, Topology, TopologyConfig,
    TIER_GATEWAY,
};
use fogsim::metrics::MetricsReport;
use fogsim::microservices::{
    compute_routes, edgeward_place, smp_place, Admission, LeafPath, LoadBalancer, PlacementOptions,
    ServiceDiscovery,
};
use fogsim::mobility::{haversine, Location, MobilityKind, MobilityPolicy};
use fogsim::microservices::PlacementPolicy;
use fogsim::scenario::{builtin, chm_application, run, run_measured, Scale, ScenarioConfig, ScenarioOverrides};

pub type Check = Result<String, String>;

/// Invariant checks counted over every run made through [`run_checked`].
pub static INVARIANT_CHECKS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Runs with every invariant switched on and tallies the checks made.
pub fn run_checked(cfg: &ScenarioConfig) -> Result<MetricsReport, String> {
    let mut cfg = cfg.clone();
    cfg.check_invariants = true;
    let out = run(&cfg).map_err(|e| format!("{} seed {}: {e}", cfg.name, cfg.seed))?;
    INVARIANT_CHECKS.fetch_add(out.report.invariant_checks, std::sync::atomic::Ordering::Relaxed);
    Ok(out.report)
}

pub const ATS_SEEDS: std::ops::Range<u64> = 0..10;
const ATS_POLICIES: [MobilityPolicy; 3] = [
    MobilityPolicy::CloudCentric,
    MobilityPolicy::IntraInterCluster,
    MobilityPolicy::NonHierarchical,
];
const KINDS: [MobilityKind; 2] = [MobilityKind::Directional, MobilityKind::RandomWaypoint];

/// Per seed, per movement model: reports of cloud-centric, intra/inter and
/// non-hierarchical runs, in that order.
pub struct AtsRuns {
    pub runs: BTreeMap<(u64, usize), Vec<MetricsReport>>,
    pub elapsed_s: f64,
}

pub fn ats_runs() -> Result<AtsRuns, String> {
    let started = Instant::now();
    let mut runs = BTreeMap::new();
    for seed in ATS_SEEDS {
        for (k, kind) in KINDS.iter().enumerate() {
            let mut reports = Vec::new();
            for p in ATS_POLICIES {
                let o = ScenarioOverrides {
                    seed: Some(seed),
                    mobility_policy: Some(p),
                    mobility_kind: Some(*kind),
                    ..Default::default()
                };
                let cfg = builtin("ats", Scale::Small, &o).map_err(|e| e.to_string())?;
                reports.push(run_checked(&cfg)?);
            }
            runs.insert((seed, k), reports);
        }
    }
    Ok(AtsRuns {
        runs,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

fn seed_verdicts(ats: &AtsRuns, ok: impl Fn(&[MetricsReport], &[MetricsReport]) -> bool) -> (usize, Vec<u64>) {
    let mut failed = Vec::new();
    for seed in ATS_SEEDS {
        let (dir, rnd) = (&ats.runs[&(seed, 0)], &ats.runs[&(seed, 1)]);
        if !ok(dir, rnd) {
            failed.push(seed);
        }
    }
    (ATS_SEEDS.count() - failed.len(), failed)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] > w[1])
}

pub fn criterion_1(ats: &AtsRuns) -> Check {
    let t = |r: &MetricsReport| r.migration_summary.mean_per_user_ms;
    let (passed, failed) = seed_verdicts(ats, |dir, rnd| {
        let ordered = [dir, rnd].iter().all(|rs| strictly_decreasing(&rs.iter().map(t).collect::<Vec<_>>()));
        let random_slower = (0..3).all(|p| t(&rnd[p]) >= t(&dir[p]));
        ordered && random_slower
    });
    let line = format!(
        "migration time CC > II > NH and random >= directional on {passed}/10 seeds (failing {failed:?}), {:.2} s",
        ats.elapsed_s
    );
    if passed >= 9 && ats.elapsed_s < 30.0 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn criterion_2(ats: &AtsRuns) -> Check {
    let mb = |r: &MetricsReport| r.network.migration_mb;
    let (passed, failed) = seed_verdicts(ats, |dir, rnd| {
        [dir, rnd].iter().all(|rs| strictly_decreasing(&rs.iter().map(mb).collect::<Vec<_>>()))
    });
    let line = format!("migration MB CC > II > NH on {passed}/10 seeds (failing {failed:?})");
    if passed >= 9 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn criterion_3(ats: &AtsRuns) -> Check {
    let e = |r: &MetricsReport| r.energy.migration;
    let (passed, failed) = seed_verdicts(ats, |dir, rnd| {
        [dir, rnd].iter().all(|rs| {
            let cc = e(&rs[0]);
            cc > 0.0 && e(&rs[1]) <= 0.9 * cc && e(&rs[2]) <= 0.9 * cc
        })
    });
    let line = format!("migration energy II and NH at least 10% below CC on {passed}/10 seeds (failing {failed:?})");
    if passed >= 9 {
        Ok(line)
    } else {
        Err(line)
    }
}

pub struct ChmRuns {
    /// Edgeward, SMP without clustering, SMP with clustering.
    pub reports: Vec<MetricsReport>,
}

pub fn chm_runs() -> Result<ChmRuns, String> {
    let mut reports = Vec::new();
    for p in [PlacementPolicy::Edgeward, PlacementPolicy::SmpNoClustering, PlacementPolicy::SmpClustering] {
        let o = ScenarioOverrides {
            placement_policy: Some(p),
            ..Default::default()
        };
        let cfg = builtin("chm", Scale::Full, &o).map_err(|e| e.to_string())?;
        reports.push(run_checked(&cfg)?);
    }
    Ok(ChmRuns { reports })
}

fn fog_energy(r: &MetricsReport) -> f64 {
    r.energy.per_tier.iter().filter(|(t, _)| **t > 0).map(|(_, e)| e).sum()
}

fn cloud_energy(r: &MetricsReport) -> f64 {
    r.energy.per_tier.get(&0).copied().unwrap_or(0.0)
}

pub fn criterion_4(chm: &ChmRuns) -> Check {
    let d: Vec<f64> = chm.reports.iter().map(|r| r.loops[0].mean_ms).collect();
    let line = format!(
        "loop delay Edgeward {:.1} ms, SMP-NC {:.1} ms, SMP-C {:.1} ms (want strictly decreasing)",
        d[0], d[1], d[2]
    );
    if strictly_decreasing(&d) {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn criterion_5(chm: &ChmRuns) -> Check {
    let r = &chm.reports;
    let cloud: Vec<f64> = r.iter().map(cloud_energy).collect();
    let fog: Vec<f64> = r.iter().map(fog_energy).collect();
    let total: Vec<f64> = r.iter().map(|x| x.energy.total).collect();
    let ok = cloud[0] > cloud[1]
        && cloud[0] > cloud[2]
        && fog[0] < fog[1]
        && fog[0] < fog[2]
        && total[0] > total[1]
        && total[0] > total[2];
    let line = format!(
        "cloud J {:.0}/{:.0}/{:.0}, fog J {:.0}/{:.0}/{:.0}, total J {:.0}/{:.0}/{:.0} (Edgeward/SMP-NC/SMP-C)",
        cloud[0], cloud[1], cloud[2], fog[0], fog[1], fog[2], total[0], total[1], total[2]
    );
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

pub fn criterion_6(chm: &ChmRuns) -> Check {
    let mb: Vec<f64> = chm.reports.iter().map(|r| r.network.total_mb).collect();
    let line = format!(
        "network MB Edgeward {:.1}, SMP-NC {:.1}, SMP-C {:.1} (want strictly decreasing)",
        mb[0], mb[1], mb[2]
    );
    if strictly_decreasing(&mb) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn loc(lat: f64, lon: f64) -> Location {
    Location {
        latitude: lat,
        longitude: lon,
        block: None,
    }
}

/// WGS84 geodesic distances (km) between city centres.
pub const CITY_PAIRS: [(&str, (f64, f64), (f64, f64), f64); 5] = [
    ("London-Paris", (51.5074, -0.1278), (48.8566, 2.3522), 343.92),
    ("New York-Los Angeles", (40.7128, -74.0060), (34.0522, -118.2437), 3944.42),
    ("Sydney-Melbourne", (-33.8688, 151.2093), (-37.8136, 144.9631), 713.86),
    ("Tokyo-Osaka", (35.6762, 139.6503), (34.6937, 135.5023), 393.18),
    ("Melbourne-Perth", (-37.8136, 144.9631), (-31.9505, 115.8605), 2726.86),
];

pub fn haversine_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for (name, a, b, km) in CITY_PAIRS {
        let d = haversine(&loc(a.0, a.1), &loc(b.0, b.1));
        let rel = (d - km).abs() / km;
        if rel > 0.005 {
            return Err(format!("{name}: {d:.2} km vs {km} km"));
        }
        worst = worst.max(rel);
    }
    Ok(format!("5 city pairs within {:.3}% of geodesic", worst * 100.0))
}

pub fn node(id: u32, tier: u8, parent: Option<u32>, at: Location) -> NodeSpec {
    NodeSpec {
        id: NodeId(id),
        name: String::new(),
        tier,
        mips: 1000.0,
        servers: 1,
        ram: 8.0,
        uplink: 50.0,
        downlink: 100.0,
        busy_power: 200.0,
        idle_power: 100.0,
        parent: parent.map(NodeId),
        location: at,
        comm_range_km: 1.0,
        latency_threshold_ms: f64::INFINITY,
    }
}

/// Random tree rooted at node 0; every node hangs under an earlier one.
fn random_tree(rng: &mut RngStream, n: usize) -> Vec<NodeSpec> {
    let mut specs = vec![node(0, 0, None, loc(-37.81, 144.96))];
    for i in 1..n {
        let p = rng.index(i);
        let tier = specs[p].tier + 1;
        let at = loc(-37.82 + rng.uniform(0.0, 0.02), 144.95 + rng.uniform(0.0, 0.02));
        specs.push(node(i as u32, tier, Some(p as u32), at));
    }
    specs
}

pub fn can_oracle() -> Check {
    let mut rng = RngStream::new(7, "oracle/can");
    let mut pairs = 0;
    for t in 0..100 {
        let n = 2 + rng.index(39);
        let specs = random_tree(&mut rng, n);
        let parent: BTreeMap<u32, Option<u32>> = specs.iter().map(|s| (s.id.0, s.parent.map(|p| p.0))).collect();
        let ancestors = |mut x: u32| {
            let mut v = vec![x];
            while let Some(p) = parent[&x] {
                v.push(p);
                x = p;
            }
            v
        };
        let topo = build_topology(&TopologyConfig {
            nodes: specs.clone(),
            ..Default::default()
        })
        .map_err(|e| format!("tree {t}: {e}"))?;
        for _ in 0..10 {
            let (a, b) = (rng.index(n) as u32, rng.index(n) as u32);
            let of_b: BTreeSet<u32> = ancestors(b).into_iter().collect();
            let expected = ancestors(a).into_iter().find(|x| of_b.contains(x)).expect("shared root");
            let got = topo
                .common_accessible_node(NodeId(a), NodeId(b))
                .map_err(|e| format!("tree {t}: {e}"))?;
            if got != NodeId(expected) {
                return Err(format!("tree {t}: CAN({a}, {b}) = {got}, brute force {expected}"));
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs on 100 random trees match path intersection"))
}

/// Cloud, a few proxies and gateways with random tree latencies, clustered
/// gateways and, on odd seeds, the gateway mesh.
fn random_topology(seed: u64) -> (Topology, ClusterView, bool) {
    let mut rng = RngStream::new(seed, "oracle/routes");
    let mut specs = vec![node(0, 0, None, loc(-37.81, 144.96))];
    let proxies = 2 + rng.index(4);
    for p in 1..=proxies {
        specs.push(node(p as u32, 1, Some(0), loc(-37.82 + rng.uniform(0.0, 0.02), 144.95 + rng.uniform(0.0, 0.02))));
    }
    for g in proxies + 1..30 {
        let parent = 1 + rng.index(proxies) as u32;
        let mut s = node(g as u32, 2, Some(parent), loc(-37.82 + rng.uniform(0.0, 0.02), 144.95 + rng.uniform(0.0, 0.02)));
        s.comm_range_km = rng.uniform(0.3, 2.0);
        specs.push(s);
    }
    let mut overrides = Vec::new();
    for s in &specs {
        if let Some(p) = s.parent {
            if rng.bernoulli(0.5) {
                overrides.push(LatencyOverride {
                    a: s.id,
                    b: p,
                    ms: rng.uniform(0.5, 150.0),
                    symmetric: true,
                });
            }
        }
    }
    let mesh = seed % 2 == 1;
    let topo = build_topology(&TopologyConfig {
        nodes: specs,
        link_latency: overrides,
        mesh: MeshConfig {
            enabled: mesh,
            latency_ms: rng.uniform(0.5, 20.0),
            ..MeshConfig::default()
        },
        ..Default::default()
    })
    .expect("valid random topology");
    let mode = if rng.bernoulli(0.5) {
        MembershipMode::Symmetric
    } else {
        MembershipMode::Asymmetric
    };
    let view = form_all(&topo, &[TIER_GATEWAY], false, mode, SimTime::ZERO).expect("clusters");
    (topo, view, mesh)
}

pub fn routes_oracle() -> Check {
    for seed in 0..100u64 {
        let (topo, view, mesh) = random_topology(seed);
        let ids: Vec<NodeId> = topo.ids().collect();
        let idx: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let n = ids.len();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for i in 0..n {
            d[i][i] = 0.0;
        }
        let mut relax = |a: NodeId, b: NodeId, w: f64| {
            let (i, j) = (idx[&a], idx[&b]);
            if w < d[i][j] {
                d[i][j] = w;
            }
        };
        for x in topo.nodes.values() {
            if let Some(p) = x.parent {
                let w = topo.link_latency.get(&(x.id, p)).copied().unwrap_or(if topo.nodes[&p].tier == 0 {
                    topo.tier_latency.proxy_cloud
                } else {
                    topo.tier_latency.gateway_proxy
                });
                relax(x.id, p, w);
                relax(p, x.id, w);
            }
        }
        for (&a, c) in &view.nodes {
            for &b in &c.members {
                // symmetric membership needs each end to list the other
                if view.mode == MembershipMode::Asymmetric || view.members(b).contains(&a) {
                    relax(a, b, c.latency[&b]);
                }
            }
        }
        if mesh {
            let gws = topo.tier_nodes(TIER_GATEWAY);
            for &a in &gws {
                for &b in &gws {
                    if a != b {
                        relax(a, b, topo.mesh.latency_ms);
                    }
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        let table = compute_routes(&topo, &view, mesh).map_err(|e| format!("topology {seed}: {e}"))?;
        for (i, &a) in ids.iter().enumerate() {
            for (j, &b) in ids.iter().enumerate() {
                let got = table.cost(a, b).unwrap_or(f64::INFINITY);
                if (got - d[i][j]).abs() > 1e-9 * d[i][j].max(1.0) {
                    return Err(format!("topology {seed}: cost {a}->{b} = {got}, Floyd-Warshall {}", d[i][j]));
                }
            }
        }
    }
    Ok("100 random 30-node topologies match Floyd-Warshall on every pair".into())
}

pub fn clustering_oracle() -> Check {
    let mut rng = RngStream::new(11, "oracle/clusters");
    let mut checked = 0;
    for set in 0..50 {
        let siblings = 2 + rng.index(14);
        let mut specs = vec![node(0, 0, None, loc(-37.81, 144.96)), node(1, 1, Some(0), loc(-37.81, 144.96))];
        for g in 0..siblings {
            let mut s = node(2 + g as u32, 2, Some(1), loc(-37.82 + rng.uniform(0.0, 0.02), 144.95 + rng.uniform(0.0, 0.02)));
            s.comm_range_km = rng.uniform(0.2, 2.5);
            s.latency_threshold_ms = rng.uniform(1.0, 1.03);
            specs.push(s);
        }
        let topo = build_topology(&TopologyConfig {
            nodes: specs.clone(),
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let lf = set % 2 == 0;
        for f in &specs[2..] {
            let mut expected = Vec::new();
            for s in &specs[2..] {
                if s.id == f.id {
                    continue;
                }
                let km = haversine(&f.location, &s.location);
                let latency = 1.0 + 0.01 * km;
                if km <= f.comm_range_km && (!lf || latency <= f.latency_threshold_ms) {
                    expected.push(s.id);
                }
            }
            let (got, _) = form_cluster(f.id, &topo, lf).map_err(|e| e.to_string())?;
            if got != expected {
                return Err(format!("set {set}, node {}: {got:?} vs brute force {expected:?}", f.id));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} nodes in 50 sibling sets match pairwise brute force"))
}

pub fn round_robin_oracle() -> Check {
    let at = Host::Node(NodeId(1));
    for n in [1u32, 2, 3, 5] {
        for k in [1usize, 10, 100] {
            let mut sd = ServiceDiscovery::default();
            for c in 0..n {
                sd.add(at, "svc", Host::Node(NodeId(10 + c)));
            }
            let mut lb = LoadBalancer::default();
            let mut counts: BTreeMap<Host, usize> = BTreeMap::new();
            for _ in 0..k * n as usize {
                *counts.entry(lb.select(&sd, at, "svc").expect("candidate")).or_default() += 1;
            }
            if counts.len() != n as usize || counts.values().any(|&c| c != k) {
                return Err(format!("n={n}, k={k}: {counts:?}"));
            }
        }
    }
    Ok("exact equidistribution for n in {1,2,3,5}, k in {1,10,100}".into())
}

pub fn criterion_7() -> Check {
    let parts = [
        haversine_oracle()?,
        can_oracle()?,
        routes_oracle()?,
        clustering_oracle()?,
        round_robin_oracle()?,
    ];
    Ok(parts.join("; "))
}

/// Cloud, proxy and two clustered gateways 100 m apart; the first gateway
/// has room for Preprocessing only. One phone under it.
pub fn micro_case() -> (Topology, Vec<LeafPath>) {
    let mut cloud = node(0, 0, None, loc(-37.8136, 144.9631));
    cloud.ram = 64.0;
    let mut proxy = node(1, 1, Some(0), loc(-37.8136, 144.9631));
    proxy.ram = 16.0;
    let mut g1 = node(2, 2, Some(1), loc(-37.8140, 144.9630));
    g1.ram = 0.5;
    let g2 = node(3, 2, Some(1), loc(-37.8149, 144.9630));
    let topo = build_topology(&TopologyConfig {
        nodes: vec![cloud, proxy, g1, g2],
        ..Default::default()
    })
    .expect("micro topology");
    let paths = vec![LeafPath {
        device: EntityId(0),
        nodes: vec![NodeId(2), NodeId(1), NodeId(0)],
    }];
    (topo, paths)
}

fn hand_map(entries: &[(&str, Host)]) -> BTreeMap<String, Host> {
    entries.iter().map(|(m, h)| (m.to_string(), *h)).collect()
}

pub fn criterion_8() -> Check {
    let (topo, paths) = micro_case();
    let app = chm_application();
    let opts = PlacementOptions {
        admission: Admission::Ram,
        share_instances: false,
    };
    let phone = Host::Device(EntityId(0));
    let (g1, g2, proxy) = (Host::Node(NodeId(2)), Host::Node(NodeId(3)), Host::Node(NodeId(1)));
    let view = form_all(&topo, &[TIER_GATEWAY], false, MembershipMode::Symmetric, SimTime::ZERO)
        .map_err(|e| e.to_string())?;
    if view.members(NodeId(2)) != [NodeId(3)] {
        return Err(format!("gateways are not one cluster: {:?}", view.members(NodeId(2))));
    }
    // Preprocessing fills gateway-1; Emergency Diagnosis and Prediction find
    // no room there and go to its cluster member before any upper tier.
    let clustered = hand_map(&[
        ("Client", phone),
        ("Preprocessing", g1),
        ("EmergencyDiagnosis", g2),
        ("Prediction", g2),
    ]);
    // Without members to ask, the path climbs to the proxy and stays there.
    let climbing = hand_map(&[
        ("Client", phone),
        ("Preprocessing", g1),
        ("EmergencyDiagnosis", proxy),
        ("Prediction", proxy),
    ]);
    let cases = [
        ("SMP-C", smp_place(&topo, &app, Some(&view), &paths, opts), &clustered),
        ("SMP-NC", smp_place(&topo, &app, None, &paths, opts), &climbing),
        ("Edgeward", edgeward_place(&topo, &app, &paths, opts), &climbing),
    ];
    for (name, plan, want) in cases {
        let plan = plan.map_err(|e| format!("{name}: {e}"))?;
        if &plan.path_hosts[0] != want {
            return Err(format!("{name}: {:?} vs hand trace {want:?}", plan.path_hosts[0]));
        }
    }
    Ok("SMP-C uses the cluster member; SMP-NC and Edgeward climb to the proxy".into())
}

pub fn criterion_9() -> Check {
    let mut sizes = Vec::new();
    for name in ["ats", "chm", "cdc"] {
        let cfg = builtin(name, Scale::Small, &ScenarioOverrides::default()).map_err(|e| e.to_string())?;
        let a = run_checked(&cfg)?.to_json().map_err(|e| e.to_string())?;
        let b = run_checked(&cfg)?.to_json().map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("{name}: two runs produced different reports"));
        }
        sizes.push(format!("{name} {} B", a.len()));
    }
    Ok(format!("byte-identical reports: {}", sizes.join(", ")))
}

pub fn criterion_10() -> Check {
    let mut cfg = builtin("ats", Scale::Full, &ScenarioOverrides::default()).map_err(|e| e.to_string())?;
    cfg.check_invariants = true;
    let out = run_measured(&cfg).map_err(|e| e.to_string())?;
    INVARIANT_CHECKS.fetch_add(out.report.invariant_checks, std::sync::atomic::Ordering::Relaxed);
    let f = out.report.footprint;
    let gateways = out.topology.tier_nodes(TIER_GATEWAY).len();
    let line = format!(
        "{gateways} gateways, {} location events: {:.3} s, peak {} MB",
        out.report.location_events,
        f.wall_clock_s,
        f.peak_memory_mb.map(|m| format!("{m:.1}")).unwrap_or("n/a".into())
    );
    if gateways == 118 && out.report.location_events == 140 && f.wall_clock_s < 10.0 && f.peak_memory_mb.map(|m| m < 500.0).unwrap_or(true) {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Placement feasibility on random tight topologies, then the tally of
/// always-on checks made by every run so far.
pub fn criterion_11() -> Check {
    let app = chm_application();
    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed, "oracle/feasibility");
        let (topo, view, _) = random_topology(seed);
        let mut topo = topo;
        for n in topo.nodes.values_mut() {
            if n.tier > 0 {
                n.ram_total = rng.uniform(0.0, 4.0);
                n.ram_free = n.ram_total;
            } else {
                n.ram_total = 1000.0;
                n.ram_free = 1000.0;
            }
        }
        let gws = topo.tier_nodes(TIER_GATEWAY);
        let paths: Vec<LeafPath> = (0..8)
            .map(|d| LeafPath {
                device: EntityId(d),
                nodes: topo.path_to_root(gws[rng.index(gws.len())]).expect("rooted"),
            })
            .collect();
        for share in [false, true] {
            let opts = PlacementOptions {
                admission: Admission::Ram,
                share_instances: share,
            };
            let plans = [
                smp_place(&topo, &app, Some(&view), &paths, opts),
                smp_place(&topo, &app, None, &paths, opts),
                edgeward_place(&topo, &app, &paths, opts),
            ];
            let mut at_edge = Vec::new();
            for plan in plans {
                let plan = plan.map_err(|e| format!("seed {seed}: {e}"))?;
                for (n, used) in plan.ram_by_node() {
                    if used > topo.nodes[&n].ram_total + 1e-9 {
                        return Err(format!("seed {seed}: {n} holds {used} GB of {}", topo.nodes[&n].ram_total));
                    }
                }
                let mut hosts = BTreeSet::new();
                for i in plan.instances.iter().filter(|i| i.owner.is_some()) {
                    if !hosts.insert((i.microservice.clone(), i.owner)) {
                        return Err(format!("seed {seed}: {} of {:?} placed twice", i.microservice, i.owner));
                    }
                }
                at_edge.push(plan.count_by_tier(&topo).get(&TIER_GATEWAY).copied().unwrap_or(0));
            }
            if !(at_edge[0] >= at_edge[1] && at_edge[1] >= at_edge[2]) {
                return Err(format!("seed {seed}: tier-2 instances {at_edge:?} not SMP-C >= SMP-NC >= Edgeward"));
            }
        }
    }
    let checks = INVARIANT_CHECKS.load(std::sync::atomic::Ordering::Relaxed);
    if checks == 0 {
        return Err("no invariant was checked".into());
    }
    Ok(format!(
        "{checks} always-on checks passed across all runs; placement feasible and edge-dominance held on 20 tight topologies"
    ))
}
