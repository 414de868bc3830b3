//! Scalable microservice placement (cluster-aware horizontal scaling before
//! climbing the hierarchy) and the edgeward baseline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::discovery::ServiceDiscovery;
use crate::application::{next_eligible_microservice, Application};
use crate::clustering::ClusterView;
use crate::error::{Error, Result};
use crate::infrastructure::{EntityId, Host, MobileEntity, NodeId, Topology};

const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementPolicy {
    Edgeward,
    SmpNoClustering,
    SmpClustering,
}

impl PlacementPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            PlacementPolicy::Edgeward => "edgeward",
            PlacementPolicy::SmpNoClustering => "smp-no-clustering",
            PlacementPolicy::SmpClustering => "smp-clustering",
        }
    }
}

/// Which resources a node must have free to accept an instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Admission {
    /// Module RAM only.
    #[default]
    Ram,
    /// Module RAM plus the MIPS the path's expected request rate needs.
    RamCpu,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementOptions {
    pub admission: Admission,
    /// Paths meeting on a node share one instance of a microservice there.
    /// When off, every path gets its own instance owned by its device.
    pub share_instances: bool,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            admission: Admission::Ram,
            share_instances: true,
        }
    }
}

/// One device's route up the hierarchy: its gateway first, the cloud last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafPath {
    pub device: EntityId,
    pub nodes: Vec<NodeId>,
}

/// Leaf-to-root paths for every attached device, in device order.
pub fn leaf_paths(topo: &Topology, devices: &[MobileEntity]) -> Result<Vec<LeafPath>> {
    let mut out = Vec::new();
    for d in devices {
        if let Some(p) = d.current_parent {
            out.push(LeafPath {
                device: d.id,
                nodes: topo.path_to_root(p)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub microservice: String,
    pub host: Host,
    /// Owning device when instances are not shared.
    pub owner: Option<EntityId>,
    /// Indices of the paths this instance serves.
    pub paths: Vec<usize>,
    pub ram: f64,
    /// MIPS reserved for the paths served.
    pub cpu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub policy: PlacementPolicy,
    pub paths: Vec<LeafPath>,
    pub instances: Vec<InstanceRecord>,
    /// Per path: microservice to host.
    pub path_hosts: Vec<BTreeMap<String, Host>>,
    pub sd: ServiceDiscovery,
}

impl PlacementPlan {
    /// Microservice names hosted per host.
    pub fn node_instances(&self) -> BTreeMap<Host, Vec<String>> {
        let mut out: BTreeMap<Host, Vec<String>> = BTreeMap::new();
        for i in &self.instances {
            out.entry(i.host).or_default().push(i.microservice.clone());
        }
        out
    }

    /// RAM charged per infrastructure node.
    pub fn ram_by_node(&self) -> BTreeMap<NodeId, f64> {
        let mut out = BTreeMap::new();
        for i in &self.instances {
            if let Host::Node(n) = i.host {
                *out.entry(n).or_insert(0.0) += i.ram;
            }
        }
        out
    }

    /// Non-client instance count per tier.
    pub fn count_by_tier(&self, topo: &Topology) -> BTreeMap<u8, usize> {
        let mut out = BTreeMap::new();
        for i in &self.instances {
            if let Host::Node(n) = i.host {
                if let Some(node) = topo.nodes.get(&n) {
                    *out.entry(node.tier).or_insert(0) += 1;
                }
            }
        }
        out
    }

    /// JSON dump with host-keyed maps written as `n<id>` / `m<id>` strings.
    pub fn to_json(&self) -> Result<String> {
        let key = |h: &Host| h.to_string();
        let hosts: BTreeMap<String, Vec<String>> =
            self.node_instances().into_iter().map(|(h, v)| (key(&h), v)).collect();
        let path_hosts: Vec<BTreeMap<&String, String>> = self
            .path_hosts
            .iter()
            .map(|m| m.iter().map(|(ms, h)| (ms, key(h))).collect())
            .collect();
        type Providers<'a> = BTreeMap<&'a String, Vec<(String, u32)>>;
        let sd: BTreeMap<String, Providers> = self
            .sd
            .entries
            .iter()
            .map(|(at, m)| {
                let m = m
                    .iter()
                    .map(|(ms, cs)| (ms, cs.iter().map(|c| (key(&c.host), c.weight)).collect()))
                    .collect();
                (key(at), m)
            })
            .collect();
        let value = serde_json::json!({
            "policy": self.policy,
            "paths": self.paths,
            "hosts": hosts,
            "path_hosts": path_hosts,
            "service_discovery": sd,
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }

    /// Map from microservice to host, used for equality checks in tests.
    pub fn assignment(&self) -> BTreeSet<(String, usize, Host)> {
        self.path_hosts
            .iter()
            .enumerate()
            .flat_map(|(p, m)| m.iter().map(move |(ms, h)| (ms.clone(), p, *h)))
            .collect()
    }

    /// Charges the plan's RAM to the topology.
    pub fn commit(&self, topo: &mut Topology) -> Result<()> {
        for (n, ram) in self.ram_by_node() {
            topo.reserve_ram(n, ram)?;
        }
        Ok(())
    }
}

/// Rebuilds service discovery from the per-path host map: every host running
/// a consumer learns where that path's providers are.
pub fn generate_sd(app: &Application, path_hosts: &[BTreeMap<String, Host>]) -> ServiceDiscovery {
    let mut sd = ServiceDiscovery::default();
    for hosts in path_hosts {
        for (ms, &at) in hosts {
            let Some(module) = app.module(ms) else { continue };
            for target in &module.consumes {
                if app.is_client(target) {
                    continue;
                }
                if let Some(&provider) = hosts.get(target) {
                    sd.add(at, target, provider);
                }
            }
        }
    }
    sd
}

struct Builder<'a> {
    app: &'a Application,
    opts: PlacementOptions,
    ram_free: BTreeMap<NodeId, f64>,
    cpu_free: BTreeMap<NodeId, f64>,
    demand: BTreeMap<String, f64>,
    instances: Vec<InstanceRecord>,
    path_hosts: Vec<BTreeMap<String, Host>>,
    paths: &'a [LeafPath],
}

impl<'a> Builder<'a> {
    fn new(topo: &Topology, app: &'a Application, paths: &'a [LeafPath], opts: PlacementOptions) -> Self {
        Builder {
            app,
            opts,
            ram_free: topo.nodes.values().map(|n| (n.id, n.ram_free)).collect(),
            cpu_free: topo.nodes.values().map(|n| (n.id, n.mips)).collect(),
            demand: app.cpu_demand(),
            instances: Vec::new(),
            path_hosts: vec![BTreeMap::new(); paths.len()],
            paths,
        }
    }

    fn existing(&self, ms: &str, node: NodeId, path: usize) -> Option<usize> {
        let owner = self.owner(path);
        self.instances
            .iter()
            .position(|i| i.microservice == ms && i.host == Host::Node(node) && i.owner == owner)
    }

    fn owner(&self, path: usize) -> Option<EntityId> {
        (!self.opts.share_instances).then(|| self.paths[path].device)
    }

    fn fits(&self, ms: &str, node: NodeId, path: usize) -> bool {
        let ram = if self.existing(ms, node, path).is_some() {
            0.0
        } else {
            self.app.module(ms).map(|m| m.ram).unwrap_or(0.0)
        };
        let ram_ok = self.ram_free.get(&node).map(|f| f + EPS >= ram).unwrap_or(false);
        let cpu_ok = match self.opts.admission {
            Admission::Ram => true,
            Admission::RamCpu => {
                let need = self.demand.get(ms).copied().unwrap_or(0.0);
                self.cpu_free.get(&node).map(|f| f + EPS >= need).unwrap_or(false)
            }
        };
        ram_ok && cpu_ok
    }

    fn place(&mut self, ms: &str, node: NodeId, path: usize) {
        let cpu = match self.opts.admission {
            Admission::Ram => 0.0,
            Admission::RamCpu => self.demand.get(ms).copied().unwrap_or(0.0),
        };
        *self.cpu_free.get_mut(&node).expect("known node") -= cpu;
        match self.existing(ms, node, path) {
            Some(i) => {
                self.instances[i].paths.push(path);
                self.instances[i].cpu += cpu;
            }
            None => {
                let ram = self.app.module(ms).map(|m| m.ram).unwrap_or(0.0);
                *self.ram_free.get_mut(&node).expect("known node") -= ram;
                self.instances.push(InstanceRecord {
                    microservice: ms.to_string(),
                    host: Host::Node(node),
                    owner: self.owner(path),
                    paths: vec![path],
                    ram,
                    cpu,
                });
            }
        }
        self.path_hosts[path].insert(ms.to_string(), Host::Node(node));
    }

    fn pin_client(&mut self, ms: &str, path: usize) {
        let device = self.paths[path].device;
        let ram = self.app.module(ms).map(|m| m.ram).unwrap_or(0.0);
        self.instances.push(InstanceRecord {
            microservice: ms.to_string(),
            host: Host::Device(device),
            owner: Some(device),
            paths: vec![path],
            ram,
            cpu: 0.0,
        });
        self.path_hosts[path].insert(ms.to_string(), Host::Device(device));
    }

    fn finish(mut self, policy: PlacementPolicy) -> PlacementPlan {
        self.instances.sort_by(|a, b| {
            (a.host, &a.microservice, a.owner).cmp(&(b.host, &b.microservice, b.owner))
        });
        let sd = generate_sd(self.app, &self.path_hosts);
        PlacementPlan {
            policy,
            paths: self.paths.to_vec(),
            instances: self.instances,
            path_hosts: self.path_hosts,
            sd,
        }
    }
}

fn topological(app: &Application) -> Vec<String> {
    let mut placed = BTreeSet::new();
    let mut order = Vec::new();
    while let Some(m) = next_eligible_microservice(app, &placed) {
        placed.insert(m.clone());
        order.push(m);
    }
    order
}

/// Microservice-major placement: each microservice is placed for every path
/// before the next one is considered. On a path, the current node is tried
/// first, then (if `clusters` is given) its cluster members by ascending id,
/// and only then the path climbs towards the cloud.
pub fn smp_place(
    topo: &Topology,
    app: &Application,
    clusters: Option<&ClusterView>,
    paths: &[LeafPath],
    opts: PlacementOptions,
) -> Result<PlacementPlan> {
    let mut b = Builder::new(topo, app, paths, opts);
    let mut cursor = vec![0usize; paths.len()];
    for ms in topological(app) {
        if app.is_client(&ms) {
            for p in 0..paths.len() {
                b.pin_client(&ms, p);
            }
            continue;
        }
        for p in 0..paths.len() {
            let f = paths[p].nodes[cursor[p]];
            if b.fits(&ms, f, p) {
                b.place(&ms, f, p);
                continue;
            }
            if let Some(view) = clusters {
                let mut members = view.members(f).to_vec();
                members.sort();
                if let Some(&cm) = members.iter().find(|&&cm| b.fits(&ms, cm, p)) {
                    b.place(&ms, cm, p);
                    continue;
                }
            }
            loop {
                cursor[p] += 1;
                let Some(&up) = paths[p].nodes.get(cursor[p]) else {
                    return Err(Error::Capacity {
                        microservice: ms.clone(),
                        path: p,
                    });
                };
                if b.fits(&ms, up, p) {
                    b.place(&ms, up, p);
                    break;
                }
            }
        }
    }
    let policy = if clusters.is_some() {
        PlacementPolicy::SmpClustering
    } else {
        PlacementPolicy::SmpNoClustering
    };
    Ok(b.finish(policy))
}

/// Path-major placement: each path pushes its modules upward greedily,
/// never consulting siblings.
pub fn edgeward_place(
    topo: &Topology,
    app: &Application,
    paths: &[LeafPath],
    opts: PlacementOptions,
) -> Result<PlacementPlan> {
    let mut b = Builder::new(topo, app, paths, opts);
    let order = topological(app);
    for (p, path) in paths.iter().enumerate() {
        let mut cursor = 0;
        for ms in &order {
            if app.is_client(ms) {
                b.pin_client(ms, p);
                continue;
            }
            loop {
                let Some(&f) = path.nodes.get(cursor) else {
                    return Err(Error::Capacity {
                        microservice: ms.clone(),
                        path: p,
                    });
                };
                if b.fits(ms, f, p) {
                    b.place(ms, f, p);
                    break;
                }
                cursor += 1;
            }
        }
    }
    Ok(b.finish(PlacementPolicy::Edgeward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::application::{AppEdge, AppModule, Direction, Emission, Selectivity};
    use crate::infrastructure::tests::spec;
    use crate::infrastructure::{build_topology, TopologyConfig};

    fn chain_app() -> Application {
        let e = |s: &str, d: &str, t: &str, dir: Direction, em: Emission| AppEdge {
            source: s.into(),
            dest: d.into(),
            cpu_length: 100.0,
            nw_length: 0.5,
            tuple_type: t.into(),
            direction: dir,
            emission: em,
        };
        let sel = |m: &str, i: &str, o: &str| Selectivity {
            module: m.into(),
            input_type: i.into(),
            output_type: o.into(),
            ratio: 1.0,
        };
        Application {
            name: "chain".into(),
            modules: vec![
                AppModule::client("C", 0.1),
                AppModule::new("A", 4.0),
                AppModule::new("B", 4.0),
            ],
            edges: vec![
                e("C", "A", "x", Direction::Up, Emission::Periodic { interval_ms: 1000.0 }),
                e("A", "B", "y", Direction::Up, Emission::Reactive),
                e("B", "C", "z", Direction::Down, Emission::Reactive),
            ],
            selectivities: vec![sel("A", "x", "y"), sel("B", "y", "z")],
            loops: vec![],
        }
        .normalized()
        .unwrap()
    }

    fn topo(gw_ram: f64) -> Topology {
        let mut nodes = vec![
            spec(0, 0, None, 0.0, 0.0),
            spec(1, 1, Some(0), 0.0, 0.0),
            spec(2, 2, Some(1), 0.0, 0.0),
            spec(3, 2, Some(1), 0.0, 0.001),
        ];
        nodes[0].ram = 64.0;
        nodes[1].ram = 16.0;
        nodes[2].ram = gw_ram;
        nodes[3].ram = gw_ram;
        build_topology(&TopologyConfig {
            nodes,
            ..Default::default()
        })
        .unwrap()
    }

    fn path(dev: u32, gw: u32) -> LeafPath {
        LeafPath {
            device: EntityId(dev),
            nodes: vec![NodeId(gw), NodeId(1), NodeId(0)],
        }
    }

    #[test]
    fn ample_gateway_hosts_everything() {
        let t = topo(16.0);
        let app = chain_app();
        let paths = [path(0, 2)];
        let smp = smp_place(&t, &app, None, &paths, PlacementOptions::default()).unwrap();
        let edge = edgeward_place(&t, &app, &paths, PlacementOptions::default()).unwrap();
        assert_eq!(smp.path_hosts[0]["A"], Host::Node(NodeId(2)));
        assert_eq!(smp.path_hosts[0]["B"], Host::Node(NodeId(2)));
        assert_eq!(smp.assignment(), edge.assignment());
        assert_eq!(smp.sd.candidates(Host::Device(EntityId(0)), "A"), &[Host::Node(NodeId(2))]);
        assert_eq!(smp.sd.candidates(Host::Node(NodeId(2)), "B"), &[Host::Node(NodeId(2))]);
    }

    #[test]
    fn shared_instance_charges_ram_once() {
        let t = topo(16.0);
        let app = chain_app();
        let paths = [path(0, 2), path(1, 2)];
        let plan = smp_place(&t, &app, None, &paths, PlacementOptions::default()).unwrap();
        assert_eq!(plan.ram_by_node()[&NodeId(2)], 8.0);
        let t = topo(12.0);
        let own = smp_place(
            &t,
            &app,
            None,
            &paths,
            PlacementOptions {
                share_instances: false,
                ..Default::default()
            },
        )
        .unwrap();
        // both A instances go first; the second B no longer fits
        assert_eq!(own.path_hosts[1]["A"], Host::Node(NodeId(2)));
        assert_eq!(own.path_hosts[0]["B"], Host::Node(NodeId(2)));
        assert_eq!(own.path_hosts[1]["B"], Host::Node(NodeId(1)));
    }

    #[test]
    fn cloud_too_small_is_a_capacity_error() {
        let mut t = topo(1.0);
        for n in t.nodes.values_mut() {
            n.ram_free = 1.0;
        }
        let err = edgeward_place(&t, &chain_app(), &[path(0, 2)], PlacementOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Capacity { ref microservice, .. } if microservice == "A"));
    }

    #[test]
    fn cpu_admission_limits_paths_per_node() {
        let mut t = topo(64.0);
        t.nodes.get_mut(&NodeId(2)).unwrap().mips = 250.0;
        let app = chain_app();
        let paths = [path(0, 2), path(1, 2), path(2, 2)];
        let opts = PlacementOptions {
            admission: Admission::RamCpu,
            share_instances: true,
        };
        let plan = smp_place(&t, &app, None, &paths, opts).unwrap();
        // A needs 100 MIPS per path: two paths fit on the gateway
        let on_gw = plan
            .path_hosts
            .iter()
            .filter(|h| h["A"] == Host::Node(NodeId(2)))
            .count();
        assert_eq!(on_gw, 2);
        let inst = plan
            .instances
            .iter()
            .find(|i| i.microservice == "A" && i.host == Host::Node(NodeId(2)))
            .unwrap();
        assert_eq!(inst.paths, vec![0, 1]);
        assert_eq!(inst.cpu, 200.0);
    }
}
