//! The running system: devices, nodes and module instances, and the event
//! handler that moves tuples and migrating modules between them.

use std::collections::{BTreeMap, BTreeSet};

use super::{ClusteringConfig, MobilitySource, NicEnergy, RunOutput, ScenarioConfig};
use crate::application::{service_time_ms, Application, Emission, LoopMark, Tuple};
use crate::clustering::{form_all, ClusterTrigger, ClusterView};
use crate::engine::{Event, EventKind, Handler, Kernel, RngStream, SimTime, TargetId};
use crate::error::{Error, Result};
use crate::infrastructure::{EntityId, Host, MobileEntity, NodeId, Topology};
use crate::metrics::{HostProfile, Metrics, MigrationRecord, TrafficCategory};
use crate::microservices::{
    compute_routes, edgeward_place, generate_sd, leaf_paths, smp_place, update_service_discovery,
    InstanceRecord, LoadBalancer, PlacementOptions, PlacementPlan, PlacementPolicy, RoutingTable,
    SdUpdate, ServiceDiscovery,
};
use crate::mobility::{
    decide_migration, generate_directional_trace, generate_random_trace, haversine, migration_latency,
    parse_traces, select_parent, Location, MigratingModule, MigrationDecision, MobilityKind,
    MobilityModelParams, MobilityPolicy, MobilityTrace,
};
use crate::network::{access_link, best_link, LinkSpec};

const EPS: f64 = 1e-9;

#[derive(Clone, Debug)]
pub enum Payload {
    Location { entity: usize, sample: usize },
    Emit { entity: usize, edge: usize },
    /// A tuple finished crossing a link and is now at `at`.
    Hop { tuple: Box<Tuple>, at: Host },
    Executed { tuple: Box<Tuple>, at: Host },
    Cluster,
    /// Hop `hop` of in-flight migration `migration` has been delivered.
    MigrationStep { migration: usize, hop: usize },
}

struct InFlight {
    decision: MigrationDecision,
    entity: usize,
    instances: Vec<usize>,
    source: NodeId,
    trigger: SimTime,
    wait_ms: f64,
    energy: f64,
    ram: f64,
}

pub struct World {
    name: String,
    seed: u64,
    horizon: SimTime,
    app: Application,
    topo: Topology,
    clusters: ClusterView,
    cluster_views: Vec<ClusterView>,
    cluster_cfg: ClusteringConfig,
    routes: RoutingTable,
    use_mesh: bool,
    entities: Vec<MobileEntity>,
    entity_index: BTreeMap<EntityId, usize>,
    policy: PlacementPolicy,
    opts: PlacementOptions,
    plan: Option<PlacementPlan>,
    instances: Vec<InstanceRecord>,
    path_of: Vec<Option<usize>>,
    path_hosts: Vec<BTreeMap<String, Host>>,
    sd: ServiceDiscovery,
    lb: LoadBalancer,
    cpu_free_at: BTreeMap<Host, Vec<SimTime>>,
    link_free_at: BTreeMap<(Host, Host), SimTime>,
    profiles: BTreeMap<Host, HostProfile>,
    metrics: Metrics,
    selectivity_rng: RngStream,
    emit_offsets: Vec<Vec<f64>>,
    next_tuple_id: u64,
    migrations: Vec<InFlight>,
    in_flight: BTreeMap<usize, usize>,
    pending: BTreeMap<usize, SimTime>,
    reserved: BTreeMap<NodeId, f64>,
    mobility_policy: Option<MobilityPolicy>,
    max_distance_km: f64,
    nic: NicEnergy,
    check: bool,
    on_event: Vec<EventKind>,
}

fn target_of(host: Host) -> TargetId {
    match host {
        Host::Node(n) => n.0,
        Host::Device(e) => 0x8000_0000 | e.0,
    }
}

fn build_traces(cfg: &ScenarioConfig) -> Result<Vec<MobilityTrace>> {
    let horizon = cfg.horizon_ms();
    match &cfg.mobility {
        MobilitySource::Stationary => Ok(cfg
            .devices
            .iter()
            .map(|d| MobilityTrace::stationary(d.id, d.start))
            .collect()),
        MobilitySource::TraceFile { path } => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("cannot open trace file {}: {e}", path.display())))?;
            let mut traces = parse_traces(file)?;
            Ok(cfg
                .devices
                .iter()
                .map(|d| {
                    traces.remove(&d.id).unwrap_or_else(|| {
                        log::warn!("no trace for {}, keeping it at its start position", d.id);
                        MobilityTrace::stationary(d.id, d.start)
                    })
                })
                .collect())
        }
        MobilitySource::Model {
            kind,
            speed,
            interval_ms,
            location_events,
            pause_ms,
            roi,
        } => {
            let mut out = Vec::new();
            let devices = cfg.devices.len() as u64;
            for (i, d) in cfg.devices.iter().enumerate() {
                // the aggregate event count is split over devices, earlier
                // devices taking the remainder; the half-interval margin
                // keeps the last sample inside the horizon
                let share = |n: u64| n / devices + u64::from((i as u64) < n % devices);
                let interval = d
                    .interval_ms
                    .or(*interval_ms)
                    .or_else(|| location_events.map(|n| horizon / (share(n) as f64 + 0.5)))
                    .ok_or_else(|| Error::Config("no sample interval for mobility model".into()))?;
                let params = MobilityModelParams {
                    kind: *kind,
                    speed: *speed,
                    interval_ms: interval,
                    pause_ms: *pause_ms,
                    roi: *roi,
                    duration_ms: horizon,
                    seed: cfg.seed,
                    start: Some(d.start),
                };
                let trace = match kind {
                    MobilityKind::Directional => {
                        let heading = match d.heading_deg {
                            Some(h) => h,
                            None => RngStream::new(cfg.seed, &format!("heading/{}", d.id.0)).uniform(0.0, 360.0),
                        };
                        generate_directional_trace(d.id, d.start, heading, &params)?
                    }
                    _ => generate_random_trace(d.id, &params)?,
                };
                out.push(trace);
            }
            Ok(out)
        }
    }
}

impl World {
    pub fn new(cfg: &ScenarioConfig, topo: Topology) -> Result<World> {
        let app = cfg.application.clone().normalized()?;
        if cfg.device_tier != topo.max_tier() + 1 {
            return Err(Error::Config(format!(
                "devices sit at tier {} but the lowest node tier is {}",
                cfg.device_tier,
                topo.max_tier()
            )));
        }
        let traces = build_traces(cfg)?;
        let mut entities = Vec::new();
        let mut entity_index = BTreeMap::new();
        for (d, trace) in cfg.devices.iter().zip(traces) {
            trace.validate()?;
            entity_index.insert(d.id, entities.len());
            entities.push(MobileEntity {
                id: d.id,
                name: if d.name.is_empty() {
                    format!("device-{}", d.id.0)
                } else {
                    d.name.clone()
                },
                tier: cfg.device_tier,
                current_parent: None,
                trace,
                hosted_modules: BTreeSet::new(),
                mips: d.mips,
                uplink_bw: d.uplink,
                downlink_bw: d.downlink,
                busy_power: d.busy_power,
                idle_power: d.idle_power,
            });
        }
        let mut profiles = BTreeMap::new();
        for n in topo.nodes.values() {
            profiles.insert(
                Host::Node(n.id),
                HostProfile {
                    name: n.name.clone(),
                    tier: n.tier,
                    idle_power: n.idle_power,
                    busy_power: n.busy_power,
                    mips: n.mips,
                    servers: n.servers,
                },
            );
        }
        for e in &entities {
            profiles.insert(
                Host::Device(e.id),
                HostProfile {
                    name: e.name.clone(),
                    tier: e.tier,
                    idle_power: e.idle_power,
                    busy_power: e.busy_power,
                    mips: e.mips,
                    servers: 1,
                },
            );
        }
        let on_event = if cfg.clustering.enabled {
            cfg.clustering
                .triggers
                .iter()
                .filter_map(|t| match t {
                    ClusterTrigger::OnEvent(k) => Some(*k),
                    _ => None,
                })
                .collect()
        } else {
            Vec::new()
        };
        let loop_names: Vec<String> = app.loops.iter().map(|l| l.name.clone()).collect();
        let mut emit_rng = RngStream::new(cfg.seed, "emission");
        let emit_offsets = entities
            .iter()
            .map(|_| {
                app.edges
                    .iter()
                    .map(|e| match e.emission {
                        Emission::Periodic { interval_ms } if cfg.emission_jitter => {
                            emit_rng.uniform(0.0, interval_ms)
                        }
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(World {
            name: cfg.name.clone(),
            seed: cfg.seed,
            horizon: SimTime::from_ms(cfg.horizon_ms()),
            app,
            clusters: ClusterView {
                mode: cfg.clustering.mode,
                nodes: BTreeMap::new(),
            },
            cluster_views: Vec::new(),
            cluster_cfg: cfg.clustering.clone(),
            routes: RoutingTable::default(),
            use_mesh: topo.mesh.enabled,
            topo,
            entities,
            entity_index,
            policy: cfg.placement_policy,
            opts: cfg.placement,
            plan: None,
            instances: Vec::new(),
            path_of: Vec::new(),
            path_hosts: Vec::new(),
            sd: ServiceDiscovery::default(),
            lb: LoadBalancer::default(),
            cpu_free_at: BTreeMap::new(),
            link_free_at: BTreeMap::new(),
            profiles,
            metrics: Metrics::new(&loop_names),
            selectivity_rng: RngStream::new(cfg.seed, "selectivity"),
            emit_offsets,
            next_tuple_id: 0,
            migrations: Vec::new(),
            in_flight: BTreeMap::new(),
            pending: BTreeMap::new(),
            reserved: BTreeMap::new(),
            mobility_policy: cfg.mobility_policy,
            max_distance_km: cfg.max_distance_km,
            nic: cfg.nic_energy,
            check: cfg.check_invariants || cfg!(debug_assertions),
            on_event,
        })
    }

    /// Attaches devices, clusters, places the application and runs the
    /// kernel to the horizon.
    pub fn run(&mut self) -> Result<RunOutput> {
        let mut kernel: Kernel<Payload> = Kernel::new();
        for i in 0..self.entities.len() {
            let loc = self.entities[i].trace.samples[0].location;
            let tier = self.entities[i].tier - 1;
            let sel = select_parent(&self.topo, &loc, None, tier, self.max_distance_km);
            self.entities[i].current_parent = sel.parent;
            if sel.parent.is_none() {
                self.metrics.faults.unreachable_entities += 1;
            }
        }
        if self.cluster_cfg.enabled && self.cluster_cfg.triggers.contains(&ClusterTrigger::AtStart) {
            self.cluster_round(SimTime::ZERO)?;
        } else {
            self.routes = compute_routes(&self.topo, &self.clusters, self.use_mesh)?;
        }
        self.place()?;

        if self.cluster_cfg.enabled {
            for t in &self.cluster_cfg.triggers {
                if let ClusterTrigger::AtTime(secs) = *t {
                    let at = SimTime::from_secs(secs);
                    if at <= self.horizon {
                        kernel.schedule(at, 0, EventKind::ClusteringTrigger, Payload::Cluster)?;
                    }
                }
            }
        }
        for (i, e) in self.entities.iter().enumerate() {
            for (k, s) in e.trace.samples.iter().enumerate().skip(1) {
                if s.time <= self.horizon {
                    kernel.schedule(
                        s.time,
                        target_of(Host::Device(e.id)),
                        EventKind::LocationChanged,
                        Payload::Location { entity: i, sample: k },
                    )?;
                }
            }
        }
        for i in 0..self.entities.len() {
            for (k, edge) in self.app.edges.iter().enumerate() {
                if matches!(edge.emission, Emission::Periodic { .. }) && self.app.is_client(&edge.source) {
                    let at = SimTime::from_ms(self.emit_offsets[i][k]);
                    if at <= self.horizon {
                        kernel.schedule(
                            at,
                            target_of(Host::Device(self.entities[i].id)),
                            EventKind::LoopProbe,
                            Payload::Emit { entity: i, edge: k },
                        )?;
                    }
                }
            }
        }
        let horizon = self.horizon;
        kernel.run_until(horizon, self)?;
        self.check_placement()?;

        let metrics = std::mem::take(&mut self.metrics);
        let report = metrics.finalize(
            horizon,
            &self.profiles,
            &self.name,
            self.seed,
            self.entities.len(),
            kernel.dispatched(),
        )?;
        Ok(RunOutput {
            report,
            placement: self.plan.clone().expect("placed before running"),
            clusters: std::mem::take(&mut self.cluster_views),
            topology: self.topo.clone(),
        })
    }

    fn place(&mut self) -> Result<()> {
        let paths = leaf_paths(&self.topo, &self.entities)?;
        let plan = match self.policy {
            PlacementPolicy::Edgeward => edgeward_place(&self.topo, &self.app, &paths, self.opts)?,
            PlacementPolicy::SmpNoClustering => smp_place(&self.topo, &self.app, None, &paths, self.opts)?,
            PlacementPolicy::SmpClustering => {
                smp_place(&self.topo, &self.app, Some(&self.clusters), &paths, self.opts)?
            }
        };
        plan.commit(&mut self.topo)?;
        self.path_of = self
            .entities
            .iter()
            .map(|e| plan.paths.iter().position(|p| p.device == e.id))
            .collect();
        for inst in &plan.instances {
            if let Some(&i) = inst.owner.and_then(|o| self.entity_index.get(&o)) {
                self.entities[i].hosted_modules.insert(inst.microservice.clone());
            }
        }
        self.instances = plan.instances.clone();
        self.path_hosts = plan.path_hosts.clone();
        self.sd = plan.sd.clone();
        self.plan = Some(plan);
        self.check_placement()
    }

    fn cluster_round(&mut self, now: SimTime) -> Result<()> {
        let view = form_all(
            &self.topo,
            &self.cluster_cfg.tiers,
            self.cluster_cfg.latency_filter,
            self.cluster_cfg.mode,
            now,
        )?;
        view.apply(&mut self.topo);
        self.clusters = view.clone();
        self.routes = compute_routes(&self.topo, &self.clusters, self.use_mesh)?;
        self.metrics.clustering_rounds += 1;
        // every clustering node probes each of its siblings
        let mut probes = Vec::new();
        for n in self.topo.nodes.values() {
            if !self.cluster_cfg.tiers.contains(&n.tier) {
                continue;
            }
            let Some(p) = n.parent else { continue };
            for &s in &self.topo.node(p)?.children {
                if s != n.id {
                    probes.push((n.id, s));
                }
            }
        }
        let mb = self.cluster_cfg.probe_mb;
        for (a, b) in probes {
            self.metrics
                .record_transfer(Host::Node(a), Host::Node(b), mb, TrafficCategory::Clustering);
        }
        self.cluster_views.push(view);
        Ok(())
    }

    fn entity(&self, e: EntityId) -> Option<&MobileEntity> {
        self.entity_index.get(&e).map(|&i| &self.entities[i])
    }

    /// Next host and link from `from` towards `to`.
    fn next_hop(&self, from: Host, to: Host) -> Option<(Host, LinkSpec)> {
        match (from, to) {
            (Host::Device(e), _) => {
                let dev = self.entity(e)?;
                let gw = dev.current_parent?;
                Some((Host::Node(gw), access_link(&self.topo, dev, gw, true)))
            }
            (Host::Node(n), Host::Device(e)) => {
                let dev = self.entity(e)?;
                let gw = dev.current_parent?;
                if gw == n {
                    Some((to, access_link(&self.topo, dev, gw, false)))
                } else {
                    self.node_hop(n, gw)
                }
            }
            (Host::Node(n), Host::Node(m)) => self.node_hop(n, m),
        }
    }

    fn node_hop(&self, from: NodeId, to: NodeId) -> Option<(Host, LinkSpec)> {
        let next = self.routes.next_hop(from, to).ok()?;
        let link = self
            .routes
            .link(from, next)
            .or_else(|| best_link(&self.topo, &self.clusters, from, next, self.use_mesh))?;
        Some((Host::Node(next), link))
    }

    /// Queues `mb` on the directed link and returns (start, arrival).
    fn transmit(&mut self, from: Host, to: Host, link: &LinkSpec, mb: f64, now: SimTime) -> (SimTime, SimTime) {
        let free = self.link_free_at.get(&(from, to)).copied().unwrap_or(SimTime::ZERO);
        let start = now.max(free);
        let sent = start.after(link.transmission_ms(mb));
        self.link_free_at.insert((from, to), sent);
        match self.nic {
            NicEnergy::Off => {}
            NicEnergy::Sender => self.metrics.mark_busy(from, start, sent),
            NicEnergy::Both => {
                self.metrics.mark_busy(from, start, sent);
                self.metrics
                    .mark_busy(to, start.after(link.latency_ms), sent.after(link.latency_ms));
            }
        }
        (start, sent.after(link.latency_ms))
    }

    fn forward(&mut self, tuple: Box<Tuple>, at: Host, kernel: &mut Kernel<Payload>) -> Result<()> {
        let dst = tuple.dst_node.expect("tuples are addressed before sending");
        if at == dst {
            kernel.schedule(kernel.now(), target_of(at), EventKind::TupleArrival, Payload::Hop { tuple, at })?;
            return Ok(());
        }
        let Some((next, link)) = self.next_hop(at, dst) else {
            self.metrics.faults.routing += 1;
            return Ok(());
        };
        let (_, arrival) = self.transmit(at, next, &link, tuple.nw_length, kernel.now());
        self.metrics
            .record_transfer(at, next, tuple.nw_length, TrafficCategory::App);
        let kind = if next == dst {
            EventKind::TupleArrival
        } else {
            EventKind::TransferComplete
        };
        kernel.schedule(arrival, target_of(next), kind, Payload::Hop { tuple, at: next })?;
        Ok(())
    }

    fn hosts_module(&self, at: Host, ms: &str) -> bool {
        self.instances.iter().any(|i| i.host == at && i.microservice == ms)
    }

    fn arrive(&mut self, mut tuple: Box<Tuple>, at: Host, kernel: &mut Kernel<Payload>) -> Result<()> {
        if tuple.dst_node != Some(at) {
            return self.forward(tuple, at, kernel);
        }
        if !self.hosts_module(at, &tuple.dst_module) {
            // the instance moved away while the tuple was in transit
            let current = self
                .entity_index
                .get(&tuple.origin_entity)
                .and_then(|&i| self.path_of[i])
                .and_then(|p| self.path_hosts[p].get(&tuple.dst_module).copied());
            match current {
                Some(h) if h != at => {
                    tuple.dst_node = Some(h);
                    return self.forward(tuple, at, kernel);
                }
                _ => {
                    self.metrics.faults.routing += 1;
                    return Ok(());
                }
            }
        }
        let (mips, servers) = self
            .profiles
            .get(&at)
            .map(|p| (p.mips / p.servers.max(1) as f64, p.servers.max(1)))
            .unwrap_or((f64::INFINITY, 1));
        let now = kernel.now();
        let free = self.cpu_free_at.entry(at).or_insert_with(|| vec![SimTime::ZERO; servers as usize]);
        let mut server = 0;
        for (i, t) in free.iter().enumerate() {
            if *t < free[server] {
                server = i;
            }
        }
        let start = now.max(free[server]);
        let end = start.after(service_time_ms(tuple.cpu_length, mips));
        free[server] = end;
        self.metrics.mark_server_busy(at, server as u32, start, end);
        self.metrics.offer(at, tuple.cpu_length);
        kernel.schedule(end, target_of(at), EventKind::TupleExecuted, Payload::Executed { tuple, at })?;
        Ok(())
    }

    fn new_tuple(&mut self, edge_idx: usize, origin: EntityId, now: SimTime) -> Tuple {
        let e = &self.app.edges[edge_idx];
        self.next_tuple_id += 1;
        Tuple {
            id: self.next_tuple_id,
            tuple_type: e.tuple_type.clone(),
            src_module: e.source.clone(),
            dst_module: e.dest.clone(),
            cpu_length: e.cpu_length,
            nw_length: e.nw_length,
            direction: e.direction,
            emit_time: now,
            dst_node: None,
            origin_entity: origin,
            loops: Vec::new(),
        }
    }

    /// Picks the destination host of `tuple` sent from `at`.
    fn address(&mut self, tuple: &mut Tuple, at: Host) -> bool {
        if self.app.is_client(&tuple.dst_module) {
            tuple.dst_node = Some(Host::Device(tuple.origin_entity));
            return true;
        }
        match self.lb.select(&self.sd, at, &tuple.dst_module) {
            Some(h) => {
                tuple.dst_node = Some(h);
                true
            }
            None => {
                self.metrics.faults.service_unavailable += 1;
                false
            }
        }
    }

    fn emit(&mut self, entity: usize, edge: usize, kernel: &mut Kernel<Payload>) -> Result<()> {
        let now = kernel.now();
        let device = Host::Device(self.entities[entity].id);
        if let Emission::Periodic { interval_ms } = self.app.edges[edge].emission {
            let next = now.after(interval_ms);
            if next <= self.horizon {
                kernel.schedule(next, target_of(device), EventKind::LoopProbe, Payload::Emit { entity, edge })?;
            }
        }
        if self.entities[entity].current_parent.is_none() {
            self.metrics.faults.dropped_emissions += 1;
            return Ok(());
        }
        let mut tuple = self.new_tuple(edge, self.entities[entity].id, now);
        for (idx, l) in self.app.loops.iter().enumerate() {
            if l.modules.len() >= 2 && l.modules[0] == tuple.src_module && l.modules[1] == tuple.dst_module {
                tuple.loops.push(LoopMark {
                    loop_idx: idx,
                    started: now,
                    position: 1,
                });
            }
        }
        if !self.address(&mut tuple, device) {
            return Ok(());
        }
        self.forward(Box::new(tuple), device, kernel)
    }

    fn executed(&mut self, tuple: Box<Tuple>, at: Host, kernel: &mut Kernel<Payload>) -> Result<()> {
        let now = kernel.now();
        let mut carried: Vec<LoopMark> = Vec::new();
        for mark in &tuple.loops {
            if mark.position + 1 == self.app.loops[mark.loop_idx].modules.len() {
                self.metrics.record_loop(mark.loop_idx, mark.started, now);
            } else {
                carried.push(*mark);
            }
        }
        let outputs: Vec<(usize, f64)> = self
            .app
            .outputs(&tuple.dst_module, &tuple.tuple_type)
            .into_iter()
            .map(|(e, r)| {
                let idx = self
                    .app
                    .edges
                    .iter()
                    .position(|x| std::ptr::eq(x, e))
                    .expect("edge of this application");
                (idx, r)
            })
            .collect();
        for (edge, ratio) in outputs {
            let copies = if ratio == 1.0 {
                1
            } else {
                let whole = ratio.floor();
                whole as usize + usize::from(self.selectivity_rng.bernoulli(ratio - whole))
            };
            for _ in 0..copies {
                let mut out = self.new_tuple(edge, tuple.origin_entity, now);
                for mark in &carried {
                    let modules = &self.app.loops[mark.loop_idx].modules;
                    if modules[mark.position + 1] == out.dst_module {
                        out.loops.push(LoopMark {
                            position: mark.position + 1,
                            ..*mark
                        });
                    }
                }
                if self.address(&mut out, at) {
                    self.forward(Box::new(out), at, kernel)?;
                }
            }
        }
        Ok(())
    }

    fn location_changed(&mut self, entity: usize, sample: usize, kernel: &mut Kernel<Payload>) -> Result<()> {
        self.metrics.location_events += 1;
        let loc = self.entities[entity].trace.samples[sample].location;
        let tier = self.entities[entity].tier - 1;
        let old = self.entities[entity].current_parent;
        let sel = select_parent(&self.topo, &loc, old, tier, self.max_distance_km);
        if self.check {
            self.check_selection(&loc, tier, sel.parent, sel.candidates_visited)?;
        }
        self.entities[entity].current_parent = sel.parent;
        let Some(new) = sel.parent else {
            if old.is_some() {
                self.metrics.faults.unreachable_entities += 1;
            }
            return Ok(());
        };
        if old == Some(new) {
            return Ok(());
        }
        if self.in_flight.contains_key(&entity) {
            self.pending.entry(entity).or_insert(kernel.now());
            return Ok(());
        }
        self.evaluate_migration(entity, kernel.now(), kernel)
    }

    fn check_selection(&mut self, loc: &Location, tier: u8, chosen: Option<NodeId>, visited: usize) -> Result<()> {
        let candidates = self.topo.tier_nodes(tier);
        if visited != candidates.len() {
            return Err(Error::Invariant(format!(
                "parent selection visited {visited} of {} candidates",
                candidates.len()
            )));
        }
        let best = candidates
            .iter()
            .map(|n| haversine(loc, &self.topo.nodes[n].location))
            .filter(|d| *d <= self.max_distance_km)
            .fold(f64::INFINITY, f64::min);
        let got = chosen
            .map(|n| haversine(loc, &self.topo.nodes[&n].location))
            .unwrap_or(f64::INFINITY);
        if got > best + 1e-9 {
            return Err(Error::Invariant(format!(
                "selected parent at {got} km while one at {best} km exists"
            )));
        }
        self.metrics.invariant_checks += 1;
        Ok(())
    }

    /// Starts moving the entity's modules towards its new gateway if some
    /// sit elsewhere on the gateway tier.
    fn evaluate_migration(&mut self, entity: usize, trigger: SimTime, kernel: &mut Kernel<Payload>) -> Result<()> {
        let Some(policy) = self.mobility_policy else { return Ok(()) };
        let e = &self.entities[entity];
        let Some(target) = e.current_parent else { return Ok(()) };
        let gateway_tier = e.tier - 1;
        let owner = Some(e.id);
        let source = self
            .instances
            .iter()
            .filter(|i| i.owner == owner)
            .filter_map(|i| match i.host {
                Host::Node(n) if n != target && self.topo.nodes[&n].tier == gateway_tier => Some(n),
                _ => None,
            })
            .min();
        let Some(source) = source else { return Ok(()) };
        let moving: Vec<usize> = (0..self.instances.len())
            .filter(|&k| self.instances[k].owner == owner && self.instances[k].host == Host::Node(source))
            .collect();
        let ram: f64 = moving.iter().map(|&k| self.instances[k].ram).sum();
        if self.topo.node(target)?.ram_free + EPS < ram {
            self.metrics.deferred += moving.len() as u64;
            return Ok(());
        }
        let modules = moving
            .iter()
            .map(|&k| {
                let name = self.instances[k].microservice.clone();
                let size_mb = self.app.module(&name).map(|m| m.state_mb).unwrap_or(0.0);
                MigratingModule { name, size_mb }
            })
            .collect();
        let decision = decide_migration(
            e.id,
            source,
            target,
            kernel.now(),
            &self.topo,
            &self.clusters,
            policy,
            modules,
        )?;
        self.topo.reserve_ram(target, ram)?;
        *self.reserved.entry(target).or_default() += ram;
        let idx = self.migrations.len();
        self.migrations.push(InFlight {
            decision,
            entity,
            instances: moving,
            source,
            trigger,
            wait_ms: kernel.now().ms() - trigger.ms(),
            energy: 0.0,
            ram,
        });
        self.in_flight.insert(entity, idx);
        if self.check {
            self.check_placement()?;
        }
        self.send_migration_hop(idx, 0, kernel)
    }

    fn send_migration_hop(&mut self, idx: usize, hop: usize, kernel: &mut Kernel<Payload>) -> Result<()> {
        let now = kernel.now();
        let Some(h) = self.migrations[idx].decision.hops.get(hop).cloned() else {
            return self.commit_migration(idx, kernel);
        };
        let mb = self.migrations[idx].decision.payload_mb();
        let (from, to) = (Host::Node(h.from), Host::Node(h.to));
        let (start, arrival) = self.transmit(from, to, &h.link, mb, now);
        let tx_s = h.link.transmission_ms(mb) / 1000.0;
        let delta =
            |p: Option<&HostProfile>| p.map(|p| (p.busy_power - p.idle_power) / p.servers.max(1) as f64).unwrap_or(0.0);
        let energy = (delta(self.profiles.get(&from)) + delta(self.profiles.get(&to))) * tx_s;
        let m = &mut self.migrations[idx];
        m.wait_ms += start.ms() - now.ms();
        m.energy += energy;
        self.metrics.record_transfer(from, to, mb, TrafficCategory::Migration);
        kernel.schedule(
            arrival,
            target_of(to),
            EventKind::MigrationStep,
            Payload::MigrationStep { migration: idx, hop },
        )?;
        Ok(())
    }

    fn commit_migration(&mut self, idx: usize, kernel: &mut Kernel<Payload>) -> Result<()> {
        let now = kernel.now();
        let (entity, source, target, ram) = {
            let m = &self.migrations[idx];
            (m.entity, m.source, m.decision.new_parent, m.ram)
        };
        self.topo.release_ram(source, ram)?;
        let left = self.reserved.get(&target).copied().unwrap_or(0.0) - ram;
        if left.abs() < EPS {
            self.reserved.remove(&target);
        } else {
            self.reserved.insert(target, left);
        }
        let moved = self.migrations[idx].instances.clone();
        for &k in &moved {
            self.instances[k].host = Host::Node(target);
        }
        if let Some(p) = self.path_of[entity] {
            for &k in &moved {
                self.path_hosts[p].insert(self.instances[k].microservice.clone(), Host::Node(target));
            }
        }
        self.refresh_sd();

        let m = &self.migrations[idx];
        let record = MigrationRecord {
            entity: m.decision.entity,
            trigger_ms: m.trigger.ms(),
            completion_ms: now.ms(),
            latency_ms: migration_latency(&m.decision),
            wait_ms: m.wait_ms,
            route: m.decision.route.clone(),
            route_kind: m.decision.route_kind,
            policy: m.decision.policy,
            modules: m.decision.modules.iter().map(|x| x.name.clone()).collect(),
            payload_mb: m.decision.payload_mb(),
            energy: m.energy,
        };
        let slack = record.completion_ms - record.trigger_ms - record.wait_ms - record.latency_ms;
        if slack.abs() > 1e-6 * record.completion_ms.max(1.0) {
            return Err(Error::Invariant(format!(
                "migration of {} took {slack} ms beyond its waits and link times",
                record.entity
            )));
        }
        self.metrics.migrations.push(record);
        self.in_flight.remove(&entity);
        if self.check {
            self.check_placement()?;
        }
        let trigger = self.pending.remove(&entity).unwrap_or(now);
        self.evaluate_migration(entity, trigger, kernel)
    }

    /// Regenerates service discovery from the per-path hosts and applies the
    /// difference entry by entry.
    fn refresh_sd(&mut self) {
        let fresh = generate_sd(&self.app, &self.path_hosts);
        let mut keys = BTreeSet::new();
        for sd in [&fresh, &self.sd] {
            for (&at, map) in &sd.entries {
                for (ms, list) in map {
                    for c in list {
                        keys.insert((at, ms.clone(), c.host));
                    }
                }
            }
        }
        for (at, ms, t) in keys {
            let (want, have) = (fresh.weight(at, &ms, t), self.sd.weight(at, &ms, t));
            let op = if want > have { SdUpdate::Add } else { SdUpdate::Remove };
            for _ in 0..want.abs_diff(have) {
                update_service_discovery(&mut self.sd, &mut self.lb, at, &ms, op, t);
            }
        }
    }

    /// Each instance lives on one host and node RAM matches what the
    /// instances and in-flight reservations hold.
    fn check_placement(&mut self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for i in &self.instances {
            let key = match i.owner {
                Some(o) => (i.microservice.clone(), Some(o), None),
                None => (i.microservice.clone(), None, Some(i.host)),
            };
            if !seen.insert(key) {
                return Err(Error::Invariant(format!(
                    "{} of {:?} is hosted twice",
                    i.microservice, i.owner
                )));
            }
        }
        let mut held: BTreeMap<NodeId, f64> = self.reserved.clone();
        for i in &self.instances {
            if let Host::Node(n) = i.host {
                *held.entry(n).or_default() += i.ram;
            }
        }
        for n in self.topo.nodes.values() {
            let h = held.get(&n.id).copied().unwrap_or(0.0);
            if (h - n.ram_used()).abs() > 1e-6 * n.ram_total.max(1.0) {
                return Err(Error::Invariant(format!(
                    "{} accounts {} GB used but instances hold {h} GB",
                    n.name,
                    n.ram_used()
                )));
            }
        }
        self.metrics.invariant_checks += 1;
        Ok(())
    }
}

impl Handler<Payload> for World {
    fn handle(&mut self, event: Event<Payload>, kernel: &mut Kernel<Payload>) -> Result<()> {
        let kind = event.kind;
        match event.payload {
            Payload::Location { entity, sample } => self.location_changed(entity, sample, kernel)?,
            Payload::Emit { entity, edge } => self.emit(entity, edge, kernel)?,
            Payload::Hop { tuple, at } => self.arrive(tuple, at, kernel)?,
            Payload::Executed { tuple, at } => self.executed(tuple, at, kernel)?,
            Payload::Cluster => self.cluster_round(kernel.now())?,
            Payload::MigrationStep { migration, hop } => self.send_migration_hop(migration, hop + 1, kernel)?,
        }
        if self.on_event.contains(&kind) {
            self.cluster_round(kernel.now())?;
        }
        Ok(())
    }
}
