//! Control-loop delay, energy, network usage and migration accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::{Error, Result};
use crate::infrastructure::{EntityId, Host, NodeId};
use crate::mobility::{MobilityPolicy, RouteKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficCategory {
    App,
    Migration,
    Clustering,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub name: String,
    pub count: u64,
    pub mean_ms: f64,
    pub max_ms: f64,
    #[serde(skip)]
    sum_ms: f64,
}

impl LoopStats {
    pub fn new(name: &str) -> Self {
        LoopStats {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn record(&mut self, delay_ms: f64) {
        self.count += 1;
        self.sum_ms += delay_ms;
        self.mean_ms = self.sum_ms / self.count as f64;
        self.max_ms = self.max_ms.max(delay_ms);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HostEnergy {
    pub name: String,
    pub tier: u8,
    pub busy_s: f64,
    pub energy: f64,
    pub idle_power: f64,
    pub busy_power: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Infrastructure nodes by id.
    pub nodes: BTreeMap<NodeId, HostEnergy>,
    pub per_tier: BTreeMap<u8, f64>,
    /// Sum over infrastructure nodes.
    pub total: f64,
    /// Mobile devices, reported apart from the infrastructure total.
    pub devices: f64,
    /// Transmission energy attributed to module migration.
    pub migration: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkUsage {
    pub total_mb: f64,
    pub app_mb: f64,
    pub migration_mb: f64,
    pub clustering_mb: f64,
    pub hops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub entity: EntityId,
    pub trigger_ms: f64,
    pub completion_ms: f64,
    /// Unloaded transfer time over the route.
    pub latency_ms: f64,
    /// Time spent queued behind other transfers.
    pub wait_ms: f64,
    pub route: Vec<NodeId>,
    pub route_kind: RouteKind,
    pub policy: MobilityPolicy,
    pub modules: Vec<String>,
    pub payload_mb: f64,
    pub energy: f64,
}

impl MigrationRecord {
    pub fn duration_ms(&self) -> f64 {
        self.completion_ms - self.trigger_ms
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MigrationSummary {
    pub count: usize,
    /// Mean trigger-to-commit time per migration.
    pub mean_ms: f64,
    /// Summed migration time divided by the number of mobile users.
    pub mean_per_user_ms: f64,
    pub total_ms: f64,
    pub deferred: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Faults {
    pub routing: u64,
    pub service_unavailable: u64,
    pub unreachable_entities: u64,
    pub dropped_emissions: u64,
}

/// Wall-clock and memory of the process that produced a report. Kept out of
/// the report JSON so reports stay reproducible byte for byte.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFootprint {
    pub wall_clock_s: f64,
    pub peak_memory_mb: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub horizon_ms: f64,
    pub loops: Vec<LoopStats>,
    pub energy: EnergyReport,
    pub network: NetworkUsage,
    pub migration_summary: MigrationSummary,
    pub migrations: Vec<MigrationRecord>,
    pub faults: Faults,
    pub location_events: u64,
    pub clustering_rounds: u64,
    pub events_dispatched: u64,
    pub invariant_checks: u64,
    /// Hosts whose offered work exceeded what they could execute in the run.
    pub saturated: Vec<String>,
    #[serde(skip)]
    pub footprint: RunFootprint,
}

impl MetricsReport {
    pub fn loop_stats(&self, name: &str) -> Option<&LoopStats> {
        self.loops.iter().find(|l| l.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One `metric,value` row per scalar.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"])?;
        let mut row = |k: String, v: f64| w.write_record([k, format!("{v}")]);
        row("horizon_ms".into(), self.horizon_ms)?;
        for l in &self.loops {
            row(format!("loop.{}.count", l.name), l.count as f64)?;
            row(format!("loop.{}.mean_ms", l.name), l.mean_ms)?;
            row(format!("loop.{}.max_ms", l.name), l.max_ms)?;
        }
        row("energy.total".into(), self.energy.total)?;
        row("energy.devices".into(), self.energy.devices)?;
        row("energy.migration".into(), self.energy.migration)?;
        for (tier, e) in &self.energy.per_tier {
            row(format!("energy.tier{tier}"), *e)?;
        }
        for (id, e) in &self.energy.nodes {
            row(format!("energy.node.{id}"), e.energy)?;
        }
        row("network.total_mb".into(), self.network.total_mb)?;
        row("network.app_mb".into(), self.network.app_mb)?;
        row("network.migration_mb".into(), self.network.migration_mb)?;
        row("network.clustering_mb".into(), self.network.clustering_mb)?;
        row("network.hops".into(), self.network.hops as f64)?;
        let m = &self.migration_summary;
        row("migration.count".into(), m.count as f64)?;
        row("migration.mean_ms".into(), m.mean_ms)?;
        row("migration.mean_per_user_ms".into(), m.mean_per_user_ms)?;
        row("migration.total_ms".into(), m.total_ms)?;
        row("migration.deferred".into(), m.deferred as f64)?;
        row("faults.routing".into(), self.faults.routing as f64)?;
        row("faults.service_unavailable".into(), self.faults.service_unavailable as f64)?;
        row("faults.unreachable_entities".into(), self.faults.unreachable_entities as f64)?;
        row("faults.dropped_emissions".into(), self.faults.dropped_emissions as f64)?;
        row("location_events".into(), self.location_events as f64)?;
        row("clustering_rounds".into(), self.clustering_rounds as f64)?;
        row("events_dispatched".into(), self.events_dispatched as f64)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Energy drawn over `[from, to]` (ms) at the given busy fraction.
pub fn energy_units(idle_power: f64, busy_power: f64, from: SimTime, to: SimTime, utilization: f64) -> f64 {
    (to.ms() - from.ms()) / 1000.0 * (idle_power + (busy_power - idle_power) * utilization)
}

/// Total length of the union of `intervals`, clipped to `[0, end]`.
pub fn union_length(intervals: &mut [(f64, f64)], end: f64) -> f64 {
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for &(s, e) in intervals.iter() {
        let (s, e) = (s.max(0.0), e.min(end));
        if e <= s {
            continue;
        }
        match cur {
            Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                cur = Some((s, e));
            }
            None => cur = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = cur {
        total += ce - cs;
    }
    total
}

#[derive(Clone, Debug)]
pub struct HostProfile {
    pub name: String,
    pub tier: u8,
    pub idle_power: f64,
    pub busy_power: f64,
    /// Total over all servers.
    pub mips: f64,
    pub servers: u32,
}

/// Accumulates measurements during a run.
#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub loops: Vec<LoopStats>,
    busy: BTreeMap<(Host, u32), Vec<(f64, f64)>>,
    offered_mi: BTreeMap<Host, f64>,
    accrued: BTreeMap<Host, f64>,
    pub network: NetworkUsage,
    link_mb: BTreeMap<(Host, Host), f64>,
    pub migrations: Vec<MigrationRecord>,
    pub deferred: u64,
    pub faults: Faults,
    pub location_events: u64,
    pub clustering_rounds: u64,
    pub invariant_checks: u64,
}

impl Metrics {
    pub fn new(loop_names: &[String]) -> Self {
        Metrics {
            loops: loop_names.iter().map(|n| LoopStats::new(n)).collect(),
            ..Default::default()
        }
    }

    pub fn record_loop(&mut self, loop_idx: usize, emit: SimTime, complete: SimTime) {
        debug_assert!(complete >= emit);
        self.loops[loop_idx].record(complete.ms() - emit.ms());
    }

    /// Marks `host` busy over `[from, to]` ms (CPU or NIC activity) on its
    /// first server.
    pub fn mark_busy(&mut self, host: Host, from: SimTime, to: SimTime) {
        self.mark_server_busy(host, 0, from, to);
    }

    pub fn mark_server_busy(&mut self, host: Host, server: u32, from: SimTime, to: SimTime) {
        if to > from {
            self.busy.entry((host, server)).or_default().push((from.ms(), to.ms()));
        }
    }

    pub fn offer(&mut self, host: Host, mi: f64) {
        *self.offered_mi.entry(host).or_default() += mi;
    }

    pub fn accrue_energy(&mut self, host: Host, profile: &HostProfile, from: SimTime, to: SimTime, utilization: f64) {
        *self.accrued.entry(host).or_default() +=
            energy_units(profile.idle_power, profile.busy_power, from, to, utilization.clamp(0.0, 1.0));
    }

    /// Counts `mb` crossing one hop. Same-host deliveries are not traffic.
    pub fn record_transfer(&mut self, from: Host, to: Host, mb: f64, category: TrafficCategory) {
        if from == to || mb <= 0.0 {
            return;
        }
        self.network.total_mb += mb;
        self.network.hops += 1;
        match category {
            TrafficCategory::App => self.network.app_mb += mb,
            TrafficCategory::Migration => self.network.migration_mb += mb,
            TrafficCategory::Clustering => self.network.clustering_mb += mb,
        }
        *self.link_mb.entry((from, to)).or_default() += mb;
    }

    /// Closes every energy interval at `t_end` and builds the report.
    pub fn finalize(
        mut self,
        t_end: SimTime,
        hosts: &BTreeMap<Host, HostProfile>,
        scenario: &str,
        seed: u64,
        users: usize,
        events_dispatched: u64,
    ) -> Result<MetricsReport> {
        let horizon = t_end.ms();
        let mut energy = EnergyReport::default();
        let mut saturated = Vec::new();
        for (&host, profile) in hosts {
            let servers = profile.servers.max(1);
            let busy_ms = (0..servers)
                .map(|s| union_length(&mut self.busy.remove(&(host, s)).unwrap_or_default(), horizon))
                .sum::<f64>()
                / servers as f64;
            let util = if horizon > 0.0 { busy_ms / horizon } else { 0.0 };
            self.accrue_energy(host, profile, SimTime::ZERO, t_end, util);
            let e = self.accrued.get(&host).copied().unwrap_or(0.0);
            let (lo, hi) = (profile.idle_power * horizon / 1000.0, profile.busy_power * horizon / 1000.0);
            if e < lo - 1e-6 * lo.abs().max(1.0) || e > hi + 1e-6 * hi.abs().max(1.0) {
                return Err(Error::Invariant(format!(
                    "energy of {} is {e}, outside [{lo}, {hi}]",
                    profile.name
                )));
            }
            self.invariant_checks += 1;
            if self.offered_mi.get(&host).copied().unwrap_or(0.0) > profile.mips * horizon / 1000.0 {
                saturated.push(profile.name.clone());
            }
            match host {
                Host::Node(id) => {
                    energy.total += e;
                    *energy.per_tier.entry(profile.tier).or_default() += e;
                    energy.nodes.insert(
                        id,
                        HostEnergy {
                            name: profile.name.clone(),
                            tier: profile.tier,
                            busy_s: busy_ms / 1000.0,
                            energy: e,
                            idle_power: profile.idle_power,
                            busy_power: profile.busy_power,
                        },
                    );
                }
                Host::Device(_) => energy.devices += e,
            }
        }
        energy.migration = self.migrations.iter().fold(0.0, |a, m| a + m.energy);

        let links_total: f64 = self.link_mb.values().fold(0.0, |a, v| a + v);
        let buckets = self.network.app_mb + self.network.migration_mb + self.network.clustering_mb;
        let tol = 1e-6 * self.network.total_mb.max(1.0);
        if (links_total - self.network.total_mb).abs() > tol || (buckets - self.network.total_mb).abs() > tol {
            return Err(Error::Invariant("network usage is not additive".into()));
        }

        self.migrations.sort_by(|a, b| {
            a.trigger_ms
                .total_cmp(&b.trigger_ms)
                .then(a.entity.cmp(&b.entity))
                .then(a.completion_ms.total_cmp(&b.completion_ms))
        });
        let total_ms: f64 = self.migrations.iter().fold(0.0, |a, m| a + m.duration_ms());
        let count = self.migrations.len();
        let migration_summary = MigrationSummary {
            count,
            mean_ms: if count > 0 { total_ms / count as f64 } else { 0.0 },
            mean_per_user_ms: if users > 0 { total_ms / users as f64 } else { 0.0 },
            total_ms,
            deferred: self.deferred,
        };
        Ok(MetricsReport {
            scenario: scenario.to_string(),
            seed,
            horizon_ms: horizon,
            loops: self.loops,
            energy,
            network: self.network,
            migration_summary,
            migrations: self.migrations,
            faults: self.faults,
            location_events: self.location_events,
            clustering_rounds: self.clustering_rounds,
            events_dispatched,
            invariant_checks: self.invariant_checks,
            saturated,
            footprint: RunFootprint::default(),
        })
    }
}
