//! Scenario configuration, built-in presets and the run loop.

mod builtin;
mod topogen;
mod world;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use builtin::{
    ats, ats_application, builtin, builtin_names, cdc, cdc_application, chm, chm_application, Scale, ScenarioOverrides,
};
pub use topogen::{gen_topology, GeneratedTopology, TopologyGenParams};
pub use world::World;

use crate::application::Application;
use crate::clustering::{default_tiers, ClusterTrigger, ClusterView, MembershipMode};
use crate::error::{Error, Result};
use crate::infrastructure::{build_topology, EntityId, Topology, TopologyConfig};
use crate::metrics::{MetricsReport, RunFootprint};
use crate::microservices::{PlacementOptions, PlacementPlan, PlacementPolicy};
use crate::mobility::{Location, MobilityKind, MobilityPolicy, Roi, Speed, DEFAULT_MAX_DISTANCE_KM};

/// Topology given inline or as a path to a JSON file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologyRef {
    File(PathBuf),
    Inline(TopologyConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: EntityId,
    #[serde(default)]
    pub name: String,
    pub mips: f64,
    pub uplink: f64,
    pub downlink: f64,
    pub busy_power: f64,
    pub idle_power: f64,
    pub start: Location,
    /// Heading for directional movement, degrees clockwise from north.
    #[serde(default)]
    pub heading_deg: Option<f64>,
    /// Per-device sample interval; overrides the model's.
    #[serde(default)]
    pub interval_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MobilitySource {
    Stationary,
    Model {
        kind: MobilityKind,
        speed: Speed,
        /// Milliseconds between samples. When absent it is derived from
        /// `location_events`.
        #[serde(default)]
        interval_ms: Option<f64>,
        /// Location changes across all devices over the run.
        #[serde(default)]
        location_events: Option<u64>,
        #[serde(default)]
        pause_ms: f64,
        roi: Roi,
    },
    TraceFile {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    pub enabled: bool,
    pub triggers: Vec<ClusterTrigger>,
    pub latency_filter: bool,
    pub mode: MembershipMode,
    pub tiers: Vec<u8>,
    /// MB per sibling probe.
    pub probe_mb: f64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            enabled: false,
            triggers: vec![ClusterTrigger::AtStart],
            latency_filter: false,
            mode: MembershipMode::Symmetric,
            tiers: default_tiers(),
            probe_mb: 0.001,
        }
    }
}

/// Which endpoints count as busy while a link transmits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NicEnergy {
    /// Only CPU execution makes a host busy.
    Off,
    /// The sender is busy while transmitting.
    Sender,
    /// Sender while transmitting and receiver while receiving.
    #[default]
    Both,
}

fn default_max_distance() -> f64 {
    DEFAULT_MAX_DISTANCE_KM
}

fn default_device_tier() -> u8 {
    3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub topology: TopologyRef,
    pub devices: Vec<DeviceSpec>,
    #[serde(default = "default_device_tier")]
    pub device_tier: u8,
    pub application: Application,
    pub placement_policy: PlacementPolicy,
    #[serde(default)]
    pub placement: PlacementOptions,
    #[serde(default)]
    pub mobility_policy: Option<MobilityPolicy>,
    pub mobility: MobilitySource,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_max_distance")]
    pub max_distance_km: f64,
    /// Spread periodic emissions with a seeded per-device offset.
    #[serde(default = "yes")]
    pub emission_jitter: bool,
    #[serde(default)]
    pub nic_energy: NicEnergy,
    /// Check simulation invariants during the run even in release builds.
    #[serde(default)]
    pub check_invariants: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        // relative file references resolve against the config's directory
        if let Some(dir) = path.parent() {
            if let TopologyRef::File(p) = &mut cfg.topology {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if let MobilitySource::TraceFile { path: p } = &mut cfg.mobility {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn horizon_ms(&self) -> f64 {
        self.duration_s * 1000.0
    }

    pub fn topology_config(&self) -> Result<TopologyConfig> {
        match &self.topology {
            TopologyRef::Inline(t) => Ok(t.clone()),
            TopologyRef::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Config(format!("cannot read topology {}: {e}", p.display()))
                })?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }

    /// Checks policy combinations and values that do not depend on files.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config("duration_s must be positive".into()));
        }
        if self.mobility_policy == Some(MobilityPolicy::IntraInterCluster) && !self.clustering.enabled {
            return Err(Error::Config(
                "intra-inter cluster migration requires clustering to be enabled".into(),
            ));
        }
        if self.placement_policy == PlacementPolicy::SmpClustering && !self.clustering.enabled {
            return Err(Error::Config(
                "smp-clustering placement requires clustering to be enabled".into(),
            ));
        }
        if self.mobility_policy.is_some() && self.placement.share_instances {
            return Err(Error::Config(
                "module migration needs per-device instances (placement.share_instances = false)".into(),
            ));
        }
        if self.device_tier == 0 {
            return Err(Error::Config("device_tier must be at least 1".into()));
        }
        if !(self.max_distance_km > 0.0) {
            return Err(Error::Config("max_distance_km must be positive".into()));
        }
        if !(self.clustering.probe_mb >= 0.0) {
            return Err(Error::Config("clustering.probe_mb must be non-negative".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.devices {
            if !ids.insert(d.id) {
                return Err(Error::Config(format!("duplicate device id {}", d.id)));
            }
            d.start.validate()?;
            if !(d.mips > 0.0) || !(d.uplink > 0.0) || !(d.downlink > 0.0) {
                return Err(Error::Config(format!("device {} needs positive mips and bandwidth", d.id)));
            }
            if !(d.busy_power >= d.idle_power && d.idle_power >= 0.0) {
                return Err(Error::Config(format!("device {} needs busy >= idle >= 0", d.id)));
            }
        }
        if let MobilitySource::Model {
            interval_ms,
            location_events,
            roi,
            speed,
            ..
        } = &self.mobility
        {
            roi.validate()?;
            speed.validate()?;
            let per_device = self.devices.iter().all(|d| d.interval_ms.is_some());
            if interval_ms.is_none() && location_events.is_none() && !per_device {
                return Err(Error::Config(
                    "mobility model needs interval_ms or location_events".into(),
                ));
            }
            if location_events == &Some(0) {
                return Err(Error::Config("location_events must be positive".into()));
            }
        }
        self.application.clone().normalized()?;
        Ok(())
    }
}

/// Everything one run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub placement: PlacementPlan,
    pub clusters: Vec<ClusterView>,
    pub topology: Topology,
}

/// Builds the topology, places the application and runs to the horizon.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    config.validate()?;
    let topo = build_topology(&config.topology_config()?)?;
    let mut world = World::new(config, topo)?;
    world.run()
}

/// [`run`] plus wall-clock time and peak resident memory of the process.
pub fn run_measured(config: &ScenarioConfig) -> Result<RunOutput> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        let started = std::time::Instant::now();
        let mut out = run(config)?;
        out.report.footprint = RunFootprint {
            wall_clock_s: started.elapsed().as_secs_f64(),
            peak_memory_mb: peak_memory_mb(),
        };
        Ok(out)
    }
    #[cfg(target_arch = "wasm32")]
    {
        let mut out = run(config)?;
        out.report.footprint = RunFootprint::default();
        Ok(out)
    }
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_memory_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}
