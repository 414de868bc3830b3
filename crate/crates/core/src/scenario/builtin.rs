//! Preset scenarios: audio translation (ats), cardiovascular health
//! monitoring (chm) and crowd-sensed data collection (cdc).

use serde::{Deserialize, Serialize};

use super::topogen::{draw, gen_topology, TierHardware, TopologyGenParams};
use super::{ClusteringConfig, DeviceSpec, MobilitySource, NicEnergy, ScenarioConfig, TopologyRef};
use crate::application::{AppEdge, AppLoop, AppModule, Application, Direction, Emission, Selectivity};
use crate::clustering::{default_tiers, ClusterTrigger, MembershipMode};
use crate::engine::RngStream;
use crate::error::{Error, Result};
use crate::infrastructure::{EntityId, MeshConfig, TopologyConfig};
use crate::microservices::{Admission, PlacementOptions, PlacementPolicy};
use crate::mobility::{MobilityKind, MobilityPolicy, Roi, Speed, DEFAULT_MAX_DISTANCE_KM};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Desk-sized: three blocks, ten gateways, five devices where the
    /// scenario has a block layout.
    #[default]
    Small,
    /// The published sizes.
    Full,
}

/// Knobs the command line may change on a preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOverrides {
    pub placement_policy: Option<PlacementPolicy>,
    pub mobility_policy: Option<MobilityPolicy>,
    pub mobility_kind: Option<MobilityKind>,
    pub seed: Option<u64>,
    pub users: Option<usize>,
    pub duration_s: Option<f64>,
}

pub fn builtin_names() -> [&'static str; 3] {
    ["ats", "chm", "cdc"]
}

pub fn builtin(name: &str, scale: Scale, overrides: &ScenarioOverrides) -> Result<ScenarioConfig> {
    match name {
        "ats" => ats(scale, overrides),
        "chm" => chm(scale, overrides),
        "cdc" => cdc(scale, overrides),
        other => Err(Error::Config(format!(
            "unknown scenario '{other}', expected one of {}",
            builtin_names().join(", ")
        ))),
    }
}

fn edge(source: &str, dest: &str, cpu: f64, mb: f64, tuple: &str, direction: Direction, emission: Emission) -> AppEdge {
    AppEdge {
        source: source.into(),
        dest: dest.into(),
        cpu_length: cpu,
        nw_length: mb,
        tuple_type: tuple.into(),
        direction,
        emission,
    }
}

fn sel(module: &str, input: &str, output: &str) -> Selectivity {
    Selectivity {
        module: module.into(),
        input_type: input.into(),
        output_type: output.into(),
        ratio: 1.0,
    }
}

fn chain(name: &str, modules: &[&str]) -> AppLoop {
    AppLoop {
        name: name.into(),
        modules: modules.iter().map(|m| m.to_string()).collect(),
    }
}

/// Client -> Processing -> Storage, with results sent back to the client.
pub fn ats_application() -> Application {
    use Direction::{Down, Up};
    let periodic = Emission::Periodic { interval_ms: 5000.0 };
    Application {
        name: "audio-translation".into(),
        modules: vec![
            AppModule::client("Client", 0.1),
            AppModule::new("Processing", 4.0).with_state(2.5),
            AppModule::new("Storage", 4.0).with_state(1.0),
        ],
        edges: vec![
            edge("Client", "Processing", 2500.0, 2.5, "AUDIO", Up, periodic),
            edge("Processing", "Storage", 1000.0, 1.0, "ANALYSIS", Up, Emission::Reactive),
            edge("Processing", "Client", 500.0, 1.5, "TRANSLATION", Down, Emission::Reactive),
        ],
        selectivities: vec![
            sel("Processing", "AUDIO", "ANALYSIS"),
            sel("Processing", "AUDIO", "TRANSLATION"),
        ],
        loops: vec![chain("translation", &["Client", "Processing", "Client"])],
    }
}

/// Client -> Preprocessing -> {Emergency Diagnosis, Prediction} -> Client.
pub fn chm_application() -> Application {
    use Direction::{Down, Up};
    let periodic = Emission::Periodic { interval_ms: 60_000.0 };
    Application {
        name: "cardiovascular-monitoring".into(),
        modules: vec![
            AppModule::client("Client", 0.1),
            AppModule::new("Preprocessing", 0.5),
            AppModule::new("EmergencyDiagnosis", 0.5),
            AppModule::new("Prediction", 2.0),
        ],
        edges: vec![
            edge("Client", "Preprocessing", 2000.0, 0.5, "ECG", Up, periodic),
            edge("Preprocessing", "EmergencyDiagnosis", 2500.0, 0.5, "FILTERED", Up, Emission::Reactive),
            edge("Preprocessing", "Prediction", 4000.0, 0.5, "HISTORY", Up, Emission::Reactive),
            edge("EmergencyDiagnosis", "Client", 1000.0, 0.5, "WARNING", Down, Emission::Reactive),
            edge("Prediction", "Client", 1000.0, 0.5, "REPORT", Down, Emission::Reactive),
        ],
        selectivities: vec![
            sel("Preprocessing", "ECG", "FILTERED"),
            sel("Preprocessing", "ECG", "HISTORY"),
            sel("EmergencyDiagnosis", "FILTERED", "WARNING"),
            sel("Prediction", "HISTORY", "REPORT"),
        ],
        loops: vec![chain(
            "emergency",
            &["Client", "Preprocessing", "EmergencyDiagnosis", "Client"],
        )],
    }
}

/// Vehicle -> Nginx -> Processing -> Database.
pub fn cdc_application() -> Application {
    use Direction::{Down, Up};
    let periodic = Emission::Periodic { interval_ms: 200.0 };
    Application {
        name: "crowd-sensed-collection".into(),
        modules: vec![
            AppModule::client("Vehicle", 0.1),
            AppModule::new("Nginx", 0.5).with_state(0.5),
            AppModule::new("Processing", 1.0).with_state(1.0),
            AppModule::new("Database", 9.0),
        ],
        edges: vec![
            edge("Vehicle", "Nginx", 100.0, 0.05, "SENSED", Up, periodic),
            edge("Nginx", "Processing", 800.0, 0.05, "ROUTED", Up, Emission::Reactive),
            edge("Processing", "Database", 300.0, 0.02, "FEATURES", Up, Emission::Reactive),
            edge("Processing", "Vehicle", 50.0, 0.01, "ACK", Down, Emission::Reactive),
        ],
        selectivities: vec![
            sel("Nginx", "SENSED", "ROUTED"),
            sel("Processing", "ROUTED", "FEATURES"),
            sel("Processing", "ROUTED", "ACK"),
        ],
        loops: vec![chain("collection", &["Vehicle", "Nginx", "Processing", "Database"])],
    }
}

/// A compact patch of the Melbourne CBD used by the small presets.
pub const SMALL_ROI: Roi = Roi {
    min_lat: -37.8200,
    max_lat: -37.8110,
    min_lon: 144.9560,
    max_lon: 144.9680,
};

struct DeviceHardware {
    mips: [f64; 2],
    uplink: f64,
    downlink: f64,
    busy_power: [f64; 2],
    idle_power: [f64; 2],
}

const SMARTPHONE_ATS: DeviceHardware = DeviceHardware {
    mips: [500.0, 500.0],
    uplink: 100.0,
    downlink: 200.0,
    busy_power: [60.0, 60.0],
    idle_power: [35.0, 35.0],
};

const SMARTPHONE_CHM: DeviceHardware = DeviceHardware {
    mips: [500.0, 500.0],
    uplink: 100.0,
    downlink: 200.0,
    busy_power: [87.53, 87.53],
    idle_power: [82.44, 82.44],
};

const VEHICLE_CDC: DeviceHardware = DeviceHardware {
    mips: [500.0, 1000.0],
    uplink: 100.0,
    downlink: 200.0,
    busy_power: [50.0, 100.0],
    idle_power: [20.0, 30.0],
};

fn devices(n: usize, roi: &Roi, hw: &DeviceHardware, seed: u64, prefix: &str) -> Vec<DeviceSpec> {
    let mut rng = RngStream::new(seed, "devices");
    (0..n)
        .map(|i| DeviceSpec {
            id: EntityId(i as u32),
            name: format!("{prefix}-{i}"),
            mips: draw(&mut rng, hw.mips),
            uplink: hw.uplink,
            downlink: hw.downlink,
            busy_power: draw(&mut rng, hw.busy_power),
            idle_power: draw(&mut rng, hw.idle_power),
            start: roi.sample(&mut rng),
            heading_deg: None,
            interval_ms: None,
        })
        .collect()
}

fn generated(params: &TopologyGenParams) -> Result<TopologyConfig> {
    Ok(gen_topology(params)?.config)
}

/// Audio translation with module migration on handover.
///
/// Defaults: intra/inter-cluster migration, directional movement, Edgeward
/// placement with per-user instances. The mesh is switched on only for the
/// non-hierarchical policy.
pub fn ats(scale: Scale, o: &ScenarioOverrides) -> Result<ScenarioConfig> {
    let seed = o.seed.unwrap_or(DEFAULT_SEED);
    let (blocks, gateways, roi, users) = match scale {
        Scale::Small => (3, 10, SMALL_ROI, 5),
        Scale::Full => (12, 118, Roi::MELBOURNE_CBD, 1),
    };
    let users = o.users.unwrap_or(users);
    let policy = o.mobility_policy.unwrap_or(MobilityPolicy::IntraInterCluster);
    let kind = o.mobility_kind.unwrap_or(MobilityKind::Directional);
    let mut params = TopologyGenParams::ats(blocks, gateways, roi, seed);
    params.mesh = MeshConfig {
        enabled: policy == MobilityPolicy::NonHierarchical,
        ..MeshConfig::default()
    };
    let speed = match kind {
        MobilityKind::Directional => Speed::Fixed(10.0),
        _ => Speed::Range { min: 5.0, max: 15.0 },
    };
    Ok(ScenarioConfig {
        name: "ats".into(),
        topology: TopologyRef::Inline(generated(&params)?),
        devices: devices(users, &roi, &SMARTPHONE_ATS, seed, "phone"),
        device_tier: 3,
        application: ats_application(),
        placement_policy: o.placement_policy.unwrap_or(PlacementPolicy::Edgeward),
        placement: PlacementOptions {
            admission: Admission::Ram,
            share_instances: false,
        },
        mobility_policy: Some(policy),
        mobility: MobilitySource::Model {
            kind,
            speed,
            interval_ms: None,
            location_events: Some(140),
            pause_ms: 0.0,
            roi,
        },
        clustering: ClusteringConfig {
            enabled: true,
            triggers: vec![ClusterTrigger::AtStart],
            latency_filter: false,
            mode: MembershipMode::Symmetric,
            tiers: default_tiers(),
            probe_mb: 0.001,
        },
        duration_s: o.duration_s.unwrap_or(500.0),
        seed,
        output: None,
        max_distance_km: DEFAULT_MAX_DISTANCE_KM,
        emission_jitter: true,
        nic_energy: NicEnergy::default(),
        check_invariants: false,
    })
}

/// Cardiovascular monitoring: 25 stationary phones under six gateways and
/// one proxy. Clustering is enabled only for the SMP-with-clustering policy.
///
/// The small scale keeps the topology and shortens the horizon.
pub fn chm(scale: Scale, o: &ScenarioOverrides) -> Result<ScenarioConfig> {
    let seed = o.seed.unwrap_or(DEFAULT_SEED);
    let policy = o.placement_policy.unwrap_or(PlacementPolicy::SmpClustering);
    let roi = SMALL_ROI;
    let fog = TierHardware {
        mips: [2500.0, 3000.0],
        ram: 8.0,
        uplink: 50.0,
        downlink: 100.0,
        busy_power: [107.339, 107.339],
        idle_power: [83.433, 83.433],
        comm_range_km: 2.0,
    };
    let params = TopologyGenParams {
        blocks: 1,
        gateways: 6,
        roi,
        seed,
        cloud: TierHardware {
            ram: 16.0,
            uplink: 100.0,
            downlink: 100.0,
            ..fog.clone()
        },
        cloud_vms: 16,
        proxy: TierHardware {
            ram: 16.0,
            uplink: 10.0,
            downlink: 20.0,
            ..fog.clone()
        },
        gateway: fog,
        tier_latency: Default::default(),
        mesh: MeshConfig::default(),
    };
    let duration = match scale {
        Scale::Small => 2000.0,
        Scale::Full => 20000.0,
    };
    Ok(ScenarioConfig {
        name: "chm".into(),
        topology: TopologyRef::Inline(generated(&params)?),
        devices: devices(o.users.unwrap_or(25), &roi, &SMARTPHONE_CHM, seed, "phone"),
        device_tier: 3,
        application: chm_application(),
        placement_policy: policy,
        placement: PlacementOptions {
            admission: Admission::Ram,
            share_instances: false,
        },
        mobility_policy: None,
        mobility: MobilitySource::Stationary,
        clustering: ClusteringConfig {
            enabled: policy == PlacementPolicy::SmpClustering,
            ..ClusteringConfig::default()
        },
        duration_s: o.duration_s.unwrap_or(duration),
        seed,
        output: None,
        max_distance_km: DEFAULT_MAX_DISTANCE_KM,
        emission_jitter: true,
        nic_energy: NicEnergy::default(),
        check_invariants: false,
    })
}

/// Crowd-sensed data collection from vehicles moving by random waypoint,
/// each with its own sampling interval drawn from 10-50 s.
pub fn cdc(scale: Scale, o: &ScenarioOverrides) -> Result<ScenarioConfig> {
    let seed = o.seed.unwrap_or(DEFAULT_SEED);
    // 30/30/20/20 split of vehicles, gateways, proxies and cloud VMs
    let (blocks, gateways, vms, vehicles, roi) = match scale {
        Scale::Small => (3, 10, 4, 5, SMALL_ROI),
        Scale::Full => (20, 30, 20, 30, Roi::MELBOURNE_CBD),
    };
    let params = TopologyGenParams {
        blocks,
        gateways,
        roi,
        seed,
        cloud: TierHardware {
            mips: [4000.0, 5000.0],
            ram: 16.0,
            uplink: 100.0,
            downlink: 150.0,
            busy_power: [1500.0, 2000.0],
            idle_power: [700.0, 900.0],
            comm_range_km: 1.0,
        },
        cloud_vms: vms,
        proxy: TierHardware {
            mips: [2500.0, 3000.0],
            ram: 8.0,
            uplink: 10.0,
            downlink: 50.0,
            busy_power: [400.0, 600.0],
            idle_power: [150.0, 200.0],
            comm_range_km: 1.0,
        },
        gateway: TierHardware {
            mips: [2000.0, 2500.0],
            ram: 4.0,
            uplink: 50.0,
            downlink: 100.0,
            busy_power: [200.0, 300.0],
            idle_power: [80.0, 100.0],
            comm_range_km: 0.5,
        },
        tier_latency: Default::default(),
        mesh: MeshConfig::default(),
    };
    let mut fleet = devices(o.users.unwrap_or(vehicles), &roi, &VEHICLE_CDC, seed, "vehicle");
    let mut rng = RngStream::new(seed, "cdc/interval");
    for v in &mut fleet {
        v.interval_ms = Some(rng.uniform(10_000.0, 50_000.0));
    }
    Ok(ScenarioConfig {
        name: "cdc".into(),
        topology: TopologyRef::Inline(generated(&params)?),
        devices: fleet,
        device_tier: 3,
        application: cdc_application(),
        placement_policy: o.placement_policy.unwrap_or(PlacementPolicy::SmpClustering),
        placement: PlacementOptions {
            admission: Admission::Ram,
            share_instances: false,
        },
        mobility_policy: Some(o.mobility_policy.unwrap_or(MobilityPolicy::IntraInterCluster)),
        mobility: MobilitySource::Model {
            kind: o.mobility_kind.unwrap_or(MobilityKind::RandomWaypoint),
            speed: Speed::Range { min: 8.0, max: 15.0 },
            interval_ms: None,
            location_events: None,
            pause_ms: 0.0,
            roi,
        },
        clustering: ClusteringConfig {
            enabled: true,
            ..ClusteringConfig::default()
        },
        duration_s: o.duration_s.unwrap_or(500.0),
        seed,
        output: None,
        max_distance_km: DEFAULT_MAX_DISTANCE_KM,
        emission_jitter: true,
        nic_energy: NicEnergy::default(),
        check_invariants: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values_are_echoed() {
        let a = ats(Scale::Small, &ScenarioOverrides::default()).unwrap();
        let client_cpu = a.application.edges.iter().find(|e| e.dest == "Client").unwrap().cpu_length;
        assert_eq!(client_cpu, 500.0);
        let c = chm(Scale::Full, &ScenarioOverrides::default()).unwrap();
        let ed = c
            .application
            .edges
            .iter()
            .find(|e| e.dest == "EmergencyDiagnosis")
            .unwrap();
        assert_eq!(ed.cpu_length, 2500.0);
        assert_eq!(c.devices.len(), 25);
        assert_eq!(c.duration_s, 20000.0);
    }

    #[test]
    fn cdc_samples_stay_in_range() {
        for seed in 0..5 {
            let o = ScenarioOverrides {
                seed: Some(seed),
                ..Default::default()
            };
            let c = cdc(Scale::Full, &o).unwrap();
            let TopologyRef::Inline(t) = &c.topology else { panic!() };
            for n in &t.nodes {
                let (lo, hi) = match n.tier {
                    0 => (4000.0 * 20.0, 5000.0 * 20.0),
                    1 => (2500.0, 3000.0),
                    _ => (2000.0, 2500.0),
                };
                assert!(n.mips >= lo && n.mips <= hi, "{} {}", n.tier, n.mips);
            }
            for v in &c.devices {
                assert!((500.0..=1000.0).contains(&v.mips));
                assert!((10_000.0..=50_000.0).contains(&v.interval_ms.unwrap()));
            }
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(builtin("xyz", Scale::Small, &ScenarioOverrides::default()).is_err());
    }
}
