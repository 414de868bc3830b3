//! Browser bindings: run a built-in scenario, compare policies side by side,
//! and generate a block topology for drawing.

use fogsim::infrastructure::TIER_CLOUD;
use fogsim::metrics::MetricsReport;
use fogsim::microservices::PlacementPolicy;
use fogsim::mobility::{MobilityKind, MobilityPolicy, Roi};
use fogsim::scenario::{builtin, gen_topology, run, Scale, ScenarioOverrides, TopologyGenParams};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn scale(s: &str) -> Result<Scale, String> {
    match s {
        "small" => Ok(Scale::Small),
        "full" => Ok(Scale::Full),
        _ => Err(format!("unknown scale '{s}'")),
    }
}

fn mobility_kind(s: &str) -> Result<MobilityKind, String> {
    match s {
        "directional" => Ok(MobilityKind::Directional),
        "random-waypoint" => Ok(MobilityKind::RandomWaypoint),
        "random-walk" => Ok(MobilityKind::RandomWalk),
        _ => Err(format!("unknown mobility model '{s}'")),
    }
}

fn summary(r: &MetricsReport) -> Value {
    let fog: f64 = r.energy.per_tier.iter().filter(|(t, _)| **t > TIER_CLOUD).map(|(_, e)| e).sum();
    json!({
        "loops": r.loops.iter().map(|l| json!({"name": l.name, "count": l.count, "mean_ms": l.mean_ms})).collect::<Vec<_>>(),
        "energy_total": r.energy.total,
        "energy_cloud": r.energy.per_tier.get(&TIER_CLOUD).copied().unwrap_or(0.0),
        "energy_fog": fog,
        "energy_migration": r.energy.migration,
        "network_mb": r.network.total_mb,
        "migration_mb": r.network.migration_mb,
        "migrations": r.migration_summary.count,
        "migration_per_user_ms": r.migration_summary.mean_per_user_ms,
        "location_events": r.location_events,
    })
}

/// Runs a built-in scenario and returns `{summary, report, placement}`.
pub fn run_scenario_json(name: &str, scale_name: &str, seed: u64, duration_s: Option<f64>) -> Result<String, String> {
    let o = ScenarioOverrides {
        seed: Some(seed),
        duration_s,
        ..Default::default()
    };
    let cfg = builtin(name, scale(scale_name)?, &o).map_err(|e| e.to_string())?;
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let placement: Value =
        serde_json::from_str(&out.placement.to_json().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let report = serde_json::to_value(&out.report).map_err(|e| e.to_string())?;
    Ok(json!({"summary": summary(&out.report), "report": report, "placement": placement}).to_string())
}

/// Runs one scenario once per policy. Placement policy names apply to chm and
/// cdc, migration policy names to ats (with `kind` as the mobility model).
pub fn compare_policies_json(
    name: &str,
    scale_name: &str,
    seed: u64,
    duration_s: Option<f64>,
    kind: Option<String>,
) -> Result<String, String> {
    let kind = kind.as_deref().map(mobility_kind).transpose()?;
    let mut rows = Vec::new();
    let policies: Vec<(&str, ScenarioOverrides)> = if name == "ats" {
        [
            ("cloud-centric", MobilityPolicy::CloudCentric),
            ("intra-inter-cluster", MobilityPolicy::IntraInterCluster),
            ("non-hierarchical", MobilityPolicy::NonHierarchical),
        ]
        .into_iter()
        .map(|(label, p)| (label, ScenarioOverrides { mobility_policy: Some(p), ..Default::default() }))
        .collect()
    } else {
        [
            ("edgeward", PlacementPolicy::Edgeward),
            ("smp-no-clustering", PlacementPolicy::SmpNoClustering),
            ("smp-clustering", PlacementPolicy::SmpClustering),
        ]
        .into_iter()
        .map(|(label, p)| (label, ScenarioOverrides { placement_policy: Some(p), ..Default::default() }))
        .collect()
    };
    for (label, mut o) in policies {
        o.seed = Some(seed);
        o.duration_s = duration_s;
        o.mobility_kind = kind;
        let cfg = builtin(name, scale(scale_name)?, &o).map_err(|e| e.to_string())?;
        let out = run(&cfg).map_err(|e| e.to_string())?;
        rows.push(json!({"policy": label, "summary": summary(&out.report)}));
    }
    Ok(Value::Array(rows).to_string())
}

/// Block topology as `{nodes: [{id, tier, parent, lat, lon, block}], warnings}`.
pub fn generate_topology_json(blocks: usize, gateways_per_block: usize, seed: u64) -> Result<String, String> {
    if blocks == 0 {
        return Err("at least one block is needed".into());
    }
    let params = TopologyGenParams::ats(blocks, blocks * gateways_per_block, Roi::MELBOURNE_CBD, seed);
    let g = gen_topology(&params).map_err(|e| e.to_string())?;
    let nodes: Vec<Value> = g
        .config
        .nodes
        .iter()
        .map(|n| {
            json!({
                "id": n.id.0,
                "tier": n.tier,
                "parent": n.parent.map(|p| p.0),
                "lat": n.location.latitude,
                "lon": n.location.longitude,
                "block": n.location.block,
            })
        })
        .collect();
    Ok(json!({"nodes": nodes, "warnings": g.warnings}).to_string())
}

#[wasm_bindgen(js_name = runScenario)]
pub fn run_scenario(name: &str, scale: &str, seed: u32, duration_s: Option<f64>) -> Result<String, JsError> {
    run_scenario_json(name, scale, seed as u64, duration_s).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = comparePolicies)]
pub fn compare_policies(
    name: &str,
    scale: &str,
    seed: u32,
    duration_s: Option<f64>,
    kind: Option<String>,
) -> Result<String, JsError> {
    compare_policies_json(name, scale, seed as u64, duration_s, kind).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = generateTopology)]
pub fn generate_topology(blocks: u32, gateways_per_block: u32, seed: u32) -> Result<String, JsError> {
    generate_topology_json(blocks as usize, gateways_per_block as usize, seed as u64).map_err(|e| JsError::new(&e))
}
