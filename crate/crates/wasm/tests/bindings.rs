use fogsim_wasm::{compare_policies_json, generate_topology_json, run_scenario_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn run_scenario_returns_summary_report_and_placement() {
    let v = parse(&run_scenario_json("ats", "small", 7, Some(100.0)).unwrap());
    assert_eq!(v["report"]["seed"], 7);
    assert_eq!(v["report"]["horizon_ms"], 100000.0);
    assert!(v["summary"]["energy_total"].as_f64().unwrap() > 0.0);
    assert!(v["placement"]["hosts"].is_object());
    assert_eq!(run_scenario_json("ats", "small", 7, Some(100.0)).unwrap(), run_scenario_json("ats", "small", 7, Some(100.0)).unwrap());
}

#[test]
fn compare_policies_covers_three_policies() {
    let chm = parse(&compare_policies_json("chm", "small", 1, Some(200.0), None).unwrap());
    let labels: Vec<&str> = chm.as_array().unwrap().iter().map(|r| r["policy"].as_str().unwrap()).collect();
    assert_eq!(labels, ["edgeward", "smp-no-clustering", "smp-clustering"]);
    let ats = parse(&compare_policies_json("ats", "small", 1, Some(200.0), Some("random-waypoint".into())).unwrap());
    assert_eq!(ats[0]["policy"], "cloud-centric");
    assert_eq!(ats.as_array().unwrap().len(), 3);
}

#[test]
fn generate_topology_has_one_cloud_and_requested_gateways() {
    let v = parse(&generate_topology_json(3, 4, 2).unwrap());
    let nodes = v["nodes"].as_array().unwrap();
    let count = |t: u64| nodes.iter().filter(|n| n["tier"] == t).count();
    assert_eq!((count(0), count(1), count(2)), (1, 3, 12));
    assert!(nodes.iter().filter(|n| n["tier"] != 0).all(|n| n["parent"].is_u64()));
}

#[test]
fn bad_inputs_are_errors() {
    assert!(run_scenario_json("nope", "small", 0, None).is_err());
    assert!(run_scenario_json("ats", "huge", 0, None).is_err());
    assert!(compare_policies_json("ats", "small", 0, None, Some("teleport".into())).is_err());
    assert!(generate_topology_json(0, 1, 0).is_err());
    assert_eq!(parse(&generate_topology_json(1, 0, 0).unwrap())["warnings"].as_array().unwrap().len(), 1);
}
