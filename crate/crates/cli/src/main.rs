use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fogsim::infrastructure::EntityId;
use fogsim::metrics::MetricsReport;
use fogsim::microservices::PlacementPolicy;
use fogsim::mobility::{
    generate_directional_trace, generate_random_trace, write_locations, write_traces, Location, MobilityKind,
    MobilityModelParams, MobilityPolicy, Roi, Speed,
};
use fogsim::scenario::{builtin, gen_topology, run_measured, Scale, ScenarioConfig, ScenarioOverrides, TopologyGenParams};

#[derive(Parser)]
#[command(name = "fogsim", version, about = "Deterministic Edge/Fog/Cloud simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its reports.
    Run(RunArgs),
    /// Generate a mobility trace CSV.
    GenTrace(TraceArgs),
    /// Generate a block topology as JSON plus a node-location CSV.
    GenTopology(TopologyArgs),
    /// Run a scenario over several policies and seeds.
    Sweep(SweepArgs),
    /// Print report CSVs side by side as a table.
    Report(ReportArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario config file (JSON).
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Built-in scenario: ats, chm or cdc.
    #[arg(long)]
    scenario: Option<String>,
    /// Preset size for built-in scenarios: small or full.
    #[arg(long, default_value = "small", value_parser = parse_scale)]
    scale: Scale,
    /// Overrides the config seed.
    #[arg(long, env = "FOGSIM_SEED")]
    seed: Option<u64>,
    /// Number of mobile users (built-in scenarios).
    #[arg(long)]
    users: Option<usize>,
    /// Simulated seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Placement or mobility policy, e.g. smp-clustering or intra-inter.
    #[arg(long)]
    policy: Vec<String>,
    /// Mobility model: directional, random-waypoint or random-walk.
    #[arg(long, value_parser = parse_kind)]
    mobility: Option<MobilityKind>,
    /// Output directory; defaults to the config's output or ./out.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TraceArgs {
    /// directional, random-waypoint or random-walk.
    #[arg(long, value_parser = parse_kind)]
    kind: MobilityKind,
    /// Fixed speed in m/s.
    #[arg(long, conflicts_with_all = ["speed_min", "speed_max"])]
    speed: Option<f64>,
    #[arg(long, requires = "speed_max")]
    speed_min: Option<f64>,
    #[arg(long, requires = "speed_min")]
    speed_max: Option<f64>,
    /// Milliseconds between samples.
    #[arg(long)]
    interval_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    pause_ms: f64,
    /// Trace length in seconds.
    #[arg(long)]
    duration: f64,
    /// min_lat,max_lat,min_lon,max_lon; defaults to Melbourne CBD.
    #[arg(long, value_parser = parse_roi)]
    roi: Option<Roi>,
    /// Number of entities, numbered from 1.
    #[arg(long, default_value_t = 1)]
    entities: u32,
    /// Start position lat,lon; drawn in the region when absent.
    #[arg(long, value_parser = parse_latlon)]
    start: Option<Location>,
    /// Heading in degrees for directional traces.
    #[arg(long, default_value_t = 90.0)]
    heading: f64,
    #[arg(long, env = "FOGSIM_SEED", default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    blocks: usize,
    /// Gateways per block, not counting the block's proxy.
    #[arg(long)]
    gateways_per_block: usize,
    /// min_lat,max_lat,min_lon,max_lon; defaults to Melbourne CBD.
    #[arg(long, value_parser = parse_roi)]
    roi: Option<Roi>,
    #[arg(long, env = "FOGSIM_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    cloud_vms: u32,
    /// Topology JSON path.
    #[arg(long, default_value = "topology.json")]
    out: PathBuf,
    /// Node-location CSV path.
    #[arg(long, default_value = "nodes.csv")]
    csv: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Policies to compare, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    policies: Vec<String>,
    /// Mobility models to combine with each policy, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    mobility: Vec<MobilityKind>,
    /// Seeds as a list (1,2,3) or half-open range (0..10).
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Parallel workers.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Summary CSV path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Report CSVs written by `run`.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    /// Only metrics starting with this prefix.
    #[arg(long)]
    filter: Option<String>,
}

#[derive(Clone, Debug)]
struct Seeds(Vec<u64>);

fn parse_scale(s: &str) -> Result<Scale, String> {
    match s {
        "small" => Ok(Scale::Small),
        "full" => Ok(Scale::Full),
        _ => Err(format!("unknown scale '{s}', expected small or full")),
    }
}

fn parse_kind(s: &str) -> Result<MobilityKind, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "directional" => Ok(MobilityKind::Directional),
        "random-waypoint" | "random" => Ok(MobilityKind::RandomWaypoint),
        "random-walk" => Ok(MobilityKind::RandomWalk),
        _ => Err(format!(
            "unknown mobility model '{s}', expected directional, random-waypoint or random-walk"
        )),
    }
}

fn parse_roi(s: &str) -> Result<Roi, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("bad number '{x}': {e}")))
        .collect::<Result<_, _>>()?;
    let [min_lat, max_lat, min_lon, max_lon] = v[..] else {
        return Err("expected min_lat,max_lat,min_lon,max_lon".into());
    };
    let roi = Roi {
        min_lat,
        max_lat,
        min_lon,
        max_lon,
    };
    roi.validate().map_err(|e| e.to_string())?;
    Ok(roi)
}

fn parse_latlon(s: &str) -> Result<Location, String> {
    let (lat, lon) = s.split_once(',').ok_or("expected lat,lon")?;
    let lat = lat.trim().parse().map_err(|e| format!("bad latitude: {e}"))?;
    let lon = lon.trim().parse().map_err(|e| format!("bad longitude: {e}"))?;
    Location::new(lat, lon).map_err(|e| e.to_string())
}

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad seed range: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad seed range: {e}"))?;
        if a >= b {
            return Err(format!("empty seed range {s}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .map(|x| x.trim().parse().map_err(|e| format!("bad seed '{x}': {e}")))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Policy {
    Placement(PlacementPolicy),
    Mobility(MobilityPolicy),
}

fn parse_policy(s: &str) -> Result<Policy> {
    let p = match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "edgeward" | "edgewards" => Policy::Placement(PlacementPolicy::Edgeward),
        "smp-no-clustering" | "smp-nc" => Policy::Placement(PlacementPolicy::SmpNoClustering),
        "smp-clustering" | "smp-c" | "smp" => Policy::Placement(PlacementPolicy::SmpClustering),
        "cloud-centric" | "cc" => Policy::Mobility(MobilityPolicy::CloudCentric),
        "intra-inter" | "intra-inter-cluster" | "ii" => Policy::Mobility(MobilityPolicy::IntraInterCluster),
        "non-hierarchical" | "nh" => Policy::Mobility(MobilityPolicy::NonHierarchical),
        _ => bail!(
            "unknown policy '{s}', expected edgeward, smp-no-clustering, smp-clustering, \
             cloud-centric, intra-inter or non-hierarchical"
        ),
    };
    Ok(p)
}

fn apply_policy(o: &mut ScenarioOverrides, p: Policy) {
    match p {
        Policy::Placement(p) => o.placement_policy = Some(p),
        Policy::Mobility(p) => o.mobility_policy = Some(p),
    }
}

/// Loads a config file or a built-in preset and applies the overrides.
fn load(args: &ScenarioArgs, overrides: &ScenarioOverrides) -> Result<ScenarioConfig> {
    match (&args.config, &args.scenario) {
        (Some(path), None) => {
            let mut cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(p) = overrides.placement_policy {
                cfg.placement_policy = p;
                if p == PlacementPolicy::SmpClustering {
                    cfg.clustering.enabled = true;
                }
            }
            if let Some(p) = overrides.mobility_policy {
                cfg.mobility_policy = Some(p);
                if p == MobilityPolicy::IntraInterCluster {
                    cfg.clustering.enabled = true;
                }
            }
            if let Some(k) = overrides.mobility_kind {
                match &mut cfg.mobility {
                    fogsim::scenario::MobilitySource::Model { kind, .. } => *kind = k,
                    _ => bail!("--mobility needs a config with a mobility model"),
                }
            }
            if let Some(s) = overrides.seed {
                cfg.seed = s;
            }
            if let Some(d) = overrides.duration_s {
                cfg.duration_s = d;
            }
            if overrides.users.is_some() {
                bail!("--users applies to built-in scenarios only");
            }
            Ok(cfg)
        }
        (None, Some(name)) => Ok(builtin(name, args.scale, overrides)?),
        _ => bail!("pass either --config or --scenario"),
    }
}

fn base_overrides(args: &ScenarioArgs) -> ScenarioOverrides {
    ScenarioOverrides {
        seed: args.seed,
        users: args.users,
        duration_s: args.duration,
        ..Default::default()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut o = base_overrides(&args.scenario);
    o.mobility_kind = args.mobility;
    for p in &args.policy {
        apply_policy(&mut o, parse_policy(p)?);
    }
    let cfg = load(&args.scenario, &o)?;
    let out_dir = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    log::info!("running {} (seed {}) into {}", cfg.name, cfg.seed, out_dir.display());
    let out = run_measured(&cfg)?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_file(&out_dir.join("report.json"), &out.report.to_json()?)?;
    write_file(&out_dir.join("report.csv"), &out.report.to_csv()?)?;
    write_file(&out_dir.join("placement.json"), &out.placement.to_json()?)?;
    let clusters: Vec<serde_json::Value> = out
        .clusters
        .iter()
        .map(serde_json::to_value)
        .collect::<Result<_, _>>()?;
    write_file(&out_dir.join("clusters.json"), &serde_json::to_string_pretty(&clusters)?)?;
    write_file(
        &out_dir.join("footprint.json"),
        &serde_json::to_string_pretty(&out.report.footprint)?,
    )?;
    print_summary(&out.report);
    for s in &out.report.saturated {
        log::warn!("{s} was offered more work than it could execute");
    }
    Ok(())
}

fn print_summary(r: &MetricsReport) {
    println!("scenario {} seed {} horizon {} s", r.scenario, r.seed, r.horizon_ms / 1000.0);
    for l in &r.loops {
        println!("loop {:<40} n={:<8} mean {:.3} ms", l.name, l.count, l.mean_ms);
    }
    println!("energy total {:.1} (migration {:.1})", r.energy.total, r.energy.migration);
    for (tier, e) in &r.energy.per_tier {
        println!("energy tier {tier} {e:.1}");
    }
    println!(
        "network {:.3} MB (app {:.3}, migration {:.3}, clustering {:.3})",
        r.network.total_mb, r.network.app_mb, r.network.migration_mb, r.network.clustering_mb
    );
    let m = &r.migration_summary;
    println!(
        "migrations {} (deferred {}), mean {:.3} ms, per user {:.3} ms",
        m.count, m.deferred, m.mean_ms, m.mean_per_user_ms
    );
    println!("location events {}", r.location_events);
    println!(
        "wall clock {:.3} s, peak memory {}",
        r.footprint.wall_clock_s,
        r.footprint
            .peak_memory_mb
            .map(|m| format!("{m:.1} MB"))
            .unwrap_or_else(|| "n/a".into())
    );
}

fn cmd_gen_trace(args: TraceArgs) -> Result<()> {
    let speed = match (args.speed, args.speed_min, args.speed_max) {
        (Some(v), _, _) => Speed::Fixed(v),
        (None, Some(min), Some(max)) => Speed::Range { min, max },
        _ => bail!("pass --speed or --speed-min with --speed-max"),
    };
    if args.entities == 0 {
        bail!("--entities must be at least 1");
    }
    let params = MobilityModelParams {
        kind: args.kind,
        speed,
        interval_ms: args.interval_ms,
        pause_ms: args.pause_ms,
        roi: args.roi.unwrap_or(Roi::MELBOURNE_CBD),
        duration_ms: args.duration * 1000.0,
        seed: args.seed,
        start: args.start,
    };
    params.validate()?;
    let mut traces = Vec::new();
    for e in 1..=args.entities {
        let entity = EntityId(e);
        let trace = match args.kind {
            MobilityKind::Directional => {
                let start = args.start.unwrap_or_else(|| params.roi.center());
                generate_directional_trace(entity, start, args.heading, &params)?
            }
            _ => generate_random_trace(entity, &params)?,
        };
        traces.push(trace);
    }
    match &args.out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_traces(f, &traces)?;
        }
        None => write_traces(io::stdout().lock(), &traces)?,
    }
    Ok(())
}

fn cmd_gen_topology(args: TopologyArgs) -> Result<()> {
    if args.blocks == 0 {
        bail!("--blocks must be at least 1");
    }
    let mut params = TopologyGenParams::ats(
        args.blocks,
        args.blocks * args.gateways_per_block,
        args.roi.unwrap_or(Roi::MELBOURNE_CBD),
        args.seed,
    );
    params.cloud_vms = args.cloud_vms;
    let generated = gen_topology(&params)?;
    write_file(&args.out, &serde_json::to_string_pretty(&generated.config)?)?;
    let f = fs::File::create(&args.csv).with_context(|| format!("creating {}", args.csv.display()))?;
    write_locations(f, generated.nodes.iter().copied())?;
    let gateways = generated.config.nodes.iter().filter(|n| n.tier == 2).count();
    println!(
        "{} nodes ({} blocks, {gateways} gateways) -> {}, {}",
        generated.config.nodes.len(),
        args.blocks,
        args.out.display(),
        args.csv.display()
    );
    Ok(())
}

struct Job {
    policy: String,
    kind: Option<MobilityKind>,
    seed: Option<u64>,
}

const SWEEP_HEADER: [&str; 12] = [
    "scenario",
    "policy",
    "mobility",
    "seed",
    "loop",
    "loop_mean_ms",
    "energy_total",
    "energy_migration",
    "network_mb",
    "migration_mb",
    "migrations",
    "migration_per_user_ms",
];

fn sweep_row(job: &Job, r: &MetricsReport) -> Vec<String> {
    let first = r.loops.first();
    vec![
        r.scenario.clone(),
        job.policy.clone(),
        job.kind.map(|k| format!("{k:?}")).unwrap_or_default(),
        r.seed.to_string(),
        first.map(|l| l.name.clone()).unwrap_or_default(),
        first.map(|l| l.mean_ms.to_string()).unwrap_or_default(),
        r.energy.total.to_string(),
        r.energy.migration.to_string(),
        r.network.total_mb.to_string(),
        r.network.migration_mb.to_string(),
        r.migration_summary.count.to_string(),
        r.migration_summary.mean_per_user_ms.to_string(),
    ]
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut policies = Vec::new();
    for p in &args.policies {
        policies.push((p.clone(), parse_policy(p)?));
    }
    let seeds: Vec<Option<u64>> = match &args.seeds {
        Some(Seeds(v)) => v.iter().copied().map(Some).collect(),
        None => vec![args.scenario.seed],
    };
    let kinds: Vec<Option<MobilityKind>> = if args.mobility.is_empty() {
        vec![None]
    } else {
        args.mobility.iter().copied().map(Some).collect()
    };
    let mut jobs = Vec::new();
    let mut configs = Vec::new();
    for seed in &seeds {
        for kind in &kinds {
            for (name, policy) in &policies {
                let mut o = base_overrides(&args.scenario);
                o.seed = seed.or(o.seed);
                o.mobility_kind = *kind;
                apply_policy(&mut o, *policy);
                configs.push(load(&args.scenario, &o)?);
                jobs.push(Job {
                    policy: name.clone(),
                    kind: *kind,
                    seed: *seed,
                });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, Result<MetricsReport>>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..args.jobs.max(1).min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let r = run_measured(cfg).map(|o| o.report).map_err(anyhow::Error::from);
                results.lock().expect("no worker panicked").insert(i, r);
            });
        }
    });

    let results = results.into_inner().expect("no worker panicked");
    let mut w = csv::Writer::from_path(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    w.write_record(SWEEP_HEADER)?;
    for (i, r) in results {
        let job = &jobs[i];
        let r = r.with_context(|| format!("policy {} seed {:?}", job.policy, job.seed))?;
        w.write_record(sweep_row(job, &r))?;
    }
    w.flush()?;
    println!("{} runs -> {}", jobs.len(), args.out.display());
    Ok(())
}

fn read_report_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["metric", "value"] {
        bail!("{} is not a report CSV (expected header metric,value)", path.display());
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(rows)
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let mut order: Vec<String> = Vec::new();
    let mut columns: Vec<BTreeMap<String, String>> = Vec::new();
    for f in &args.files {
        let rows = read_report_csv(f)?;
        for (k, _) in &rows {
            if !order.contains(k) {
                order.push(k.clone());
            }
        }
        columns.push(rows.into_iter().collect());
    }
    if let Some(prefix) = &args.filter {
        order.retain(|k| k.starts_with(prefix.as_str()));
    }
    let names: Vec<String> = args
        .files
        .iter()
        .map(|f| {
            let parent = f.parent().and_then(|p| p.file_name());
            parent.unwrap_or(f.as_os_str()).to_string_lossy().into_owned()
        })
        .collect();
    let key_w = order.iter().map(String::len).max().unwrap_or(6).max(6);
    let col_w: Vec<usize> = names
        .iter()
        .zip(&columns)
        .map(|(n, c)| order.iter().filter_map(|k| c.get(k)).map(String::len).max().unwrap_or(0).max(n.len()))
        .collect();
    let mut out = io::stdout().lock();
    write!(out, "{:<key_w$}", "metric")?;
    for (n, w) in names.iter().zip(&col_w) {
        write!(out, "  {n:>w$}")?;
    }
    writeln!(out)?;
    for k in &order {
        write!(out, "{k:<key_w$}")?;
        for (c, w) in columns.iter().zip(&col_w) {
            let v = c.get(k).map(String::as_str).unwrap_or("-");
            write!(out, "  {v:>w$}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::GenTrace(a) => cmd_gen_trace(a),
        Command::GenTopology(a) => cmd_gen_topology(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
