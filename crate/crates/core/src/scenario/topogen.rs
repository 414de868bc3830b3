//! Block-structured topology generator: the region is cut into a grid of
//! blocks, nodes are scattered in each block, the node nearest the block
//! centroid becomes its proxy and the rest become gateways under it.

use serde::{Deserialize, Serialize};

use crate::engine::RngStream;
use crate::error::{Error, Result};
use crate::infrastructure::{
    BlockSpec, MeshConfig, NodeId, NodeSpec, TierLatency, TopologyConfig, TIER_CLOUD, TIER_GATEWAY, TIER_PROXY,
};
use crate::mobility::{haversine, Location, Roi};

/// Hardware of one tier. Two-element arrays are `[lo, hi]` ranges sampled
/// uniformly per node; equal bounds give a fixed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierHardware {
    pub mips: [f64; 2],
    pub ram: f64,
    pub uplink: f64,
    pub downlink: f64,
    pub busy_power: [f64; 2],
    pub idle_power: [f64; 2],
    #[serde(default = "default_range")]
    pub comm_range_km: f64,
}

fn default_range() -> f64 {
    1.0
}

impl TierHardware {
    fn validate(&self, tier: &str) -> Result<()> {
        for (what, r) in [("mips", self.mips), ("busy_power", self.busy_power), ("idle_power", self.idle_power)] {
            if !(r[0] <= r[1] && r[0] >= 0.0 && r[1].is_finite()) {
                return Err(Error::Config(format!("{tier} {what} range {r:?} is not [lo, hi]")));
            }
        }
        if self.idle_power[1] > self.busy_power[0] {
            return Err(Error::Config(format!("{tier} idle power range overlaps busy power range")));
        }
        Ok(())
    }
}

pub(crate) fn draw(rng: &mut RngStream, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.uniform(r[0], r[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyGenParams {
    pub blocks: usize,
    /// Gateways in total, spread as evenly as possible over the blocks.
    pub gateways: usize,
    pub roi: Roi,
    pub seed: u64,
    pub cloud: TierHardware,
    /// VMs behind the single tier-0 node: each is one CPU server of the
    /// node, and RAM and power scale with the count.
    #[serde(default = "one")]
    pub cloud_vms: u32,
    pub proxy: TierHardware,
    pub gateway: TierHardware,
    #[serde(default)]
    pub tier_latency: TierLatency,
    #[serde(default)]
    pub mesh: MeshConfig,
}

fn one() -> u32 {
    1
}

impl TopologyGenParams {
    /// Hardware from the audio translation table.
    pub fn ats(blocks: usize, gateways: usize, roi: Roi, seed: u64) -> Self {
        TopologyGenParams {
            blocks,
            gateways,
            roi,
            seed,
            cloud: TierHardware {
                mips: [4480.0, 4480.0],
                ram: 16.0,
                uplink: 100.0,
                downlink: 100.0,
                busy_power: [1468.0, 1468.0],
                idle_power: [1332.0, 1332.0],
                comm_range_km: 1.0,
            },
            cloud_vms: 10,
            proxy: TierHardware {
                mips: [3600.0, 4000.0],
                ram: 16.0,
                uplink: 10.0,
                downlink: 20.0,
                busy_power: [428.0, 428.0],
                idle_power: [333.0, 333.0],
                comm_range_km: 1.0,
            },
            gateway: TierHardware {
                mips: [2800.0, 3000.0],
                ram: 8.0,
                uplink: 50.0,
                downlink: 100.0,
                busy_power: [206.0, 206.0],
                idle_power: [170.0, 170.0],
                comm_range_km: 0.3,
            },
            tier_latency: TierLatency::default(),
            mesh: MeshConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedTopology {
    pub config: TopologyConfig,
    /// `(id, location)` rows for the node CSV; blocks are set on proxies and
    /// gateways.
    pub nodes: Vec<(u32, Location)>,
    pub warnings: Vec<String>,
}

/// Index of the point nearest `target`; the first one wins ties.
pub fn nearest(points: &[Location], target: &Location) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = haversine(p, target);
        if best.map(|(_, bd)| d < bd).unwrap_or(true) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn centroid(points: &[Location]) -> Location {
    let n = points.len() as f64;
    Location {
        latitude: points.iter().map(|p| p.latitude).sum::<f64>() / n,
        longitude: points.iter().map(|p| p.longitude).sum::<f64>() / n,
        block: None,
    }
}

fn spec(id: u32, tier: u8, parent: Option<u32>, loc: Location, hw: &TierHardware, vms: u32, rng: &mut RngStream) -> NodeSpec {
    let scale = vms as f64;
    let idle = draw(rng, hw.idle_power);
    let busy = draw(rng, hw.busy_power).max(idle);
    NodeSpec {
        id: NodeId(id),
        name: match tier {
            TIER_CLOUD => "cloud".to_string(),
            TIER_PROXY => format!("proxy-{id}"),
            _ => format!("gateway-{id}"),
        },
        tier,
        mips: draw(rng, hw.mips) * scale,
        servers: vms,
        ram: hw.ram * scale,
        uplink: hw.uplink,
        downlink: hw.downlink,
        busy_power: busy * scale,
        idle_power: idle * scale,
        parent: parent.map(NodeId),
        location: loc,
        comm_range_km: hw.comm_range_km,
        latency_threshold_ms: f64::INFINITY,
    }
}

pub fn gen_topology(params: &TopologyGenParams) -> Result<GeneratedTopology> {
    params.roi.validate()?;
    if params.blocks == 0 {
        return Err(Error::Config("at least one block is needed".into()));
    }
    if params.cloud_vms == 0 {
        return Err(Error::Config("the cloud needs at least one VM".into()));
    }
    params.cloud.validate("cloud")?;
    params.proxy.validate("proxy")?;
    params.gateway.validate("gateway")?;

    let mut rng = RngStream::new(params.seed, "topology");
    let cols = (params.blocks as f64).sqrt().ceil() as usize;
    let rows = params.blocks.div_ceil(cols);
    let roi = params.roi;
    let dlat = (roi.max_lat - roi.min_lat) / rows as f64;
    let dlon = (roi.max_lon - roi.min_lon) / cols as f64;

    let mut warnings = Vec::new();
    let mut nodes = vec![spec(0, TIER_CLOUD, None, roi.center(), &params.cloud, params.cloud_vms, &mut rng)];
    let mut gateway_specs = Vec::new();
    let mut blocks = Vec::new();
    let mut next_gateway = 1 + params.blocks as u32;
    for b in 0..params.blocks {
        let (r, c) = (b / cols, b % cols);
        let cell = Roi {
            min_lat: roi.min_lat + r as f64 * dlat,
            max_lat: roi.min_lat + (r + 1) as f64 * dlat,
            min_lon: roi.min_lon + c as f64 * dlon,
            max_lon: roi.min_lon + (c + 1) as f64 * dlon,
        };
        let count = params.gateways / params.blocks + usize::from(b < params.gateways % params.blocks);
        let points: Vec<Location> = (0..=count).map(|_| cell.sample(&mut rng).with_block(b as u32)).collect();
        let centre = centroid(&points);
        let proxy_idx = nearest(&points, &centre).expect("at least one node per block");
        let proxy_id = 1 + b as u32;
        nodes.push(spec(proxy_id, TIER_PROXY, Some(0), points[proxy_idx], &params.proxy, 1, &mut rng));
        if count == 0 {
            warnings.push(format!("block {b} has a single node: it is the proxy and the block has no gateways"));
        }
        let mut members = Vec::new();
        for (i, p) in points.iter().enumerate() {
            if i == proxy_idx {
                continue;
            }
            gateway_specs.push(spec(next_gateway, TIER_GATEWAY, Some(proxy_id), *p, &params.gateway, 1, &mut rng));
            members.push(NodeId(next_gateway));
            next_gateway += 1;
        }
        blocks.push(BlockSpec {
            id: b as u32,
            proxy: NodeId(proxy_id),
            gateways: members,
        });
    }
    nodes.extend(gateway_specs);
    for w in &warnings {
        log::warn!("{w}");
    }
    let rows = nodes.iter().map(|n| (n.id.0, n.location)).collect();
    Ok(GeneratedTopology {
        config: TopologyConfig {
            nodes,
            blocks,
            link_latency: Vec::new(),
            tier_latency: params.tier_latency,
            mesh: params.mesh,
        },
        nodes: rows,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::infrastructure::build_topology;

    #[test]
    fn ats_layout_has_the_requested_counts() {
        let g = gen_topology(&TopologyGenParams::ats(12, 118, Roi::MELBOURNE_CBD, 1)).unwrap();
        let topo = build_topology(&g.config).unwrap();
        assert_eq!(topo.tier_nodes(TIER_GATEWAY).len(), 118);
        assert_eq!(topo.tier_nodes(TIER_PROXY).len(), 12);
        assert_eq!(topo.tier_nodes(TIER_CLOUD).len(), 1);
        assert_eq!(topo.nodes[&NodeId(0)].mips, 44_800.0);
        assert_eq!(topo.nodes[&NodeId(0)].servers, 10);
        assert!(g.warnings.is_empty());
    }

    #[test]
    fn single_node_block_is_a_lone_proxy() {
        let g = gen_topology(&TopologyGenParams::ats(1, 0, Roi::MELBOURNE_CBD, 3)).unwrap();
        assert_eq!(g.config.nodes.len(), 2);
        assert_eq!(g.config.blocks[0].gateways, Vec::<NodeId>::new());
        assert_eq!(g.warnings.len(), 1);
        build_topology(&g.config).unwrap();
    }

    #[test]
    fn same_seed_same_layout() {
        let p = TopologyGenParams::ats(3, 10, Roi::MELBOURNE_CBD, 9);
        let a = serde_json::to_string(&gen_topology(&p).unwrap().config).unwrap();
        let b = serde_json::to_string(&gen_topology(&p).unwrap().config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_region_is_rejected() {
        let mut p = TopologyGenParams::ats(3, 10, Roi::MELBOURNE_CBD, 9);
        p.roi.max_lat = p.roi.min_lat;
        assert!(gen_topology(&p).is_err());
    }
}
