use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::infrastructure::Host;

/// One provider of a microservice. `weight` counts the placement entries
/// pointing at it, so a host serving three paths is listed with weight 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub host: Host,
    pub weight: u32,
}

/// Per-host view of where the microservices it consumes are running.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceDiscovery {
    pub entries: BTreeMap<Host, BTreeMap<String, Vec<Candidate>>>,
}

impl ServiceDiscovery {
    /// Candidate providers of `microservice` known at `at`, ascending.
    pub fn candidates(&self, at: Host, microservice: &str) -> Vec<Host> {
        self.weighted(at, microservice).iter().map(|c| c.host).collect()
    }

    pub fn weighted(&self, at: Host, microservice: &str) -> &[Candidate] {
        self.entries
            .get(&at)
            .and_then(|m| m.get(microservice))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn weight(&self, at: Host, microservice: &str, target: Host) -> u32 {
        self.weighted(at, microservice)
            .iter()
            .find(|c| c.host == target)
            .map(|c| c.weight)
            .unwrap_or(0)
    }

    /// Adds one entry. Returns false if `target` was already a candidate.
    pub fn add(&mut self, at: Host, microservice: &str, target: Host) -> bool {
        let list = self
            .entries
            .entry(at)
            .or_default()
            .entry(microservice.to_string())
            .or_default();
        match list.binary_search_by(|c| c.host.cmp(&target)) {
            Ok(pos) => {
                list[pos].weight += 1;
                false
            }
            Err(pos) => {
                list.insert(pos, Candidate { host: target, weight: 1 });
                true
            }
        }
    }

    /// Removes one entry. Returns false if there was nothing to remove.
    pub fn remove(&mut self, at: Host, microservice: &str, target: Host) -> bool {
        let Some(map) = self.entries.get_mut(&at) else {
            return false;
        };
        let Some(list) = map.get_mut(microservice) else {
            return false;
        };
        let Ok(pos) = list.binary_search_by(|c| c.host.cmp(&target)) else {
            return false;
        };
        list[pos].weight -= 1;
        if list[pos].weight == 0 {
            list.remove(pos);
        }
        if list.is_empty() {
            map.remove(microservice);
        }
        if map.is_empty() {
            self.entries.remove(&at);
        }
        true
    }

    /// Number of distinct (consumer, microservice, provider) entries.
    pub fn len(&self) -> usize {
        self.entries.values().flat_map(|m| m.values()).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Smooth weighted round robin: each candidate appears `weight` times per
/// cycle, spread out rather than in runs. Unit weights give plain rotation.
fn cycle(list: &[Candidate]) -> Vec<usize> {
    let total: i64 = list.iter().map(|c| c.weight as i64).sum();
    let mut current = vec![0i64; list.len()];
    let mut out = Vec::with_capacity(total as usize);
    for _ in 0..total {
        let mut best = 0;
        for (i, c) in list.iter().enumerate() {
            current[i] += c.weight as i64;
            if current[i] > current[best] {
                best = i;
            }
        }
        current[best] -= total;
        out.push(best);
    }
    out
}

#[derive(Clone, Debug, Default)]
struct Rotation {
    list: Vec<Candidate>,
    order: Vec<usize>,
    cursor: usize,
}

/// Round-robin position per (host, microservice).
#[derive(Clone, Debug, Default)]
pub struct LoadBalancer {
    rotations: BTreeMap<(Host, String), Rotation>,
}

impl LoadBalancer {
    /// Next provider for requests from `at`, or `None` when the service is
    /// unavailable there.
    pub fn select(&mut self, sd: &ServiceDiscovery, at: Host, microservice: &str) -> Option<Host> {
        let list = sd.weighted(at, microservice);
        if list.is_empty() {
            return None;
        }
        let r = self.rotations.entry((at, microservice.to_string())).or_default();
        if r.list != list {
            r.order = cycle(list);
            r.list = list.to_vec();
            if r.cursor >= r.order.len() {
                r.cursor = 0;
            }
        }
        let pick = r.list[r.order[r.cursor]].host;
        r.cursor = (r.cursor + 1) % r.order.len();
        Some(pick)
    }

    /// Position in the current cycle; below the total weight of the list.
    pub fn cursor(&self, at: Host, microservice: &str) -> usize {
        self.rotations
            .get(&(at, microservice.to_string()))
            .map(|r| r.cursor)
            .unwrap_or(0)
    }

    fn clamp(&mut self, at: Host, microservice: &str, len: usize) {
        if let Some(r) = self.rotations.get_mut(&(at, microservice.to_string())) {
            if r.cursor >= len {
                r.cursor = 0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdUpdate {
    Add,
    Remove,
}

/// Applies one SD change and keeps the matching cursor in range.
pub fn update_service_discovery(
    sd: &mut ServiceDiscovery,
    lb: &mut LoadBalancer,
    at: Host,
    microservice: &str,
    op: SdUpdate,
    target: Host,
) {
    match op {
        SdUpdate::Add => {
            sd.add(at, microservice, target);
        }
        SdUpdate::Remove => {
            if !sd.remove(at, microservice, target) {
                log::warn!("service discovery at {at} has no {microservice} entry for {target}");
            }
        }
    }
    let total = sd.weighted(at, microservice).iter().map(|c| c.weight as usize).sum();
    lb.clamp(at, microservice, total);
}
