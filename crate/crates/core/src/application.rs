//! DAG applications: modules, tuple edges, selectivity and measured loops.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::error::{Error, Result};
use crate::infrastructure::{EntityId, Host};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppModule {
    pub name: String,
    /// GB.
    pub ram: f64,
    /// Pinned to the mobile entity; never placed on infrastructure.
    #[serde(default)]
    pub is_client: bool,
    /// Modules this one sends requests to; derived from the edges.
    #[serde(default)]
    pub consumes: Vec<String>,
    /// MB moved when an instance migrates.
    #[serde(default)]
    pub state_mb: f64,
}

impl AppModule {
    pub fn new(name: &str, ram: f64) -> Self {
        AppModule {
            name: name.to_string(),
            ram,
            is_client: false,
            consumes: Vec::new(),
            state_mb: 0.0,
        }
    }

    pub fn client(name: &str, ram: f64) -> Self {
        AppModule {
            is_client: true,
            ..AppModule::new(name, ram)
        }
    }

    pub fn with_state(mut self, mb: f64) -> Self {
        self.state_mb = mb;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Emission {
    /// Emitted by the source on its own every `interval_ms`.
    Periodic { interval_ms: f64 },
    /// Emitted in response to tuples the source executes, per its selectivity.
    Reactive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppEdge {
    pub source: String,
    pub dest: String,
    /// MI executed at `dest`.
    pub cpu_length: f64,
    /// MB carried.
    pub nw_length: f64,
    pub tuple_type: String,
    pub direction: Direction,
    pub emission: Emission,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selectivity {
    pub module: String,
    pub input_type: String,
    pub output_type: String,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppLoop {
    pub name: String,
    pub modules: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Application {
    pub name: String,
    pub modules: Vec<AppModule>,
    pub edges: Vec<AppEdge>,
    #[serde(default)]
    pub selectivities: Vec<Selectivity>,
    #[serde(default)]
    pub loops: Vec<AppLoop>,
}

/// Progress of one measured loop carried by a tuple: the loop index, when
/// its first edge was emitted, and the position of the tuple's destination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMark {
    pub loop_idx: usize,
    pub started: SimTime,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub id: u64,
    pub tuple_type: String,
    pub src_module: String,
    pub dst_module: String,
    pub cpu_length: f64,
    pub nw_length: f64,
    pub direction: Direction,
    pub emit_time: SimTime,
    /// Host chosen by the load balancer (or the origin device for responses).
    pub dst_node: Option<Host>,
    pub origin_entity: EntityId,
    pub loops: Vec<LoopMark>,
}

/// Time in ms to execute `mi` on a `mips` server.
pub fn service_time_ms(mi: f64, mips: f64) -> f64 {
    mi / mips * 1000.0
}

impl Application {
    pub fn module(&self, name: &str) -> Option<&AppModule> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn module_index(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.name == name)
    }

    pub fn clients(&self) -> impl Iterator<Item = &AppModule> {
        self.modules.iter().filter(|m| m.is_client)
    }

    pub fn is_client(&self, name: &str) -> bool {
        self.module(name).map(|m| m.is_client).unwrap_or(false)
    }

    pub fn edges_from<'a>(&'a self, module: &'a str) -> impl Iterator<Item = &'a AppEdge> + 'a {
        self.edges.iter().filter(move |e| e.source == module)
    }

    pub fn periodic_edges(&self) -> impl Iterator<Item = &AppEdge> {
        self.edges
            .iter()
            .filter(|e| matches!(e.emission, Emission::Periodic { .. }))
    }

    /// Edges `module` emits after executing a tuple of `input_type`, with
    /// the selectivity ratio of each.
    pub fn outputs(&self, module: &str, input_type: &str) -> Vec<(&AppEdge, f64)> {
        self.selectivities
            .iter()
            .filter(|s| s.module == module && s.input_type == input_type)
            .flat_map(|s| {
                self.edges
                    .iter()
                    .filter(move |e| {
                        e.source == module
                            && e.tuple_type == s.output_type
                            && e.emission == Emission::Reactive
                    })
                    .map(move |e| (e, s.ratio))
            })
            .collect()
    }

    /// Fills `consumes` from the edges and validates the result.
    pub fn normalized(mut self) -> Result<Self> {
        for i in 0..self.modules.len() {
            let name = self.modules[i].name.clone();
            let mut consumes: Vec<String> = Vec::new();
            for e in self.edges.iter().filter(|e| e.source == name) {
                if !consumes.contains(&e.dest) {
                    consumes.push(e.dest.clone());
                }
            }
            self.modules[i].consumes = consumes;
        }
        validate_dag(&self)?;
        Ok(self)
    }

    /// Expected tuples per second arriving at each module along UP edges,
    /// for one source entity.
    pub fn arrival_rates(&self) -> BTreeMap<String, f64> {
        // rate per (module, tuple type) flowing into it
        let mut inflow: BTreeMap<(String, String), f64> = BTreeMap::new();
        for e in self.periodic_edges() {
            if let Emission::Periodic { interval_ms } = e.emission {
                *inflow.entry((e.dest.clone(), e.tuple_type.clone())).or_default() +=
                    1000.0 / interval_ms;
            }
        }
        let mut placed = BTreeSet::new();
        while let Some(m) = next_eligible_microservice(self, &placed) {
            let ins: Vec<(String, f64)> = inflow
                .iter()
                .filter(|((d, _), _)| *d == m)
                .map(|((_, t), r)| (t.clone(), *r))
                .collect();
            for (t, r) in ins {
                for (e, ratio) in self.outputs(&m, &t) {
                    if e.direction == Direction::Up {
                        *inflow.entry((e.dest.clone(), e.tuple_type.clone())).or_default() +=
                            r * ratio;
                    }
                }
            }
            placed.insert(m);
        }
        let mut rates = BTreeMap::new();
        for ((m, _), r) in inflow {
            *rates.entry(m).or_insert(0.0) += r;
        }
        rates
    }

    /// Expected MI per second each module executes for one source entity,
    /// counting UP edges only.
    pub fn cpu_demand(&self) -> BTreeMap<String, f64> {
        let mut inflow: BTreeMap<(String, String), f64> = BTreeMap::new();
        for e in self.periodic_edges() {
            if let Emission::Periodic { interval_ms } = e.emission {
                *inflow.entry((e.dest.clone(), e.tuple_type.clone())).or_default() +=
                    1000.0 / interval_ms;
            }
        }
        let mut placed = BTreeSet::new();
        let mut demand: BTreeMap<String, f64> = BTreeMap::new();
        while let Some(m) = next_eligible_microservice(self, &placed) {
            let ins: Vec<(String, f64)> = inflow
                .iter()
                .filter(|((d, _), _)| *d == m)
                .map(|((_, t), r)| (t.clone(), *r))
                .collect();
            for (t, r) in ins {
                for e in self.edges.iter().filter(|e| e.dest == m && e.tuple_type == t) {
                    if e.direction == Direction::Up {
                        *demand.entry(m.clone()).or_default() += r * e.cpu_length;
                        break;
                    }
                }
                for (e, ratio) in self.outputs(&m, &t) {
                    if e.direction == Direction::Up {
                        *inflow.entry((e.dest.clone(), e.tuple_type.clone())).or_default() +=
                            r * ratio;
                    }
                }
            }
            placed.insert(m);
        }
        demand
    }
}

/// Checks structure and that UP edges form a DAG; DOWN edges may close
/// cycles.
pub fn validate_dag(app: &Application) -> Result<()> {
    let mut names = BTreeSet::new();
    for m in &app.modules {
        if !names.insert(m.name.as_str()) {
            return Err(Error::Application(format!("duplicate module {}", m.name)));
        }
        if !(m.ram > 0.0) {
            return Err(Error::Application(format!("module {} needs ram > 0", m.name)));
        }
        if !(m.state_mb >= 0.0) {
            return Err(Error::Application(format!("module {} has negative state size", m.name)));
        }
    }
    for e in &app.edges {
        for end in [&e.source, &e.dest] {
            if !names.contains(end.as_str()) {
                return Err(Error::Application(format!(
                    "edge {} -> {} references unknown module {end}",
                    e.source, e.dest
                )));
            }
        }
        if e.source == e.dest {
            return Err(Error::Application(format!("self-edge on {}", e.source)));
        }
        if !(e.cpu_length >= 0.0) || !(e.nw_length > 0.0) {
            return Err(Error::Application(format!(
                "edge {} -> {} needs cpu_length >= 0 and nw_length > 0",
                e.source, e.dest
            )));
        }
        if let Emission::Periodic { interval_ms } = e.emission {
            if !(interval_ms > 0.0) {
                return Err(Error::Application(format!(
                    "edge {} -> {} has non-positive period",
                    e.source, e.dest
                )));
            }
        }
    }
    for s in &app.selectivities {
        if !(s.ratio > 0.0) {
            return Err(Error::Application(format!(
                "selectivity of {} must be positive",
                s.module
            )));
        }
        if !names.contains(s.module.as_str()) {
            return Err(Error::Application(format!("selectivity on unknown module {}", s.module)));
        }
    }
    for l in &app.loops {
        for w in l.modules.windows(2) {
            if !app.edges.iter().any(|e| e.source == w[0] && e.dest == w[1]) {
                return Err(Error::Application(format!(
                    "loop {}: no edge {} -> {}",
                    l.name, w[0], w[1]
                )));
            }
        }
    }
    if let Some(cycle) = find_up_cycle(app) {
        return Err(Error::Cycle(cycle));
    }
    Ok(())
}

fn find_up_cycle(app: &Application) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    fn visit(
        app: &Application,
        i: usize,
        marks: &mut [Mark],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<String>> {
        marks[i] = Mark::Active;
        stack.push(i);
        let name = &app.modules[i].name;
        for e in app.edges.iter().filter(|e| e.direction == Direction::Up && &e.source == name) {
            let j = app.module_index(&e.dest)?;
            match marks[j] {
                Mark::Active => {
                    let from = stack.iter().position(|&k| k == j).unwrap_or(0);
                    return Some(stack[from..].iter().map(|&k| app.modules[k].name.clone()).collect());
                }
                Mark::New => {
                    if let Some(c) = visit(app, j, marks, stack) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        stack.pop();
        marks[i] = Mark::Done;
        None
    }
    let mut marks = vec![Mark::New; app.modules.len()];
    for i in 0..app.modules.len() {
        if marks[i] == Mark::New {
            if let Some(c) = visit(app, i, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}

/// First module in declaration order that is not yet placed and whose UP
/// predecessors all are.
pub fn next_eligible_microservice(app: &Application, placed: &BTreeSet<String>) -> Option<String> {
    app.modules
        .iter()
        .filter(|m| !placed.contains(&m.name))
        .find(|m| {
            app.edges
                .iter()
                .filter(|e| e.direction == Direction::Up && e.dest == m.name)
                .all(|e| placed.contains(&e.source))
        })
        .map(|m| m.name.clone())
}
