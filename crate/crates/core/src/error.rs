use thiserror::Error;

use crate::engine::{EventKind, SimTime};
use crate::infrastructure::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot schedule {kind:?} at {fire_at} ms: clock is already at {now} ms")]
    ScheduleInPast {
        kind: EventKind,
        fire_at: SimTime,
        now: SimTime,
    },

    #[error("dispatch of {kind:?} (seq {seq}) at {at} ms failed: {source}")]
    Dispatch {
        kind: EventKind,
        seq: u64,
        at: SimTime,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid topology: {0}")]
    Topology(#[from] TopologyError),

    #[error("invalid application: {0}")]
    Application(String),

    #[error("upward edges form a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("location data: {0}")]
    Location(String),

    #[error("mobility model: {0}")]
    Mobility(String),

    #[error("microservice {microservice} cannot be placed: no node on path {path} up to the cloud has capacity")]
    Capacity { microservice: String, path: usize },

    #[error("no route from node {from} to node {to}")]
    Unreachable { from: NodeId, to: NodeId },

    #[error("nodes {0} and {1} share no common ancestor")]
    DisjointComponents(NodeId, NodeId),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Structural problems found while validating a topology.
#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("node {node} references unknown parent {parent}")]
    UnknownParent { node: NodeId, parent: NodeId },
    #[error("node {0} at tier > 0 has no parent")]
    Orphan(NodeId),
    #[error("tier-0 node {0} must not have a parent")]
    RootWithParent(NodeId),
    #[error("node {node} at tier {tier} has parent {parent} at tier {parent_tier}")]
    TierMismatch {
        node: NodeId,
        tier: u8,
        parent: NodeId,
        parent_tier: u8,
    },
    #[error("parent links of node {0} form a cycle")]
    ParentCycle(NodeId),
    #[error("node {node}: {reason}")]
    InvalidNode { node: NodeId, reason: String },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("broken parent chain at node {0}")]
    BrokenChain(NodeId),
}
