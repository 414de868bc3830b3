//! Deterministic discrete-event simulator for Edge/Fog/Cloud environments.
//!
//! The crate models a tiered node hierarchy (cloud, proxies, gateways) with
//! mobile entities attached below it, and provides:
//!
//! * a seeded event kernel ([`engine`]),
//! * mobility traces and module migration on handover ([`mobility`]),
//! * sibling clustering by range and latency ([`clustering`]),
//! * DAG applications, placement, service discovery, load balancing and
//!   shortest-path routing ([`application`], [`microservices`]),
//! * energy / delay / network accounting ([`metrics`]),
//! * built-in scenarios and the run loop ([`scenario`]).

pub mod application;
pub mod clustering;
pub mod engine;
pub mod error;
pub mod infrastructure;
pub mod metrics;
pub mod microservices;
pub mod mobility;
pub mod network;
pub mod scenario;

pub use error::{Error, Result};
