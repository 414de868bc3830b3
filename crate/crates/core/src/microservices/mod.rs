//! Placement, service discovery, load balancing and routing for
//! microservice applications.

mod discovery;
mod placement;
mod routing;

pub use discovery::{update_service_discovery, Candidate, LoadBalancer, SdUpdate, ServiceDiscovery};
pub use placement::{
    edgeward_place, generate_sd, leaf_paths, smp_place, Admission, InstanceRecord, LeafPath, PlacementOptions,
    PlacementPlan, PlacementPolicy,
};
pub use routing::{compute_routes, RoutingTable};
