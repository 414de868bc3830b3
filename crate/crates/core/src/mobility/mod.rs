//! Location handling, trace generation and the migration manager.

mod location;
mod manager;
mod trace;

pub use location::{
    destination, haversine, initial_bearing, parse_locations, write_locations, Location,
    ParsedLocations, RowError, EARTH_RADIUS_KM, NODE_CSV_HEADER,
};
pub use manager::{
    decide_migration, manage_mobility, migration_latency, plan_route, select_parent, MigratingModule,
    MigrationDecision, MigrationHop, MobilityOutcome, MobilityPolicy, ParentSelection, RouteKind,
    DEFAULT_MAX_DISTANCE_KM,
};
pub use trace::{
    generate_directional_trace, generate_random_trace, parse_traces, write_traces, MobilityKind,
    MobilityModelParams, MobilityTrace, Roi, Speed, TraceSample, TRACE_CSV_HEADER,
};
