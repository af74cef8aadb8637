//! Edge-indexed timestamps for causally consistent partially replicated
//! shared memory.

mod bits;
pub mod bounds;
pub mod checker;
pub mod client_server;
pub mod graph_analysis;
pub mod optimization;
pub mod protocol;
pub mod simulator;
pub mod topology;
pub mod trace;

pub use graph_analysis::{
    augmented_is_loop, augmented_timestamp_graph, compare_conditions, find_hoops, is_loop,
    is_minimal_hoop, timestamp_graph, AnalysisError, ComparisonReport, Hoop, HoopVariant,
    SimpleLoop, TimestampGraph,
};
pub use topology::{
    apply_dummies, build_augmented_share_graph, build_share_graph, AugmentedShareGraph, ClientId,
    DirectedEdge, RegisterId, ReplicaId, ShareGraph, Topology, TopologyError,
};
pub use protocol::{
    merge, predicate_j, EdgeTimestamp, Layout, Mutations, Outbound, ProtocolError, ReplicaState,
    UpdateId, UpdateMessage, Value,
};
pub use trace::{Event, EventSink, Trace};
pub use checker::{check_trace, happened_before, CheckError, CheckOptions, HbVariant, Verdict};
pub use simulator::{fuzz, run_scenario, FuzzConfig, Mode, Scenario, SimError};
pub use optimization::{compression_plan, dummy_plan, register_level_counts, CompressionPlan, DummyTarget};
pub use bounds::{chromatic_number, conflicts, enumerate_causal_pasts, restrict, lower_bound_report, CausalPast, Guard};
