//! Simulator of a parallel computing fabric whose computing units are
//! referenced through virtual channel-end addresses.
//!
//! Interconnect nodes hold translation tables that turn virtual channel-end
//! addresses into physical ones, so a reference stays valid while the unit
//! behind it is allocated, evicted, reloaded or swapped. Runs are driven by
//! [`scenario::Scenario`] programs and are fully deterministic.

pub mod addressing;
pub mod allocation;
pub mod channels;
pub mod fabric;
pub mod faults;
pub mod scenario;
pub mod sim;
pub mod translation;

pub use addressing::{AddressConfig, AddressError, PhysicalAddress, VirtualAddress};
pub use allocation::{AllocError, AppId, PlacementPolicy};
pub use channels::{ChannelError, ConnId, Connection, SendOutcome};
pub use fabric::{route, Fabric, FabricError, FabricOptions, Location, NodeId, Router, TopologySpec};
pub use faults::{FaultMode, HandlerOutcome, TranslationFault};
pub use scenario::{Directive, Scenario, ScenarioError, SchemaError};
pub use sim::{
    compare_strategies, ComparisonReport, Metrics, RunResult, SimError, SimRng, Simulation, StrategySummary, Tick,
    Trace, TraceKind, TraceRecord,
};
pub use translation::{ResolveOutcome, StrategyKind, TranslationStrategy};
