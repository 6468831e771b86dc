//! ODD-based self-adaptation and self-evolution for a simulated DeltaIoT
//! network.
//!
//! The managed system ([`sim`]) is adapted by a MAPE loop ([`mape`]) that
//! only chooses configurations whose Operational Design Domain ([`odd`])
//! contains the current working point. When the working point leaves the
//! ODD, or an operator asks for a wider one, the evolution engine ([`evo`])
//! searches a warehouse of reusable elements ([`warehouse`]), tries them in
//! a sandbox, and extends the ODD.

pub mod events;
pub mod evo;
pub mod guidance;
pub mod mape;
pub mod odd;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod warehouse;

pub use events::{EventKind, EventLog, EventRecord};
pub use evo::{
    EngineConfig, EvolutionEngine, EvolutionOutcome, EvolutionStatus, EvolutionTrigger, TriggerKind,
};
pub use guidance::{GuidanceCommand, GuidanceHub, StateSnapshot};
pub use mape::{AdaptationDecision, AdaptationOption, DecisionReason, Knowledge};
pub use odd::{ConfigurationOdd, EvolutionTarget, Interval, OddModel, Region, WorkingPoint};
pub use runner::{Artifacts, Runner};
pub use scenario::Scenario;
pub use sim::{NetworkState, SimConfig, Telemetry};
pub use warehouse::{Catalogue, CatalogueEntry, WarehouseClient, WarehouseService};
