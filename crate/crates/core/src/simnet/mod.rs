//! Deterministic network simulator.
//!
//! Endpoints run the discovery state machines on a virtual clock. Links
//! add latency, the resolver node answers DNS queries from a validating
//! [`Resolver`](crate::dnssec::Resolver), and computation takes either a
//! fixed modeled time or the measured wall-clock time of the real
//! operations. With the fixed model and the same seed two runs produce the
//! same metrics.

mod adversary;
mod engine;
mod ivn;
mod metrics;
mod scenario;
mod topology;


use std::net::Ipv4Addr;

use thiserror::Error;

pub use adversary::{AdversaryScript, AttackReport, Fate, ScriptKind, StepOutcome};
pub use engine::{
    run_scalability, scalability_config, simulate, Injection, Intruder, RunOutcome, ScalePoint,
    Sim, SubscriberOutcome, Verdict,
};
pub use ivn::{
    ivn_plan, ivn_topology, plan_stats, PlanStats, FIRST_SERVICE_PORT, IVN_EDGE_SWITCHES,
    IVN_FANOUT, IVN_HOSTS, IVN_VEHICLE,
};
pub use metrics::*;
pub use scenario::{ComputeModel, CostTable, ScenarioConfig};
pub use topology::{Link, Node, NodeKind, Topology, DEFAULT_LINK_LATENCY};

/// Service discovery port.
pub const SD_PORT: u16 = 30490;
/// Multicast group announced for eventgroups.
pub const MULTICAST_GROUP: Ipv4Addr = Ipv4Addr::new(239, 0, 0, 1);
/// Unix time at virtual time zero of the first run.
pub const BASE_TIME: u64 = 1_750_000_000;
/// Unicast traffic to this address reaches the intruder, if any.
pub const ADVERSARY_ADDRESS: Ipv4Addr = Ipv4Addr::new(10, 0, 254, 66);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("topology: {0}")]
    Topology(String),
    #[error("scenario: {0}")]
    Config(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Forge(#[from] crate::zoneforge::ForgeError),
    #[error(transparent)]
    Record(#[from] crate::records::RecordError),
    #[error(transparent)]
    Dnssec(#[from] crate::dnssec::DnssecError),
    #[error(transparent)]
    Resolve(#[from] crate::dnssec::ResolveError),
}
