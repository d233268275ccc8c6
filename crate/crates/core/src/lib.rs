//! Deterministic discrete-event simulation of a CAN bus bridged onto an
//! Ethernet-AVB backbone.
//!
//! A periodic CAN sender feeds a gateway that packs CAN messages into Ethernet
//! frames. Those frames cross credit-shaped AVB switches to a listener that
//! records the end-to-end latency of every message. A jamming talker can load
//! the backbone with best-effort traffic.

use std::fmt;

pub mod can;
pub mod engine;
pub mod eth;
pub mod gateway;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod time;
pub mod traffic;

/// A node on either network (CAN nodes, the gateway, switches, hosts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

pub use metrics::{Arm, LatencyRecord, LatencyStats, RunSummary};
pub use scenario::{
    build_and_run, parse_config, run_experiment_suite, RunOutput, ScenarioConfig, SimError,
    SuiteOutput,
};
pub use time::{BitRate, SimDuration, SimTime};
