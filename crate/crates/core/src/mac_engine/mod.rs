//! Deterministic discrete-event simulation of the sharing loop.
//!
//! Per outer iteration and chunk: every vehicle broadcasts its base layer at
//! an outage-safe rate, scores what it received, runs max-consensus on the
//! scores and elects the final reconstructing vehicle (FRV); then every
//! other vehicle multicasts enhancement layers to the receivers its shutdown
//! plan keeps. The FRV checks a QoE proxy after each iteration and the loop
//! repeats until it is met or the iteration cap is hit.

mod access;
mod events;
mod sim;

pub use access::{tdma_schedule, tone_contention, Contention, TdmaSchedule, Tone};
pub use events::{Event, EventKind, EventQueue, Message, Payload, Phase};
pub(crate) use sim::build_team;
pub use sim::{run_algorithm1, MetricsRecord, RunFailure, RunOutcome, SenderPlan, VehicleMetrics};

use crate::consensus::ConsensusError;
use crate::VehicleId;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("{0}")]
    Invalid(String),
    #[error("tone contention still colliding after {retries} retries")]
    ContentionLivelock { retries: usize },
    #[error("slot of {slot} s is shorter than the {needed} s a transfer needs")]
    SlotTooShort { slot: f64, needed: f64 },
    #[error(
        "no feasible shutdown plan for sender {sender} (iteration {iteration}, chunk {chunk})"
    )]
    NoFeasibleSet {
        sender: VehicleId,
        iteration: usize,
        chunk: usize,
    },
    #[error("consensus not reached after {rounds} rounds (iteration {iteration}, chunk {chunk})")]
    NonConvergence {
        rounds: usize,
        iteration: usize,
        chunk: usize,
    },
    #[error("election failed: {0}")]
    Election(ConsensusError),
    #[error("model error: {0}")]
    Model(String),
}
