//! Simulation and optimization core for in-network scalable-video sharing
//! among a small team of underwater vehicles.
//!
//! The pipeline per video chunk: every vehicle broadcasts its SVC base layer
//! at an outage-safe rate ([`rate_power`]) over a frequency-selective acoustic
//! link ([`channel`]); vehicles score how useful the received material is
//! ([`consensus::reconstruction_score`]), agree on the best score by
//! max-consensus and elect a final reconstructing vehicle; then each sender
//! shuts down weak receivers whose view is covered by others
//! ([`multicast_planner`], [`geometry`]) and multicasts as many enhancement
//! layers as the remaining links carry ([`svc_ladder`]). [`mac_engine`] runs
//! the whole loop as a deterministic discrete-event simulation.
//!
//! Heavy inner loops (Monte-Carlo expectations, subset enumeration, overlap
//! sampling, sweeps) go through [`par`], which uses rayon when the `parallel`
//! feature is on and plain iterators otherwise. Both paths produce
//! bit-identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod channel;
pub mod consensus;
pub mod geometry;
pub mod mac_engine;
pub mod multicast_planner;
pub mod par;
pub mod rate_power;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod selftest;
pub mod svc_ladder;
pub mod sweep;

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identifier of a vehicle in the team.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl From<u32> for VehicleId {
    fn from(v: u32) -> Self {
        VehicleId(v)
    }
}

pub use par::Exec;
