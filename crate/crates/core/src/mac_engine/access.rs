//! Channel access: fixed TDMA frames and tone-based contention.

use super::MacError;
use crate::rng;
use crate::VehicleId;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Round-robin TDMA frame over `n` vehicles (by index).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdmaSchedule {
    pub n: usize,
    pub slot_len: f64,
}

impl TdmaSchedule {
    /// Index of the vehicle owning global slot `slot`.
    pub fn owner(&self, slot: usize) -> usize {
        slot % self.n
    }

    pub fn slot_start(&self, slot: usize) -> f64 {
        slot as f64 * self.slot_len
    }

    pub fn round_len(&self) -> f64 {
        self.n as f64 * self.slot_len
    }
}

pub fn tdma_schedule(n: usize, slot_len: f64) -> Result<TdmaSchedule, MacError> {
    if n == 0 {
        return Err(MacError::Invalid("TDMA needs at least one vehicle".into()));
    }
    if !(slot_len > 0.0 && slot_len.is_finite()) {
        return Err(MacError::Invalid(format!(
            "slot length must be > 0, got {slot_len}"
        )));
    }
    Ok(TdmaSchedule { n, slot_len })
}

/// A tone sent during contention, `offset` seconds after the contention
/// period began.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    pub vehicle: VehicleId,
    pub round: usize,
    pub backoff: u64,
    pub offset: f64,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contention {
    pub winner: VehicleId,
    pub tones: Vec<Tone>,
    /// Collided rounds before the winning one.
    pub retries: usize,
    /// Time from the start of contention until the winner may transmit.
    pub duration: f64,
}

/// Unsynchronised tone contention.
///
/// Every contender senses the channel idle at the same moment, so the first
/// round always has all of them tone at once. A contender whose tone is not
/// answered within one `max_prop_delay` wins. Colliding contenders draw a
/// backoff in `0..max(2, 2·|colliders|)` propagation delays and try again;
/// the earliest unique backoff wins. After `max_retries` collided retries
/// the round gives up with [`MacError::ContentionLivelock`].
pub fn tone_contention(
    contenders: &[VehicleId],
    max_prop_delay: f64,
    seed: u64,
    max_retries: usize,
) -> Result<Contention, MacError> {
    if contenders.is_empty() {
        return Err(MacError::Invalid(
            "tone contention needs a contender".into(),
        ));
    }
    if !(max_prop_delay >= 0.0 && max_prop_delay.is_finite()) {
        return Err(MacError::Invalid(format!(
            "bad propagation delay {max_prop_delay}"
        )));
    }
    let mut set: Vec<VehicleId> = contenders.to_vec();
    set.sort();
    set.dedup();
    let mut rng = rng::stream(seed, 0);
    let mut tones = Vec::new();
    let mut t = 0.0;
    for round in 0.. {
        let backoffs: Vec<u64> = if round == 0 {
            vec![0; set.len()]
        } else {
            let w = (2 * set.len()).max(2) as u64;
            set.iter().map(|_| rng.random_range(0..w)).collect()
        };
        let min = *backoffs.iter().min().expect("non-empty set");
        let tied: Vec<VehicleId> = set
            .iter()
            .zip(&backoffs)
            .filter(|(_, b)| **b == min)
            .map(|(v, _)| *v)
            .collect();
        let collided = tied.len() > 1;
        for (v, b) in set.iter().zip(&backoffs) {
            if *b == min {
                tones.push(Tone {
                    vehicle: *v,
                    round,
                    backoff: *b,
                    offset: t + *b as f64 * max_prop_delay,
                    collided,
                });
            }
        }
        t += (min + 1) as f64 * max_prop_delay;
        if !collided {
            return Ok(Contention {
                winner: tied[0],
                tones,
                retries: round,
                duration: t,
            });
        }
        if round >= max_retries {
            return Err(MacError::ContentionLivelock { retries: round });
        }
        set = tied;
    }
    unreachable!()
}
