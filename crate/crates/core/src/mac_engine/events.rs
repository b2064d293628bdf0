//! Events, messages and the ordered event queue.

use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Event kinds in tie-break rank order: at equal times a reception completes
/// before a slot boundary, which comes before a transmission start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RxComplete,
    SlotBoundary,
    TxStart,
    ToneContend,
    Timeout,
    ChunkBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Base,
    Consensus,
    Election,
    Enhancement,
}

/// One logical transfer. Airtime is `bits / tx_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub phase: Phase,
    pub sender: VehicleId,
    pub recipients: Vec<VehicleId>,
    pub bits: f64,
    /// Inclusive range of SVC layers carried.
    pub layer_span: (usize, usize),
    pub chunk: usize,
    pub tx_rate: f64,
    /// Scalar carried by control packets (consensus value, claimed RS).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Leader id paired with a consensus value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<VehicleId>,
}

impl Message {
    pub fn airtime(&self) -> f64 {
        self.bits / self.tx_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Chunk {
        iteration: usize,
        chunk: usize,
    },
    Slot {
        phase: Phase,
        index: usize,
        owner: VehicleId,
    },
    Tx {
        message: Message,
    },
    Rx {
        message: u64,
        phase: Phase,
        recipient: VehicleId,
        delivered: bool,
    },
    Tone {
        phase: Phase,
        round: usize,
        backoff: u64,
        collided: bool,
    },
    Timeout {
        phase: Phase,
        attempt: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub sender: Option<VehicleId>,
    pub seq: u64,
    pub payload: Payload,
}

impl Event {
    fn key(&self) -> (KeyF64, EventKind, Option<VehicleId>, u64) {
        (KeyF64(self.time), self.kind, self.sender, self.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct KeyF64(f64);

impl Eq for KeyF64 {}

impl PartialOrd for KeyF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for KeyF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Min-queue over (time, kind rank, sender, insertion sequence).
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        time: f64,
        kind: EventKind,
        sender: Option<VehicleId>,
        payload: Payload,
    ) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event {
            time,
            kind,
            sender,
            seq,
            payload,
        }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|r| r.0)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|r| r.0.time)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk() -> Payload {
        Payload::Chunk {
            iteration: 0,
            chunk: 0,
        }
    }

    #[test]
    fn orders_by_time_then_rank_then_sender() {
        let mut q = EventQueue::new();
        q.push(2.0, EventKind::RxComplete, Some(VehicleId(0)), chunk());
        q.push(1.0, EventKind::TxStart, Some(VehicleId(1)), chunk());
        q.push(1.0, EventKind::TxStart, Some(VehicleId(0)), chunk());
        q.push(1.0, EventKind::SlotBoundary, Some(VehicleId(5)), chunk());
        q.push(1.0, EventKind::RxComplete, Some(VehicleId(9)), chunk());
        let got: Vec<(f64, EventKind, u32)> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.time, e.kind, e.sender.unwrap().0))
            .collect();
        assert_eq!(
            got,
            vec![
                (1.0, EventKind::RxComplete, 9),
                (1.0, EventKind::SlotBoundary, 5),
                (1.0, EventKind::TxStart, 0),
                (1.0, EventKind::TxStart, 1),
                (2.0, EventKind::RxComplete, 0),
            ]
        );
    }

    #[test]
    fn full_ties_keep_insertion_order() {
        let mut q = EventQueue::new();
        for i in 0..5 {
            q.push(
                0.0,
                EventKind::Timeout,
                None,
                Payload::Timeout {
                    phase: Phase::Election,
                    attempt: i,
                },
            );
        }
        let attempts: Vec<usize> = std::iter::from_fn(|| q.pop())
            .map(|e| match e.payload {
                Payload::Timeout { attempt, .. } => attempt,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(attempts, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn airtime_is_bits_over_rate() {
        let m = Message {
            id: 0,
            phase: Phase::Base,
            sender: VehicleId(0),
            recipients: vec![],
            bits: 1000.0,
            layer_span: (0, 0),
            chunk: 0,
            tx_rate: 250.0,
            value: None,
            leader: None,
        };
        assert_eq!(m.airtime(), 4.0);
    }
}
