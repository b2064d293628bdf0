//! Reconstruction scoring, max-consensus and election of the final
//! reconstructing vehicle (FRV).

use crate::rng;
use crate::svc_ladder::SvcLadder;
use crate::VehicleId;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("overlap row and received rates cover different neighbours")]
    NeighbourMismatch,
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("consensus did not reach a common value after {rounds} rounds")]
    NonConvergence { rounds: usize },
    #[error("election collision: {0:?} all claim to be the FRV")]
    ElectionCollision(Vec<VehicleId>),
    #[error("no vehicle claims the consensus maximum")]
    NoCandidate,
}

pub type Result<T> = std::result::Result<T, ConsensusError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionScore {
    pub vehicle: VehicleId,
    pub rs: f64,
    /// Σ overlap probability over neighbours whose base layer arrived.
    pub overlap_term: f64,
    /// Σ 1/(1 + D) over the same neighbours.
    pub quality_term: f64,
    pub contributions: Vec<(VehicleId, f64)>,
}

/// `RS = Σ_j Pr(o)_{me,j} / (1 + D(rate_j))` over neighbours whose base layer
/// was received (`Some(rate)`); others contribute 0.
pub fn reconstruction_score(
    me: VehicleId,
    overlap_row: &[(VehicleId, f64)],
    received_rates: &[(VehicleId, Option<f64>)],
    ladder: &SvcLadder,
) -> Result<ReconstructionScore> {
    let a: BTreeSet<_> = overlap_row.iter().map(|x| x.0).collect();
    let b: BTreeSet<_> = received_rates.iter().map(|x| x.0).collect();
    if a != b || a.len() != overlap_row.len() || b.len() != received_rates.len() {
        return Err(ConsensusError::NeighbourMismatch);
    }
    let rates: BTreeMap<_, _> = received_rates.iter().copied().collect();
    let mut out = ReconstructionScore {
        vehicle: me,
        rs: 0.0,
        overlap_term: 0.0,
        quality_term: 0.0,
        contributions: Vec::with_capacity(overlap_row.len()),
    };
    for &(j, pr) in overlap_row {
        if j == me {
            continue;
        }
        let quality = rates[&j]
            .and_then(|r| ladder.distortion(r).ok())
            .map(|d| 1.0 / (1.0 + d));
        let c = match quality {
            Some(q) => {
                out.overlap_term += pr;
                out.quality_term += q;
                pr * q
            }
            None => 0.0,
        };
        out.rs += c;
        out.contributions.push((j, c));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusNode {
    pub id: VehicleId,
    pub y: f64,
    /// Lowest id known to hold `y`; agreement is on the pair.
    pub leader: VehicleId,
    pub neighbors: BTreeSet<VehicleId>,
    /// Broadcasts received so far.
    pub rounds_heard: usize,
}

impl ConsensusNode {
    pub fn new(id: VehicleId, y: f64, neighbors: impl IntoIterator<Item = VehicleId>) -> Self {
        Self {
            id,
            y,
            leader: id,
            neighbors: neighbors.into_iter().collect(),
            rounds_heard: 0,
        }
    }

    /// Takes `(y, leader)` if it beats the current pair. Returns true on change.
    pub fn absorb(&mut self, y: f64, leader: VehicleId) -> bool {
        let better = beats((y, leader), (self.y, self.leader));
        if better {
            self.y = y;
            self.leader = leader;
        }
        better
    }
}

pub type Nodes = BTreeMap<VehicleId, ConsensusNode>;

/// Builds nodes from values and an undirected edge list.
pub fn build_nodes(values: &[(VehicleId, f64)], edges: &[(VehicleId, VehicleId)]) -> Nodes {
    let mut nodes: Nodes = values
        .iter()
        .map(|&(id, y)| (id, ConsensusNode::new(id, y, [])))
        .collect();
    for &(a, b) in edges {
        if a == b {
            continue;
        }
        if let Some(n) = nodes.get_mut(&a) {
            n.neighbors.insert(b);
        }
        if let Some(n) = nodes.get_mut(&b) {
            n.neighbors.insert(a);
        }
    }
    nodes
}

/// One broadcast: every neighbour `w` of `broadcaster` sets
/// `y_w = max(y_w, y_broadcaster)`; nobody else changes. Ties keep the
/// lower leader id.
pub fn max_consensus_step(nodes: &mut Nodes, broadcaster: VehicleId) -> Result<()> {
    let src = nodes
        .get(&broadcaster)
        .ok_or(ConsensusError::UnknownVehicle(broadcaster))?;
    let (y, leader, neighbors) = (src.y, src.leader, src.neighbors.clone());
    for w in neighbors {
        if let Some(n) = nodes.get_mut(&w) {
            n.absorb(y, leader);
            n.rounds_heard += 1;
        }
    }
    Ok(())
}

/// Broadcast order within each round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Ascending id every round.
    RoundRobin,
    /// A fresh seeded permutation every round.
    Random { seed: u64 },
    /// The same explicit order every round.
    Fixed(Vec<VehicleId>),
}

impl Schedule {
    pub fn order(&self, nodes: &Nodes, round: usize) -> Vec<VehicleId> {
        match self {
            Schedule::RoundRobin => nodes.keys().copied().collect(),
            Schedule::Random { seed } => {
                let mut ids: Vec<VehicleId> = nodes.keys().copied().collect();
                ids.shuffle(&mut rng::stream(*seed, round as u64));
                ids
            }
            Schedule::Fixed(ids) => ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusOutcome {
    pub nodes: Nodes,
    pub rounds: usize,
    pub converged: bool,
}

impl ConsensusOutcome {
    pub fn value(&self, id: VehicleId) -> Option<f64> {
        self.nodes.get(&id).map(|n| n.y)
    }
}

/// True when every node holds the same value and leader.
pub fn agreed(nodes: &Nodes) -> bool {
    let mut it = nodes.values().map(|n| (n.y, n.leader));
    match it.next() {
        Some(first) => it.all(|p| p == first),
        None => true,
    }
}

/// Runs rounds until every value agrees, a full round changes nothing, or
/// `max_rounds` is spent. `converged` is false unless all values agree.
pub fn run_consensus(mut nodes: Nodes, schedule: &Schedule, max_rounds: usize) -> ConsensusOutcome {
    let mut rounds = 0;
    while !agreed(&nodes) && rounds < max_rounds {
        let before: Vec<(f64, VehicleId)> = nodes.values().map(|n| (n.y, n.leader)).collect();
        for b in schedule.order(&nodes, rounds) {
            // Unknown ids in a fixed schedule are skipped.
            let _ = max_consensus_step(&mut nodes, b);
        }
        rounds += 1;
        let after: Vec<(f64, VehicleId)> = nodes.values().map(|n| (n.y, n.leader)).collect();
        if before == after {
            break;
        }
    }
    let converged = agreed(&nodes);
    ConsensusOutcome {
        nodes,
        rounds,
        converged,
    }
}

/// Graph diameter in hops, `None` if disconnected.
pub fn graph_diameter(nodes: &Nodes) -> Option<usize> {
    let mut diameter = 0;
    for &start in nodes.keys() {
        let mut dist: BTreeMap<VehicleId, usize> = BTreeMap::from([(start, 0)]);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in &nodes[&u].neighbors {
                if nodes.contains_key(&w) && !dist.contains_key(&w) {
                    dist.insert(w, dist[&u] + 1);
                    queue.push_back(w);
                }
            }
        }
        if dist.len() != nodes.len() {
            return None;
        }
        diameter = diameter.max(*dist.values().max().unwrap_or(&0));
    }
    Some(diameter)
}

/// Election packet kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionPacket {
    /// "My RS is the maximum; I intend to become the FRV."
    Intent,
    /// Reply to an intent; carries the replier's own claim.
    Reply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectionMessage {
    pub sent_at: f64,
    pub from: VehicleId,
    pub to: VehicleId,
    pub packet: ElectionPacket,
    /// Arrival time, `None` if the link dropped the packet.
    pub arrived_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Election {
    pub frv: VehicleId,
    pub decided_at: f64,
    /// Intent broadcasts made by the winner.
    pub attempts: usize,
    pub messages: Vec<ElectionMessage>,
    /// (time, vehicle) of every intent timeout that fired.
    pub timeouts: Vec<(f64, VehicleId)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElectionParams {
    pub timeout: f64,
    pub max_attempts: usize,
    pub start: f64,
}

/// Claim ordering: higher RS wins, then lower id.
fn beats(a: (f64, VehicleId), b: (f64, VehicleId)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.1 < b.1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    Deliver { idx: usize },
    Timeout { node: VehicleId, attempt: usize },
}

/// Event-driven intent exchange after consensus.
///
/// Every vehicle whose own RS and id match its consensus pair claims the FRV role
/// by broadcasting an intent to its neighbours. Receivers answer with a reply
/// carrying their own claim. A claimant withdraws as soon as it hears a
/// better claim. When its timeout fires it becomes the FRV if every
/// neighbour has answered (or it has run out of attempts); otherwise it
/// re-broadcasts. `link(from, to, seq)` returns the delay of a delivered
/// packet or `None` for a drop; `seq` numbers packets in send order.
pub fn elect_frv(
    consensus: &Nodes,
    own_rs: &BTreeMap<VehicleId, f64>,
    params: ElectionParams,
    mut link: impl FnMut(VehicleId, VehicleId, u64) -> Option<f64>,
) -> Result<Election> {
    let claim_of = |id: VehicleId| -> Option<(f64, VehicleId)> {
        let node = consensus.get(&id)?;
        let own = *own_rs.get(&id)?;
        (own == node.y && node.leader == id).then_some((own, id))
    };
    let claimants: Vec<VehicleId> = consensus
        .keys()
        .copied()
        .filter(|id| claim_of(*id).is_some())
        .collect();
    if claimants.is_empty() {
        return Err(ConsensusError::NoCandidate);
    }

    let mut messages: Vec<ElectionMessage> = Vec::new();
    let mut timeouts = Vec::new();
    let mut queue: BinaryHeap<Reverse<(OrdF64, u64, Pending)>> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut claiming: BTreeSet<VehicleId> = claimants.iter().copied().collect();
    let mut heard_from: BTreeMap<VehicleId, BTreeSet<VehicleId>> = BTreeMap::new();
    let mut attempts: BTreeMap<VehicleId, usize> = BTreeMap::new();
    let mut declared: Vec<(VehicleId, f64)> = Vec::new();

    let mut send = |now: f64,
                    from: VehicleId,
                    to: VehicleId,
                    packet: ElectionPacket,
                    messages: &mut Vec<ElectionMessage>,
                    queue: &mut BinaryHeap<Reverse<(OrdF64, u64, Pending)>>,
                    seq: &mut u64| {
        let arrived_at = link(from, to, *seq).map(|d| now + d);
        messages.push(ElectionMessage {
            sent_at: now,
            from,
            to,
            packet,
            arrived_at,
        });
        if let Some(t) = arrived_at {
            queue.push(Reverse((
                OrdF64(t),
                *seq,
                Pending::Deliver {
                    idx: messages.len() - 1,
                },
            )));
        }
        *seq += 1;
    };

    for &c in &claimants {
        let neighbors = &consensus[&c].neighbors;
        if neighbors.is_empty() {
            continue;
        }
        for &w in neighbors {
            send(
                params.start,
                c,
                w,
                ElectionPacket::Intent,
                &mut messages,
                &mut queue,
                &mut seq,
            );
        }
        attempts.insert(c, 1);
        queue.push(Reverse((
            OrdF64(params.start + params.timeout),
            seq,
            Pending::Timeout {
                node: c,
                attempt: 1,
            },
        )));
        seq += 1;
    }
    // Isolated claimants decide on the spot.
    for &c in &claimants {
        if consensus[&c].neighbors.is_empty() {
            declared.push((c, params.start));
            attempts.insert(c, 0);
        }
    }

    while let Some(Reverse((OrdF64(now), _, ev))) = queue.pop() {
        match ev {
            Pending::Deliver { idx } => {
                let m = messages[idx].clone();
                let sender_claim = claim_of(m.from).filter(|_| claiming.contains(&m.from));
                if let Some(sc) = sender_claim {
                    if let Some(mine) = claim_of(m.to) {
                        if claiming.contains(&m.to) && beats(sc, mine) {
                            claiming.remove(&m.to);
                        }
                    }
                }
                match m.packet {
                    ElectionPacket::Intent => {
                        send(
                            now,
                            m.to,
                            m.from,
                            ElectionPacket::Reply,
                            &mut messages,
                            &mut queue,
                            &mut seq,
                        );
                    }
                    ElectionPacket::Reply => {
                        heard_from.entry(m.to).or_default().insert(m.from);
                    }
                }
            }
            Pending::Timeout { node, attempt } => {
                if !claiming.contains(&node) {
                    continue;
                }
                timeouts.push((now, node));
                let neighbors = &consensus[&node].neighbors;
                let heard = heard_from.get(&node).map_or(0, |h| h.len());
                if heard == neighbors.len() || attempt >= params.max_attempts {
                    declared.push((node, now));
                    claiming.remove(&node);
                    continue;
                }
                let missing: Vec<VehicleId> = neighbors
                    .iter()
                    .copied()
                    .filter(|w| !heard_from.get(&node).is_some_and(|h| h.contains(w)))
                    .collect();
                for w in missing {
                    send(
                        now,
                        node,
                        w,
                        ElectionPacket::Intent,
                        &mut messages,
                        &mut queue,
                        &mut seq,
                    );
                }
                attempts.insert(node, attempt + 1);
                queue.push(Reverse((
                    OrdF64(now + params.timeout),
                    seq,
                    Pending::Timeout {
                        node,
                        attempt: attempt + 1,
                    },
                )));
                seq += 1;
            }
        }
    }

    match declared.as_slice() {
        [(frv, at)] => Ok(Election {
            frv: *frv,
            decided_at: *at,
            attempts: attempts[frv],
            messages,
            timeouts,
        }),
        [] => Err(ConsensusError::NoCandidate),
        many => Err(ConsensusError::ElectionCollision(
            many.iter().map(|d| d.0).collect(),
        )),
    }
}

/// Total-ordered f64 for event queues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svc_ladder::RdParams;

    fn v(i: u32) -> VehicleId {
        VehicleId(i)
    }

    fn complete(values: &[f64]) -> Nodes {
        let ids: Vec<(VehicleId, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, &y)| (v(i as u32), y))
            .collect();
        let mut edges = Vec::new();
        for a in 0..values.len() {
            for b in a + 1..values.len() {
                edges.push((v(a as u32), v(b as u32)));
            }
        }
        build_nodes(&ids, &edges)
    }

    fn unit_ladder() -> SvcLadder {
        SvcLadder::from_cumulative(
            &[1.0, 2.0],
            &[1.0, 2.0],
            None,
            RdParams {
                theta: 1.0,
                r0: 0.0,
                d0: 0.0,
            },
        )
        .unwrap()
    }

    #[test]
    fn rs_empty_and_unit() {
        let l = unit_ladder();
        let s = reconstruction_score(v(0), &[], &[], &l).unwrap();
        assert_eq!(s.rs, 0.0);
        let s = reconstruction_score(v(0), &[(v(1), 1.0)], &[(v(1), Some(1e300))], &l).unwrap();
        assert!((s.rs - 1.0).abs() < 1e-12);
        let s = reconstruction_score(v(0), &[(v(1), 1.0)], &[(v(1), None)], &l).unwrap();
        assert_eq!(s.rs, 0.0);
        assert!(reconstruction_score(v(0), &[(v(1), 1.0)], &[(v(2), None)], &l).is_err());
    }

    #[test]
    fn rs_direct_evaluation() {
        let l = crate::svc_ladder::default_ladder();
        let overlap = [(v(1), 0.9), (v(2), 0.4), (v(3), 0.75), (v(4), 0.1)];
        let rates = [
            (v(1), Some(250e3)),
            (v(2), Some(120e3)),
            (v(3), None),
            (v(4), Some(480e3)),
        ];
        let s = reconstruction_score(v(0), &overlap, &rates, &l).unwrap();
        let rd = l.rd_params();
        let q = |r: f64| 1.0 / (1.0 + rd.theta / (r - rd.r0) + rd.d0);
        let want = 0.9 * q(250e3) + 0.4 * q(120e3) + 0.1 * q(480e3);
        assert!((s.rs - want).abs() < 1e-12);
        assert!((s.overlap_term - 1.4).abs() < 1e-12);
    }

    #[test]
    fn rs_monotone_in_rate_and_overlap() {
        let l = crate::svc_ladder::default_ladder();
        let base = reconstruction_score(v(0), &[(v(1), 0.5)], &[(v(1), Some(200e3))], &l)
            .unwrap()
            .rs;
        let more_rate = reconstruction_score(v(0), &[(v(1), 0.5)], &[(v(1), Some(300e3))], &l)
            .unwrap()
            .rs;
        let more_overlap = reconstruction_score(v(0), &[(v(1), 0.7)], &[(v(1), Some(200e3))], &l)
            .unwrap()
            .rs;
        assert!(more_rate > base && more_overlap > base);
    }

    #[test]
    fn step_fully_connected() {
        let mut n = complete(&[3.0, 7.0, 5.0]);
        max_consensus_step(&mut n, v(1)).unwrap();
        assert!(n.values().all(|x| x.y == 7.0));
    }

    #[test]
    fn step_without_neighbours() {
        let mut n = build_nodes(&[(v(0), 1.0), (v(1), 9.0)], &[]);
        let before = n.clone();
        max_consensus_step(&mut n, v(1)).unwrap();
        assert_eq!(n, before);
        assert!(max_consensus_step(&mut n, v(5)).is_err());
    }

    #[test]
    fn line_graph_two_steps() {
        let mut n = build_nodes(
            &[(v(1), 9.0), (v(2), 0.0), (v(3), 0.0)],
            &[(v(1), v(2)), (v(2), v(3))],
        );
        max_consensus_step(&mut n, v(1)).unwrap();
        max_consensus_step(&mut n, v(2)).unwrap();
        assert!(n.values().all(|x| x.y == 9.0));
    }

    #[test]
    fn run_converges_within_diameter() {
        let n = build_nodes(
            &[(v(1), 0.0), (v(2), 0.0), (v(3), 0.0), (v(4), 4.0)],
            &[(v(1), v(2)), (v(2), v(3)), (v(3), v(4))],
        );
        let d = graph_diameter(&n).unwrap();
        assert_eq!(d, 3);
        let out = run_consensus(n, &Schedule::RoundRobin, 10);
        assert!(out.converged);
        assert!(out.rounds <= d);
        assert!(out.nodes.values().all(|x| x.y == 4.0));
    }

    #[test]
    fn disconnected_components_do_not_converge() {
        let n = build_nodes(
            &[(v(0), 1.0), (v(1), 2.0), (v(2), 5.0), (v(3), 3.0)],
            &[(v(0), v(1)), (v(2), v(3))],
        );
        assert_eq!(graph_diameter(&n), None);
        let out = run_consensus(n, &Schedule::Random { seed: 3 }, 50);
        assert!(!out.converged);
        assert!(out.rounds < 50);
        assert_eq!(out.value(v(0)), Some(2.0));
        assert_eq!(out.value(v(3)), Some(5.0));
    }

    fn no_loss(_: VehicleId, _: VehicleId, _: u64) -> Option<f64> {
        Some(0.1)
    }

    fn params() -> ElectionParams {
        ElectionParams {
            timeout: 0.3,
            max_attempts: 5,
            start: 10.0,
        }
    }

    #[test]
    fn election_unique_max() {
        let rs = [0.2, 0.9, 0.5];
        let out = run_consensus(complete(&rs), &Schedule::RoundRobin, 10);
        let own: BTreeMap<_, _> = rs
            .iter()
            .enumerate()
            .map(|(i, &x)| (v(i as u32), x))
            .collect();
        let e = elect_frv(&out.nodes, &own, params(), no_loss).unwrap();
        assert_eq!(e.frv, v(1));
        assert_eq!(e.attempts, 1);
        assert!((e.decided_at - 10.3).abs() < 1e-12);
    }

    #[test]
    fn election_tie_goes_to_lowest_id() {
        let rs = [0.2, 0.9, 0.5, 0.9];
        let out = run_consensus(complete(&rs), &Schedule::RoundRobin, 10);
        let own: BTreeMap<_, _> = rs
            .iter()
            .enumerate()
            .map(|(i, &x)| (v(i as u32), x))
            .collect();
        assert_eq!(
            elect_frv(&out.nodes, &own, params(), no_loss).unwrap().frv,
            v(1)
        );
    }

    #[test]
    fn election_survives_dropped_intent() {
        let rs = [0.2, 0.9, 0.5];
        let out = run_consensus(complete(&rs), &Schedule::RoundRobin, 10);
        let own: BTreeMap<_, _> = rs
            .iter()
            .enumerate()
            .map(|(i, &x)| (v(i as u32), x))
            .collect();
        // The first intent the winner sends is lost.
        let lossy = |from: VehicleId, _to: VehicleId, seq: u64| {
            if from == v(1) && seq == 0 {
                None
            } else {
                Some(0.1)
            }
        };
        let e = elect_frv(&out.nodes, &own, params(), lossy).unwrap();
        assert_eq!(e.frv, v(1));
        assert_eq!(e.attempts, 2);
        assert!(e.messages.iter().any(|m| m.arrived_at.is_none()));
        assert!((e.decided_at - 10.6).abs() < 1e-12);
    }

    #[test]
    fn single_vehicle_is_frv() {
        let n = build_nodes(&[(v(4), 0.0)], &[]);
        let own = BTreeMap::from([(v(4), 0.0)]);
        let e = elect_frv(&n, &own, params(), no_loss).unwrap();
        assert_eq!(e.frv, v(4));
        assert!(e.messages.is_empty());
    }

    #[test]
    fn isolated_equal_claims_collide() {
        let n = build_nodes(&[(v(0), 1.0), (v(1), 1.0)], &[]);
        let own = BTreeMap::from([(v(0), 1.0), (v(1), 1.0)]);
        assert!(matches!(
            elect_frv(&n, &own, params(), no_loss),
            Err(ConsensusError::ElectionCollision(_))
        ));
    }
}
