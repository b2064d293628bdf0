use super::access::{tdma_schedule, tone_contention};
use super::events::{Event, EventKind, EventQueue, Message, Payload, Phase};
use super::MacError;
use crate::channel::{self, ChannelState, FadingModel, PowerSpectrum};
use crate::consensus::{self, ConsensusNode, ElectionParams, Nodes, Schedule};
use crate::geometry::{self, FovModel, OverlapMatrix, PositionSamples};
use crate::multicast_planner::{self, MulticastPlan, PlanError, ShutdownProblem};
use crate::rate_power::{self, BroadcastProblem, BroadcastReceiver};
use crate::rng;
use crate::scenario::{MacScheme, PlannerKind, ScenarioConfig, ScheduleKind};
use crate::svc_ladder::SvcLadder;
use crate::VehicleId;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub id: VehicleId,
    pub rs: f64,
    /// Rate of this vehicle's base-layer broadcast, 0 if it had no receiver.
    pub base_rate: f64,
    /// False if some sender shut this vehicle down for the chunk.
    pub active: bool,
    /// Layers of this vehicle's video held by the FRV.
    pub layers: usize,
}

/// One row per chunk of every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub chunk: usize,
    pub frv: VehicleId,
    pub consensus_rounds: usize,
    pub consensus_converged: bool,
    pub aggregate_rs: f64,
    /// Mean active receivers per multicast plan.
    pub mean_active: f64,
    pub min_active: usize,
    /// Sum of the plans' objectives.
    pub objective: f64,
    /// Simulated clock at the end of the chunk. Stands in for wall-clock time
    /// so that repeated runs give identical files.
    pub sim_time_s: f64,
    pub qoe_met: bool,
    pub vehicles: Vec<VehicleMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenderPlan {
    pub sender: VehicleId,
    pub plan: MulticastPlan,
    /// Layers each planned receiver decoded after the enhancement window,
    /// aligned with `plan.receivers`.
    pub decoded: Vec<usize>,
    /// The planner's input, kept for replay.
    pub problem: ShutdownProblem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub events: Vec<Event>,
    pub metrics: Vec<MetricsRecord>,
    pub frv: VehicleId,
    /// Plans of the last simulated chunk.
    pub plans: Vec<SenderPlan>,
    pub satisfied: bool,
    pub iterations: usize,
    pub overlap: OverlapMatrix,
    pub profile: String,
}

/// A failed run with everything logged up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub error: MacError,
    pub events: Vec<Event>,
    pub metrics: Vec<MetricsRecord>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {}

/// Static per-run quantities, vehicles in id order.
pub(crate) struct Team {
    pub(crate) ids: Vec<VehicleId>,
    pub(crate) p_th: Vec<f64>,
    pub(crate) p_max: Vec<f64>,
    pub(crate) floor: Vec<f64>,
    pub(crate) delay: Vec<Vec<f64>>,
    pub(crate) neighbors: Vec<Vec<usize>>,
    pub(crate) path_gain: Vec<Vec<f64>>,
    /// Expected capacity at the sender's p_max, `[tx][rx]`.
    pub(crate) ceiling: Vec<Vec<f64>>,
    pub(crate) noise_power: f64,
    pub(crate) bandwidth: f64,
    pub(crate) max_delay: f64,
    pub(crate) overlap: OverlapMatrix,
}

impl Team {
    pub(crate) fn index(&self, id: VehicleId) -> usize {
        self.ids.binary_search(&id).expect("known vehicle")
    }
}

fn model<E: fmt::Display>(e: E) -> MacError {
    MacError::Model(e.to_string())
}

pub(crate) fn build_team(cfg: &ScenarioConfig, profile: &str) -> Result<Team, MacError> {
    let prof = cfg
        .profile(Some(profile))
        .ok_or_else(|| MacError::Invalid(format!("no profile {profile}")))?;
    let mut vehicles = cfg.vehicles.clone();
    vehicles.sort_by_key(|v| v.id);
    let n = vehicles.len();
    let ids: Vec<VehicleId> = vehicles.iter().map(|v| v.vehicle_id()).collect();
    let ladder = cfg.ladder();
    let grid = cfg.grid();
    let prop = cfg.propagation();
    let noise = cfg.noise();
    let c = cfg.channel.sound_speed_mps;

    let mut dist = vec![vec![0.0; n]; n];
    for j in 0..n {
        for k in 0..n {
            let (a, b) = (vehicles[j].position, vehicles[k].position);
            dist[j][k] = (a[0] - b[0]).hypot(a[1] - b[1]);
        }
    }
    let range = cfg.mac.comm_range_m.unwrap_or(f64::INFINITY);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&k| k != j && dist[j][k] <= range).collect())
        .collect();
    let delay: Vec<Vec<f64>> = dist
        .iter()
        .map(|row| row.iter().map(|d| d / c).collect())
        .collect();
    let max_delay = (0..n)
        .flat_map(|j| neighbors[j].iter().map(move |&k| (j, k)))
        .map(|(j, k)| delay[j][k])
        .fold(0.0, f64::max);

    let mut path_gain = vec![vec![0.0; n]; n];
    let mut templates: BTreeMap<(usize, usize), ChannelState> = BTreeMap::new();
    let mut noise_power = f64::NAN;
    for j in 0..n {
        for &k in &neighbors[j] {
            if k < j {
                continue;
            }
            let t =
                ChannelState::for_link(ids[j], ids[k], dist[j][k], c, &grid, &prop, &noise, 1.0, 0)
                    .map_err(model)?;
            path_gain[j][k] = t.mean_gain(&grid).map_err(model)?;
            path_gain[k][j] = path_gain[j][k];
            noise_power = t.noise_power(&grid).map_err(model)?;
            templates.insert((j, k), t);
        }
    }
    if noise_power.is_nan() {
        let s: Vec<f64> = grid
            .freqs()
            .map(|f| channel::noise_psd(f, &noise))
            .collect::<Result<_, _>>()
            .map_err(model)?;
        noise_power = grid.integrate(&s).map_err(model)?;
    }

    let p_th: Vec<f64> = vehicles
        .iter()
        .map(|v| v.p_th_w.unwrap_or(prof.p_th_w))
        .collect();
    let p_max: Vec<f64> = vehicles
        .iter()
        .map(|v| v.p_max_w.unwrap_or(prof.p_max_w))
        .collect();
    let floor: Vec<f64> = vehicles
        .iter()
        .map(|v| v.outage_floor_bps.unwrap_or(ladder.base_rate()))
        .collect();

    let mut ceiling = vec![vec![0.0; n]; n];
    for (&(a, b), t) in &templates {
        for (j, k) in [(a, b), (b, a)] {
            let pwr = PowerSpectrum::flat(p_max[j], &grid).map_err(model)?;
            let seed = rng::mix(&[cfg.seed, 3, j as u64, k as u64]);
            ceiling[j][k] = channel::expected_capacity(
                t,
                &pwr,
                &grid,
                cfg.solver.fading_samples,
                seed,
                FadingModel::Rayleigh,
            )
            .map_err(model)?
            .mean;
        }
    }

    let fov_samples = vehicles
        .iter()
        .map(|v| {
            let fov = FovModel::aimed_at(
                v.position,
                cfg.scene.target,
                v.sensing_radius_m,
                v.offset_rad,
            )?;
            let mut r = rng::stream(cfg.seed, rng::mix(&[1, v.id as u64]));
            let ps = PositionSamples::simulate(
                v.position,
                v.position_sigma_m,
                v.position_samples,
                v.confidence,
                &mut r,
            );
            Ok((fov, ps))
        })
        .collect::<Result<Vec<_>, geometry::GeometryError>>()
        .map_err(model)?;
    let overlap = if n == 1 {
        OverlapMatrix::from_probabilities(1, &[1.0]).map_err(model)?
    } else {
        geometry::pairwise_overlap_matrix(
            &fov_samples,
            cfg.solver.overlap_draws,
            rng::mix(&[cfg.seed, 2]),
        )
        .map_err(model)?
    };

    Ok(Team {
        ids,
        p_th,
        p_max,
        floor,
        delay,
        neighbors,
        path_gain,
        ceiling,
        noise_power,
        bandwidth: grid.bandwidth(),
        max_delay,
        overlap,
    })
}

enum Hook<'m> {
    Tx(&'m mut Message),
    Rx(&'m Message, usize, bool),
}

struct BaseInfo {
    /// Receiver indices in problem order.
    receivers: Vec<usize>,
    eligible: Vec<bool>,
    problem: BroadcastProblem,
    assigned: Vec<f64>,
    tx_rate: f64,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    team: Team,
    ladder: SvcLadder,
    qos_threshold: f64,
    queue: EventQueue,
    log: Vec<Event>,
    metrics: Vec<MetricsRecord>,
    clock: f64,
    next_msg: u64,
    next_contention: u64,
}

struct ChunkResult {
    frv: VehicleId,
    plans: Vec<SenderPlan>,
    qoe_met: bool,
}

impl<'a> Sim<'a> {
    fn lost(&self, key: &[u64]) -> bool {
        let p = self.cfg.mac.loss_probability;
        p > 0.0 && rng::stream(self.cfg.seed, rng::mix(key)).random::<f64>() < p
    }

    fn message(
        &mut self,
        phase: Phase,
        sender: usize,
        recipients: &[usize],
        bits: f64,
        span: (usize, usize),
        chunk: usize,
        tx_rate: f64,
    ) -> Message {
        let id = self.next_msg;
        self.next_msg += 1;
        Message {
            id,
            phase,
            sender: self.team.ids[sender],
            recipients: recipients.iter().map(|&k| self.team.ids[k]).collect(),
            bits,
            layer_span: span,
            chunk,
            tx_rate,
            value: None,
            leader: None,
        }
    }

    fn control_airtime(&self) -> f64 {
        self.cfg.mac.control_bits / self.cfg.mac.control_rate_bps
    }

    /// Pops every queued event in order, logging it and passing transfers to
    /// `hook`. Transmissions outside the election schedule their own
    /// receptions here.
    fn drain(&mut self, hook: &mut dyn FnMut(Hook<'_>)) {
        self.drain_before(f64::INFINITY, hook);
    }

    /// As [`Self::drain`], stopping at the first event at or after `limit`.
    fn drain_before(&mut self, limit: f64, hook: &mut dyn FnMut(Hook<'_>)) {
        let mut sent: BTreeMap<u64, Message> = BTreeMap::new();
        while self.queue.peek_time().is_some_and(|t| t < limit) {
            let Some(mut ev) = self.queue.pop() else {
                break;
            };
            debug_assert!(ev.time >= self.clock);
            self.clock = ev.time;
            match &mut ev.payload {
                Payload::Tx { message } => {
                    hook(Hook::Tx(message));
                    if message.phase != Phase::Election {
                        let s = self.team.index(message.sender);
                        let end = ev.time + message.airtime();
                        for &r in &message.recipients {
                            let ri = self.team.index(r);
                            let delivered = !self.lost(&[8, message.id, r.0 as u64]);
                            self.queue.push(
                                end + self.team.delay[s][ri],
                                EventKind::RxComplete,
                                Some(message.sender),
                                Payload::Rx {
                                    message: message.id,
                                    phase: message.phase,
                                    recipient: r,
                                    delivered,
                                },
                            );
                        }
                    }
                    sent.insert(message.id, message.clone());
                }
                Payload::Rx {
                    message,
                    recipient,
                    delivered,
                    ..
                } => {
                    if let Some(m) = sent.get(message) {
                        hook(Hook::Rx(m, self.team.index(*recipient), *delivered));
                    }
                }
                _ => {}
            }
            self.log.push(ev);
        }
    }

    /// One channel-access window. `msgs[v]` is vehicle v's transfer, if any;
    /// `order` is the TDMA frame (vehicle indices).
    fn window(
        &mut self,
        phase: Phase,
        order: &[usize],
        msgs: Vec<Option<Message>>,
        hook: &mut dyn FnMut(Hook<'_>),
    ) -> Result<(), MacError> {
        if msgs.iter().all(|m| m.is_none()) {
            return Ok(());
        }
        let start = self.clock;
        let end = match self.cfg.mac.scheme {
            MacScheme::Tdma => {
                let needed = msgs
                    .iter()
                    .flatten()
                    .map(|m| m.airtime())
                    .fold(0.0, f64::max)
                    + self.team.max_delay;
                let slot = self.cfg.mac.slot_len_s.unwrap_or(needed);
                if slot < needed {
                    return Err(MacError::SlotTooShort { slot, needed });
                }
                let sched = tdma_schedule(order.len(), slot)?;
                let mut msgs = msgs;
                for (k, &v) in order.iter().enumerate() {
                    let t = start + sched.slot_start(k);
                    let owner = self.team.ids[v];
                    self.queue.push(
                        t,
                        EventKind::SlotBoundary,
                        Some(owner),
                        Payload::Slot {
                            phase,
                            index: k,
                            owner,
                        },
                    );
                    if let Some(m) = msgs[v].take() {
                        self.queue.push(
                            t,
                            EventKind::TxStart,
                            Some(owner),
                            Payload::Tx { message: m },
                        );
                    }
                }
                start + sched.round_len()
            }
            MacScheme::Tlohi => {
                let mut pending: BTreeMap<VehicleId, Message> =
                    msgs.into_iter().flatten().map(|m| (m.sender, m)).collect();
                let mut t = start;
                while !pending.is_empty() {
                    let ids: Vec<VehicleId> = pending.keys().copied().collect();
                    let seed = rng::mix(&[self.cfg.seed, 7, self.next_contention]);
                    self.next_contention += 1;
                    let c = tone_contention(
                        &ids,
                        self.team.max_delay,
                        seed,
                        self.cfg.mac.contention_retries,
                    )?;
                    for tone in &c.tones {
                        self.queue.push(
                            t + tone.offset,
                            EventKind::ToneContend,
                            Some(tone.vehicle),
                            Payload::Tone {
                                phase,
                                round: tone.round,
                                backoff: tone.backoff,
                                collided: tone.collided,
                            },
                        );
                    }
                    let m = pending.remove(&c.winner).expect("winner is pending");
                    let tx = t + c.duration;
                    t = tx + m.airtime() + self.team.max_delay;
                    self.queue.push(
                        tx,
                        EventKind::TxStart,
                        Some(m.sender),
                        Payload::Tx { message: m },
                    );
                }
                t
            }
        };
        self.drain(hook);
        self.clock = self.clock.max(end);
        Ok(())
    }

    fn run_chunk(&mut self, it: usize, c: usize) -> Result<ChunkResult, MacError> {
        let n = self.team.ids.len();
        let seed = self.cfg.seed;
        let (itu, cu) = (it as u64, c as u64);
        self.queue.push(
            self.clock,
            EventKind::ChunkBoundary,
            None,
            Payload::Chunk {
                iteration: it,
                chunk: c,
            },
        );
        // Drained with the base window so same-time ties follow kind rank.

        let mut fading = vec![vec![1.0; n]; n];
        for j in 0..n {
            for k in j + 1..n {
                let x: f64 = Exp1.sample(&mut rng::stream(
                    seed,
                    rng::mix(&[4, itu, cu, j as u64, k as u64]),
                ));
                fading[j][k] = x;
                fading[k][j] = x;
            }
        }

        // Base layers.
        let mut base: Vec<Option<BaseInfo>> = Vec::with_capacity(n);
        let mut msgs: Vec<Option<Message>> = vec![None; n];
        for j in 0..n {
            let receivers = self.team.neighbors[j].clone();
            if receivers.is_empty() {
                base.push(None);
                continue;
            }
            let problem = BroadcastProblem {
                tx: self.team.ids[j],
                receivers: receivers
                    .iter()
                    .map(|&k| BroadcastReceiver {
                        id: self.team.ids[k],
                        gain: self.team.path_gain[j][k] * fading[j][k],
                        noise_power: self.team.noise_power,
                        active: true,
                        outage_floor: self.team.floor[k],
                        capacity_ceiling: self.team.ceiling[j][k],
                    })
                    .collect(),
                p_th: self.team.p_th[j],
                p_max: self.team.p_max[j],
                bandwidth: self.team.bandwidth,
            };
            let eligible = problem
                .receivers
                .iter()
                .map(|r| {
                    rate_power::achievable_rate(r, problem.p_max, problem.bandwidth)
                        .map(|x| x >= r.outage_floor)
                })
                .collect::<Result<Vec<bool>, _>>()
                .map_err(model)?;
            if !eligible.iter().any(|e| *e) {
                base.push(None);
                continue;
            }
            let problem = problem.with_active(&eligible);
            let sol = rate_power::solve_broadcast(
                &problem,
                self.cfg.solver.n_mc,
                rng::mix(&[seed, 5, itu, cu, j as u64]),
            )
            .map_err(model)?;
            let tx_rate = sol
                .assigned_rate
                .iter()
                .zip(&eligible)
                .filter(|(_, e)| **e)
                .map(|(r, _)| *r)
                .fold(f64::INFINITY, f64::min);
            let rx: Vec<usize> = receivers
                .iter()
                .zip(&eligible)
                .filter(|(_, e)| **e)
                .map(|(k, _)| *k)
                .collect();
            msgs[j] = Some(self.message(
                Phase::Base,
                j,
                &rx,
                self.ladder.base_rate() * self.cfg.chunk_duration_s,
                (0, 0),
                c,
                tx_rate,
            ));
            base.push(Some(BaseInfo {
                receivers,
                eligible,
                problem,
                assigned: sol.assigned_rate,
                tx_rate,
            }));
        }
        let ids = self.team.ids.clone();
        let index = |id: VehicleId| ids.binary_search(&id).expect("known vehicle");
        let mut rate_to: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
        for (j, info) in base.iter().enumerate() {
            if let Some(info) = info {
                for (pos, &k) in info.receivers.iter().enumerate() {
                    if info.eligible[pos] {
                        rate_to[j][k] = Some(info.assigned[pos]);
                    }
                }
            }
        }
        let mut received: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
        let order: Vec<usize> = (0..n).collect();
        self.window(Phase::Base, &order, msgs, &mut |h| {
            if let Hook::Rx(m, k, true) = h {
                let j = index(m.sender);
                received[k][j] = rate_to[j][k];
            }
        })?;

        // Scores.
        let mut rs = Vec::with_capacity(n);
        for k in 0..n {
            let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
            let row: Vec<(VehicleId, f64)> = others
                .iter()
                .map(|&j| (ids[j], self.team.overlap.prob(k, j)))
                .collect();
            let rates: Vec<(VehicleId, Option<f64>)> =
                others.iter().map(|&j| (ids[j], received[k][j])).collect();
            rs.push(
                consensus::reconstruction_score(ids[k], &row, &rates, &self.ladder)
                    .map_err(model)?
                    .rs,
            );
        }

        // Max-consensus over the control channel.
        let mut nodes: Nodes = (0..n)
            .map(|k| {
                let nb = self.team.neighbors[k].iter().map(|&w| ids[w]);
                (ids[k], ConsensusNode::new(ids[k], rs[k], nb))
            })
            .collect();
        let schedule = match self.cfg.mac.consensus_schedule {
            ScheduleKind::RoundRobin => Schedule::RoundRobin,
            ScheduleKind::Random => Schedule::Random {
                seed: rng::mix(&[seed, 6, itu, cu]),
            },
        };
        let mut rounds = 0;
        while !consensus::agreed(&nodes) && rounds < self.cfg.mac.consensus_max_rounds {
            let order: Vec<usize> = schedule
                .order(&nodes, rounds)
                .iter()
                .map(|id| index(*id))
                .collect();
            let mut msgs = vec![None; n];
            let (bits, rate) = (self.cfg.mac.control_bits, self.cfg.mac.control_rate_bps);
            for k in 0..n {
                if !self.team.neighbors[k].is_empty() {
                    let rx = self.team.neighbors[k].clone();
                    msgs[k] = Some(self.message(Phase::Consensus, k, &rx, bits, (0, 0), c, rate));
                }
            }
            self.window(Phase::Consensus, &order, msgs, &mut |h| match h {
                Hook::Tx(m) => {
                    m.value = Some(nodes[&m.sender].y);
                    m.leader = Some(nodes[&m.sender].leader);
                }
                Hook::Rx(m, k, true) => {
                    let node = nodes.get_mut(&ids[k]).expect("known vehicle");
                    node.absorb(
                        m.value.expect("consensus packets carry a value"),
                        m.leader.unwrap_or(m.sender),
                    );
                    node.rounds_heard += 1;
                }
                Hook::Rx(..) => {}
            })?;
            rounds += 1;
        }
        if !consensus::agreed(&nodes) {
            return Err(MacError::NonConvergence {
                rounds,
                iteration: it,
                chunk: c,
            });
        }

        // FRV election.
        let own: BTreeMap<VehicleId, f64> = (0..n).map(|k| (ids[k], rs[k])).collect();
        let control = self.control_airtime();
        let params = ElectionParams {
            timeout: self
                .cfg
                .mac
                .election_timeout_s
                .unwrap_or(if self.team.max_delay > 0.0 {
                    3.0 * self.team.max_delay
                } else {
                    1.0
                })
                + control,
            max_attempts: self.cfg.mac.election_attempts,
            start: self.clock,
        };
        let election = {
            let this = &*self;
            consensus::elect_frv(&nodes, &own, params, |from, to, seq| {
                let d = control + this.team.delay[index(from)][index(to)];
                (!this.lost(&[9, itu, cu, seq, to.0 as u64])).then_some(d)
            })
            .map_err(MacError::Election)?
        };
        let mut attempts: BTreeMap<VehicleId, usize> = BTreeMap::new();
        for m in &election.messages {
            let mut msg = self.message(
                Phase::Election,
                index(m.from),
                &[index(m.to)],
                self.cfg.mac.control_bits,
                (0, 0),
                c,
                self.cfg.mac.control_rate_bps,
            );
            msg.value = Some(own[&m.from]);
            let id = msg.id;
            self.queue.push(
                m.sent_at,
                EventKind::TxStart,
                Some(m.from),
                Payload::Tx { message: msg },
            );
            let delivered = m.arrived_at.is_some();
            let at = m
                .arrived_at
                .unwrap_or(m.sent_at + control + self.team.delay[index(m.from)][index(m.to)]);
            self.queue.push(
                at,
                EventKind::RxComplete,
                Some(m.from),
                Payload::Rx {
                    message: id,
                    phase: Phase::Election,
                    recipient: m.to,
                    delivered,
                },
            );
        }
        for &(t, v) in &election.timeouts {
            let a = attempts.entry(v).or_insert(0);
            *a += 1;
            self.queue.push(
                t,
                EventKind::Timeout,
                Some(v),
                Payload::Timeout {
                    phase: Phase::Election,
                    attempt: *a,
                },
            );
        }
        // Events at the decision time stay queued so they tie-break against
        // the enhancement window by kind rank.
        self.drain_before(election.decided_at, &mut |_| {});
        self.clock = self.clock.max(election.decided_at);
        let frv = election.frv;
        let frv_idx = index(frv);

        // Enhancement layers.
        let mut held: Vec<Vec<usize>> = vec![vec![0; n]; n];
        for k in 0..n {
            held[k][k] = self.ladder.len();
            for j in 0..n {
                if received[k][j].is_some() {
                    held[k][j] = 1;
                }
            }
        }
        let mut plans: Vec<(usize, Vec<usize>, MulticastPlan, ShutdownProblem)> = Vec::new();
        let mut msgs: Vec<Option<Message>> = vec![None; n];
        for j in 0..n {
            if j == frv_idx {
                continue;
            }
            let Some(info) = &base[j] else { continue };
            // Receivers that decoded this sender's base layer.
            let rx: Vec<usize> = (0..n).filter(|&k| received[k][j].is_some()).collect();
            if rx.is_empty() {
                continue;
            }
            let mut broadcast = info.problem.clone();
            broadcast.receivers.retain(|r| rx.contains(&index(r.id)));
            for r in &mut broadcast.receivers {
                r.active = true;
            }
            let prob = ShutdownProblem {
                broadcast,
                ladder: self.ladder.clone(),
                overlap: self.team.overlap.submatrix(&rx),
                qos_threshold: self.qos_threshold,
                distortion_threshold: self.cfg.thresholds.distortion_max,
                overlap_threshold: self.cfg.thresholds.overlap_min,
                n_mc: self.cfg.solver.n_mc,
                seed: rng::mix(&[seed, 10, itu, cu, j as u64]),
            };
            let planned = match self.cfg.solver.planner {
                PlannerKind::Exhaustive => multicast_planner::plan_exhaustive(&prob),
                PlannerKind::Greedy => multicast_planner::plan_greedy(&prob),
            };
            let plan = match planned {
                Ok(p) => p,
                Err(PlanError::NoFeasibleSet) => {
                    return Err(MacError::NoFeasibleSet {
                        sender: ids[j],
                        iteration: it,
                        chunk: c,
                    })
                }
                Err(e) => return Err(model(e)),
            };
            let active: Vec<usize> = rx
                .iter()
                .zip(&plan.active)
                .filter(|(_, a)| **a)
                .map(|(k, _)| *k)
                .collect();
            let top = plan
                .layers
                .iter()
                .zip(&plan.active)
                .filter(|(_, a)| **a)
                .map(|(l, _)| l.layer_count())
                .max()
                .unwrap_or(1);
            if top > 1 {
                let hi = top - 1;
                let rate = plan
                    .assigned_rate
                    .iter()
                    .zip(&plan.active)
                    .filter(|(_, a)| **a)
                    .map(|(r, _)| *r)
                    .fold(0.0, f64::max);
                let bits = (self.ladder.cumulative_rate(hi) - self.ladder.base_rate())
                    * self.cfg.chunk_duration_s;
                msgs[j] =
                    Some(self.message(Phase::Enhancement, j, &active, bits, (1, hi), c, rate));
            }
            plans.push((j, rx, plan, prob));
        }
        let decodable: Vec<Vec<Option<usize>>> = {
            let mut d = vec![vec![None; n]; n];
            for (j, rx, plan, _) in &plans {
                for (pos, &k) in rx.iter().enumerate() {
                    if plan.active[pos] {
                        d[*j][k] = Some(plan.layers[pos].layer_count());
                    }
                }
            }
            d
        };
        self.window(Phase::Enhancement, &order, msgs, &mut |h| {
            if let Hook::Rx(m, k, true) = h {
                let j = index(m.sender);
                if let Some(l) = decodable[j][k] {
                    held[k][j] = l;
                }
            }
        })?;

        // Metrics and the QoE proxy.
        let aggregate_rs: f64 = rs.iter().sum();
        let counts: Vec<usize> = plans.iter().map(|(_, _, p, _)| p.qoe_proxy).collect();
        let min_active = counts.iter().copied().min().unwrap_or(0);
        let mean_active = if counts.is_empty() {
            0.0
        } else {
            counts.iter().sum::<usize>() as f64 / counts.len() as f64
        };
        let objective = plans.iter().map(|(_, _, p, _)| p.objective).sum();
        let qoe_met = min_active >= self.cfg.qoe.min_active_receivers
            && aggregate_rs >= self.cfg.qoe.min_aggregate_rs;
        let vehicles = (0..n)
            .map(|v| VehicleMetrics {
                id: ids[v],
                rs: rs[v],
                base_rate: base[v].as_ref().map_or(0.0, |b| b.tx_rate),
                active: !plans
                    .iter()
                    .any(|(_, rx, p, _)| rx.iter().zip(&p.active).any(|(k, a)| *k == v && !*a)),
                layers: held[frv_idx][v],
            })
            .collect();
        self.metrics.push(MetricsRecord {
            iteration: it,
            chunk: c,
            frv,
            consensus_rounds: rounds,
            consensus_converged: true,
            aggregate_rs,
            mean_active,
            min_active,
            objective,
            sim_time_s: self.clock,
            qoe_met,
            vehicles,
        });
        let plans = plans
            .into_iter()
            .map(|(j, rx, plan, problem)| SenderPlan {
                sender: ids[j],
                decoded: rx.iter().map(|&k| held[k][j]).collect(),
                plan,
                problem,
            })
            .collect();
        Ok(ChunkResult {
            frv,
            plans,
            qoe_met,
        })
    }
}

/// Runs the sharing loop on `cfg` with the given power profile (the
/// configured active profile when `None`).
pub fn run_algorithm1(
    cfg: &ScenarioConfig,
    profile: Option<&str>,
) -> Result<RunOutcome, RunFailure> {
    let fail = |error: MacError| RunFailure {
        error,
        events: Vec::new(),
        metrics: Vec::new(),
    };
    cfg.validate()
        .map_err(|e| fail(MacError::Invalid(e.to_string())))?;
    let profile = cfg
        .profile(profile)
        .ok_or_else(|| {
            fail(MacError::Invalid(format!(
                "unknown power profile {profile:?}"
            )))
        })?
        .name
        .clone();
    let team = build_team(cfg, &profile).map_err(fail)?;
    if team.ids.len() == 1 {
        return Ok(RunOutcome {
            events: Vec::new(),
            metrics: Vec::new(),
            frv: team.ids[0],
            plans: Vec::new(),
            satisfied: true,
            iterations: 0,
            overlap: team.overlap,
            profile,
        });
    }
    let mut sim = Sim {
        cfg,
        ladder: cfg.ladder(),
        qos_threshold: cfg.qos_threshold(),
        team,
        queue: EventQueue::new(),
        log: Vec::new(),
        metrics: Vec::new(),
        clock: 0.0,
        next_msg: 0,
        next_contention: 0,
    };
    let mut last = None;
    let mut satisfied = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iterations {
        iterations = it + 1;
        let mut all_met = true;
        for c in 0..cfg.chunks {
            match sim.run_chunk(it, c) {
                Ok(r) => {
                    all_met &= r.qoe_met;
                    last = Some(r);
                }
                Err(error) => {
                    return Err(RunFailure {
                        error,
                        events: sim.log,
                        metrics: sim.metrics,
                    });
                }
            }
        }
        if all_met {
            satisfied = true;
            break;
        }
    }
    let last = last.expect("at least one chunk ran");
    Ok(RunOutcome {
        events: sim.log,
        metrics: sim.metrics,
        frv: last.frv,
        plans: last.plans,
        satisfied,
        iterations,
        overlap: sim.team.overlap,
        profile,
    })
}
