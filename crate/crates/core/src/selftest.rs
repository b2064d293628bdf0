//! Oracle suites run by `uwsvc selftest`.
//!
//! | suite | oracle | minimum cases |
//! |---|---|---|
//! | knapsack | enumeration of all chain-valid flag vectors | 1000 |
//! | planner | per-subset enumeration through `verify_plan` | 200 |
//! | consensus | brute-force maximum and BFS diameter | 500 |
//! | capacity | `B log2(1 + γ)` on flat channels | 50 |

use crate::channel::{self, ChannelState, FrequencyGrid, PowerSpectrum};
use crate::consensus::{self, ElectionParams, Nodes, Schedule};
use crate::geometry::OverlapMatrix;
use crate::multicast_planner::{self, MulticastPlan, PlanError, ShutdownProblem};
use crate::rate_power::{BroadcastProblem, BroadcastReceiver};
use crate::rng::{self, SimRng};
use crate::svc_ladder::{self, LayerSelection, RdParams, SvcLadder};
use crate::VehicleId;
use rand::Rng;
use std::collections::BTreeMap;
use std::fmt;

pub const MIN_KNAPSACK_CASES: usize = 1000;
pub const MIN_PLANNER_CASES: usize = 200;
pub const MIN_CONSENSUS_CASES: usize = 500;
pub const MIN_CAPACITY_CASES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub min_cases: usize,
    /// First few failure descriptions.
    pub failures: Vec<String>,
    pub failed_cases: usize,
}

impl SuiteReport {
    fn new(name: &'static str, min_cases: usize) -> Self {
        Self {
            name,
            cases: 0,
            min_cases,
            failures: Vec::new(),
            failed_cases: 0,
        }
    }

    fn fail(&mut self, msg: String) {
        self.failed_cases += 1;
        if self.failures.len() < 5 {
            self.failures.push(msg);
        }
    }

    pub fn passed(&self) -> bool {
        self.failed_cases == 0 && self.cases >= self.min_cases
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} cases={} (min {}) failed={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.min_cases,
            self.failed_cases
        )?;
        for m in &self.failures {
            write!(f, "\n    {m}")?;
        }
        Ok(())
    }
}

pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        knapsack_suite(MIN_KNAPSACK_CASES, seed, &|l, r| l.knapsack_layers(r)),
        planner_suite(MIN_PLANNER_CASES, seed),
        consensus_suite(MIN_CONSENSUS_CASES, seed),
        capacity_suite(MIN_CAPACITY_CASES, seed),
    ]
}

/// Random ladder with `1..=max_layers` layers and positive increments.
pub fn random_ladder(r: &mut SimRng, max_layers: usize) -> SvcLadder {
    let n = r.random_range(1..=max_layers);
    let mut cum = Vec::with_capacity(n);
    let mut acc = 0.0;
    for _ in 0..n {
        // Whole kbps so budgets can land exactly on a cumulative rate.
        acc += r.random_range(1..200u32) as f64 * 1e3;
        cum.push(acc);
    }
    let fr: Vec<f64> = (0..n).map(|i| 2f64.powi(i as i32)).collect();
    SvcLadder::from_cumulative(
        &cum,
        &fr,
        None,
        RdParams {
            theta: 1e5,
            r0: 0.0,
            d0: 1.0,
        },
    )
    .expect("valid ladder")
}

/// Best chain-constrained selection by enumerating every flag vector.
pub fn enumerate_knapsack(ladder: &SvcLadder, budget: f64) -> (Vec<bool>, bool) {
    let n = ladder.len();
    let inc: Vec<f64> = ladder.layers().iter().map(|l| l.incremental_rate).collect();
    let mut best: Option<(f64, Vec<bool>)> = None;
    for mask in 0u32..(1 << n) {
        let flags: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        if !flags[0] || (1..n).any(|l| flags[l] && !flags[l - 1]) {
            continue;
        }
        let total: f64 = (0..n).filter(|&l| flags[l]).map(|l| inc[l]).sum();
        // Sum of increments can differ from the cumulative rate by rounding.
        let cum = ladder.cumulative_rate(flags.iter().filter(|f| **f).count() - 1);
        if cum > budget {
            continue;
        }
        if best.as_ref().is_none_or(|b| total > b.0) {
            best = Some((total, flags));
        }
    }
    match best {
        Some((_, f)) => (f, false),
        None => ((0..n).map(|i| i == 0).collect(), true),
    }
}

pub fn knapsack_suite(
    cases: usize,
    seed: u64,
    knapsack: &dyn Fn(&SvcLadder, f64) -> LayerSelection,
) -> SuiteReport {
    let mut rep = SuiteReport::new("knapsack", MIN_KNAPSACK_CASES);
    let mut r = rng::stream(seed, rng::mix(&[100]));
    for case in 0..cases {
        let ladder = random_ladder(&mut r, 10);
        let budget = match case % 4 {
            // Exactly on a cumulative rate.
            0 => ladder.cumulative_rate(r.random_range(0..ladder.len())),
            1 => 0.0,
            _ => r.random_range(0.0..ladder.top_rate() * 1.2),
        };
        let got = knapsack(&ladder, budget);
        let want = enumerate_knapsack(&ladder, budget);
        rep.cases += 1;
        if got.flags() != want.0.as_slice() || got.base_over_budget != want.1 {
            rep.fail(format!(
                "case {case}: budget {budget}: got {:?}, want {:?}",
                got.flags(),
                want.0
            ));
        }
    }
    rep
}

/// Random shutdown problem with `n` receivers.
pub fn random_shutdown_problem(r: &mut SimRng, n: usize, n_mc: usize) -> ShutdownProblem {
    let ladder = svc_ladder::default_ladder();
    let noise = 1e-9;
    let p_max = r.random_range(1.0..10.0);
    let receivers = (0..n)
        .map(|i| {
            let gain = 10f64.powf(r.random_range(-10.5..-7.5));
            let inst = 1e5 * (1.0 + p_max * gain / noise).log2();
            BroadcastReceiver {
                id: VehicleId(i as u32),
                gain,
                noise_power: noise,
                active: true,
                outage_floor: if r.random_bool(0.5) {
                    ladder.base_rate()
                } else {
                    0.0
                },
                capacity_ceiling: (inst * r.random_range(0.7..1.3)).max(1.0),
            }
        })
        .collect();
    let mut probs = vec![0.0; n * n];
    for i in 0..n {
        probs[i * n + i] = 1.0;
        for j in i + 1..n {
            let p = r.random_range(0.0..1.0);
            probs[i * n + j] = p;
            probs[j * n + i] = p;
        }
    }
    ShutdownProblem {
        broadcast: BroadcastProblem {
            tx: VehicleId(1000),
            receivers,
            p_th: p_max / 4.0,
            p_max,
            bandwidth: 1e5,
        },
        ladder,
        overlap: OverlapMatrix::from_probabilities(n, &probs).expect("valid overlap"),
        qos_threshold: r.random_range(0.0..6.0),
        distortion_threshold: r.random_range(2.0..4.5),
        overlap_threshold: r.random_range(0.2..0.9),
        n_mc,
        seed: r.random(),
    }
}

/// Largest feasible active-set size by checking every subset with
/// [`multicast_planner::verify_plan`]; `None` when nothing is feasible.
pub fn enumerate_best_size(prob: &ShutdownProblem) -> Option<usize> {
    let n = prob.broadcast.receivers.len();
    let mut best = None;
    for mask in 1usize..(1 << n) {
        let active: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let size = active.iter().filter(|a| **a).count();
        if best.is_some_and(|b| b >= size) {
            continue;
        }
        let plan = MulticastPlan {
            receivers: prob.broadcast.receivers.iter().map(|r| r.id).collect(),
            active,
            assigned_rate: vec![0.0; n],
            layers: Vec::new(),
            objective: 0.0,
            qoe_proxy: size,
            removal_order: Vec::new(),
        };
        if multicast_planner::verify_plan(prob, &plan).is_ok() {
            best = Some(size);
        }
    }
    best
}

pub fn planner_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("planner", MIN_PLANNER_CASES);
    let mut r = rng::stream(seed, rng::mix(&[101]));
    for case in 0..cases {
        let n = r.random_range(1..=8);
        let prob = random_shutdown_problem(&mut r, n, 32);
        rep.cases += 1;
        let want = enumerate_best_size(&prob);
        let ex = multicast_planner::plan_exhaustive(&prob);
        match (&ex, want) {
            (Ok(p), Some(w)) if p.qoe_proxy == w => {
                if let Err(e) = multicast_planner::verify_plan(&prob, p) {
                    rep.fail(format!("case {case}: exhaustive plan infeasible: {e}"));
                }
            }
            (Err(PlanError::NoFeasibleSet), None) => {}
            (got, w) => {
                rep.fail(format!(
                    "case {case}: exhaustive {:?} vs enumerated {w:?}",
                    got.as_ref().map(|p| p.qoe_proxy)
                ));
                continue;
            }
        }
        match multicast_planner::plan_greedy(&prob) {
            Ok(g) => {
                if let Err(e) = multicast_planner::verify_plan(&prob, &g) {
                    rep.fail(format!("case {case}: greedy plan infeasible: {e}"));
                }
                if want.is_none_or(|w| g.qoe_proxy > w) {
                    rep.fail(format!(
                        "case {case}: greedy size {} beats exhaustive {want:?}",
                        g.qoe_proxy
                    ));
                }
            }
            Err(PlanError::NoFeasibleSet) => {}
            Err(e) => rep.fail(format!("case {case}: greedy error {e}")),
        }
    }
    rep
}

/// Random connected graph on `n` nodes: a random tree plus extra edges.
pub fn random_connected_graph(r: &mut SimRng, n: usize, values: &[f64]) -> Nodes {
    let ids: Vec<(VehicleId, f64)> = (0..n).map(|i| (VehicleId(i as u32), values[i])).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((VehicleId(i as u32), VehicleId(r.random_range(0..i) as u32)));
    }
    let p_extra = r.random_range(0.0..0.4);
    for a in 0..n {
        for b in a + 1..n {
            if r.random_bool(p_extra) {
                edges.push((VehicleId(a as u32), VehicleId(b as u32)));
            }
        }
    }
    consensus::build_nodes(&ids, &edges)
}

pub fn consensus_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("consensus", MIN_CONSENSUS_CASES);
    let mut r = rng::stream(seed, rng::mix(&[102]));
    for case in 0..cases {
        let n = r.random_range(1..=12);
        // Coarse values so ties at the maximum happen regularly.
        let values: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..8u32) as f64 / 4.0)
            .collect();
        let nodes = random_connected_graph(&mut r, n, &values);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let diameter = consensus::graph_diameter(&nodes).expect("connected");
        rep.cases += 1;
        let mut frvs = Vec::new();
        for schedule in [Schedule::RoundRobin, Schedule::Random { seed: r.random() }] {
            let out = consensus::run_consensus(nodes.clone(), &schedule, 4 * n + 4);
            if !out.converged
                || out.nodes.values().any(|x| x.y != max)
                || out.rounds > diameter
            {
                rep.fail(format!(
                    "case {case}: {schedule:?}: rounds {} > diameter {diameter} or wrong value",
                    out.rounds
                ));
                continue;
            }
            let own: BTreeMap<VehicleId, f64> =
                (0..n).map(|i| (VehicleId(i as u32), values[i])).collect();
            let params = ElectionParams {
                timeout: 1.0,
                max_attempts: 4,
                start: 0.0,
            };
            match consensus::elect_frv(&out.nodes, &own, params, |_, _, _| Some(0.1)) {
                Ok(e) => frvs.push(e.frv),
                Err(e) => rep.fail(format!("case {case}: election {e}")),
            }
        }
        let want = (0..n)
            .find(|&i| values[i] == max)
            .map(|i| VehicleId(i as u32));
        if frvs.iter().any(|f| Some(*f) != want) {
            rep.fail(format!("case {case}: FRVs {frvs:?}, want {want:?}"));
        }
    }
    rep
}

pub fn capacity_suite(cases: usize, seed: u64) -> SuiteReport {
    let mut rep = SuiteReport::new("capacity", MIN_CAPACITY_CASES);
    let mut r = rng::stream(seed, rng::mix(&[103]));
    for case in 0..cases {
        let gamma = if case < 4 {
            [0.1, 1.0, 10.0, 100.0][case]
        } else {
            10f64.powf(r.random_range(-2.0..3.0))
        };
        let f_lo = r.random_range(1e3..60e3);
        let bw = r.random_range(1e3..1e5);
        let grid = FrequencyGrid::new(f_lo, f_lo + bw, 1024).expect("valid grid");
        let s = 1e-12;
        let chan = ChannelState {
            tx: VehicleId(0),
            rx: VehicleId(1),
            gain_samples: vec![1.0; 1024],
            fading_gain: 1.0,
            delay: 0.0,
            noise_psd: vec![s; 1024],
            chunk: 0,
        };
        let pwr = PowerSpectrum::flat(gamma * s * bw, &grid).expect("valid power");
        let got = channel::capacity(&chan, &pwr, &grid).expect("capacity");
        let want = bw * (1.0 + gamma).log2();
        rep.cases += 1;
        if !((got - want).abs() <= 1e-3 * want) {
            rep.fail(format!("case {case}: γ={gamma} B={bw}: {got} vs {want}"));
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_their_minimums() {
        for rep in run_all(7) {
            assert!(rep.passed(), "{rep}");
            assert!(rep.cases >= rep.min_cases);
        }
    }

    #[test]
    fn off_by_one_knapsack_fails_loudly() {
        let drop_top = |l: &SvcLadder, r: f64| {
            let s = l.knapsack_layers(r);
            match s.layer_count() {
                c if c > 1 => l.knapsack_layers(l.cumulative_rate(c - 2)),
                _ => s,
            }
        };
        let rep = knapsack_suite(MIN_KNAPSACK_CASES, 7, &drop_top);
        assert!(!rep.passed());
        assert!(rep.failed_cases > 100);
        assert!(rep.to_string().starts_with("FAIL"));
    }

    #[test]
    fn strict_budget_knapsack_is_caught_on_ties() {
        let strict = |l: &SvcLadder, r: f64| l.knapsack_layers(r * (1.0 - 1e-12));
        assert!(!knapsack_suite(MIN_KNAPSACK_CASES, 3, &strict).passed());
    }

    #[test]
    fn too_few_cases_is_a_failure() {
        let rep = capacity_suite(3, 1);
        assert_eq!(rep.failed_cases, 0);
        assert!(!rep.passed());
    }

    #[test]
    fn enumerator_picks_three_layers_at_300_kbps() {
        let (flags, over) = enumerate_knapsack(&svc_ladder::default_ladder(), 300e3);
        assert_eq!(flags, vec![true, true, true, false, false]);
        assert!(!over);
    }
}
