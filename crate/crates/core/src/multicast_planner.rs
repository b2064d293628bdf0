//! Choosing which receivers to shut down before multicasting enhancement
//! layers.
//!
//! A receiver set is feasible when
//! 1. the broadcast problem restricted to it has no outage,
//! 2. the mean per-receiver expected spectral efficiency `E[log2(1+SNR)]`
//!    reaches the QoS threshold,
//! 3. every active receiver's distortion at its assigned rate is below the
//!    distortion threshold,
//! 4. every shut-down receiver overlaps some active receiver with
//!    probability at least the overlap threshold (its view stays covered).
//!
//! Among feasible sets the planner keeps as many receivers as possible.

use crate::geometry::OverlapMatrix;
use crate::par::{self, Exec};
use crate::rate_power::{self, BroadcastProblem, BroadcastSolution, RateError};
use crate::svc_ladder::{LayerSelection, SvcLadder};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Receiver count above which exhaustive search is refused.
pub const MAX_EXHAUSTIVE_RECEIVERS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("no receiver set satisfies the QoS, distortion and overlap constraints")]
    NoFeasibleSet,
    #[error("exhaustive planning supports at most {MAX_EXHAUSTIVE_RECEIVERS} receivers, got {0}")]
    TooManyReceivers(usize),
    #[error("invalid shutdown problem: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rate(#[from] RateError),
}

pub type Result<T> = std::result::Result<T, PlanError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShutdownProblem {
    /// Receiver activity flags in here are ignored.
    pub broadcast: BroadcastProblem,
    pub ladder: SvcLadder,
    /// Overlap probabilities between the broadcast's receivers, same order.
    pub overlap: OverlapMatrix,
    /// Minimum mean `E[log2(1 + SNR)]` over active receivers.
    pub qos_threshold: f64,
    /// Active receivers need distortion strictly below this.
    pub distortion_threshold: f64,
    pub overlap_threshold: f64,
    pub n_mc: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticastPlan {
    pub receivers: Vec<VehicleId>,
    pub active: Vec<bool>,
    pub assigned_rate: Vec<f64>,
    pub layers: Vec<LayerSelection>,
    /// `Σ α_i E[log2(1+SNR_i)]` of the chosen set.
    pub objective: f64,
    /// Number of active receivers.
    pub qoe_proxy: usize,
    /// Greedy only: receivers in the order they were shut down.
    pub removal_order: Vec<VehicleId>,
}

impl MulticastPlan {
    pub fn shutdown_ids(&self) -> Vec<VehicleId> {
        self.receivers
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| !**a)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn min_active_rate(&self) -> f64 {
        self.assigned_rate
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|(r, _)| *r)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Receiver quantities that do not depend on which others are active.
#[derive(Debug, Clone)]
struct ReceiverTable {
    rate: Vec<f64>,
    log_term: Vec<f64>,
    in_outage: Vec<bool>,
    distortion_ok: Vec<bool>,
}

impl ShutdownProblem {
    fn n(&self) -> usize {
        self.broadcast.receivers.len()
    }

    fn validate(&self) -> Result<()> {
        self.broadcast.validate()?;
        if self.n() == 0 {
            return Err(PlanError::Invalid("no receivers".into()));
        }
        if self.overlap.len() != self.n() {
            return Err(PlanError::Invalid(format!(
                "overlap matrix is {0}x{0} for {1} receivers",
                self.overlap.len(),
                self.n()
            )));
        }
        for (name, v) in [
            ("qos_threshold", self.qos_threshold),
            ("distortion_threshold", self.distortion_threshold),
            ("overlap_threshold", self.overlap_threshold),
        ] {
            if !v.is_finite() {
                return Err(PlanError::Invalid(format!("{name} must be finite")));
            }
        }
        if self.n_mc == 0 {
            return Err(PlanError::Invalid("n_mc must be >= 1".into()));
        }
        Ok(())
    }

    fn table(&self, exec: Exec) -> Result<ReceiverTable> {
        let all = self.broadcast.with_active(&vec![true; self.n()]);
        let p = all.p_max;
        let mut rate = Vec::with_capacity(self.n());
        let mut in_outage = Vec::with_capacity(self.n());
        let mut distortion_ok = Vec::with_capacity(self.n());
        for r in &all.receivers {
            let x = rate_power::achievable_rate(r, p, all.bandwidth)?;
            rate.push(x);
            in_outage.push(x < r.outage_floor);
            distortion_ok.push(
                self.ladder
                    .distortion(x)
                    .is_ok_and(|d| d < self.distortion_threshold),
            );
        }
        let log_term = rate_power::expected_log_terms_with(exec, &all, p, self.n_mc, self.seed);
        Ok(ReceiverTable {
            rate,
            log_term,
            in_outage,
            distortion_ok,
        })
    }

    fn covered(&self, active: &[bool]) -> bool {
        (0..self.n()).filter(|&i| !active[i]).all(|i| {
            (0..self.n()).any(|k| active[k] && self.overlap.prob(i, k) >= self.overlap_threshold)
        })
    }

    fn feasible(&self, t: &ReceiverTable, active: &[bool]) -> Option<f64> {
        let count = active.iter().filter(|a| **a).count();
        if count == 0 {
            return None;
        }
        let mut objective = 0.0;
        for i in 0..self.n() {
            if active[i] {
                if t.in_outage[i] || !t.distortion_ok[i] {
                    return None;
                }
                objective += t.log_term[i];
            }
        }
        if objective / (count as f64) < self.qos_threshold {
            return None;
        }
        self.covered(active).then_some(objective)
    }

    fn plan_for(&self, t: &ReceiverTable, active: Vec<bool>, objective: f64) -> MulticastPlan {
        let assigned_rate = t
            .rate
            .iter()
            .zip(&active)
            .map(|(r, a)| if *a { *r } else { 0.0 })
            .collect();
        let plan = MulticastPlan {
            receivers: self.broadcast.receivers.iter().map(|r| r.id).collect(),
            qoe_proxy: active.iter().filter(|a| **a).count(),
            active,
            assigned_rate,
            layers: Vec::new(),
            objective,
            removal_order: Vec::new(),
        };
        assign_layers(plan, &self.ladder)
    }
}

/// Checks the four constraint families on an already computed plan, straight
/// from the problem data and an independent broadcast solve.
pub fn verify_plan(
    prob: &ShutdownProblem,
    plan: &MulticastPlan,
) -> std::result::Result<(), String> {
    let n = prob.broadcast.receivers.len();
    if plan.active.len() != n {
        return Err("plan size differs from receiver count".into());
    }
    let count = plan.active.iter().filter(|a| **a).count();
    if count == 0 {
        return Err("empty active set".into());
    }
    let sol: BroadcastSolution = rate_power::solve_broadcast(
        &prob.broadcast.with_active(&plan.active),
        prob.n_mc,
        prob.seed,
    )
    .map_err(|e| format!("broadcast: {e}"))?;
    if sol.objective_value / (count as f64) < prob.qos_threshold {
        return Err(format!(
            "QoS {} below {}",
            sol.objective_value / count as f64,
            prob.qos_threshold
        ));
    }
    for i in 0..n {
        if plan.active[i] {
            let d = prob
                .ladder
                .distortion(sol.assigned_rate[i])
                .map_err(|e| format!("receiver {i}: {e}"))?;
            if !(d < prob.distortion_threshold) {
                return Err(format!(
                    "receiver {i}: distortion {d} >= {}",
                    prob.distortion_threshold
                ));
            }
        } else if !(0..n)
            .any(|k| plan.active[k] && prob.overlap.prob(i, k) >= prob.overlap_threshold)
        {
            return Err(format!("shut-down receiver {i} is not covered"));
        }
    }
    Ok(())
}

/// Orders candidate sets: larger first, then higher objective, then the
/// lexicographically smallest list of shut-down ids.
fn better(a: &(Vec<bool>, f64, Vec<VehicleId>), b: &(Vec<bool>, f64, Vec<VehicleId>)) -> Ordering {
    let ca = a.0.iter().filter(|x| **x).count();
    let cb = b.0.iter().filter(|x| **x).count();
    cb.cmp(&ca).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2))
}

pub fn plan_exhaustive(prob: &ShutdownProblem) -> Result<MulticastPlan> {
    plan_exhaustive_with(Exec::default(), prob)
}

pub fn plan_exhaustive_with(exec: Exec, prob: &ShutdownProblem) -> Result<MulticastPlan> {
    prob.validate()?;
    let n = prob.n();
    if n > MAX_EXHAUSTIVE_RECEIVERS {
        return Err(PlanError::TooManyReceivers(n));
    }
    let table = prob.table(exec)?;
    let ids: Vec<VehicleId> = prob.broadcast.receivers.iter().map(|r| r.id).collect();
    let candidates = par::map_range(exec, 1usize << n, |mask| {
        let active: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        prob.feasible(&table, &active).map(|obj| {
            let mut off: Vec<VehicleId> = (0..n).filter(|&i| !active[i]).map(|i| ids[i]).collect();
            off.sort();
            (active, obj, off)
        })
    });
    let best = candidates
        .into_iter()
        .flatten()
        .min_by(better)
        .ok_or(PlanError::NoFeasibleSet)?;
    Ok(prob.plan_for(&table, best.0, best.1))
}

/// Weakest-first removal, each step only removing a receiver whose view (and
/// the views of those already removed) stays covered.
pub fn plan_greedy(prob: &ShutdownProblem) -> Result<MulticastPlan> {
    prob.validate()?;
    let n = prob.n();
    let table = prob.table(Exec::default())?;
    let order: Vec<usize> = {
        let mut idx: Vec<usize> = (0..n).collect();
        let rs = &prob.broadcast.receivers;
        idx.sort_by(|&a, &b| {
            rs[a]
                .gain
                .total_cmp(&rs[b].gain)
                .then(rs[a].id.cmp(&rs[b].id))
        });
        idx
    };
    let mut active = vec![true; n];
    let mut removed = Vec::new();
    loop {
        if let Some(obj) = prob.feasible(&table, &active) {
            let mut plan = prob.plan_for(&table, active, obj);
            plan.removal_order = removed;
            return Ok(plan);
        }
        let next = order.iter().copied().find(|&i| {
            if !active[i] {
                return false;
            }
            let mut trial = active.clone();
            trial[i] = false;
            trial.iter().any(|a| *a) && prob.covered(&trial)
        });
        match next {
            Some(i) => {
                active[i] = false;
                removed.push(prob.broadcast.receivers[i].id);
            }
            None => return Err(PlanError::NoFeasibleSet),
        }
    }
}

/// Fills per-receiver layer selections: the rate knapsack for active
/// receivers, base layer only for shut-down ones.
pub fn assign_layers(mut plan: MulticastPlan, ladder: &SvcLadder) -> MulticastPlan {
    plan.layers = plan
        .active
        .iter()
        .zip(&plan.assigned_rate)
        .map(|(a, r)| {
            if *a {
                ladder.knapsack_layers(*r)
            } else {
                LayerSelection::base_only(ladder.len())
            }
        })
        .collect();
    plan
}
