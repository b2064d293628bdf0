//! Outage-safe broadcast power and rate assignment.
//!
//! A sender picks one transmit power per chunk. The objective
//! `E[Σ α_i log2(1 + p|h_i|²/s_i)]` is increasing in `p`, so the optimum sits
//! at the top of the feasible box; what needs solving is whether the box is
//! feasible at all (every active receiver must reach its outage floor) and
//! the smallest power that keeps it so.

use crate::par::{self, Exec};
use crate::rng;
use crate::VehicleId;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("receiver {0} cannot reach its outage floor even at maximum power")]
    OutageInfeasible(VehicleId),
    #[error("no active receiver")]
    EmptyActiveSet,
}

pub type Result<T> = std::result::Result<T, RateError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastReceiver {
    pub id: VehicleId,
    /// Mean received power gain |h|² (path gain times unit-mean fading).
    pub gain: f64,
    /// Noise power s_i in W.
    pub noise_power: f64,
    pub active: bool,
    /// R*_i, bits/s.
    pub outage_floor: f64,
    /// E[C_i], bits/s.
    pub capacity_ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastProblem {
    pub tx: VehicleId,
    pub receivers: Vec<BroadcastReceiver>,
    pub p_th: f64,
    pub p_max: f64,
    /// B_W in Hz.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BroadcastSolution {
    pub p_star: f64,
    /// Smallest power in the box that meets every active outage floor.
    pub p_required: f64,
    /// Aligned with the problem's receivers; 0 for inactive receivers.
    pub assigned_rate: Vec<f64>,
    /// Per-receiver `E[log2(1 + p*|h|²x/s)]`, aligned with the receivers and
    /// evaluated for inactive receivers too.
    pub expected_log_terms: Vec<f64>,
    /// `Σ α_i` of the terms above.
    pub objective_value: f64,
}

impl BroadcastProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_th > 0.0 && self.p_th <= self.p_max && self.p_max.is_finite()) {
            return Err(RateError::Domain(format!(
                "need 0 < p_th <= p_max, got p_th={} p_max={}",
                self.p_th, self.p_max
            )));
        }
        if !(self.bandwidth > 0.0) {
            return Err(RateError::Domain(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        for r in &self.receivers {
            if !(r.noise_power > 0.0) {
                return Err(RateError::Domain(format!(
                    "receiver {}: noise power must be > 0",
                    r.id
                )));
            }
            if !(r.gain >= 0.0) {
                return Err(RateError::Domain(format!(
                    "receiver {}: gain must be >= 0",
                    r.id
                )));
            }
            if !(r.outage_floor >= 0.0) {
                return Err(RateError::Domain(format!(
                    "receiver {}: outage floor must be >= 0",
                    r.id
                )));
            }
            if !(r.capacity_ceiling > 0.0) {
                return Err(RateError::Domain(format!(
                    "receiver {}: capacity ceiling must be > 0",
                    r.id
                )));
            }
        }
        Ok(())
    }

    /// Same problem with the given activity flags.
    pub fn with_active(&self, active: &[bool]) -> Self {
        let mut out = self.clone();
        for (r, a) in out.receivers.iter_mut().zip(active) {
            r.active = *a;
        }
        out
    }
}

/// `B_W log2(1 + p|h|²/s)`.
pub fn instantaneous_rate(p: f64, gain: f64, noise: f64, bandwidth: f64) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(RateError::Domain(format!(
            "noise power must be > 0, got {noise}"
        )));
    }
    if !(p >= 0.0) {
        return Err(RateError::Domain(format!("power must be >= 0, got {p}")));
    }
    Ok(bandwidth * (p * gain / noise).ln_1p() / std::f64::consts::LN_2)
}

/// Best rate receiver `r` can be assigned at power `p`: the instantaneous
/// rate at its mean gain, capped by its capacity ceiling.
pub fn achievable_rate(r: &BroadcastReceiver, p: f64, bandwidth: f64) -> Result<f64> {
    Ok(instantaneous_rate(p, r.gain, r.noise_power, bandwidth)?.min(r.capacity_ceiling))
}

/// Receivers sorted weak to strong; ties by id.
pub fn sort_receivers_by_gain(receivers: &[BroadcastReceiver]) -> Vec<BroadcastReceiver> {
    let mut out = receivers.to_vec();
    out.sort_by(|a, b| a.gain.total_cmp(&b.gain).then(a.id.cmp(&b.id)));
    out
}

/// Ids of active receivers that miss their floor at `p_max`, weakest first.
pub fn outage_receivers(prob: &BroadcastProblem) -> Result<Vec<VehicleId>> {
    let mut out = Vec::new();
    for r in sort_receivers_by_gain(&prob.receivers) {
        if r.active && achievable_rate(&r, prob.p_max, prob.bandwidth)? < r.outage_floor {
            out.push(r.id);
        }
    }
    Ok(out)
}

/// Unit-mean exponential fading draws, `n_mc` per receiver, laid out
/// receiver-major. Stream `i` of `seed` feeds receiver `i`, so the draws of
/// one receiver do not depend on how many others there are.
pub fn fading_draws(seed: u64, n_receivers: usize, n_mc: usize) -> Vec<Vec<f64>> {
    (0..n_receivers)
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            (0..n_mc).map(|_| Exp1.sample(&mut rng)).collect()
        })
        .collect()
}

pub fn solve_broadcast(
    prob: &BroadcastProblem,
    n_mc: usize,
    seed: u64,
) -> Result<BroadcastSolution> {
    solve_broadcast_with(Exec::default(), prob, n_mc, seed)
}

pub fn solve_broadcast_with(
    exec: Exec,
    prob: &BroadcastProblem,
    n_mc: usize,
    seed: u64,
) -> Result<BroadcastSolution> {
    prob.validate()?;
    if n_mc == 0 {
        return Err(RateError::Domain("n_mc must be >= 1".into()));
    }
    if !prob.receivers.iter().any(|r| r.active) {
        return Err(RateError::EmptyActiveSet);
    }
    if let Some(&id) = outage_receivers(prob)?.first() {
        return Err(RateError::OutageInfeasible(id));
    }
    let floors_met = |p: f64| {
        prob.receivers
            .iter()
            .filter(|r| r.active)
            .all(|r| achievable_rate(r, p, prob.bandwidth).is_ok_and(|x| x >= r.outage_floor))
    };
    let p_required = if floors_met(prob.p_th) {
        prob.p_th
    } else {
        let (mut lo, mut hi) = (prob.p_th, prob.p_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if floors_met(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let p_star = prob.p_max;
    let assigned_rate = prob
        .receivers
        .iter()
        .map(|r| {
            if r.active {
                achievable_rate(r, p_star, prob.bandwidth)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let expected_log_terms = expected_log_terms_with(exec, prob, p_star, n_mc, seed);
    let objective_value = prob
        .receivers
        .iter()
        .zip(&expected_log_terms)
        .filter(|(r, _)| r.active)
        .map(|(_, t)| t)
        .sum();
    Ok(BroadcastSolution {
        p_star,
        p_required,
        assigned_rate,
        expected_log_terms,
        objective_value,
    })
}

/// `E[log2(1 + p|h_i|²x/s_i)]` per receiver over [`fading_draws`].
pub fn expected_log_terms_with(
    exec: Exec,
    prob: &BroadcastProblem,
    p: f64,
    n_mc: usize,
    seed: u64,
) -> Vec<f64> {
    let draws = fading_draws(seed, prob.receivers.len(), n_mc);
    prob.receivers
        .iter()
        .zip(&draws)
        .map(|(r, xs)| {
            let snr = p * r.gain / r.noise_power;
            par::sum_range(exec, xs.len(), |k| {
                (snr * xs[k]).ln_1p() / std::f64::consts::LN_2
            }) / xs.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rx(id: u32, gain: f64, floor: f64, ceiling: f64) -> BroadcastReceiver {
        BroadcastReceiver {
            id: VehicleId(id),
            gain,
            noise_power: 1e-6,
            active: true,
            outage_floor: floor,
            capacity_ceiling: ceiling,
        }
    }

    fn problem(receivers: Vec<BroadcastReceiver>, p_th: f64, p_max: f64) -> BroadcastProblem {
        BroadcastProblem {
            tx: VehicleId(99),
            receivers,
            p_th,
            p_max,
            bandwidth: 1e5,
        }
    }

    #[test]
    fn instantaneous_rate_cases() {
        assert_eq!(instantaneous_rate(0.0, 1.0, 1.0, 1e5).unwrap(), 0.0);
        assert!((instantaneous_rate(1.0, 1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((instantaneous_rate(3.0, 1.0, 1.0, 1e5).unwrap() - 2e5).abs() < 1e-9);
        assert!(instantaneous_rate(1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn unconstrained_goes_to_p_max() {
        let p = problem(
            vec![rx(1, 1e-6, 0.0, 1e12), rx(2, 3e-6, 0.0, 1e12)],
            0.5,
            8.0,
        );
        let s = solve_broadcast(&p, 512, 1).unwrap();
        assert_eq!(s.p_star, 8.0);
        assert_eq!(s.p_required, 0.5);
    }

    #[test]
    fn floor_at_mid_power_still_uses_p_max() {
        let b = 1e5;
        let p_mid = 2.0;
        let floor = instantaneous_rate(p_mid, 1e-6, 1e-6, b).unwrap();
        let ceiling = 2.5e5;
        let p = problem(vec![rx(1, 1e-6, floor, ceiling)], 0.5, 8.0);
        let s = solve_broadcast(&p, 64, 1).unwrap();
        assert_eq!(s.p_star, 8.0);
        let want = instantaneous_rate(8.0, 1e-6, 1e-6, b).unwrap().min(ceiling);
        assert_eq!(s.assigned_rate[0], want);
        assert!((s.p_required - p_mid).abs() < 1e-9, "{}", s.p_required);
    }

    #[test]
    fn outage_and_empty_errors() {
        let p = problem(
            vec![rx(1, 1e-6, 1e9, 1e12), rx(2, 1e-3, 0.0, 1e12)],
            0.5,
            8.0,
        );
        assert_eq!(
            solve_broadcast(&p, 8, 1).unwrap_err(),
            RateError::OutageInfeasible(VehicleId(1))
        );
        let mut p = problem(vec![rx(1, 1e-6, 0.0, 1e12)], 0.5, 8.0);
        p.receivers[0].active = false;
        assert_eq!(
            solve_broadcast(&p, 8, 1).unwrap_err(),
            RateError::EmptyActiveSet
        );
    }

    #[test]
    fn ceiling_below_floor_is_outage() {
        let p = problem(vec![rx(4, 1.0, 2e5, 1e5)], 0.5, 8.0);
        assert_eq!(
            solve_broadcast(&p, 8, 1).unwrap_err(),
            RateError::OutageInfeasible(VehicleId(4))
        );
    }

    #[test]
    fn rates_increase_with_gain_for_two_profiles() {
        let gains = [2e-7, 5e-7, 1e-6, 2e-6, 4e-6];
        for p_max in [2.0, 10.0] {
            let p = problem(
                gains
                    .iter()
                    .enumerate()
                    .map(|(i, &g)| rx(i as u32, g, 0.0, 1e12))
                    .collect(),
                0.1,
                p_max,
            );
            let s = solve_broadcast(&p, 256, 3).unwrap();
            for (i, &g) in gains.iter().enumerate() {
                let want = instantaneous_rate(p_max, g, 1e-6, 1e5).unwrap();
                assert!((s.assigned_rate[i] - want).abs() < 1e-9);
            }
            assert!(s.assigned_rate.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn sort_by_gain_with_id_ties() {
        let rs = vec![
            rx(7, 3.0, 0.0, 1.0),
            rx(5, 1.0, 0.0, 1.0),
            rx(6, 2.0, 0.0, 1.0),
        ];
        let ids: Vec<u32> = sort_receivers_by_gain(&rs).iter().map(|r| r.id.0).collect();
        assert_eq!(ids, vec![5, 6, 7]);
        let rs = vec![
            rx(3, 1.0, 0.0, 1.0),
            rx(1, 1.0, 0.0, 1.0),
            rx(2, 1.0, 0.0, 1.0),
        ];
        let ids: Vec<u32> = sort_receivers_by_gain(&rs).iter().map(|r| r.id.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn draws_do_not_depend_on_receiver_count() {
        let a = fading_draws(11, 2, 16);
        let b = fading_draws(11, 5, 16);
        assert_eq!(a[..], b[..2]);
    }

    #[test]
    fn exec_strategies_agree() {
        let p = problem(
            vec![rx(1, 1e-6, 0.0, 1e12), rx(2, 3e-6, 0.0, 1e12)],
            0.5,
            8.0,
        );
        let a = solve_broadcast_with(Exec::Sequential, &p, 3000, 9).unwrap();
        let b = solve_broadcast_with(Exec::Parallel, &p, 3000, 9).unwrap();
        assert_eq!(a, b);
    }

    prop_compose! {
        fn arb_problem()(
            gains in proptest::collection::vec(1e-8f64..1e-5, 1..6),
            floors in proptest::collection::vec(0.0f64..4e5, 6),
            ceilings in proptest::collection::vec(1e4f64..1e6, 6),
            p_th in 0.01f64..1.0,
            span in 1.0f64..30.0,
        ) -> BroadcastProblem {
            let receivers = gains.iter().enumerate()
                .map(|(i, &g)| rx(i as u32, g, floors[i], ceilings[i]))
                .collect();
            problem(receivers, p_th, p_th * span)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn eq2_bounds_hold(p in arb_problem()) {
            if let Ok(s) = solve_broadcast(&p, 64, 2) {
                prop_assert!(p.p_th <= s.p_star && s.p_star <= p.p_max);
                prop_assert!(s.p_required <= s.p_star);
                for (r, &rate) in p.receivers.iter().zip(&s.assigned_rate) {
                    prop_assert!(r.outage_floor <= rate && rate <= r.capacity_ceiling);
                }
            }
        }

        #[test]
        fn objective_nondecreasing_in_p_max(p in arb_problem(), extra in 0.0f64..20.0) {
            let mut q = p.clone();
            q.p_max += extra;
            if let Ok(a) = solve_broadcast(&p, 64, 2) {
                let b = solve_broadcast(&q, 64, 2).unwrap();
                prop_assert!(b.objective_value >= a.objective_value);
            }
        }

        #[test]
        fn dropping_weakest_keeps_min_rate(p in arb_problem()) {
            let active = p.receivers.iter().filter(|r| r.active).count();
            prop_assume!(active >= 2);
            if let Ok(a) = solve_broadcast(&p, 16, 2) {
                let weakest = sort_receivers_by_gain(&p.receivers)[0].id;
                let flags: Vec<bool> = p.receivers.iter().map(|r| r.id != weakest).collect();
                let q = p.with_active(&flags);
                let b = solve_broadcast(&q, 16, 2).unwrap();
                let min_of = |s: &BroadcastSolution, prob: &BroadcastProblem| prob.receivers.iter()
                    .zip(&s.assigned_rate).filter(|(r, _)| r.active)
                    .map(|(_, x)| *x).fold(f64::INFINITY, f64::min);
                prop_assert!(min_of(&b, &q) >= min_of(&a, &p));
            }
        }

        #[test]
        fn adding_receiver_never_rescues_feasibility(p in arb_problem(), g in 1e-8f64..1e-5, floor in 0.0f64..4e5) {
            let mut q = p.clone();
            q.receivers.push(rx(50, g, floor, 5e5));
            if solve_broadcast(&p, 8, 2).is_err() {
                prop_assert!(solve_broadcast(&q, 8, 2).is_err());
            }
        }
    }
}
