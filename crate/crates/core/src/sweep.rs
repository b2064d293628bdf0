//! Broadcast rate against the number of weakest receivers shut down, per
//! power profile.

use crate::mac_engine::{build_team, MacError};
use crate::par::{self, Exec};
use crate::rate_power::{self, BroadcastProblem, BroadcastReceiver};
use crate::rng;
use crate::scenario::ScenarioConfig;
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("transmitter {0} has no receiver in range")]
    NoReceivers(VehicleId),
    #[error(
        "cannot shut down {requested} of {available} receivers; at least one must stay active"
    )]
    TooManyShutdowns { requested: usize, available: usize },
    #[error(transparent)]
    Setup(#[from] MacError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReceiver {
    pub id: VehicleId,
    pub gain: f64,
    pub active: bool,
    /// Assigned rate at full power, 0 when shut down.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub profile: String,
    pub transmitter: VehicleId,
    pub shutdowns: usize,
    /// False when some active receiver misses its outage floor.
    pub feasible: bool,
    /// Mean assigned rate over active receivers.
    pub avg_rate: f64,
    pub min_rate: f64,
    /// Weak to strong.
    pub receivers: Vec<SweepReceiver>,
}

/// Rows for every configured profile and shutdown count `0..=max_shutdowns`.
pub fn rate_sweep(cfg: &ScenarioConfig, max_shutdowns: usize) -> Result<Vec<SweepRow>, SweepError> {
    rate_sweep_with(Exec::default(), cfg, max_shutdowns)
}

/// Receivers of the sweep transmitter, weakest first, for one profile.
fn sweep_problem(cfg: &ScenarioConfig, profile: &str) -> Result<BroadcastProblem, SweepError> {
    let team = build_team(cfg, profile)?;
    let tx = cfg.sweep.transmitter.map(VehicleId).unwrap_or(team.ids[0]);
    if !team.ids.contains(&tx) {
        return Err(MacError::Invalid(format!("sweep transmitter {tx} is not a vehicle")).into());
    }
    let j = team.index(tx);
    let mut rx = team.neighbors[j].clone();
    if rx.is_empty() {
        return Err(SweepError::NoReceivers(tx));
    }
    rx.sort_by(|&a, &b| {
        team.path_gain[j][a]
            .total_cmp(&team.path_gain[j][b])
            .then(a.cmp(&b))
    });
    Ok(BroadcastProblem {
        tx,
        receivers: rx
            .iter()
            .map(|&k| BroadcastReceiver {
                id: team.ids[k],
                gain: team.path_gain[j][k],
                noise_power: team.noise_power,
                active: true,
                outage_floor: team.floor[k],
                capacity_ceiling: team.ceiling[j][k],
            })
            .collect(),
        p_th: team.p_th[j],
        p_max: team.p_max[j],
        bandwidth: team.bandwidth,
    })
}

/// Largest shutdown count the sweep accepts: all receivers but one.
pub fn max_shutdowns(cfg: &ScenarioConfig) -> Result<usize, SweepError> {
    let name = cfg
        .power_profiles
        .first()
        .map(|p| p.name.clone())
        .unwrap_or_default();
    Ok(sweep_problem(cfg, &name)?.receivers.len() - 1)
}

pub fn rate_sweep_with(
    exec: Exec,
    cfg: &ScenarioConfig,
    max_shutdowns: usize,
) -> Result<Vec<SweepRow>, SweepError> {
    let mut problems = Vec::new();
    for profile in &cfg.power_profiles {
        let base = sweep_problem(cfg, &profile.name)?;
        if max_shutdowns >= base.receivers.len() {
            return Err(SweepError::TooManyShutdowns {
                requested: max_shutdowns,
                available: base.receivers.len(),
            });
        }
        for k in 0..=max_shutdowns {
            problems.push((profile.name.clone(), k, base.clone()));
        }
    }
    let seed = cfg.seed;
    let n_mc = cfg.solver.n_mc;
    let rows = par::map_slice(exec, &problems, |(name, k, base)| {
        let active: Vec<bool> = (0..base.receivers.len()).map(|i| i >= *k).collect();
        let prob = base.with_active(&active);
        let sol = rate_power::solve_broadcast_with(
            Exec::Sequential,
            &prob,
            n_mc,
            rng::mix(&[seed, 11, *k as u64]),
        );
        let rates: Vec<f64> = match &sol {
            Ok(s) => s.assigned_rate.clone(),
            // Outage: still report what each active receiver gets at p_max.
            Err(_) => {
                prob.receivers
                    .iter()
                    .map(|r| match r.active {
                        true => rate_power::achievable_rate(r, prob.p_max, prob.bandwidth)
                            .unwrap_or(0.0),
                        false => 0.0,
                    })
                    .collect()
            }
        };
        let act: Vec<f64> = rates
            .iter()
            .zip(&active)
            .filter(|(_, a)| **a)
            .map(|(r, _)| *r)
            .collect();
        SweepRow {
            profile: name.clone(),
            transmitter: base.tx,
            shutdowns: *k,
            feasible: sol.is_ok(),
            avg_rate: act.iter().sum::<f64>() / act.len() as f64,
            min_rate: act.iter().copied().fold(f64::INFINITY, f64::min),
            receivers: prob
                .receivers
                .iter()
                .zip(&rates)
                .map(|(r, &rate)| SweepReceiver {
                    id: r.id,
                    gain: r.gain,
                    active: r.active,
                    rate,
                })
                .collect(),
        }
    });
    Ok(rows)
}

/// True when `avg_rate` never drops as shutdowns grow, per profile.
pub fn is_monotone(rows: &[SweepRow]) -> bool {
    let mut profiles: Vec<&str> = rows.iter().map(|r| r.profile.as_str()).collect();
    profiles.dedup();
    profiles.iter().all(|p| {
        let mut rs: Vec<&SweepRow> = rows.iter().filter(|r| r.profile == *p).collect();
        rs.sort_by_key(|r| r.shutdowns);
        rs.windows(2).all(|w| w[1].avg_rate >= w[0].avg_rate)
    })
}
