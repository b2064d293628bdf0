//! Output files: event log (JSON lines), per-chunk metrics (CSV), rate
//! sweep plot data (CSV) and a run summary (JSON).

use crate::consensus::ConsensusError;
use crate::mac_engine::{self, Event, MacError, MetricsRecord, RunOutcome};
use crate::scenario::ScenarioConfig;
use crate::sweep::{self, SweepRow};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use std::path::Path;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RATES_FILE: &str = "rates.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Fixed leading columns of the metrics CSV. Four columns per vehicle
/// follow: `rs_v<id>`, `base_rate_v<id>`, `active_v<id>`, `layers_v<id>`.
pub const METRICS_COLUMNS: [&str; 11] = [
    "iteration",
    "chunk",
    "frv",
    "consensus_rounds",
    "consensus_converged",
    "aggregate_rs",
    "mean_active",
    "min_active",
    "objective",
    "sim_time_s",
    "qoe_met",
];

pub const RATES_COLUMNS: [&str; 11] = [
    "profile",
    "transmitter",
    "shutdowns",
    "feasible",
    "avg_rate_bps",
    "min_rate_bps",
    "receiver",
    "rank",
    "gain",
    "active",
    "rate_bps",
];

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_events<W: Write>(mut w: W, events: &[Event]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn metrics_header(records: &[MetricsRecord]) -> Vec<String> {
    let mut h: Vec<String> = METRICS_COLUMNS.iter().map(|s| s.to_string()).collect();
    if let Some(r) = records.first() {
        for v in &r.vehicles {
            for f in ["rs", "base_rate", "active", "layers"] {
                h.push(format!("{f}_{}", v.id));
            }
        }
    }
    h
}

pub fn write_metrics<W: Write>(w: W, records: &[MetricsRecord]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(metrics_header(records)).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.iteration.to_string(),
            r.chunk.to_string(),
            r.frv.to_string(),
            r.consensus_rounds.to_string(),
            r.consensus_converged.to_string(),
            r.aggregate_rs.to_string(),
            r.mean_active.to_string(),
            r.min_active.to_string(),
            r.objective.to_string(),
            r.sim_time_s.to_string(),
            r.qoe_met.to_string(),
        ];
        for v in &r.vehicles {
            row.push(v.rs.to_string());
            row.push(v.base_rate.to_string());
            row.push(u8::from(v.active).to_string());
            row.push(v.layers.to_string());
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()
}

/// Long format: one line per (profile, shutdown count, receiver).
pub fn write_rates<W: Write>(w: W, rows: &[SweepRow]) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RATES_COLUMNS).map_err(csv_err)?;
    for r in rows {
        for (rank, x) in r.receivers.iter().enumerate() {
            out.write_record([
                r.profile.clone(),
                r.transmitter.to_string(),
                r.shutdowns.to_string(),
                r.feasible.to_string(),
                r.avg_rate.to_string(),
                r.min_rate.to_string(),
                x.id.to_string(),
                rank.to_string(),
                x.gain.to_string(),
                u8::from(x.active).to_string(),
                x.rate.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()
}

pub fn write_summary<W: Write, T: Serialize>(mut w: W, summary: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, summary)?;
    w.write_all(b"\n")?;
    w.flush()
}

fn create(dir: &Path, name: &str) -> io::Result<io::BufWriter<std::fs::File>> {
    Ok(io::BufWriter::new(std::fs::File::create(dir.join(name))?))
}

/// Writes events, metrics and (when given) rates into `dir`, creating it.
pub fn write_run(
    dir: &Path,
    events: &[Event],
    metrics: &[MetricsRecord],
    rates: Option<&[SweepRow]>,
) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_events(create(dir, EVENTS_FILE)?, events)?;
    write_metrics(create(dir, METRICS_FILE)?, metrics)?;
    if let Some(rows) = rates {
        write_rates(create(dir, RATES_FILE)?, rows)?;
    }
    Ok(())
}

pub fn write_summary_file<T: Serialize>(dir: &Path, summary: &T) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary(create(dir, SUMMARY_FILE)?, summary)
}

/// Process exit statuses of the command-line driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Ok,
    Io,
    Config,
    NoFeasibleSet,
    NonConvergence,
    Unsatisfied,
    ContentionLivelock,
    Other,
    SelftestFailed,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Ok => 0,
            ExitStatus::Io => 1,
            ExitStatus::Config => 2,
            ExitStatus::NoFeasibleSet => 3,
            ExitStatus::NonConvergence => 4,
            ExitStatus::Unsatisfied => 5,
            ExitStatus::ContentionLivelock => 6,
            ExitStatus::Other => 7,
            ExitStatus::SelftestFailed => 8,
        }
    }

    pub fn from_error(e: &MacError) -> Self {
        match e {
            MacError::Invalid(_) | MacError::SlotTooShort { .. } => ExitStatus::Config,
            MacError::NoFeasibleSet { .. } => ExitStatus::NoFeasibleSet,
            MacError::NonConvergence { .. }
            | MacError::Election(ConsensusError::NonConvergence { .. }) => {
                ExitStatus::NonConvergence
            }
            MacError::ContentionLivelock { .. } => ExitStatus::ContentionLivelock,
            MacError::Election(_) | MacError::Model(_) => ExitStatus::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub sender: VehicleId,
    pub active: Vec<VehicleId>,
    pub shut_down: Vec<VehicleId>,
    pub assigned_rate_bps: Vec<f64>,
    pub layers: Vec<usize>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: ExitStatus,
    pub exit_code: i32,
    pub error: Option<String>,
    pub profile: String,
    pub seed: u64,
    pub iterations: usize,
    pub satisfied: bool,
    pub frv: Option<VehicleId>,
    pub events: usize,
    pub metrics_rows: usize,
    /// Enhancement plans of the last chunk.
    pub plans: Vec<PlanSummary>,
    pub sweep_monotone: Option<bool>,
    pub sweep_error: Option<String>,
}

impl RunSummary {
    fn from_outcome(cfg: &ScenarioConfig, o: &RunOutcome) -> Self {
        let status = if o.satisfied {
            ExitStatus::Ok
        } else {
            ExitStatus::Unsatisfied
        };
        RunSummary {
            status,
            exit_code: status.code(),
            error: (!o.satisfied).then(|| format!("QoE not met after {} iterations", o.iterations)),
            profile: o.profile.clone(),
            seed: cfg.seed,
            iterations: o.iterations,
            satisfied: o.satisfied,
            frv: Some(o.frv),
            events: o.events.len(),
            metrics_rows: o.metrics.len(),
            plans: o
                .plans
                .iter()
                .map(|sp| {
                    let p = &sp.plan;
                    let on = |want: bool| {
                        p.receivers
                            .iter()
                            .zip(&p.active)
                            .filter(|(_, a)| **a == want)
                            .map(|(id, _)| *id)
                            .collect()
                    };
                    PlanSummary {
                        sender: sp.sender,
                        active: on(true),
                        shut_down: on(false),
                        assigned_rate_bps: p.assigned_rate.clone(),
                        layers: p.layers.iter().map(|l| l.layer_count()).collect(),
                        objective: p.objective,
                    }
                })
                .collect(),
            sweep_monotone: None,
            sweep_error: None,
        }
    }
}

/// Runs the scenario and writes every output file into `dir`, including
/// the partial log of a failed run. Only I/O errors are returned; run
/// failures are reported through the summary status.
pub fn run_to_dir(
    cfg: &ScenarioConfig,
    profile: Option<&str>,
    dir: &Path,
) -> io::Result<RunSummary> {
    let profile_name = cfg
        .profile(profile)
        .map(|p| p.name.clone())
        .unwrap_or_default();
    let (events, metrics, mut summary) = match mac_engine::run_algorithm1(cfg, profile) {
        Ok(o) => {
            let s = RunSummary::from_outcome(cfg, &o);
            (o.events, o.metrics, s)
        }
        Err(f) => {
            let status = ExitStatus::from_error(&f.error);
            let s = RunSummary {
                status,
                exit_code: status.code(),
                error: Some(f.error.to_string()),
                profile: profile_name,
                seed: cfg.seed,
                iterations: f.metrics.last().map_or(0, |m| m.iteration + 1),
                satisfied: false,
                frv: None,
                events: f.events.len(),
                metrics_rows: f.metrics.len(),
                plans: Vec::new(),
                sweep_monotone: None,
                sweep_error: None,
            };
            (f.events, f.metrics, s)
        }
    };
    let rows = sweep::max_shutdowns(cfg).and_then(|k| sweep::rate_sweep(cfg, k));
    match &rows {
        Ok(r) => summary.sweep_monotone = Some(sweep::is_monotone(r)),
        Err(e) => summary.sweep_error = Some(e.to_string()),
    }
    write_run(dir, &events, &metrics, rows.as_deref().ok())?;
    write_summary_file(dir, &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac_engine::{EventKind, Payload, VehicleMetrics};
    use crate::sweep::SweepReceiver;
    use crate::VehicleId;

    fn record() -> MetricsRecord {
        MetricsRecord {
            iteration: 0,
            chunk: 1,
            frv: VehicleId(2),
            consensus_rounds: 1,
            consensus_converged: true,
            aggregate_rs: 1.5,
            mean_active: 2.5,
            min_active: 2,
            objective: 10.25,
            sim_time_s: 3.0,
            qoe_met: true,
            vehicles: vec![
                VehicleMetrics {
                    id: VehicleId(0),
                    rs: 0.5,
                    base_rate: 1e5,
                    active: true,
                    layers: 3,
                },
                VehicleMetrics {
                    id: VehicleId(2),
                    rs: 1.0,
                    base_rate: 0.0,
                    active: false,
                    layers: 5,
                },
            ],
        }
    }

    #[test]
    fn metrics_schema() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[record()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        for c in METRICS_COLUMNS {
            assert!(header.contains(&c));
        }
        for c in ["rs_v0", "base_rate_v0", "active_v2", "layers_v2"] {
            assert!(header.contains(&c), "{c}");
        }
        assert_eq!(
            lines.next().unwrap(),
            "0,1,v2,1,true,1.5,2.5,2,10.25,3,true,0.5,100000,1,3,1,0,0,5"
        );
    }

    #[test]
    fn empty_metrics_still_have_a_header() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().trim(),
            METRICS_COLUMNS.join(",")
        );
    }

    #[test]
    fn events_are_one_json_object_per_line() {
        let ev = Event {
            time: 0.5,
            kind: EventKind::ChunkBoundary,
            sender: None,
            seq: 0,
            payload: Payload::Chunk {
                iteration: 0,
                chunk: 0,
            },
        };
        let mut buf = Vec::new();
        write_events(&mut buf, &[ev.clone(), ev]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["kind"], "chunk_boundary");
        assert_eq!(v["payload"]["type"], "chunk");
    }

    #[test]
    fn rates_long_format() {
        let row = SweepRow {
            profile: "low".into(),
            transmitter: VehicleId(0),
            shutdowns: 1,
            feasible: true,
            avg_rate: 2.0,
            min_rate: 2.0,
            receivers: vec![
                SweepReceiver {
                    id: VehicleId(3),
                    gain: 1e-9,
                    active: false,
                    rate: 0.0,
                },
                SweepReceiver {
                    id: VehicleId(1),
                    gain: 2e-9,
                    active: true,
                    rate: 2.0,
                },
            ],
        };
        let mut buf = Vec::new();
        write_rates(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text
            .lines()
            .nth(2)
            .unwrap()
            .starts_with("low,v0,1,true,2,2,v1,1,"));
    }
}
