//! Scenario configuration: a single strict TOML file.

use crate::channel::{FrequencyGrid, NoiseParams, PropagationParams};
use crate::svc_ladder::{self, RdParams, SvcLadder};
use crate::VehicleId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
    #[error("cannot serialise configuration: {0}")]
    Serialize(String),
}

/// One schema violation with its field path, e.g. `vehicles[2].p_max_w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "defaults::chunks")]
    pub chunks: usize,
    /// Seconds of video per chunk.
    #[serde(default = "defaults::chunk_duration")]
    pub chunk_duration_s: f64,
    #[serde(default = "defaults::max_iterations")]
    pub max_iterations: usize,
    /// Name of the power profile used by `run`; the first one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_profile: Option<String>,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderConfig>,
    pub thresholds: Thresholds,
    #[serde(default)]
    pub qoe: QoeConfig,
    #[serde(default)]
    pub mac: MacConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub power_profiles: Vec<PowerProfile>,
    pub vehicles: Vec<VehicleConfig>,
}

mod defaults {
    pub fn chunks() -> usize {
        1
    }
    pub fn chunk_duration() -> f64 {
        1.0
    }
    pub fn max_iterations() -> usize {
        3
    }
    pub fn f_lo() -> f64 {
        50e3
    }
    pub fn f_hi() -> f64 {
        150e3
    }
    pub fn grid_points() -> usize {
        1024
    }
    pub fn spreading() -> f64 {
        1.5
    }
    pub fn yes() -> bool {
        true
    }
    pub fn sound_speed() -> f64 {
        1500.0
    }
    pub fn min_active() -> usize {
        1
    }
    pub fn retries() -> usize {
        64
    }
    pub fn consensus_rounds() -> usize {
        32
    }
    pub fn control_bits() -> f64 {
        64.0
    }
    pub fn control_rate() -> f64 {
        5e3
    }
    pub fn election_attempts() -> usize {
        8
    }
    pub fn n_mc() -> usize {
        4096
    }
    pub fn overlap_draws() -> usize {
        2000
    }
    pub fn fading_samples() -> usize {
        512
    }
    pub fn position_samples() -> usize {
        10
    }
    pub fn confidence() -> f64 {
        0.05
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "defaults::f_lo")]
    pub f_lo_hz: f64,
    #[serde(default = "defaults::f_hi")]
    pub f_hi_hz: f64,
    #[serde(default = "defaults::grid_points")]
    pub grid_points: usize,
    #[serde(default = "defaults::spreading")]
    pub spreading_exponent: f64,
    #[serde(default = "defaults::yes")]
    pub absorption: bool,
    #[serde(default = "defaults::sound_speed")]
    pub sound_speed_mps: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            f_lo_hz: defaults::f_lo(),
            f_hi_hz: defaults::f_hi(),
            grid_points: defaults::grid_points(),
            spreading_exponent: defaults::spreading(),
            absorption: true,
            sound_speed_mps: defaults::sound_speed(),
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub shipping: f64,
    pub wind_mps: f64,
    pub source_level_ref_db: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let n = NoiseParams::default();
        Self {
            shipping: n.shipping,
            wind_mps: n.wind_mps,
            source_level_ref_db: n.source_level_ref_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub cumulative_rates_bps: Vec<f64>,
    pub frame_rates_fps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<Vec<f64>>,
    pub rd: RdConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdConfig {
    pub theta: f64,
    pub r0: f64,
    pub d0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Active receivers need distortion strictly below this.
    pub distortion_max: f64,
    /// Minimum overlap probability that licenses a shutdown.
    pub overlap_min: f64,
    /// Layer count the QoS threshold targets.
    pub qos_target_layers: usize,
    /// Threshold per target layer count (keys are counts). When the target is
    /// missing the default is cumulative_rate(target) / bandwidth.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub qos: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoeConfig {
    /// Every multicast plan of a chunk keeps at least this many receivers.
    #[serde(default = "defaults::min_active")]
    pub min_active_receivers: usize,
    /// Sum of reconstruction scores over the team, per chunk.
    #[serde(default)]
    pub min_aggregate_rs: f64,
}

impl Default for QoeConfig {
    fn default() -> Self {
        Self {
            min_active_receivers: defaults::min_active(),
            min_aggregate_rs: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacScheme {
    #[default]
    Tdma,
    Tlohi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacConfig {
    #[serde(default)]
    pub scheme: MacScheme,
    /// TDMA slot length. When absent each window sizes its slots to the
    /// longest airtime in it plus the largest propagation delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_len_s: Option<f64>,
    #[serde(default = "defaults::retries")]
    pub contention_retries: usize,
    /// Bernoulli erasure probability per (message, recipient).
    #[serde(default)]
    pub loss_probability: f64,
    #[serde(default)]
    pub consensus_schedule: ScheduleKind,
    #[serde(default = "defaults::consensus_rounds")]
    pub consensus_max_rounds: usize,
    /// Vehicles farther apart cannot hear each other. Unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comm_range_m: Option<f64>,
    #[serde(default = "defaults::control_bits")]
    pub control_bits: f64,
    #[serde(default = "defaults::control_rate")]
    pub control_rate_bps: f64,
    /// Defaults to three times the largest propagation delay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub election_timeout_s: Option<f64>,
    #[serde(default = "defaults::election_attempts")]
    pub election_attempts: usize,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            scheme: MacScheme::Tdma,
            slot_len_s: None,
            contention_retries: defaults::retries(),
            loss_probability: 0.0,
            consensus_schedule: ScheduleKind::RoundRobin,
            consensus_max_rounds: defaults::consensus_rounds(),
            comm_range_m: None,
            control_bits: defaults::control_bits(),
            control_rate_bps: defaults::control_rate(),
            election_timeout_s: None,
            election_attempts: defaults::election_attempts(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    #[default]
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "defaults::n_mc")]
    pub n_mc: usize,
    #[serde(default)]
    pub planner: PlannerKind,
    #[serde(default = "defaults::overlap_draws")]
    pub overlap_draws: usize,
    /// Fading draws for the expected-capacity ceilings.
    #[serde(default = "defaults::fading_samples")]
    pub fading_samples: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_mc: defaults::n_mc(),
            planner: PlannerKind::Exhaustive,
            overlap_draws: defaults::overlap_draws(),
            fading_samples: defaults::fading_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Point every camera looks at.
    #[serde(default)]
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Broadcasting vehicle of the rate-vs-shutdown sweep; the first vehicle
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmitter: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerProfile {
    pub name: String,
    pub p_th_w: f64,
    pub p_max_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub id: u32,
    /// Nominal (x, y) in metres.
    pub position: [f64; 2],
    pub sensing_radius_m: f64,
    #[serde(default)]
    pub offset_rad: f64,
    /// Standard deviation of the position fixes.
    #[serde(default)]
    pub position_sigma_m: f64,
    #[serde(default = "defaults::position_samples")]
    pub position_samples: usize,
    /// γ of the position confidence interval.
    #[serde(default = "defaults::confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_th_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max_w: Option<f64>,
    /// Defaults to the base-layer rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outage_floor_bps: Option<f64>,
}

impl VehicleConfig {
    pub fn vehicle_id(&self) -> VehicleId {
        VehicleId(self.id)
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Serialize(e.to_string()))
    }

    pub fn grid(&self) -> FrequencyGrid {
        FrequencyGrid::new(
            self.channel.f_lo_hz,
            self.channel.f_hi_hz,
            self.channel.grid_points,
        )
        .expect("validated grid")
    }

    pub fn propagation(&self) -> PropagationParams {
        PropagationParams {
            spreading_exponent: self.channel.spreading_exponent,
            absorption: self.channel.absorption,
        }
    }

    pub fn noise(&self) -> NoiseParams {
        let n = &self.channel.noise;
        NoiseParams {
            shipping: n.shipping,
            wind_mps: n.wind_mps,
            source_level_ref_db: n.source_level_ref_db,
        }
    }

    pub fn ladder(&self) -> SvcLadder {
        self.build_ladder().expect("validated ladder")
    }

    fn build_ladder(&self) -> Result<SvcLadder, svc_ladder::LadderError> {
        match &self.ladder {
            None => Ok(svc_ladder::default_ladder()),
            Some(l) => SvcLadder::from_cumulative(
                &l.cumulative_rates_bps,
                &l.frame_rates_fps,
                l.psnr_db.as_deref(),
                RdParams {
                    theta: l.rd.theta,
                    r0: l.rd.r0,
                    d0: l.rd.d0,
                },
            ),
        }
    }

    /// QoS threshold in bits/s/Hz for the configured target layer count.
    pub fn qos_threshold(&self) -> f64 {
        let t = self.thresholds.qos_target_layers;
        match self.thresholds.qos.get(&t.to_string()) {
            Some(v) => *v,
            None => self.ladder().cumulative_rate(t - 1) / self.grid().bandwidth(),
        }
    }

    pub fn profile(&self, name: Option<&str>) -> Option<&PowerProfile> {
        match name.or(self.active_profile.as_deref()) {
            Some(n) => self.power_profiles.iter().find(|p| p.name == n),
            None => self.power_profiles.first(),
        }
    }

    pub fn vehicle_ids(&self) -> Vec<VehicleId> {
        self.vehicles.iter().map(|v| v.vehicle_id()).collect()
    }

    /// Checks every invariant and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let mut bad = |path: &str, msg: &str| {
            v.push(Violation {
                path: path.to_string(),
                message: msg.to_string(),
            })
        };
        let pos = |x: f64| x > 0.0 && x.is_finite();

        if self.chunks == 0 {
            bad("chunks", "must be >= 1");
        }
        if !pos(self.chunk_duration_s) {
            bad("chunk_duration_s", "must be > 0");
        }
        if self.max_iterations == 0 {
            bad("max_iterations", "must be >= 1");
        }

        let c = &self.channel;
        if !pos(c.f_lo_hz) {
            bad("channel.f_lo_hz", "must be > 0");
        }
        if !(c.f_hi_hz > c.f_lo_hz) || !c.f_hi_hz.is_finite() {
            bad("channel.f_hi_hz", "must exceed channel.f_lo_hz");
        }
        if c.grid_points < 2 {
            bad("channel.grid_points", "must be >= 2");
        }
        if !pos(c.spreading_exponent) {
            bad("channel.spreading_exponent", "must be > 0");
        }
        if !pos(c.sound_speed_mps) {
            bad("channel.sound_speed_mps", "must be > 0");
        }
        if !(0.0..=1.0).contains(&c.noise.shipping) {
            bad("channel.noise.shipping", "must be in [0, 1]");
        }
        if !(c.noise.wind_mps >= 0.0 && c.noise.wind_mps.is_finite()) {
            bad("channel.noise.wind_mps", "must be >= 0");
        }
        if !c.noise.source_level_ref_db.is_finite() {
            bad("channel.noise.source_level_ref_db", "must be finite");
        }

        let ladder = match self.build_ladder() {
            Ok(l) => Some(l),
            Err(e) => {
                bad("ladder", &e.to_string());
                None
            }
        };
        if let Some(l) = &self.ladder {
            if !(l.rd.theta > 0.0) {
                bad(
                    "ladder.rd.theta",
                    "must be > 0 so distortion falls with rate",
                );
            }
        }

        let t = &self.thresholds;
        if !pos(t.distortion_max) {
            bad("thresholds.distortion_max", "must be > 0");
        }
        if !(0.0..=1.0).contains(&t.overlap_min) {
            bad("thresholds.overlap_min", "must be in [0, 1]");
        }
        let n_layers = ladder.as_ref().map_or(usize::MAX, |l| l.len());
        if t.qos_target_layers == 0 || t.qos_target_layers > n_layers {
            bad(
                "thresholds.qos_target_layers",
                "must be between 1 and the ladder length",
            );
        }
        for (k, val) in &t.qos {
            let path = format!("thresholds.qos.{k}");
            match k.parse::<usize>() {
                Ok(n) if n >= 1 && n <= n_layers => {}
                _ => bad(&path, "key must be a layer count within the ladder"),
            }
            if !(*val >= 0.0 && val.is_finite()) {
                bad(&path, "must be >= 0");
            }
        }

        if !(self.qoe.min_aggregate_rs >= 0.0 && self.qoe.min_aggregate_rs.is_finite()) {
            bad("qoe.min_aggregate_rs", "must be >= 0");
        }

        let m = &self.mac;
        if let Some(s) = m.slot_len_s {
            if !pos(s) {
                bad("mac.slot_len_s", "must be > 0");
            }
        }
        if !(0.0..1.0).contains(&m.loss_probability) {
            bad("mac.loss_probability", "must be in [0, 1)");
        }
        if m.consensus_max_rounds == 0 {
            bad("mac.consensus_max_rounds", "must be >= 1");
        }
        if let Some(r) = m.comm_range_m {
            if !pos(r) {
                bad("mac.comm_range_m", "must be > 0");
            }
        }
        if !pos(m.control_bits) {
            bad("mac.control_bits", "must be > 0");
        }
        if !pos(m.control_rate_bps) {
            bad("mac.control_rate_bps", "must be > 0");
        }
        if let Some(s) = m.election_timeout_s {
            if !pos(s) {
                bad("mac.election_timeout_s", "must be > 0");
            }
        }
        if m.election_attempts == 0 {
            bad("mac.election_attempts", "must be >= 1");
        }

        let s = &self.solver;
        if s.n_mc == 0 {
            bad("solver.n_mc", "must be >= 1");
        }
        if s.overlap_draws == 0 {
            bad("solver.overlap_draws", "must be >= 1");
        }
        if s.fading_samples == 0 {
            bad("solver.fading_samples", "must be >= 1");
        }
        if !self.scene.target.iter().all(|x| x.is_finite()) {
            bad("scene.target", "must be finite");
        }

        if self.power_profiles.is_empty() {
            bad("power_profiles", "at least one profile is required");
        }
        let mut names = BTreeSet::new();
        for (i, p) in self.power_profiles.iter().enumerate() {
            if !names.insert(p.name.as_str()) {
                bad(
                    &format!("power_profiles[{i}].name"),
                    "duplicate profile name",
                );
            }
            if !pos(p.p_th_w) {
                bad(&format!("power_profiles[{i}].p_th_w"), "must be > 0");
            }
            if !pos(p.p_max_w) {
                bad(&format!("power_profiles[{i}].p_max_w"), "must be > 0");
            } else if p.p_th_w > p.p_max_w {
                bad(
                    &format!("power_profiles[{i}].p_th_w"),
                    "must not exceed p_max_w",
                );
            }
        }
        if let Some(name) = &self.active_profile {
            if !self.power_profiles.iter().any(|p| &p.name == name) {
                bad("active_profile", "names no configured power profile");
            }
        }

        if self.vehicles.is_empty() {
            bad("vehicles", "at least one vehicle is required");
        }
        if s.planner == PlannerKind::Exhaustive
            && self.vehicles.len() > crate::multicast_planner::MAX_EXHAUSTIVE_RECEIVERS + 1
        {
            bad(
                "solver.planner",
                "exhaustive planning supports at most 17 vehicles",
            );
        }
        let mut ids = BTreeSet::new();
        let mut positions: Vec<[f64; 2]> = Vec::new();
        for (i, veh) in self.vehicles.iter().enumerate() {
            let p = |f: &str| format!("vehicles[{i}].{f}");
            if !ids.insert(veh.id) {
                bad(&p("id"), "duplicate vehicle id");
            }
            if !veh.position.iter().all(|x| x.is_finite()) {
                bad(&p("position"), "must be finite");
            }
            if positions.contains(&veh.position) {
                bad(&p("position"), "coincides with another vehicle");
            }
            positions.push(veh.position);
            if veh.position == self.scene.target {
                bad(&p("position"), "coincides with the scene target");
            }
            if !pos(veh.sensing_radius_m) {
                bad(&p("sensing_radius_m"), "must be > 0");
            }
            if !veh.offset_rad.is_finite() {
                bad(&p("offset_rad"), "must be finite");
            }
            if !(veh.position_sigma_m >= 0.0 && veh.position_sigma_m.is_finite()) {
                bad(&p("position_sigma_m"), "must be >= 0");
            }
            if veh.position_samples < 2 {
                bad(&p("position_samples"), "must be >= 2");
            }
            if !(veh.confidence > 0.0 && veh.confidence < 1.0) {
                bad(&p("confidence"), "must be in (0, 1)");
            }
            for (f, val) in [("p_th_w", veh.p_th_w), ("p_max_w", veh.p_max_w)] {
                if let Some(x) = val {
                    if !pos(x) {
                        bad(&p(f), "must be > 0");
                    }
                }
            }
            if let (Some(a), Some(b)) = (veh.p_th_w, veh.p_max_w) {
                if a > b {
                    bad(&p("p_th_w"), "must not exceed p_max_w");
                }
            }
            if let Some(x) = veh.outage_floor_bps {
                if !(x >= 0.0 && x.is_finite()) {
                    bad(&p("outage_floor_bps"), "must be >= 0");
                }
            }
        }
        if let Some(tx) = self.sweep.transmitter {
            if !ids.contains(&tx) {
                bad("sweep.transmitter", "names no configured vehicle");
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::from_toml_str(&text)
}

pub fn save_config(cfg: &ScenarioConfig, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    let text = cfg.to_toml_string()?;
    std::fs::write(path, text).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The golden five-vehicle scenario shipped with the crate.
pub const GOLDEN_TOML: &str = include_str!("../scenarios/golden.toml");

pub fn golden() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(GOLDEN_TOML).expect("golden scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn violations(text: &str) -> Vec<Violation> {
        match ScenarioConfig::from_toml_str(text) {
            Err(ConfigError::Invalid(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn golden_is_valid() {
        let g = golden();
        assert_eq!(g.vehicles.len(), 5);
        assert!(g.power_profiles.len() >= 2);
    }

    #[test]
    fn round_trip() {
        let g = golden();
        let back = ScenarioConfig::from_toml_str(&g.to_toml_string().unwrap()).unwrap();
        assert_eq!(g, back);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        save_config(&g, &p).unwrap();
        assert_eq!(load_config(&p).unwrap(), g);
    }

    #[test]
    fn negative_p_max_names_the_field() {
        let text = GOLDEN_TOML.replacen("p_max_w = ", "p_max_w = -", 1);
        let v = violations(&text);
        assert!(
            v.iter().any(|x| x.path == "power_profiles[0].p_max_w"),
            "{v:?}"
        );
    }

    #[test]
    fn all_violations_reported() {
        let text = GOLDEN_TOML
            .replacen("p_max_w = ", "p_max_w = -", 1)
            .replacen("sensing_radius_m = ", "sensing_radius_m = -", 1)
            .replacen("chunks = 3", "chunks = 0", 1);
        let v = violations(&text);
        let paths: Vec<&str> = v.iter().map(|x| x.path.as_str()).collect();
        assert!(paths.contains(&"chunks"), "{paths:?}");
        assert!(paths.contains(&"power_profiles[0].p_max_w"));
        assert!(paths.contains(&"vehicles[0].sensing_radius_m"));
    }

    #[test]
    fn unknown_field_rejected_with_position() {
        let text = format!("{GOLDEN_TOML}\n[extra]\nfoo = 1\n");
        match ScenarioConfig::from_toml_str(&text) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert!(line > 1);
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let text = GOLDEN_TOML.replacen("sensing_radius_m", "sensing_radius_mm", 1);
        assert!(matches!(
            ScenarioConfig::from_toml_str(&text),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn syntax_error_line_and_column() {
        match ScenarioConfig::from_toml_str("seed = 1\nchunks = = 2\n") {
            Err(ConfigError::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut g = golden();
        g.vehicles[1].id = g.vehicles[0].id;
        match g.validate() {
            Err(ConfigError::Invalid(v)) => assert!(v.iter().any(|x| x.path == "vehicles[1].id")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_qos_is_rate_over_bandwidth() {
        let mut g = golden();
        g.thresholds.qos.clear();
        g.thresholds.qos_target_layers = 3;
        assert!((g.qos_threshold() - 293.3e3 / 100e3).abs() < 1e-12);
        g.thresholds.qos.insert("3".into(), 1.5);
        assert_eq!(g.qos_threshold(), 1.5);
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
