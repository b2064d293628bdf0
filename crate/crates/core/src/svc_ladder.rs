//! SVC layer ladder, hyperbolic rate–distortion model and layer knapsack.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LadderError {
    #[error("invalid ladder: {0}")]
    Invalid(String),
    #[error("rate {rate} is at or below the model singularity R0 = {r0}")]
    BelowSingularity { rate: f64, r0: f64 },
    #[error("rate-distortion fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, LadderError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcLayer {
    pub index: usize,
    /// bits/s added by this layer on top of the one below.
    pub incremental_rate: f64,
    /// bits/s needed to carry this layer and every layer below it.
    pub cumulative_rate: f64,
    pub frame_rate: f64,
    pub psnr: Option<f64>,
}

/// Parameters of `D(R) = theta / (R - r0) + d0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdParams {
    pub theta: f64,
    pub r0: f64,
    pub d0: f64,
}

impl RdParams {
    pub fn distortion(&self, rate: f64) -> Result<f64> {
        if !(rate > self.r0) {
            return Err(LadderError::BelowSingularity { rate, r0: self.r0 });
        }
        Ok(self.theta / (rate - self.r0) + self.d0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcLadder {
    layers: Vec<SvcLayer>,
    rd: RdParams,
}

/// Cumulative rates in bits/s of the five-level reference ladder.
pub const REFERENCE_CUMULATIVE_RATES: [f64; 5] = [100.9e3, 179.4e3, 293.3e3, 415.3e3, 517.5e3];
pub const REFERENCE_FRAME_RATES: [f64; 5] = [1.875, 3.75, 7.5, 15.0, 30.0];
pub const REFERENCE_PSNR_DB: [f64; 5] = [45.1, 44.14, 43.31, 42.68, 42.19];

/// Rate–distortion parameters of the reference ladder.
///
/// `r0 = 0`, with `theta` and `d0` chosen so the model spans the reference
/// distortion range (2.009 at the top rate, 3.927 at the base rate) while
/// decreasing in rate. A free fit to the reference PSNRs has `theta < 0`
/// because those PSNRs fall as layers are added; see [`fit_rd_params`].
pub fn reference_rd_params() -> RdParams {
    let d_hi = psnr_to_distortion(REFERENCE_PSNR_DB[4]);
    let d_lo = psnr_to_distortion(REFERENCE_PSNR_DB[0]);
    let (r_base, r_top) = (REFERENCE_CUMULATIVE_RATES[0], REFERENCE_CUMULATIVE_RATES[4]);
    let theta = (d_hi - d_lo) / (1.0 / r_base - 1.0 / r_top);
    RdParams {
        theta,
        r0: 0.0,
        d0: d_lo - theta / r_top,
    }
}

/// 8-bit MSE corresponding to a PSNR in dB.
pub fn psnr_to_distortion(psnr_db: f64) -> f64 {
    255.0 * 255.0 * 10f64.powf(-psnr_db / 10.0)
}

/// The five-level reference ladder.
pub fn default_ladder() -> SvcLadder {
    SvcLadder::from_cumulative(
        &REFERENCE_CUMULATIVE_RATES,
        &REFERENCE_FRAME_RATES,
        Some(&REFERENCE_PSNR_DB),
        reference_rd_params(),
    )
    .expect("reference ladder is valid")
}

impl SvcLadder {
    /// Builds a ladder from cumulative rates (base first).
    pub fn from_cumulative(
        cumulative: &[f64],
        frame_rates: &[f64],
        psnr: Option<&[f64]>,
        rd: RdParams,
    ) -> Result<Self> {
        if cumulative.is_empty() {
            return Err(LadderError::Invalid(
                "at least the base layer is required".into(),
            ));
        }
        if frame_rates.len() != cumulative.len() {
            return Err(LadderError::Invalid(format!(
                "{} frame rates for {} layers",
                frame_rates.len(),
                cumulative.len()
            )));
        }
        if let Some(p) = psnr {
            if p.len() != cumulative.len() {
                return Err(LadderError::Invalid(format!(
                    "{} PSNR values for {} layers",
                    p.len(),
                    cumulative.len()
                )));
            }
        }
        if !(cumulative[0] > 0.0) {
            return Err(LadderError::Invalid("base rate must be > 0".into()));
        }
        if cumulative.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LadderError::Invalid(
                "cumulative rates must strictly increase".into(),
            ));
        }
        if !(rd.r0 < cumulative[0]) {
            return Err(LadderError::Invalid(format!(
                "R0 = {} must be below the base rate {}",
                rd.r0, cumulative[0]
            )));
        }
        let layers = cumulative
            .iter()
            .enumerate()
            .map(|(i, &c)| SvcLayer {
                index: i,
                incremental_rate: if i == 0 { c } else { c - cumulative[i - 1] },
                cumulative_rate: c,
                frame_rate: frame_rates[i],
                psnr: psnr.map(|p| p[i]),
            })
            .collect();
        Ok(Self { layers, rd })
    }

    pub fn layers(&self) -> &[SvcLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn rd_params(&self) -> RdParams {
        self.rd
    }

    pub fn base_rate(&self) -> f64 {
        self.layers[0].cumulative_rate
    }

    pub fn top_rate(&self) -> f64 {
        self.layers[self.layers.len() - 1].cumulative_rate
    }

    pub fn cumulative_rate(&self, layer: usize) -> f64 {
        self.layers[layer].cumulative_rate
    }

    /// Distortion of a video decoded at `rate` bits/s.
    pub fn distortion(&self, rate: f64) -> Result<f64> {
        self.rd.distortion(rate)
    }

    /// Longest decodable prefix whose cumulative rate fits in `r_max`.
    pub fn knapsack_layers(&self, r_max: f64) -> LayerSelection {
        let fit = self
            .layers
            .iter()
            .take_while(|l| l.cumulative_rate <= r_max)
            .count();
        LayerSelection::prefix(self.layers.len(), fit.max(1), fit == 0)
    }
}

/// Per-layer inclusion flags; always a prefix starting at the base layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSelection {
    flags: Vec<bool>,
    /// Set when even the base layer exceeds the budget.
    pub base_over_budget: bool,
}

impl LayerSelection {
    fn prefix(total: usize, count: usize, base_over_budget: bool) -> Self {
        let flags = (0..total).map(|i| i < count).collect();
        Self {
            flags,
            base_over_budget,
        }
    }

    /// Base layer only.
    pub fn base_only(total: usize) -> Self {
        Self::prefix(total, 1, false)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Number of decodable layers including the base.
    pub fn layer_count(&self) -> usize {
        self.flags.iter().take_while(|f| **f).count()
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.flags.get(layer).copied().unwrap_or(false)
    }
}

/// Least-squares fit of the hyperbolic rate–distortion model.
///
/// For a fixed `r0` the model is linear in `(theta, d0)`, so the fit
/// profiles those out and searches the one remaining parameter: a log-spaced
/// scan of the gap `min(rate) - r0` followed by golden-section refinement.
pub fn fit_rd_params(points: &[(f64, f64)]) -> Result<RdParams> {
    if points.len() < 3 {
        return Err(LadderError::Fit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(r, d)| !r.is_finite() || !d.is_finite()) {
        return Err(LadderError::Fit("non-finite point".into()));
    }
    let mut rates: Vec<f64> = points.iter().map(|p| p.0).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    if rates.len() < 3 {
        return Err(LadderError::Fit("need at least 3 distinct rates".into()));
    }
    let d_mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    if points
        .iter()
        .all(|p| (p.1 - d_mean).abs() <= 1e-12 * d_mean.abs().max(1.0))
    {
        return Err(LadderError::Fit(
            "constant distortion does not identify the model".into(),
        ));
    }

    let r_min = rates[0];
    let scale = rates[rates.len() - 1];
    let sse = |log_gap: f64| -> (f64, f64, f64) {
        let r0 = r_min - scale * log_gap.exp();
        let (theta, d0) = linear_fit(points, r0);
        let e = points
            .iter()
            .map(|(r, d)| (theta / (r - r0) + d0 - d).powi(2))
            .sum::<f64>();
        (e, theta, d0)
    };

    let (lo, hi, steps) = ((1e-9f64).ln(), (1e6f64).ln(), 4000);
    let step = (hi - lo) / steps as f64;
    let mut best: usize = 0;
    let mut best_e = f64::INFINITY;
    for i in 0..=steps {
        let e = sse(lo + step * i as f64).0;
        if e < best_e {
            best_e = e;
            best = i;
        }
    }
    let mut a = lo + step * best.saturating_sub(1) as f64;
    let mut b = lo + step * (best + 1).min(steps) as f64;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (sse(c).0, sse(d).0);
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = sse(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = sse(d).0;
        }
    }
    let x = 0.5 * (a + b);
    let (_, theta, d0) = sse(x);
    let r0 = r_min - scale * x.exp();
    if !(theta.is_finite() && d0.is_finite() && r0.is_finite()) {
        return Err(LadderError::Fit("degenerate data".into()));
    }
    Ok(RdParams { theta, r0, d0 })
}

/// Ordinary least squares of `d = theta * u + d0` with `u = 1/(r - r0)`.
fn linear_fit(points: &[(f64, f64)], r0: f64) -> (f64, f64) {
    let n = points.len() as f64;
    let us: Vec<f64> = points.iter().map(|(r, _)| 1.0 / (r - r0)).collect();
    let u_mean = us.iter().sum::<f64>() / n;
    let d_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut suu = 0.0;
    let mut sud = 0.0;
    for (u, (_, d)) in us.iter().zip(points) {
        suu += (u - u_mean).powi(2);
        sud += (u - u_mean) * (d - d_mean);
    }
    let theta = if suu > 0.0 { sud / suu } else { 0.0 };
    (theta, d_mean - theta * u_mean)
}

/// Root-mean-square residual of `params` over `points`.
pub fn fit_rms(params: &RdParams, points: &[(f64, f64)]) -> f64 {
    let sse: f64 = points
        .iter()
        .map(|(r, d)| (params.theta / (r - params.r0) + params.d0 - d).powi(2))
        .sum();
    (sse / points.len() as f64).sqrt()
}
