//! Camera field-of-view correlation under position uncertainty.
//!
//! Disparity `δ` between views (correlation `η = 1 − δ`) follows the
//! directional-sensing FoV model; each vehicle's position is only known
//! through `N` noisy fixes, summarised by a Student-t confidence box; the
//! probability that two views are positively correlated is `Φ(μ/σ)` of the
//! correlation's spread under that uncertainty.

use crate::par::{self, Exec};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

/// Below this magnitude a denominator is treated as singular.
pub const SINGULAR_EPS: f64 = 1e-9;
/// Lower bound on the correlation spread used in [`overlap_probability`].
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("singular disparity: denominator {0:e}")]
    Singular(f64),
    #[error("need at least 2 position samples, got {0}")]
    InsufficientSamples(usize),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// 2-D projected FoV of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovModel {
    pub loc: [f64; 2],
    /// Sensing radius r in m.
    pub radius: f64,
    /// Angle of the sensing direction to the x axis, in [0, 2π).
    pub direction: f64,
    /// Offset angle β. Carried for completeness; no formula uses it.
    pub offset: f64,
    /// Camera-to-target distance d along the sensing direction.
    pub depth: f64,
}

impl FovModel {
    /// Camera at `loc` looking straight at `target`.
    pub fn aimed_at(loc: [f64; 2], target: [f64; 2], radius: f64, offset: f64) -> Result<Self> {
        let dx = target[0] - loc[0];
        let dy = target[1] - loc[1];
        let depth = dx.hypot(dy);
        if !(depth > 0.0) {
            return Err(GeometryError::Domain("camera sits on its target".into()));
        }
        if !(radius > 0.0) {
            return Err(GeometryError::Domain(format!(
                "radius must be > 0, got {radius}"
            )));
        }
        Ok(Self {
            loc,
            radius,
            direction: dy.atan2(dx).rem_euclid(2.0 * PI),
            offset,
            depth,
        })
    }

    /// Point the camera looks at.
    pub fn target(&self) -> [f64; 2] {
        [
            self.loc[0] + self.depth * self.direction.cos(),
            self.loc[1] + self.depth * self.direction.sin(),
        ]
    }

    /// Same camera and target, moved to `loc`.
    pub fn relocated(&self, loc: [f64; 2]) -> Result<Self> {
        Self::aimed_at(loc, self.target(), self.radius, self.offset)
    }
}

fn checked_div(num: f64, den: f64) -> Result<f64> {
    if den.abs() < SINGULAR_EPS {
        return Err(GeometryError::Singular(den));
    }
    Ok(num / den)
}

/// Disparity of a single camera at depth `d` and direction `theta`.
pub fn disparity_single(d: f64, theta: f64) -> Result<f64> {
    let (s, c) = theta.sin_cos();
    let t1 = checked_div(d * s, d + c)?.abs();
    let t2 = checked_div(d * s, d - c)?.abs();
    let t3 = (checked_div(d * c, d + s)? - 1.0).abs();
    let t4 = (checked_div(-d * c, d - s)? + 1.0).abs();
    Ok(0.25 * (t1 + t2 + t3 + t4))
}

fn pair_terms(f: &FovModel) -> Result<[f64; 4]> {
    let (s, c) = f.direction.sin_cos();
    let (d, r) = (f.depth, f.radius);
    Ok([
        checked_div(-d * s - r * c, d + c)?,
        checked_div(d * s + r * c, d - c)?,
        checked_div(d * c - r * s, d + s)?,
        checked_div(-d * c + r * s, d - s)?,
    ])
}

/// Disparity between the images of two cameras.
pub fn disparity_pair(a: &FovModel, b: &FovModel) -> Result<f64> {
    let ta = pair_terms(a)?;
    let tb = pair_terms(b)?;
    Ok(0.25 * ta.iter().zip(&tb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Correlation `1 − δ` clamped to [−1, 1].
pub fn correlation(a: &FovModel, b: &FovModel) -> Result<f64> {
    Ok((1.0 - disparity_pair(a, b)?).clamp(-1.0, 1.0))
}

/// Noisy position fixes of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSamples {
    pub samples: Vec<[f64; 2]>,
    /// Confidence degree γ: the interval holds with probability 1 − γ.
    pub gamma: f64,
}

impl PositionSamples {
    /// `n` fixes drawn from N(loc, sigma²) per coordinate.
    pub fn simulate(loc: [f64; 2], sigma: f64, n: usize, gamma: f64, rng: &mut impl Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let samples = (0..n)
            .map(|_| {
                let zx: f64 = StandardNormal.sample(rng);
                let zy: f64 = StandardNormal.sample(rng);
                [loc[0] + sigma * zx, loc[1] + sigma * zy]
            })
            .collect();
        Self { samples, gamma }
    }
}

/// Per-coordinate interval `μ' ∓ T(N−1, γ/2)·σ'/√N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBox {
    pub mean: [f64; 2],
    pub std_dev: [f64; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub t_critical: f64,
}

/// Upper `gamma/2` critical value of Student's t with `dof` degrees of freedom.
pub fn t_critical(dof: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(GeometryError::Domain(format!(
            "gamma must be in (0, 1), got {gamma}"
        )));
    }
    let t =
        StudentsT::new(0.0, 1.0, dof as f64).map_err(|e| GeometryError::Domain(e.to_string()))?;
    Ok(t.inverse_cdf(1.0 - gamma / 2.0))
}

pub fn confidence_interval(ps: &PositionSamples) -> Result<ConfidenceBox> {
    let n = ps.samples.len();
    if n < 2 {
        return Err(GeometryError::InsufficientSamples(n));
    }
    let t = t_critical(n - 1, ps.gamma)?;
    let nf = n as f64;
    let mut out = ConfidenceBox {
        mean: [0.0; 2],
        std_dev: [0.0; 2],
        lower: [0.0; 2],
        upper: [0.0; 2],
        t_critical: t,
    };
    for k in 0..2 {
        let mean = ps.samples.iter().map(|s| s[k]).sum::<f64>() / nf;
        let var = ps
            .samples
            .iter()
            .map(|s| (s[k] - mean).powi(2))
            .sum::<f64>()
            / (nf - 1.0);
        let half = t * var.sqrt() / nf.sqrt();
        out.mean[k] = mean;
        out.std_dev[k] = var.sqrt();
        out.lower[k] = mean - half;
        out.upper[k] = mean + half;
    }
    Ok(out)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `Φ(μ/σ)`: probability that a correlation distributed N(μ, σ²) is positive.
pub fn overlap_probability(mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(GeometryError::Domain(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    Ok(normal_cdf(mu / sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStat {
    pub mu: f64,
    pub sigma: f64,
    pub prob: f64,
}

/// Symmetric matrix of overlap probabilities with a unit diagonal.
///
/// Pairs whose geometry is singular are unavailable and read as 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    n: usize,
    stats: Vec<Option<OverlapStat>>,
}

impl OverlapMatrix {
    /// Matrix from explicit probabilities (row-major, `n × n`).
    pub fn from_probabilities(n: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != n * n {
            return Err(GeometryError::Domain(format!(
                "need {} entries, got {}",
                n * n,
                probs.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let p = probs[i * n + j];
                if !(0.0..=1.0).contains(&p) {
                    return Err(GeometryError::Domain(format!(
                        "entry ({i},{j}) = {p} not in [0,1]"
                    )));
                }
                if (p - probs[j * n + i]).abs() > 1e-12 {
                    return Err(GeometryError::Domain(format!(
                        "entry ({i},{j}) breaks symmetry"
                    )));
                }
            }
        }
        let stats = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let p = if i == j { 1.0 } else { probs[k] };
                Some(OverlapStat {
                    mu: f64::NAN,
                    sigma: f64::NAN,
                    prob: p,
                })
            })
            .collect();
        Ok(Self { n, stats })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn stat(&self, i: usize, j: usize) -> Option<OverlapStat> {
        self.stats[i * self.n + j]
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        self.stat(i, j).map_or(0.0, |s| s.prob)
    }

    pub fn is_available(&self, i: usize, j: usize) -> bool {
        self.stat(i, j).is_some()
    }

    /// Restriction to the given indices, in that order.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let n = idx.len();
        let stats = (0..n * n)
            .map(|k| self.stats[idx[k / n] * self.n + idx[k % n]])
            .collect();
        Self { n, stats }
    }
}

/// Monte-Carlo correlation statistics of one pair.
///
/// Each draw moves both cameras to a uniform point of their confidence boxes
/// (keeping each one's target) and evaluates `η`. Draws that hit a singular
/// geometry are skipped; if all do, or the nominal geometry is singular, the
/// pair is unavailable.
pub fn pair_overlap(
    a: (&FovModel, &ConfidenceBox),
    b: (&FovModel, &ConfidenceBox),
    n_draws: usize,
    rng: &mut impl Rng,
) -> Option<OverlapStat> {
    correlation(a.0, b.0).ok()?;
    let mut sample = |fov: &FovModel, cb: &ConfidenceBox| -> Option<FovModel> {
        let mut loc = [0.0; 2];
        for k in 0..2 {
            loc[k] = if cb.upper[k] > cb.lower[k] {
                rng.random_range(cb.lower[k]..cb.upper[k])
            } else {
                cb.mean[k]
            };
        }
        fov.relocated(loc).ok()
    };
    let mut etas = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let fa = sample(a.0, a.1);
        let fb = sample(b.0, b.1);
        if let (Some(fa), Some(fb)) = (fa, fb) {
            if let Ok(eta) = correlation(&fa, &fb) {
                etas.push(eta);
            }
        }
    }
    if etas.is_empty() {
        return None;
    }
    let n = etas.len() as f64;
    let mu = etas.iter().sum::<f64>() / n;
    let var = if etas.len() > 1 {
        etas.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let sigma = var.sqrt().max(SIGMA_FLOOR);
    let prob = overlap_probability(mu, sigma).ok()?;
    Some(OverlapStat { mu, sigma, prob })
}

pub fn pairwise_overlap_matrix(
    vehicles: &[(FovModel, PositionSamples)],
    n_draws: usize,
    seed: u64,
) -> Result<OverlapMatrix> {
    pairwise_overlap_matrix_with(Exec::default(), vehicles, n_draws, seed)
}

pub fn pairwise_overlap_matrix_with(
    exec: Exec,
    vehicles: &[(FovModel, PositionSamples)],
    n_draws: usize,
    seed: u64,
) -> Result<OverlapMatrix> {
    let n = vehicles.len();
    if n < 2 {
        return Err(GeometryError::Domain(format!(
            "need at least 2 vehicles, got {n}"
        )));
    }
    if n_draws == 0 {
        return Err(GeometryError::Domain("n_draws must be >= 1".into()));
    }
    let boxes = vehicles
        .iter()
        .map(|(_, ps)| confidence_interval(ps))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let results = par::map_slice(exec, &pairs, |&(i, j)| {
        let mut rng = rng::stream(seed, rng::mix(&[i as u64, j as u64]));
        pair_overlap(
            (&vehicles[i].0, &boxes[i]),
            (&vehicles[j].0, &boxes[j]),
            n_draws,
            &mut rng,
        )
    });
    let mut stats = vec![None; n * n];
    for i in 0..n {
        stats[i * n + i] = Some(OverlapStat {
            mu: 1.0,
            sigma: SIGMA_FLOOR,
            prob: 1.0,
        });
    }
    for (&(i, j), r) in pairs.iter().zip(results) {
        stats[i * n + j] = r;
        stats[j * n + i] = r;
    }
    Ok(OverlapMatrix { n, stats })
}
