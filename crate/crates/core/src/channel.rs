//! Frequency-selective underwater acoustic link model and capacity.
//!
//! Transmission loss follows a spreading law with Thorp absorption, ambient
//! noise is the usual four-source composite (turbulence, shipping, wind
//! driven waves, thermal), small-scale fading is unit-mean Rayleigh power
//! fading held constant over a chunk. Capacity is the trapezoidal integral of
//! `log2(1 + P(f)|H(f)|²|h|²/S(f))` over the one-sided passband, in bits/s.

use crate::par::{self, Exec};
use crate::rng;
use crate::VehicleId;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: expected {expected} samples, got {got}")]
    GridMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// Uniform frequency grid over a passband.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    f_lo: f64,
    f_hi: f64,
    n_points: usize,
}

impl FrequencyGrid {
    pub fn new(f_lo: f64, f_hi: f64, n_points: usize) -> Result<Self> {
        if !(f_lo > 0.0 && f_lo.is_finite()) {
            return Err(ChannelError::InvalidGrid(format!(
                "f_lo must be > 0, got {f_lo}"
            )));
        }
        if !(f_hi > f_lo && f_hi.is_finite()) {
            return Err(ChannelError::InvalidGrid(format!(
                "f_hi must exceed f_lo, got [{f_lo}, {f_hi}]"
            )));
        }
        if n_points < 2 {
            return Err(ChannelError::InvalidGrid(format!(
                "need at least 2 points, got {n_points}"
            )));
        }
        Ok(Self {
            f_lo,
            f_hi,
            n_points,
        })
    }

    /// 100 kHz passband around a 100 kHz carrier, 1024 points.
    pub fn default_band() -> Self {
        Self {
            f_lo: 50e3,
            f_hi: 150e3,
            n_points: 1024,
        }
    }

    pub fn f_lo(&self) -> f64 {
        self.f_lo
    }

    pub fn f_hi(&self) -> f64 {
        self.f_hi
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bandwidth(&self) -> f64 {
        self.f_hi - self.f_lo
    }

    pub fn step(&self) -> f64 {
        self.bandwidth() / (self.n_points - 1) as f64
    }

    pub fn freq(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.f_hi
        } else {
            self.f_lo + i as f64 * self.step()
        }
    }

    pub fn freqs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|i| self.freq(i))
    }

    /// Same band with twice the resolution (every old point is kept).
    pub fn refined(&self) -> Self {
        Self {
            n_points: 2 * self.n_points - 1,
            ..*self
        }
    }

    /// Trapezoidal integral of samples taken on this grid.
    pub fn integrate(&self, samples: &[f64]) -> Result<f64> {
        self.check_len(samples.len())?;
        let n = samples.len();
        let inner: f64 = samples.iter().sum::<f64>() - 0.5 * (samples[0] + samples[n - 1]);
        Ok(inner * self.step())
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n_points {
            return Err(ChannelError::GridMismatch {
                expected: self.n_points,
                got,
            });
        }
        Ok(())
    }
}

/// Spreading and absorption settings for [`attenuation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Spreading exponent k (1 cylindrical, 2 spherical).
    pub spreading_exponent: f64,
    pub absorption: bool,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            spreading_exponent: 1.5,
            absorption: true,
        }
    }
}

/// Ambient noise composite parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Shipping activity factor in [0, 1].
    pub shipping: f64,
    /// Wind speed in m/s.
    pub wind_mps: f64,
    /// Source level in dB re 1 µPa at 1 m of a 1 W source. Converts the
    /// composite noise level in dB re 1 µPa²/Hz to W/Hz on the same scale as
    /// transmit power.
    pub source_level_ref_db: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            shipping: 0.5,
            wind_mps: 10.0,
            source_level_ref_db: 170.8,
        }
    }
}

/// Thorp absorption coefficient in dB/km.
pub fn thorp_db_per_km(f_hz: f64) -> f64 {
    let f = f_hz / 1e3;
    let f2 = f * f;
    0.11 * f2 / (1.0 + f2) + 44.0 * f2 / (4100.0 + f2) + 2.75e-4 * f2 + 0.003
}

/// Power gain `1 / (d^k · a(f)^(d/1000))` of a link of length `distance` m.
pub fn attenuation(distance: f64, f_hz: f64, params: &PropagationParams) -> Result<f64> {
    if !(distance > 0.0) {
        return Err(ChannelError::Domain(format!(
            "distance must be > 0, got {distance}"
        )));
    }
    if !(f_hz > 0.0) {
        return Err(ChannelError::Domain(format!(
            "frequency must be > 0, got {f_hz}"
        )));
    }
    let spreading = distance.powf(params.spreading_exponent);
    let absorption = if params.absorption {
        10f64
            .powf(thorp_db_per_km(f_hz) / 10.0)
            .powf(distance / 1000.0)
    } else {
        1.0
    };
    Ok(1.0 / (spreading * absorption))
}

/// Composite ambient noise level in dB re 1 µPa²/Hz.
pub fn noise_level_db(f_hz: f64, params: &NoiseParams) -> Result<f64> {
    if !(f_hz > 0.0) {
        return Err(ChannelError::Domain(format!(
            "frequency must be > 0, got {f_hz}"
        )));
    }
    let f = f_hz / 1e3;
    let lf = f.log10();
    let turbulence = 17.0 - 30.0 * lf;
    let shipping = 40.0 + 20.0 * (params.shipping - 0.5) + 26.0 * lf - 60.0 * (f + 0.03).log10();
    let waves = 50.0 + 7.5 * params.wind_mps.sqrt() + 20.0 * lf - 40.0 * (f + 0.4).log10();
    let thermal = -15.0 + 20.0 * lf;
    let total: f64 = [turbulence, shipping, waves, thermal]
        .iter()
        .map(|db| 10f64.powf(db / 10.0))
        .sum();
    Ok(10.0 * total.log10())
}

/// Noise power spectral density in W/Hz.
pub fn noise_psd(f_hz: f64, params: &NoiseParams) -> Result<f64> {
    let db = noise_level_db(f_hz, params)?;
    Ok(10f64.powf((db - params.source_level_ref_db) / 10.0))
}

/// `n_links` i.i.d. unit-mean exponential power gains.
pub fn sample_fading(seed: u64, n_links: usize) -> Vec<f64> {
    let mut rng = rng::stream(seed, 0);
    (0..n_links).map(|_| Exp1.sample(&mut rng)).collect()
}

/// Per-link state for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub tx: VehicleId,
    pub rx: VehicleId,
    /// |H(f)|² per grid point.
    pub gain_samples: Vec<f64>,
    /// Block fading |h|².
    pub fading_gain: f64,
    /// Propagation delay in seconds.
    pub delay: f64,
    /// S(f) in W/Hz per grid point.
    pub noise_psd: Vec<f64>,
    pub chunk: usize,
}

impl ChannelState {
    /// Builds the state of a link of length `distance` m from the models above.
    #[allow(clippy::too_many_arguments)]
    pub fn for_link(
        tx: VehicleId,
        rx: VehicleId,
        distance: f64,
        sound_speed: f64,
        grid: &FrequencyGrid,
        prop: &PropagationParams,
        noise: &NoiseParams,
        fading_gain: f64,
        chunk: usize,
    ) -> Result<Self> {
        if !(sound_speed > 0.0) {
            return Err(ChannelError::Domain(format!(
                "sound speed must be > 0, got {sound_speed}"
            )));
        }
        let gain_samples = grid
            .freqs()
            .map(|f| attenuation(distance, f, prop))
            .collect::<Result<Vec<_>>>()?;
        let noise_psd = grid
            .freqs()
            .map(|f| noise_psd(f, noise))
            .collect::<Result<Vec<_>>>()?;
        let state = Self {
            tx,
            rx,
            gain_samples,
            fading_gain,
            delay: distance / sound_speed,
            noise_psd,
            chunk,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gain_samples.iter().any(|g| !(*g >= 0.0)) {
            return Err(ChannelError::Domain("gain samples must be >= 0".into()));
        }
        if self.noise_psd.iter().any(|s| !(*s > 0.0)) {
            return Err(ChannelError::Domain("noise samples must be > 0".into()));
        }
        if !(self.fading_gain >= 0.0) {
            return Err(ChannelError::Domain("fading gain must be >= 0".into()));
        }
        if !(self.delay >= 0.0) {
            return Err(ChannelError::Domain("delay must be >= 0".into()));
        }
        if self.gain_samples.len() != self.noise_psd.len() {
            return Err(ChannelError::GridMismatch {
                expected: self.gain_samples.len(),
                got: self.noise_psd.len(),
            });
        }
        Ok(())
    }

    /// Band-averaged |H(f)|² (the large-scale path gain).
    pub fn mean_gain(&self, grid: &FrequencyGrid) -> Result<f64> {
        Ok(grid.integrate(&self.gain_samples)? / grid.bandwidth())
    }

    /// In-band noise power in W.
    pub fn noise_power(&self, grid: &FrequencyGrid) -> Result<f64> {
        grid.integrate(&self.noise_psd)
    }

    pub fn with_fading(&self, fading_gain: f64) -> Self {
        Self {
            fading_gain,
            ..self.clone()
        }
    }
}

/// Transmit power spectral density and its total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    psd: Vec<f64>,
    total_power: f64,
}

impl PowerSpectrum {
    pub fn from_psd(psd: Vec<f64>, grid: &FrequencyGrid) -> Result<Self> {
        if psd.iter().any(|p| !(*p >= 0.0)) {
            return Err(ChannelError::Domain("psd must be >= 0".into()));
        }
        let total_power = grid.integrate(&psd)?;
        Ok(Self { psd, total_power })
    }

    /// Total power `p` spread evenly over the band.
    pub fn flat(total_power: f64, grid: &FrequencyGrid) -> Result<Self> {
        if !(total_power >= 0.0) {
            return Err(ChannelError::Domain(format!(
                "power must be >= 0, got {total_power}"
            )));
        }
        let level = total_power / grid.bandwidth();
        Self::from_psd(vec![level; grid.len()], grid)
    }

    pub fn psd(&self) -> &[f64] {
        &self.psd
    }

    pub fn total_power(&self) -> f64 {
        self.total_power
    }
}

/// Link capacity in bits/s.
pub fn capacity(chan: &ChannelState, pwr: &PowerSpectrum, grid: &FrequencyGrid) -> Result<f64> {
    grid.check_len(chan.gain_samples.len())?;
    grid.check_len(chan.noise_psd.len())?;
    grid.check_len(pwr.psd.len())?;
    let integrand: Vec<f64> = pwr
        .psd
        .iter()
        .zip(&chan.gain_samples)
        .zip(&chan.noise_psd)
        .map(|((p, h), s)| (p * h * chan.fading_gain / s).ln_1p() / std::f64::consts::LN_2)
        .collect();
    grid.integrate(&integrand)
}

/// How fading is drawn in [`expected_capacity`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadingModel {
    /// Unit-mean exponential |h|².
    #[default]
    Rayleigh,
    /// Use the template's `fading_gain` as is.
    Fixed,
}

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Ergodic capacity over fading draws.
pub fn expected_capacity(
    template: &ChannelState,
    pwr: &PowerSpectrum,
    grid: &FrequencyGrid,
    n_samples: usize,
    seed: u64,
    fading: FadingModel,
) -> Result<Estimate> {
    expected_capacity_with(
        Exec::default(),
        template,
        pwr,
        grid,
        n_samples,
        seed,
        fading,
    )
}

pub fn expected_capacity_with(
    exec: Exec,
    template: &ChannelState,
    pwr: &PowerSpectrum,
    grid: &FrequencyGrid,
    n_samples: usize,
    seed: u64,
    fading: FadingModel,
) -> Result<Estimate> {
    if n_samples == 0 {
        return Err(ChannelError::Domain("n_samples must be >= 1".into()));
    }
    if fading == FadingModel::Fixed {
        let c = capacity(template, pwr, grid)?;
        return Ok(Estimate {
            mean: c,
            std_error: 0.0,
            samples: n_samples,
        });
    }
    // The capacity only depends on the product of fading and the per-point
    // SNR, so precompute the SNR profile once.
    grid.check_len(template.gain_samples.len())?;
    grid.check_len(template.noise_psd.len())?;
    grid.check_len(pwr.psd.len())?;
    let snr: Vec<f64> = pwr
        .psd
        .iter()
        .zip(&template.gain_samples)
        .zip(&template.noise_psd)
        .map(|((p, h), s)| p * h / s)
        .collect();
    let draws = sample_fading(seed, n_samples);
    let caps = par::map_slice(exec, &draws, |&x| {
        let integrand: Vec<f64> = snr
            .iter()
            .map(|g| (g * x).ln_1p() / std::f64::consts::LN_2)
            .collect();
        grid.integrate(&integrand)
            .expect("grid length checked above")
    });
    let n = n_samples as f64;
    let mean = caps.iter().sum::<f64>() / n;
    let std_error = if n_samples > 1 {
        let var = caps.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(Estimate {
        mean,
        std_error,
        samples: n_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_state(grid: &FrequencyGrid, gain: f64, noise: f64) -> ChannelState {
        ChannelState {
            tx: VehicleId(0),
            rx: VehicleId(1),
            gain_samples: vec![gain; grid.len()],
            fading_gain: 1.0,
            delay: 0.0,
            noise_psd: vec![noise; grid.len()],
            chunk: 0,
        }
    }

    fn smooth_state(grid: &FrequencyGrid, distance: f64) -> ChannelState {
        ChannelState::for_link(
            VehicleId(0),
            VehicleId(1),
            distance,
            1500.0,
            grid,
            &PropagationParams::default(),
            &NoiseParams::default(),
            1.0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn grid_rejects_bad_bounds() {
        assert!(FrequencyGrid::new(0.0, 1.0, 4).is_err());
        assert!(FrequencyGrid::new(2.0, 1.0, 4).is_err());
        assert!(FrequencyGrid::new(1.0, 2.0, 1).is_err());
        let g = FrequencyGrid::new(1.0, 3.0, 3).unwrap();
        assert_eq!(g.freqs().collect::<Vec<_>>(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn attenuation_unit_distance_is_near_one() {
        let g = attenuation(1.0, 50e3, &PropagationParams::default()).unwrap();
        assert!((g - 1.0).abs() < 5e-3, "{g}");
    }

    #[test]
    fn attenuation_pure_spreading_law() {
        let p = PropagationParams {
            spreading_exponent: 1.5,
            absorption: false,
        };
        for d in [1.0, 7.5, 300.0, 4000.0] {
            let r = attenuation(2.0 * d, 80e3, &p).unwrap() / attenuation(d, 80e3, &p).unwrap();
            assert!((r - 2f64.powf(-1.5)).abs() < 1e-15, "{r}");
        }
    }

    #[test]
    fn attenuation_matches_direct_thorp_evaluation() {
        // 1 km at 100 kHz: 34.0687 dB/km absorption, 1000^1.5 spreading.
        let g = attenuation(1000.0, 100e3, &PropagationParams::default()).unwrap();
        assert!((g / 1.2391780842291674e-08 - 1.0).abs() < 1e-12, "{g}");
        assert!((thorp_db_per_km(100e3) - 34.068662759965136).abs() < 1e-12);
    }

    #[test]
    fn attenuation_domain_errors() {
        let p = PropagationParams::default();
        assert!(matches!(
            attenuation(0.0, 1e3, &p),
            Err(ChannelError::Domain(_))
        ));
        assert!(matches!(
            attenuation(-3.0, 1e3, &p),
            Err(ChannelError::Domain(_))
        ));
        assert!(matches!(
            attenuation(3.0, 0.0, &p),
            Err(ChannelError::Domain(_))
        ));
    }

    #[test]
    fn noise_psd_reference_value() {
        let s = noise_psd(50e3, &NoiseParams::default()).unwrap();
        assert!((s / 7.650256095527317e-14 - 1.0).abs() < 1e-12, "{s}");
        assert!(noise_psd(0.0, &NoiseParams::default()).is_err());
    }

    #[test]
    fn noise_psd_decreasing_over_band() {
        let p = NoiseParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..=900 {
            let f = 10e3 + 100.0 * i as f64;
            let s = noise_psd(f, &p).unwrap();
            assert!(s.is_finite() && s > 0.0);
            assert!(s < prev, "not decreasing at {f}");
            prev = s;
        }
    }

    #[test]
    fn fading_is_seeded_and_unit_mean() {
        assert_eq!(sample_fading(9, 32), sample_fading(9, 32));
        assert_ne!(sample_fading(9, 32), sample_fading(10, 32));
        let draws = sample_fading(123, 1_000_000);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!(draws.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn capacity_zero_power_and_dead_channel() {
        let grid = FrequencyGrid::default_band();
        let chan = flat_state(&grid, 1e-6, 1e-12);
        let zero = PowerSpectrum::flat(0.0, &grid).unwrap();
        assert_eq!(capacity(&chan, &zero, &grid).unwrap(), 0.0);
        let dead = flat_state(&grid, 0.0, 1e-12);
        let p = PowerSpectrum::flat(10.0, &grid).unwrap();
        assert_eq!(capacity(&dead, &p, &grid).unwrap(), 0.0);
    }

    #[test]
    fn capacity_flat_channel_closed_form() {
        let grid = FrequencyGrid::default_band();
        let b = grid.bandwidth();
        for gamma in [0.1, 1.0, 10.0, 100.0] {
            // p/B · g / s = gamma
            let chan = flat_state(&grid, 1e-3, 1e-9);
            let p = gamma * 1e-9 * b / 1e-3;
            let pwr = PowerSpectrum::flat(p, &grid).unwrap();
            let c = capacity(&chan, &pwr, &grid).unwrap();
            let want = b * (1.0 + gamma).log2();
            assert!(
                (c / want - 1.0).abs() < 1e-3,
                "gamma={gamma}: {c} vs {want}"
            );
        }
    }

    #[test]
    fn capacity_grid_mismatch() {
        let grid = FrequencyGrid::default_band();
        let other = FrequencyGrid::new(50e3, 150e3, 512).unwrap();
        let chan = flat_state(&grid, 1.0, 1.0);
        let pwr = PowerSpectrum::flat(1.0, &other).unwrap();
        assert!(matches!(
            capacity(&chan, &pwr, &grid),
            Err(ChannelError::GridMismatch { .. })
        ));
    }

    #[test]
    fn flat_spectrum_total_is_exact() {
        let grid = FrequencyGrid::default_band();
        let pwr = PowerSpectrum::flat(7.25, &grid).unwrap();
        assert!((pwr.total_power() / 7.25 - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn capacity_converges_under_refinement() {
        let mut grid = FrequencyGrid::new(50e3, 150e3, 256).unwrap();
        for _ in 0..3 {
            let fine = grid.refined();
            let c = capacity(
                &smooth_state(&grid, 400.0),
                &PowerSpectrum::flat(20.0, &grid).unwrap(),
                &grid,
            )
            .unwrap();
            let c2 = capacity(
                &smooth_state(&fine, 400.0),
                &PowerSpectrum::flat(20.0, &fine).unwrap(),
                &fine,
            )
            .unwrap();
            assert!((c - c2).abs() <= 1e-3 * c2, "{c} vs {c2}");
            grid = fine;
        }
    }

    #[test]
    fn expected_capacity_fixed_fading_is_capacity() {
        let grid = FrequencyGrid::default_band();
        let chan = smooth_state(&grid, 300.0).with_fading(0.7);
        let pwr = PowerSpectrum::flat(5.0, &grid).unwrap();
        let est = expected_capacity(&chan, &pwr, &grid, 50, 1, FadingModel::Fixed).unwrap();
        assert_eq!(est.mean, capacity(&chan, &pwr, &grid).unwrap());
        assert_eq!(est.std_error, 0.0);
    }

    /// E[B log2(1 + γx)], x ~ Exp(1), by composite Simpson on [0, 60].
    fn ergodic_flat_quadrature(b: f64, gamma: f64) -> f64 {
        let n = 200_000;
        let hi = 60.0;
        let h = hi / n as f64;
        let f = |x: f64| (1.0 + gamma * x).log2() * (-x).exp();
        let mut s = f(0.0) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        b * s * h / 3.0
    }

    #[test]
    fn expected_capacity_matches_quadrature() {
        let grid = FrequencyGrid::new(50e3, 150e3, 64).unwrap();
        let gamma = 10.0;
        let chan = flat_state(&grid, 1.0, 1.0);
        let pwr = PowerSpectrum::flat(gamma * grid.bandwidth(), &grid).unwrap();
        let est = expected_capacity(&chan, &pwr, &grid, 100_000, 5, FadingModel::Rayleigh).unwrap();
        let want = ergodic_flat_quadrature(grid.bandwidth(), gamma);
        assert!(
            (est.mean - want).abs() <= 3.0 * est.std_error,
            "{} vs {want} (se {})",
            est.mean,
            est.std_error
        );
        let other =
            expected_capacity(&chan, &pwr, &grid, 100_000, 77, FadingModel::Rayleigh).unwrap();
        let se = (est.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        assert!((est.mean - other.mean).abs() <= 5.0 * se);
    }

    #[test]
    fn expected_capacity_is_deterministic_across_exec() {
        let grid = FrequencyGrid::new(50e3, 150e3, 128).unwrap();
        let chan = smooth_state(&grid, 250.0);
        let pwr = PowerSpectrum::flat(3.0, &grid).unwrap();
        let a = expected_capacity_with(
            Exec::Sequential,
            &chan,
            &pwr,
            &grid,
            999,
            4,
            FadingModel::Rayleigh,
        )
        .unwrap();
        let b = expected_capacity_with(
            Exec::Parallel,
            &chan,
            &pwr,
            &grid,
            999,
            4,
            FadingModel::Rayleigh,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn capacity_monotone_in_power_and_gain(
            gains in proptest::collection::vec(0.0f64..1e-4, 16),
            noise in proptest::collection::vec(1e-14f64..1e-10, 16),
            p in 0.0f64..50.0,
            dp in 0.0f64..50.0,
            bump_at in 0usize..16,
            bump in 0.0f64..1e-4,
        ) {
            let grid = FrequencyGrid::new(50e3, 150e3, 16).unwrap();
            let chan = ChannelState {
                tx: VehicleId(0), rx: VehicleId(1), gain_samples: gains, fading_gain: 1.0,
                delay: 0.0, noise_psd: noise, chunk: 0,
            };
            let lo = capacity(&chan, &PowerSpectrum::flat(p, &grid).unwrap(), &grid).unwrap();
            let hi = capacity(&chan, &PowerSpectrum::flat(p + dp, &grid).unwrap(), &grid).unwrap();
            prop_assert!(lo >= 0.0);
            prop_assert!(hi >= lo);
            let mut bumped = chan.clone();
            bumped.gain_samples[bump_at] += bump;
            let hb = capacity(&bumped, &PowerSpectrum::flat(p, &grid).unwrap(), &grid).unwrap();
            prop_assert!(hb >= lo);
        }

        #[test]
        fn expected_capacity_within_sanity_bounds(
            distance in 50.0f64..2000.0,
            p in 0.1f64..50.0,
            seed in 0u64..1000,
        ) {
            let grid = FrequencyGrid::new(50e3, 150e3, 64).unwrap();
            let chan = smooth_state(&grid, distance);
            let pwr = PowerSpectrum::flat(p, &grid).unwrap();
            let est = expected_capacity(&chan, &pwr, &grid, 256, seed, FadingModel::Rayleigh).unwrap();
            // 99.99th percentile of Exp(1) is ln(1e4).
            let cap_hi = capacity(&chan.with_fading(1e4f64.ln()), &pwr, &grid).unwrap();
            prop_assert!(est.mean >= 0.0);
            prop_assert!(est.mean <= cap_hi);
        }
    }
}
