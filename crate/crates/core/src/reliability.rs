//! Reliability index under the normal-approximation limit state g = R − S,
//! and the simulated / observed / primary β series.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fatigue::StressSample;

/// Target reliability; a primary β below it is a breach.
pub const TARGET_BETA: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("degenerate limit state: both standard deviations are zero")]
    Degenerate,
    #[error("empty load window")]
    EmptyWindow,
    #[error("series misaligned at index {index}: {detail}")]
    Misaligned { index: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceModel {
    /// μ_R, normalized stress units
    pub mean: f64,
    /// σ_R
    pub std: f64,
    /// Fraction of μ_R lost per unit Miner damage.
    pub degradation_rate: f64,
}

impl Default for ResistanceModel {
    fn default() -> Self {
        Self {
            mean: 4.0,
            std: 0.6,
            degradation_rate: 0.25,
        }
    }
}

impl ResistanceModel {
    /// Mean resistance after accumulated damage `d`, floored at zero.
    pub fn degraded_mean(&self, damage: f64) -> f64 {
        (self.mean * (1.0 - self.degradation_rate * damage)).max(0.0)
    }
}

/// Resistance priors plus the rolling load window and target β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReliabilityConfig {
    pub mean: f64,
    pub std: f64,
    pub degradation_rate: f64,
    /// s
    pub window: f64,
    pub target_beta: f64,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        let r = ResistanceModel::default();
        Self {
            mean: r.mean,
            std: r.std,
            degradation_rate: r.degradation_rate,
            window: 3600.0,
            target_beta: TARGET_BETA,
        }
    }
}

impl ReliabilityConfig {
    pub fn resistance(&self) -> ResistanceModel {
        ResistanceModel {
            mean: self.mean,
            std: self.std,
            degradation_rate: self.degradation_rate,
        }
    }

    pub fn validate(&self) -> Result<(), ReliabilityError> {
        if !(self.mean > 0.0) {
            return Err(ReliabilityError::Config("reliability.mean must be > 0".into()));
        }
        if !(self.std >= 0.0) {
            return Err(ReliabilityError::Config("reliability.std must be >= 0".into()));
        }
        if !(self.degradation_rate >= 0.0) {
            return Err(ReliabilityError::Config(
                "reliability.degradation_rate must be >= 0".into(),
            ));
        }
        if !(self.window > 0.0) {
            return Err(ReliabilityError::Config("reliability.window must be > 0".into()));
        }
        if !self.target_beta.is_finite() {
            return Err(ReliabilityError::Config(
                "reliability.target_beta must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// β = (μ_R − μ_S) / √(σ_R² + σ_S²)
pub fn beta(mean_r: f64, std_r: f64, mean_s: f64, std_s: f64) -> Result<f64, ReliabilityError> {
    let var = std_r * std_r + std_s * std_s;
    if var <= 0.0 {
        return Err(ReliabilityError::Degenerate);
    }
    Ok((mean_r - mean_s) / var.sqrt())
}

/// Sample mean and (n − 1) standard deviation of a stress window.
pub fn load_stats(window: &[StressSample]) -> Result<(f64, f64), ReliabilityError> {
    let values: Vec<f64> = window.iter().map(|s| s.stress).collect();
    mean_std(&values)
}

pub fn mean_std(values: &[f64]) -> Result<(f64, f64), ReliabilityError> {
    let n = values.len();
    if n == 0 {
        return Err(ReliabilityError::EmptyWindow);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1) as f64).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetaSource {
    Observed,
    Simulated,
}

impl fmt::Display for BetaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BetaSource::Observed => "Observed",
            BetaSource::Simulated => "Simulated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSample {
    pub timestamp: i64,
    pub beta_sim: Option<f64>,
    pub beta_obs: Option<f64>,
    pub beta_primary: f64,
    pub source: BetaSource,
    pub breach: bool,
}

/// Rolling sums over a window; values are centred on a reference to keep
/// the variance formula well conditioned.
struct RollingMoments {
    reference: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl RollingMoments {
    fn new(values: &[f64]) -> Self {
        let reference = values.first().copied().unwrap_or(0.0);
        let mut sum = Vec::with_capacity(values.len() + 1);
        let mut sum_sq = Vec::with_capacity(values.len() + 1);
        let (mut s, mut q) = (0.0, 0.0);
        sum.push(0.0);
        sum_sq.push(0.0);
        for v in values {
            let d = v - reference;
            s += d;
            q += d * d;
            sum.push(s);
            sum_sq.push(q);
        }
        Self { reference, sum, sum_sq }
    }

    /// Mean and sample std over `values[lo..hi]`.
    fn stats(&self, lo: usize, hi: usize) -> (f64, f64) {
        let n = (hi - lo) as f64;
        let s = self.sum[hi] - self.sum[lo];
        let q = self.sum_sq[hi] - self.sum_sq[lo];
        let mean = self.reference + s / n;
        if hi - lo < 2 {
            return (mean, 0.0);
        }
        let var = ((q - s * s / n) / (n - 1.0)).max(0.0);
        (mean, var.sqrt())
    }
}

/// Observed stress with its validity flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedStress {
    pub sample: StressSample,
    pub valid: bool,
}

/// β series over a common cadence. Each timestamp uses the samples in
/// `(t − window, t]`; β_obs exists only when all observations in the
/// window are valid, and the primary series takes it whenever it exists.
pub fn beta_series(
    sim: &[StressSample],
    obs: &[ObservedStress],
    resistance: &ResistanceModel,
    damage: &[f64],
    window: f64,
    target_beta: f64,
) -> Result<Vec<BetaSample>, ReliabilityError> {
    if sim.len() != obs.len() || sim.len() != damage.len() {
        return Err(ReliabilityError::Misaligned {
            index: sim.len().min(obs.len()).min(damage.len()),
            detail: format!(
                "lengths differ: sim {}, obs {}, damage {}",
                sim.len(),
                obs.len(),
                damage.len()
            ),
        });
    }
    for (i, (s, o)) in sim.iter().zip(obs).enumerate() {
        if s.timestamp != o.sample.timestamp {
            return Err(ReliabilityError::Misaligned {
                index: i,
                detail: format!("sim t={} vs obs t={}", s.timestamp, o.sample.timestamp),
            });
        }
        if i > 0 && s.timestamp <= sim[i - 1].timestamp {
            return Err(ReliabilityError::Misaligned {
                index: i,
                detail: "timestamps not increasing".into(),
            });
        }
    }

    let sim_values: Vec<f64> = sim.iter().map(|s| s.stress).collect();
    let obs_values: Vec<f64> = obs.iter().map(|o| o.sample.stress).collect();
    let sim_m = RollingMoments::new(&sim_values);
    let obs_m = RollingMoments::new(&obs_values);
    let mut invalid_prefix = Vec::with_capacity(obs.len() + 1);
    invalid_prefix.push(0usize);
    for o in obs {
        invalid_prefix.push(invalid_prefix.last().unwrap() + usize::from(!o.valid));
    }

    let mut lo = 0;
    let mut out = Vec::with_capacity(sim.len());
    for (i, s) in sim.iter().enumerate() {
        let t = s.timestamp as f64;
        while (sim[lo].timestamp as f64) <= t - window {
            lo += 1;
        }
        let hi = i + 1;
        let mean_r = resistance.degraded_mean(damage[i]);
        let (ms, ss) = sim_m.stats(lo, hi);
        let beta_sim = beta(mean_r, resistance.std, ms, ss)?;
        let beta_obs = if invalid_prefix[hi] == invalid_prefix[lo] {
            let (mo, so) = obs_m.stats(lo, hi);
            Some(beta(mean_r, resistance.std, mo, so)?)
        } else {
            None
        };
        let (beta_primary, source) = match beta_obs {
            Some(b) => (b, BetaSource::Observed),
            None => (beta_sim, BetaSource::Simulated),
        };
        out.push(BetaSample {
            timestamp: s.timestamp,
            beta_sim: Some(beta_sim),
            beta_obs,
            beta_primary,
            source,
            breach: beta_primary < target_beta,
        });
    }
    Ok(out)
}
