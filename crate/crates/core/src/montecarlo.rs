//! Seeded Monte Carlo ensembles over uncertain demand and model parameters.
//!
//! Each replicate samples every configured distribution from its own
//! stream, runs the synthetic-traffic pipeline and keeps the final fatigue
//! score and reliability index. Replicates run in parallel and are reduced
//! in index order, so results do not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fatigue::{Alert, CRITICAL_ABOVE, SAFE_BELOW};
use crate::pipeline::{run_simulation, PipelineError, ScenarioConfig, SyntheticWeather};
use crate::seeding::derive_seed;

/// Damage reference of the default ensemble scenario. One simulated hour
/// accrues far less than the Miner limit of 1, so the ensemble scores
/// against this hourly reference, which puts the default demand in the
/// monitor band.
pub const DEFAULT_MC_D_REF: f64 = 6.0e-8;

const MAX_TRUNCATION_ATTEMPTS: usize = 1000;
pub const HISTOGRAM_BIN_WIDTH: f64 = 5.0;
pub const HISTOGRAM_BINS: usize = 20;

/// Sampleable parameter paths.
pub const PARAMETER_PATHS: [&str; 13] = [
    "demand.scale",
    "demand.base_rate",
    "demand.peak_rate",
    "demand.truck_fraction",
    "traffic.v_f",
    "traffic.rho_jam",
    "env.w_ft",
    "env.w_r",
    "env.w_w",
    "resistance.mean",
    "resistance.std",
    "fatigue.d_ref",
    "sn.exponent",
];

#[derive(Debug, Error)]
pub enum McError {
    #[error("unknown parameter path `{0}`")]
    UnknownParameter(String),
    #[error("invalid distribution for `{name}`: {message}")]
    Distribution { name: String, message: String },
    #[error("`{name}`: no sample inside the truncation range after {attempts} attempts")]
    TruncationStarvation { name: String, attempts: usize },
    #[error("invalid ensemble configuration: {0}")]
    Config(String),
    #[error("replicate {index} (traffic seed {seed}) failed: {source}")]
    Replicate {
        index: usize,
        seed: u64,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("percentile of an empty list")]
    EmptyPercentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionKind {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDistribution {
    pub name: String,
    pub kind: DistributionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<[f64; 2]>,
}

impl ParameterDistribution {
    pub fn new(name: &str, kind: DistributionKind) -> Self {
        Self {
            name: name.into(),
            kind,
            truncation: None,
        }
    }

    pub fn truncated(mut self, lo: f64, hi: f64) -> Self {
        self.truncation = Some([lo, hi]);
        self
    }

    pub fn validate(&self) -> Result<(), McError> {
        if !PARAMETER_PATHS.contains(&self.name.as_str()) {
            return Err(McError::UnknownParameter(self.name.clone()));
        }
        let bad = |message: &str| McError::Distribution {
            name: self.name.clone(),
            message: message.into(),
        };
        match self.kind {
            DistributionKind::Normal { mean, std } if !(mean.is_finite() && std >= 0.0 && std.is_finite()) => {
                return Err(bad("need finite mean and std >= 0"));
            }
            DistributionKind::Uniform { low, high } if !(low < high && low.is_finite() && high.is_finite()) => {
                return Err(bad("need low < high"));
            }
            DistributionKind::LogNormal { mu, sigma } if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) => {
                return Err(bad("need finite mu and sigma >= 0"));
            }
            DistributionKind::Fixed { value } if !value.is_finite() => return Err(bad("value must be finite")),
            _ => {}
        }
        if let Some([lo, hi]) = self.truncation {
            if !(lo <= hi) {
                return Err(bad("truncation needs lo <= hi"));
            }
        }
        Ok(())
    }

    /// One draw, resampling until it lands inside the truncation range.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<f64, McError> {
        let bad = |e: &dyn std::fmt::Display| McError::Distribution {
            name: self.name.clone(),
            message: e.to_string(),
        };
        let draw = |rng: &mut ChaCha8Rng| -> Result<f64, McError> {
            Ok(match self.kind {
                DistributionKind::Normal { mean, std } => Normal::new(mean, std).map_err(|e| bad(&e))?.sample(rng),
                DistributionKind::Uniform { low, high } => Uniform::new(low, high).map_err(|e| bad(&e))?.sample(rng),
                DistributionKind::LogNormal { mu, sigma } => {
                    LogNormal::new(mu, sigma).map_err(|e| bad(&e))?.sample(rng)
                }
                DistributionKind::Fixed { value } => value,
            })
        };
        let Some([lo, hi]) = self.truncation else {
            return draw(rng);
        };
        for _ in 0..MAX_TRUNCATION_ATTEMPTS {
            let v = draw(rng)?;
            if (lo..=hi).contains(&v) {
                return Ok(v);
            }
        }
        Err(McError::TruncationStarvation {
            name: self.name.clone(),
            attempts: MAX_TRUNCATION_ATTEMPTS,
        })
    }
}

/// Writes `value` into the scenario field named by `path`.
pub fn apply_parameter(scenario: &mut ScenarioConfig, path: &str, value: f64) -> Result<(), McError> {
    match path {
        "demand.scale" => scenario.demand.scale = value,
        "demand.base_rate" => scenario.demand.base_rate = value,
        "demand.peak_rate" => scenario.demand.peak_rate = value,
        "demand.truck_fraction" => {
            let mix = &mut scenario.demand.class_mix;
            mix.truck = value;
            mix.car = 1.0 - value - mix.bus;
        }
        "traffic.v_f" => scenario.fundamental_diagram.free_flow_speed = value,
        "traffic.rho_jam" => scenario.fundamental_diagram.jam_density = value,
        "env.w_ft" => scenario.environment.freeze_thaw_weight = value,
        "env.w_r" => scenario.environment.rain_weight = value,
        "env.w_w" => scenario.environment.wind_weight = value,
        "resistance.mean" => scenario.reliability.mean = value,
        "resistance.std" => scenario.reliability.std = value,
        "fatigue.d_ref" => scenario.fatigue.d_ref = value,
        "sn.exponent" => scenario.sn_curve.exponent = value,
        other => return Err(McError::UnknownParameter(other.into())),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_replicates: usize,
    pub master_seed: u64,
    /// Simulated seconds per replicate.
    pub duration: f64,
    /// Shared traffic seed for every replicate; `None` draws one per
    /// replicate from the master seed.
    pub traffic_seed: Option<u64>,
    pub distributions: Vec<ParameterDistribution>,
    /// Replicates per one-at-a-time sensitivity sweep.
    pub sensitivity_replicates: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_replicates: 1000,
            master_seed: 20_240_601,
            duration: 3600.0,
            traffic_seed: None,
            distributions: default_distributions(),
            sensitivity_replicates: 100,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), McError> {
        if self.n_replicates < 1 {
            return Err(McError::Config("n_replicates must be >= 1".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(McError::Config("duration must be > 0".into()));
        }
        if self.sensitivity_replicates < 1 {
            return Err(McError::Config("sensitivity_replicates must be >= 1".into()));
        }
        for d in &self.distributions {
            d.validate()?;
        }
        Ok(())
    }

    pub fn replicate_traffic_seed(&self, index: usize) -> u64 {
        self.traffic_seed
            .unwrap_or_else(|| derive_seed(self.master_seed, index as u64, "traffic"))
    }
}

pub fn default_distributions() -> Vec<ParameterDistribution> {
    use DistributionKind::*;
    let env = crate::environment::EnvModifierConfig::default();
    let pm30 = |w: f64| Uniform {
        low: 0.7 * w,
        high: 1.3 * w,
    };
    vec![
        ParameterDistribution::new("demand.scale", LogNormal { mu: 0.0, sigma: 0.25 }),
        ParameterDistribution::new("traffic.v_f", Normal { mean: 16.7, std: 1.0 }).truncated(10.0, 25.0),
        ParameterDistribution::new("traffic.rho_jam", Uniform { low: 0.10, high: 0.14 }),
        ParameterDistribution::new("demand.truck_fraction", Uniform { low: 0.1, high: 0.3 }),
        ParameterDistribution::new("env.w_ft", pm30(env.freeze_thaw_weight)),
        ParameterDistribution::new("env.w_r", pm30(env.rain_weight)),
        ParameterDistribution::new("env.w_w", pm30(env.wind_weight)),
    ]
}

/// Scenario of the default ensemble: winter-storm weather scored against
/// the hourly damage reference.
pub fn default_mc_scenario() -> ScenarioConfig {
    let mut s = ScenarioConfig {
        weather: SyntheticWeather::WinterStorm,
        ..Default::default()
    };
    s.fatigue.d_ref = DEFAULT_MC_D_REF;
    s
}

/// Resolved scenario of replicate `index`.
pub fn sample_parameters(mc: &McConfig, scenario: &ScenarioConfig, index: usize) -> Result<ScenarioConfig, McError> {
    let mut resolved = scenario.clone();
    for d in &mc.distributions {
        d.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(mc.master_seed, index as u64, &d.name));
        let v = d.sample(&mut rng)?;
        apply_parameter(&mut resolved, &d.name, v)?;
    }
    Ok(resolved)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub fatigue_score: f64,
    pub final_beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: u32,
    pub hi: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub replicates: Vec<ReplicateResult>,
    pub p50: f64,
    pub p90: f64,
    pub frac_safe: f64,
    pub frac_monitor: f64,
    pub frac_critical: f64,
    pub histogram: Vec<HistogramBin>,
}

impl RiskSummary {
    pub fn scores(&self) -> Vec<f64> {
        self.replicates.iter().map(|r| r.fatigue_score).collect()
    }

    pub fn from_replicates(replicates: Vec<ReplicateResult>) -> Result<Self, McError> {
        let scores: Vec<f64> = replicates.iter().map(|r| r.fatigue_score).collect();
        let n = scores.len() as f64;
        let band = |a: Alert| scores.iter().filter(|&&s| Alert::from_score(s) == a).count() as f64 / n;
        Ok(Self {
            p50: percentile(&scores, 0.5)?,
            p90: percentile(&scores, 0.9)?,
            frac_safe: band(Alert::Safe),
            frac_monitor: band(Alert::Monitor),
            frac_critical: band(Alert::Critical),
            histogram: histogram(&scores),
            replicates,
        })
    }
}

/// Nearest-rank percentile: the value at index ⌈q·n⌉ − 1 of the sorted
/// list, the minimum for q = 0.
pub fn percentile(values: &[f64], q: f64) -> Result<f64, McError> {
    if values.is_empty() {
        return Err(McError::EmptyPercentile);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.saturating_sub(1)])
}

/// Counts per 5-point bin over [0, 100]; a score of 100 lands in the last
/// bin.
pub fn histogram(scores: &[f64]) -> Vec<HistogramBin> {
    let mut counts = [0u64; HISTOGRAM_BINS];
    for &s in scores {
        let i = ((s / HISTOGRAM_BIN_WIDTH).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        counts[i] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            lo: (i as f64 * HISTOGRAM_BIN_WIDTH) as u32,
            hi: ((i + 1) as f64 * HISTOGRAM_BIN_WIDTH) as u32,
            count,
        })
        .collect()
}

/// One replicate: sample, simulate, score.
pub fn run_replicate(mc: &McConfig, scenario: &ScenarioConfig, index: usize) -> Result<ReplicateResult, McError> {
    let seed = mc.replicate_traffic_seed(index);
    let wrap = |e: PipelineError| McError::Replicate {
        index,
        seed,
        source: Box::new(e),
    };
    let resolved = match sample_parameters(mc, scenario, index) {
        Ok(r) => r,
        Err(e) => return Err(wrap(PipelineError::Config(e.to_string()))),
    };
    let run = run_simulation(&resolved, mc.duration, seed, None, false).map_err(wrap)?;
    Ok(ReplicateResult {
        replicate: index,
        seed,
        fatigue_score: run.report.score,
        final_beta: run.final_beta(),
    })
}

/// Runs every replicate (in parallel on the current rayon pool) and
/// summarises the score distribution. The first failing replicate by index
/// aborts the ensemble.
pub fn run_ensemble(mc: &McConfig, scenario: &ScenarioConfig) -> Result<RiskSummary, McError> {
    mc.validate()?;
    scenario
        .validate()
        .map_err(|e| McError::Config(format!("scenario: {e}")))?;
    let results: Vec<Result<ReplicateResult, McError>> = (0..mc.n_replicates)
        .into_par_iter()
        .map(|i| run_replicate(mc, scenario, i))
        .collect();
    let replicates = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    RiskSummary::from_replicates(replicates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub parameter: String,
    /// p90 − p10 of the fatigue scores.
    pub spread: f64,
}

/// One-at-a-time sweeps: each distribution alone, with every other
/// parameter at its scenario value and the traffic seed held fixed.
/// Ranked by spread, largest first, ties by name.
pub fn sensitivity_report(mc: &McConfig, scenario: &ScenarioConfig) -> Result<Vec<SensitivityEntry>, McError> {
    mc.validate()?;
    let traffic_seed = mc.replicate_traffic_seed(0);
    let mut entries = Vec::with_capacity(mc.distributions.len());
    for d in &mc.distributions {
        let sweep = McConfig {
            n_replicates: mc.sensitivity_replicates,
            traffic_seed: Some(traffic_seed),
            distributions: vec![d.clone()],
            ..mc.clone()
        };
        let summary = run_ensemble(&sweep, scenario)?;
        let scores = summary.scores();
        entries.push(SensitivityEntry {
            parameter: d.name.clone(),
            spread: percentile(&scores, 0.9)? - percentile(&scores, 0.1)?,
        });
    }
    entries.sort_by(|a, b| {
        b.spread
            .total_cmp(&a.spread)
            .then_with(|| a.parameter.cmp(&b.parameter))
    });
    Ok(entries)
}

/// Band thresholds re-exported for reports.
pub const BANDS: (f64, f64) = (SAFE_BELOW, CRITICAL_ABOVE);

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> McConfig {
        McConfig {
            n_replicates: n,
            duration: 300.0,
            ..Default::default()
        }
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[5.0], 0.0).unwrap(), 5.0);
        assert_eq!(percentile(&[5.0], 0.9).unwrap(), 5.0);
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.0);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&hundred, 0.9).unwrap(), 90.0);
        assert_eq!(percentile(&hundred, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&hundred, 1.0).unwrap(), 100.0);
        assert!(matches!(percentile(&[], 0.5), Err(McError::EmptyPercentile)));
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 4.999, 5.0, 50.0, 99.9, 100.0]);
        assert_eq!(h.len(), 20);
        assert_eq!(h[0].count, 2);
        assert_eq!(h[1].count, 1);
        assert_eq!(h[10].count, 1);
        assert_eq!(h[19].count, 2);
        assert_eq!((h[19].lo, h[19].hi), (95, 100));
    }

    #[test]
    fn fixed_parameters_resolve_to_scenario() {
        let base = ScenarioConfig::default();
        let mc = McConfig {
            distributions: vec![
                ParameterDistribution::new("traffic.v_f", DistributionKind::Fixed { value: 16.7 }),
                ParameterDistribution::new("demand.scale", DistributionKind::Fixed { value: 1.0 }),
            ],
            ..small(1)
        };
        for i in 0..5 {
            assert_eq!(sample_parameters(&mc, &base, i).unwrap(), base);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_index() {
        let base = ScenarioConfig::default();
        let mc = small(1);
        assert_eq!(
            sample_parameters(&mc, &base, 3).unwrap(),
            sample_parameters(&mc, &base, 3).unwrap()
        );
        assert_ne!(
            sample_parameters(&mc, &base, 3).unwrap(),
            sample_parameters(&mc, &base, 4).unwrap()
        );
    }

    #[test]
    fn truncation_honoured_and_starvation_reported() {
        let d = ParameterDistribution::new("traffic.v_f", DistributionKind::Normal { mean: 16.7, std: 5.0 })
            .truncated(15.0, 18.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let v = d.sample(&mut rng).unwrap();
            assert!((15.0..=18.0).contains(&v));
        }
        let starved = ParameterDistribution::new("traffic.v_f", DistributionKind::Normal { mean: 0.0, std: 1.0 })
            .truncated(50.0, 60.0);
        match starved.sample(&mut rng) {
            Err(McError::TruncationStarvation { name, .. }) => assert_eq!(name, "traffic.v_f"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_path_rejected() {
        let mc = McConfig {
            distributions: vec![ParameterDistribution::new(
                "traffic.vf",
                DistributionKind::Fixed { value: 1.0 },
            )],
            ..small(1)
        };
        assert!(matches!(mc.validate(), Err(McError::UnknownParameter(_))));
        let bad = McConfig {
            distributions: vec![ParameterDistribution::new(
                "traffic.v_f",
                DistributionKind::Uniform { low: 2.0, high: 1.0 },
            )],
            ..small(1)
        };
        assert!(matches!(bad.validate(), Err(McError::Distribution { .. })));
    }

    #[test]
    fn truck_fraction_rebalances_cars() {
        let mut s = ScenarioConfig::default();
        apply_parameter(&mut s, "demand.truck_fraction", 0.3).unwrap();
        let mix = s.demand.class_mix;
        assert!((mix.car + mix.truck + mix.bus - 1.0).abs() < 1e-12);
        assert_eq!(mix.truck, 0.3);
    }

    #[test]
    fn single_replicate_equals_pipeline_run() {
        let scenario = default_mc_scenario();
        let mc = small(1);
        let summary = run_ensemble(&mc, &scenario).unwrap();
        let resolved = sample_parameters(&mc, &scenario, 0).unwrap();
        let run = run_simulation(&resolved, mc.duration, mc.replicate_traffic_seed(0), None, false).unwrap();
        assert_eq!(summary.replicates[0].fatigue_score, run.report.score);
        assert_eq!(summary.p50, run.report.score);
        assert_eq!(summary.p90, run.report.score);
    }

    #[test]
    fn benign_scenario_is_all_safe() {
        let mut scenario = ScenarioConfig::default();
        scenario.demand.scale = 0.0;
        let mc = McConfig {
            distributions: vec![],
            ..small(8)
        };
        let s = run_ensemble(&mc, &scenario).unwrap();
        assert_eq!(s.frac_safe, 1.0);
        assert!(s.scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn summary_invariants() {
        let s = run_ensemble(&small(24), &default_mc_scenario()).unwrap();
        assert!((s.frac_safe + s.frac_monitor + s.frac_critical - 1.0).abs() <= 1e-12);
        assert!(s.p50 <= s.p90);
        assert_eq!(s.histogram.iter().map(|b| b.count).sum::<u64>(), 24);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool
            .install(|| run_ensemble(&small(24), &default_mc_scenario()))
            .unwrap();
        assert_eq!(serial, s);
    }

    #[test]
    fn sensitivity_ranks_the_only_varying_parameter_first() {
        let mc = McConfig {
            distributions: vec![
                ParameterDistribution::new("env.w_r", DistributionKind::Fixed { value: 0.15 }),
                ParameterDistribution::new("demand.scale", DistributionKind::Uniform { low: 0.5, high: 2.0 }),
            ],
            sensitivity_replicates: 12,
            ..small(1)
        };
        let report = sensitivity_report(&mc, &default_mc_scenario()).unwrap();
        assert_eq!(report[0].parameter, "demand.scale");
        assert!(report[0].spread > 0.0);
        assert_eq!(report[1].spread, 0.0);
        assert_eq!(report, sensitivity_report(&mc, &default_mc_scenario()).unwrap());
    }
}
