//! End-to-end run: detections and weather in, fatigue and reliability out.
//!
//! The observed density series fixes the timeline. Between consecutive
//! observations the LWR solver advances the span with the earlier
//! stabilised density as upstream inflow; each resulting state feeds the
//! simulated stress proxy, while the raw observation feeds the observed
//! stress used for the observed reliability index.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{modifier_series, synthetic_winter_storm, EnvModifierConfig, EnvState};
use crate::fatigue::{
    fatigue_score, series_damage, stress_proxy, Alert, ClassWeights, FatigueError, LoadObservation, SNCurve,
    SeriesDamage, StressSample,
};
use crate::ingestion::{
    generate_synthetic_traffic, observe_series, ClassCounts, DemandProfile, DetectionFrame, IngestError,
    ObservedDensity, SegmentConfig, WeatherRecord,
};
use crate::ml::{assemble_features, AssembledFeatures, FeatureSource, MlError};
use crate::reliability::{beta_series, BetaSample, ObservedStress, ReliabilityConfig, ReliabilityError};
use crate::traffic::{
    advance, detect_shocks, mean_speed, observed_shock_proxy, FundamentalDiagram, ShockEvent, SolverConfig,
    TrafficError, TrafficState,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Fatigue(#[from] FatigueError),
    #[error(transparent)]
    Reliability(#[from] ReliabilityError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error("invalid scenario: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FatigueConfig {
    /// Damage mapped to a score of 100.
    pub d_ref: f64,
}

impl Default for FatigueConfig {
    fn default() -> Self {
        Self { d_ref: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Aggregation window for forest features, s.
    pub window: i64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { window: 300 }
    }
}

/// Hours of storm weather preceding the run start.
pub const STORM_LEAD_HOURS: i64 = 36;

/// Weather used when no weather file is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticWeather {
    /// One mild, dry, calm record: M_env = 1 throughout.
    #[default]
    Benign,
    /// Hourly freeze-thaw, rain and wind pattern that began before the run.
    WinterStorm,
}

/// Every model parameter of one pipeline run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub segment: SegmentConfig,
    pub fundamental_diagram: FundamentalDiagram,
    pub solver: SolverConfig,
    pub environment: EnvModifierConfig,
    pub class_weights: ClassWeights,
    pub sn_curve: SNCurve,
    pub fatigue: FatigueConfig,
    pub reliability: ReliabilityConfig,
    pub demand: DemandProfile,
    pub features: FeatureConfig,
    pub weather: SyntheticWeather,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.segment.validate()?;
        self.fundamental_diagram.validate()?;
        self.solver.validate()?;
        self.environment.validate()?;
        self.class_weights.validate()?;
        self.sn_curve.validate()?;
        self.reliability.validate()?;
        self.demand.validate()?;
        if !(self.fatigue.d_ref > 0.0 && self.fatigue.d_ref.is_finite()) {
            return Err(PipelineError::Config("fatigue.d_ref must be > 0".into()));
        }
        if self.features.window < 1 {
            return Err(PipelineError::Config("features.window must be >= 1".into()));
        }
        if self.demand.frame_interval != self.segment.frame_interval {
            return Err(PipelineError::Config(format!(
                "demand.frame_interval ({}) must equal segment.frame_interval ({})",
                self.demand.frame_interval, self.segment.frame_interval
            )));
        }
        Ok(())
    }

    /// Weather for a run starting at `start` and lasting `duration` seconds.
    pub fn synthetic_weather(&self, start: i64, duration: f64) -> Vec<WeatherRecord> {
        match self.weather {
            SyntheticWeather::Benign => vec![benign_weather(start)],
            SyntheticWeather::WinterStorm => {
                // Open on the rainy, windy second afternoon, with one
                // freeze-thaw cycle already inside the lookback window.
                let lead = STORM_LEAD_HOURS * 3600;
                let hours = STORM_LEAD_HOURS as usize + (duration / 3600.0).ceil().max(1.0) as usize + 1;
                synthetic_winter_storm(start - lead, hours)
            }
        }
    }
}

pub fn benign_weather(timestamp: i64) -> WeatherRecord {
    WeatherRecord {
        timestamp,
        temperature: 15.0,
        precipitation: 0.0,
        wind_speed: 0.0,
    }
}

/// Per-timestep summary of the simulated span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanSummary {
    pub timestamp: i64,
    pub mean_density: f64,
    pub peak_density: f64,
    pub mean_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalReport {
    pub total_damage: f64,
    pub score: f64,
    pub alert: Alert,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub observed: Vec<ObservedDensity>,
    /// Full density fields, kept only when requested.
    pub states: Vec<TrafficState>,
    pub span: Vec<SpanSummary>,
    pub shocks: Vec<ShockEvent>,
    pub observed_shocks: Vec<ShockEvent>,
    pub env: Vec<EnvState>,
    pub stress: Vec<StressSample>,
    pub observed_stress: Vec<ObservedStress>,
    /// Class counts behind the simulated stress (last valid frame held).
    pub sim_counts: Vec<ClassCounts>,
    pub damage: SeriesDamage,
    pub beta: Vec<BetaSample>,
    pub report: FinalReport,
}

impl PipelineRun {
    pub fn final_beta(&self) -> Option<f64> {
        self.beta.last().map(|b| b.beta_primary)
    }
}

/// Runs the full chain on a detection log. An empty log yields empty
/// series and zero damage.
pub fn run_pipeline(
    cfg: &ScenarioConfig,
    frames: &[DetectionFrame],
    weather: &[WeatherRecord],
    keep_states: bool,
) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let fd = &cfg.fundamental_diagram;
    let observed = observe_series(frames, &cfg.segment);
    let timestamps: Vec<i64> = observed.iter().map(|o| o.timestamp).collect();
    let env = if timestamps.is_empty() {
        Vec::new()
    } else if weather.is_empty() {
        modifier_series(&[benign_weather(timestamps[0])], &timestamps, &cfg.environment)?
    } else {
        modifier_series(weather, &timestamps, &cfg.environment)?
    };

    let n = observed.len();
    let inflow = |o: &ObservedDensity| o.rho_stable.clamp(0.0, fd.jam_density);
    let mut states = Vec::with_capacity(if keep_states { n } else { 0 });
    let mut span = Vec::with_capacity(n);
    let mut shocks = Vec::new();
    let mut observed_shocks = Vec::new();
    let mut stress = Vec::with_capacity(n);
    let mut observed_stress = Vec::with_capacity(n);
    let mut sim_counts = Vec::with_capacity(n);
    let mut held_counts = ClassCounts::default();
    let mut state: Option<TrafficState> = None;

    for (k, od) in observed.iter().enumerate() {
        let t = od.timestamp;
        let next = match &state {
            None => TrafficState::uniform(&cfg.solver, inflow(od), t as f64),
            Some(prev) => {
                let dt = (t - observed[k - 1].timestamp) as f64;
                let s = advance(prev, fd, &cfg.solver, inflow(&observed[k - 1]), dt)?;
                shocks.extend(detect_shocks(prev, &s, fd, &cfg.solver));
                if od.valid && observed[k - 1].valid {
                    observed_shocks.extend(observed_shock_proxy(
                        observed[k - 1].rho_stable,
                        od.rho_stable,
                        t as f64,
                        fd,
                        &cfg.solver,
                    ));
                }
                s
            }
        };
        if od.valid {
            held_counts = od.class_counts;
        }
        let summary = SpanSummary {
            timestamp: t,
            mean_density: next.mean_density(),
            peak_density: next.peak_density(),
            mean_speed: mean_speed(&next, fd),
        };
        let m_env = env[k].m_env;
        let mut sim = stress_proxy(
            &LoadObservation {
                timestamp: t,
                density: summary.mean_density,
                class_counts: held_counts,
                mean_speed: summary.mean_speed,
            },
            fd,
            &cfg.class_weights,
            cfg.segment.effective_length,
        );
        sim.m_env = m_env;
        let rho_obs = od.rho_stable.clamp(0.0, fd.jam_density);
        let mut obs = stress_proxy(
            &LoadObservation {
                timestamp: t,
                density: rho_obs,
                class_counts: od.class_counts,
                mean_speed: fd.speed(rho_obs),
            },
            fd,
            &cfg.class_weights,
            cfg.segment.effective_length,
        );
        obs.m_env = m_env;
        stress.push(sim);
        observed_stress.push(ObservedStress {
            sample: obs,
            valid: od.valid,
        });
        sim_counts.push(held_counts);
        span.push(summary);
        if keep_states {
            states.push(next.clone());
        }
        state = Some(next);
    }

    let damage = series_damage(&stress, &cfg.sn_curve);
    let beta = if n == 0 {
        Vec::new()
    } else {
        beta_series(
            &stress,
            &observed_stress,
            &cfg.reliability.resistance(),
            &damage.cumulative,
            cfg.reliability.window,
            cfg.reliability.target_beta,
        )?
    };
    let (score, alert) = fatigue_score(damage.total, cfg.fatigue.d_ref);
    let report = FinalReport {
        total_damage: damage.total,
        score,
        alert,
    };
    Ok(PipelineRun {
        observed,
        states,
        span,
        shocks,
        observed_shocks,
        env,
        stress,
        observed_stress,
        sim_counts,
        damage,
        beta,
        report,
    })
}

/// Synthetic traffic for `duration` seconds, then the full chain.
pub fn run_simulation(
    cfg: &ScenarioConfig,
    duration: f64,
    seed: u64,
    weather: Option<&[WeatherRecord]>,
    keep_states: bool,
) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let frames = generate_synthetic_traffic(&cfg.demand, duration, seed)?;
    let synthetic;
    let weather = match weather {
        Some(w) => w,
        None => {
            synthetic = cfg.synthetic_weather(cfg.demand.start_timestamp, duration);
            &synthetic
        }
    };
    run_pipeline(cfg, &frames, weather, keep_states)
}

/// Forest feature rows for a finished run.
pub fn run_features(cfg: &ScenarioConfig, run: &PipelineRun) -> Result<AssembledFeatures, PipelineError> {
    let timestamps: Vec<i64> = run.span.iter().map(|s| s.timestamp).collect();
    let mean_density: Vec<f64> = run.span.iter().map(|s| s.mean_density).collect();
    let peak_density: Vec<f64> = run.span.iter().map(|s| s.peak_density).collect();
    let speed: Vec<f64> = run.span.iter().map(|s| s.mean_speed).collect();
    let valid: Vec<bool> = run.observed.iter().map(|o| o.valid).collect();
    let shock_times: Vec<f64> = run.shocks.iter().map(|s| s.time).collect();
    let src = FeatureSource {
        timestamps: &timestamps,
        mean_density: &mean_density,
        peak_density: &peak_density,
        mean_speed: &speed,
        class_counts: &run.sim_counts,
        valid: &valid,
        env: &run.env,
        stress: &run.stress,
        shock_times: &shock_times,
    };
    Ok(assemble_features(
        &src,
        cfg.features.window,
        cfg.fundamental_diagram.free_flow_speed,
        &cfg.sn_curve,
        cfg.fatigue.d_ref,
    )?)
}
