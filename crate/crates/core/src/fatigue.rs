//! Normalized stress proxy, rainflow cycle extraction and Palmgren-Miner
//! damage accumulation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::{ClassCounts, VehicleClass};
use crate::traffic::FundamentalDiagram;

/// Weights of the load, density and speed terms of the stress proxy.
pub const STRESS_WEIGHTS: [f64; 3] = [0.45, 0.45, 0.10];

pub const SAFE_BELOW: f64 = 50.0;
pub const CRITICAL_ABOVE: f64 = 70.0;

#[derive(Debug, Error, PartialEq)]
pub enum FatigueError {
    #[error("turning points are not alternating at index {index}")]
    NotAlternating { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("per-cycle modifier count {got} does not match {expected} cycles")]
    ModifierLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassWeights {
    /// tonnes
    pub car: f64,
    pub truck: f64,
    pub bus: f64,
    /// normalization ceiling, tonnes
    pub cap: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            car: 2.0,
            truck: 15.0,
            bus: 12.0,
            cap: 15.0,
        }
    }
}

impl ClassWeights {
    pub fn weight(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Car => self.car,
            VehicleClass::Truck => self.truck,
            VehicleClass::Bus => self.bus,
        }
    }

    pub fn validate(&self) -> Result<(), FatigueError> {
        if [self.car, self.truck, self.bus, self.cap].iter().any(|w| !(*w > 0.0)) {
            return Err(FatigueError::Config("class weights must be > 0".into()));
        }
        if self.cap < self.car.max(self.truck).max(self.bus) {
            return Err(FatigueError::Config(
                "class weight cap must be >= every class weight".into(),
            ));
        }
        Ok(())
    }
}

/// Basquin-type S-N curve N(S) = A·S^(−m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SNCurve {
    pub reference_cycles: f64,
    pub exponent: f64,
}

impl Default for SNCurve {
    fn default() -> Self {
        Self {
            reference_cycles: 2e6,
            exponent: 3.0,
        }
    }
}

impl SNCurve {
    pub fn validate(&self) -> Result<(), FatigueError> {
        if !(self.reference_cycles > 0.0 && self.exponent > 0.0) {
            return Err(FatigueError::Config(
                "S-N reference_cycles and exponent must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn cycles_to_failure(&self, range: f64) -> f64 {
        self.reference_cycles * range.powf(-self.exponent)
    }

    /// 1 / N(S), zero for a zero range.
    fn damage_per_cycle(&self, range: f64) -> f64 {
        if range <= 0.0 {
            0.0
        } else {
            range.powf(self.exponent) / self.reference_cycles
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressSample {
    pub timestamp: i64,
    pub load_intensity: f64,
    pub density_norm: f64,
    pub speed_penalty: f64,
    pub stress: f64,
    pub m_env: f64,
}

/// Traffic observables feeding one stress sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadObservation {
    pub timestamp: i64,
    /// veh/m
    pub density: f64,
    pub class_counts: ClassCounts,
    /// m/s
    pub mean_speed: f64,
}

/// Builds the stress proxy from class-weighted load, density and speed.
///
/// Load intensity is the mean-weight fraction of the vehicles present
/// times their occupancy of the segment, where a full segment holds
/// `ρ_jam · L_eff` vehicles. The returned sample carries `m_env = 1`.
pub fn stress_proxy(
    obs: &LoadObservation,
    fd: &FundamentalDiagram,
    weights: &ClassWeights,
    effective_length: f64,
) -> StressSample {
    let counts = &obs.class_counts;
    let n = f64::from(counts.total());
    let total_weight: f64 = VehicleClass::ALL
        .iter()
        .map(|&c| f64::from(counts.get(c)) * weights.weight(c))
        .sum();
    let weight_fraction = (total_weight / (weights.cap * n.max(1.0))).min(1.0);
    let n_ref = fd.jam_density * effective_length;
    let occupancy = (n / n_ref).min(1.0);
    let load_intensity = weight_fraction * occupancy;
    let density_norm = (obs.density / fd.jam_density).clamp(0.0, 1.0);
    let speed_penalty = (1.0 - obs.mean_speed / fd.free_flow_speed).clamp(0.0, 1.0);
    StressSample {
        timestamp: obs.timestamp,
        load_intensity,
        density_norm,
        speed_penalty,
        stress: combine_stress(load_intensity, density_norm, speed_penalty),
        m_env: 1.0,
    }
}

pub fn combine_stress(load_intensity: f64, density_norm: f64, speed_penalty: f64) -> f64 {
    STRESS_WEIGHTS[0] * load_intensity + STRESS_WEIGHTS[1] * density_norm + STRESS_WEIGHTS[2] * speed_penalty
}

/// Turning points with their positions in the original series.
pub fn turning_points_indexed(series: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, &v) in series.iter().enumerate() {
        match out.len() {
            0 => out.push((i, v)),
            1 => {
                if v != out[0].1 {
                    out.push((i, v));
                }
            }
            len => {
                let (a, b) = (out[len - 2].1, out[len - 1].1);
                if v == b {
                    continue;
                }
                if (b - a) * (v - b) > 0.0 {
                    // same direction: extend the monotone run
                    out[len - 1] = (i, v);
                } else {
                    out.push((i, v));
                }
            }
        }
    }
    out
}

/// Alternating peaks and valleys, endpoints kept, plateaus collapsed.
pub fn extract_turning_points(series: &[f64]) -> Vec<f64> {
    turning_points_indexed(series).into_iter().map(|(_, v)| v).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RainflowCycle {
    pub range: f64,
    pub mean: f64,
    /// 0.5 or 1.0
    pub count: f64,
}

/// A counted cycle with the turning-point indices of its two extremes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedCycle {
    pub cycle: RainflowCycle,
    pub first: usize,
    pub second: usize,
}

fn check_alternating(points: &[f64]) -> Result<(), FatigueError> {
    for (i, w) in points.windows(2).enumerate() {
        if w[0] == w[1] || !w[0].is_finite() || !w[1].is_finite() {
            return Err(FatigueError::NotAlternating { index: i + 1 });
        }
    }
    for (i, w) in points.windows(3).enumerate() {
        if (w[1] - w[0]) * (w[2] - w[1]) >= 0.0 {
            return Err(FatigueError::NotAlternating { index: i + 1 });
        }
    }
    Ok(())
}

/// Three-point rainflow counting with residue half cycles (ASTM E1049).
pub fn rainflow_indexed(points: &[f64]) -> Result<Vec<IndexedCycle>, FatigueError> {
    check_alternating(points)?;
    let cycle = |a: usize, b: usize, count: f64| IndexedCycle {
        cycle: RainflowCycle {
            range: (points[b] - points[a]).abs(),
            mean: 0.5 * (points[a] + points[b]),
            count,
        },
        first: a.min(b),
        second: a.max(b),
    };
    let mut out = Vec::new();
    // stack of turning-point indices; stack[0] is the current start point
    let mut stack: Vec<usize> = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        stack.push(i);
        while stack.len() >= 3 {
            let n = stack.len();
            let x = (points[stack[n - 1]] - points[stack[n - 2]]).abs();
            let y = (points[stack[n - 2]] - points[stack[n - 3]]).abs();
            if x < y {
                break;
            }
            if n == 3 {
                out.push(cycle(stack[0], stack[1], 0.5));
                stack.remove(0);
            } else {
                out.push(cycle(stack[n - 3], stack[n - 2], 1.0));
                stack.drain(n - 3..n - 1);
            }
        }
    }
    for w in stack.windows(2) {
        out.push(cycle(w[0], w[1], 0.5));
    }
    Ok(out)
}

pub fn rainflow(points: &[f64]) -> Result<Vec<RainflowCycle>, FatigueError> {
    Ok(rainflow_indexed(points)?.into_iter().map(|c| c.cycle).collect())
}

/// Environmental modifier applied to damage increments.
#[derive(Debug, Clone, Copy)]
pub enum DamageModifier<'a> {
    Scalar(f64),
    PerCycle(&'a [f64]),
}

/// Palmgren-Miner sum D = Σ m_env,i · n_i / N(S_i).
pub fn miner_damage(cycles: &[RainflowCycle], sn: &SNCurve, modifier: DamageModifier<'_>) -> Result<f64, FatigueError> {
    if let DamageModifier::PerCycle(m) = modifier {
        if m.len() != cycles.len() {
            return Err(FatigueError::ModifierLength {
                expected: cycles.len(),
                got: m.len(),
            });
        }
    }
    Ok(cycles
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let m = match modifier {
                DamageModifier::Scalar(m) => m,
                DamageModifier::PerCycle(ms) => ms[i],
            };
            m * c.count * sn.damage_per_cycle(c.range)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alert {
    Safe,
    Monitor,
    Critical,
}

impl Alert {
    pub fn from_score(score: f64) -> Self {
        if score < SAFE_BELOW {
            Alert::Safe
        } else if score <= CRITICAL_ABOVE {
            Alert::Monitor
        } else {
            Alert::Critical
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Alert::Safe => "Safe",
            Alert::Monitor => "Monitor",
            Alert::Critical => "Critical",
        }
    }
}

impl fmt::Display for Alert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Alert {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Safe" => Ok(Alert::Safe),
            "Monitor" => Ok(Alert::Monitor),
            "Critical" => Ok(Alert::Critical),
            other => Err(format!("unknown alert `{other}`")),
        }
    }
}

pub fn fatigue_score(damage: f64, d_ref: f64) -> (f64, Alert) {
    let score = 100.0 * (damage / d_ref).min(1.0);
    (score, Alert::from_score(score))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FatigueReport {
    pub total_damage: f64,
    pub fatigue_score: f64,
    pub alert: Alert,
    pub cycles: Vec<RainflowCycle>,
}

/// Rainflow damage of a stress series with per-cycle environmental
/// modifiers, plus the cumulative damage history at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDamage {
    pub cycles: Vec<RainflowCycle>,
    /// Mean M_env over the samples spanning each cycle.
    pub cycle_m_env: Vec<f64>,
    /// Cumulative damage at each sample, with each cycle booked at its
    /// later extreme.
    pub cumulative: Vec<f64>,
    pub total: f64,
}

pub fn series_damage(samples: &[StressSample], sn: &SNCurve) -> SeriesDamage {
    let stress: Vec<f64> = samples.iter().map(|s| s.stress).collect();
    let tps = turning_points_indexed(&stress);
    let values: Vec<f64> = tps.iter().map(|(_, v)| *v).collect();
    let indexed = rainflow_indexed(&values).expect("turning points alternate by construction");

    let mut prefix = Vec::with_capacity(samples.len() + 1);
    prefix.push(0.0);
    for s in samples {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + s.m_env);
    }
    let mut increments = vec![0.0; samples.len()];
    let mut cycles = Vec::with_capacity(indexed.len());
    let mut cycle_m_env = Vec::with_capacity(indexed.len());
    for c in &indexed {
        let (a, b) = (tps[c.first].0, tps[c.second].0);
        let m = (prefix[b + 1] - prefix[a]) / (b + 1 - a) as f64;
        increments[b] += m * c.cycle.count * sn.damage_per_cycle(c.cycle.range);
        cycles.push(c.cycle);
        cycle_m_env.push(m);
    }
    let mut acc = 0.0;
    let cumulative: Vec<f64> = increments
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    SeriesDamage {
        cycles,
        cycle_m_env,
        cumulative,
        total: acc,
    }
}
