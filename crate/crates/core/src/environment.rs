//! Weather-driven deterioration modifier M_env.

use serde::{Deserialize, Serialize};

use crate::ingestion::{align_weather, IngestError, WeatherRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvModifierConfig {
    /// °C
    pub freeze_threshold: f64,
    /// Increment per complete freeze-thaw cycle in the lookback window.
    pub freeze_thaw_weight: f64,
    pub rain_weight: f64,
    /// mm/h at which the rain feature saturates
    pub rain_saturation: f64,
    pub wind_weight: f64,
    /// m/s at which the wind factor saturates
    pub wind_reference: f64,
    /// Freeze-thaw lookback, s
    pub window: f64,
}

impl Default for EnvModifierConfig {
    fn default() -> Self {
        Self {
            freeze_threshold: 0.0,
            freeze_thaw_weight: 0.10,
            rain_weight: 0.15,
            rain_saturation: 10.0,
            wind_weight: 0.10,
            wind_reference: 20.0,
            window: 86_400.0,
        }
    }
}

impl EnvModifierConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, w) in [
            ("freeze_thaw_weight", self.freeze_thaw_weight),
            ("rain_weight", self.rain_weight),
            ("wind_weight", self.wind_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(IngestError::Config(format!("environment.{name} must be >= 0")));
            }
        }
        for (name, v) in [
            ("rain_saturation", self.rain_saturation),
            ("wind_reference", self.wind_reference),
            ("window", self.window),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IngestError::Config(format!("environment.{name} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub timestamp: i64,
    /// Always >= 1.
    pub m_env: f64,
    pub freeze_thaw_cycles_in_window: u32,
    pub corrosion_potential: f64,
}

/// Complete freeze-then-thaw cycles. A temperature below `threshold` is
/// frozen; at or above it is thawed. A thaw only counts after a freeze seen
/// in the same sequence, and a trailing freeze is not a cycle.
pub fn count_freeze_thaw<'a, I>(temperatures: I, threshold: f64) -> u32
where
    I: IntoIterator<Item = &'a f64>,
{
    let mut cycles = 0;
    let mut prev_frozen: Option<bool> = None;
    let mut froze = false;
    for &t in temperatures {
        let frozen = t < threshold;
        if let Some(was) = prev_frozen {
            if !was && frozen {
                froze = true;
            } else if was && !frozen && froze {
                cycles += 1;
                froze = false;
            }
        }
        prev_frozen = Some(frozen);
    }
    cycles
}

pub fn count_freeze_thaw_records(records: &[WeatherRecord], threshold: f64) -> u32 {
    let temps: Vec<f64> = records.iter().map(|r| r.temperature).collect();
    count_freeze_thaw(&temps, threshold)
}

pub fn compute_modifier(record: &WeatherRecord, ft_cycles: u32, cfg: &EnvModifierConfig) -> EnvState {
    let rain = (record.precipitation / cfg.rain_saturation).min(1.0);
    let wind = (record.wind_speed / cfg.wind_reference).min(1.0);
    let corrosion_potential = rain * (0.5 + 0.5 * wind);
    let m_env = 1.0
        + cfg.freeze_thaw_weight * f64::from(ft_cycles)
        + cfg.rain_weight * rain
        + cfg.wind_weight * corrosion_potential;
    EnvState {
        timestamp: record.timestamp,
        m_env,
        freeze_thaw_cycles_in_window: ft_cycles,
        corrosion_potential,
    }
}

/// M_env at each query time: step-held weather plus the freeze-thaw count
/// over records in `(t - window, t]`.
pub fn modifier_series(
    weather: &[WeatherRecord],
    timestamps: &[i64],
    cfg: &EnvModifierConfig,
) -> Result<Vec<EnvState>, IngestError> {
    if weather.is_empty() {
        return Err(IngestError::EmptyWeather);
    }
    let window = cfg.window.ceil() as i64;
    timestamps
        .iter()
        .map(|&t| {
            let rec = align_weather(weather, t)?;
            let lo = weather.partition_point(|r| r.timestamp <= t - window);
            let hi = weather.partition_point(|r| r.timestamp <= t);
            let ft = count_freeze_thaw_records(&weather[lo..hi.max(lo)], cfg.freeze_threshold);
            let mut state = compute_modifier(&rec, ft, cfg);
            state.timestamp = t;
            Ok(state)
        })
        .collect()
}

/// Hourly winter-storm weather: a diurnal temperature swing around the
/// freezing point, an afternoon rain band and a windy evening.
pub fn synthetic_winter_storm(start: i64, hours: usize) -> Vec<WeatherRecord> {
    (0..hours)
        .map(|h| {
            let hour_of_day = (h % 24) as f64;
            let phase = (hour_of_day - 9.0) / 24.0 * std::f64::consts::TAU;
            let temperature = -1.0 + 4.0 * phase.sin();
            let precipitation = if (12.0..18.0).contains(&hour_of_day) {
                4.0 + hour_of_day - 12.0
            } else {
                0.0
            };
            let wind_speed = if (15.0..22.0).contains(&hour_of_day) { 18.0 } else { 6.0 };
            WeatherRecord {
                timestamp: start + 3600 * h as i64,
                temperature,
                precipitation,
                wind_speed,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(precip: f64, wind: f64) -> WeatherRecord {
        WeatherRecord {
            timestamp: 0,
            temperature: 15.0,
            precipitation: precip,
            wind_speed: wind,
        }
    }

    #[test]
    fn freeze_thaw_examples() {
        assert_eq!(count_freeze_thaw(&[5.0, 3.0, 1.0], 0.0), 0);
        assert_eq!(count_freeze_thaw(&[2.0, -1.0, 3.0], 0.0), 1);
        assert_eq!(count_freeze_thaw(&[2.0, -1.0, 1.0, -2.0, 3.0, -1.0], 0.0), 2);
        // starting frozen: the first thaw has no preceding freeze
        assert_eq!(count_freeze_thaw(&[-3.0, 2.0], 0.0), 0);
        assert_eq!(count_freeze_thaw(&[], 0.0), 0);
    }

    /// Oracle: list crossing directions, then pair each down-crossing with
    /// the next up-crossing.
    fn crossings_oracle(temps: &[f64], threshold: f64) -> u32 {
        let mut dirs = Vec::new();
        for w in temps.windows(2) {
            let (a, b) = (w[0] < threshold, w[1] < threshold);
            if !a && b {
                dirs.push('d');
            } else if a && !b {
                dirs.push('u');
            }
        }
        let mut n = 0;
        let mut open = false;
        for d in dirs {
            match d {
                'd' => open = true,
                _ if open => {
                    n += 1;
                    open = false
                }
                _ => {}
            }
        }
        n
    }

    #[test]
    fn modifier_examples() {
        let cfg = EnvModifierConfig::default();
        let s = compute_modifier(&rec(0.0, 0.0), 0, &cfg);
        assert_eq!(s.m_env, 1.0);
        assert_eq!(s.corrosion_potential, 0.0);

        let s = compute_modifier(&rec(10.0, 20.0), 2, &cfg);
        assert!((s.m_env - 1.45).abs() < 1e-12);
        assert_eq!(s.corrosion_potential, 1.0);

        let s = compute_modifier(&rec(10.0, 0.0), 0, &cfg);
        assert_eq!(s.corrosion_potential, 0.5);
    }

    #[test]
    fn series_examples() {
        let cfg = EnvModifierConfig::default();
        assert!(modifier_series(&[], &[0], &cfg).is_err());
        let benign = [rec(0.0, 0.0)];
        let s = modifier_series(&benign, &[-5, 0, 100, 10_000], &cfg).unwrap();
        assert!(s.iter().all(|e| e.m_env == 1.0 && e.freeze_thaw_cycles_in_window == 0));

        let storm = synthetic_winter_storm(0, 72);
        let ts: Vec<i64> = (0..72 * 6).map(|k| k * 600).collect();
        let series = modifier_series(&storm, &ts, &cfg).unwrap();
        for (t, st) in ts.iter().zip(&series) {
            let rec = align_weather(&storm, *t).unwrap();
            let window: Vec<WeatherRecord> = storm
                .iter()
                .filter(|r| r.timestamp > t - 86_400 && r.timestamp <= *t)
                .copied()
                .collect();
            let ft = count_freeze_thaw_records(&window, 0.0);
            let mut expected = compute_modifier(&rec, ft, &cfg);
            expected.timestamp = *t;
            assert_eq!(*st, expected);
        }
        assert!(series.iter().any(|s| s.freeze_thaw_cycles_in_window > 0));
        assert!(series.iter().any(|s| s.corrosion_potential > 0.5));
    }

    proptest! {
        #[test]
        fn freeze_thaw_matches_crossing_oracle(temps in proptest::collection::vec(-5.0f64..5.0, 0..40)) {
            prop_assert_eq!(count_freeze_thaw(&temps, 0.0), crossings_oracle(&temps, 0.0));
        }

        #[test]
        fn duplicates_do_not_change_count(temps in proptest::collection::vec(-5.0f64..5.0, 1..40), at in 0usize..40) {
            let mut dup = temps.clone();
            let i = at % temps.len();
            dup.insert(i, temps[i]);
            prop_assert_eq!(count_freeze_thaw(&temps, 0.0), count_freeze_thaw(&dup, 0.0));
        }

        #[test]
        fn modifier_bounds_and_monotone(
            p in 0.0f64..30.0, dp in 0.0f64..5.0,
            w in 0.0f64..40.0, dw in 0.0f64..5.0,
            c in 0u32..5,
        ) {
            let cfg = EnvModifierConfig::default();
            let base = compute_modifier(&rec(p, w), c, &cfg);
            prop_assert!(base.m_env >= 1.0);
            prop_assert!((0.0..=1.0).contains(&base.corrosion_potential));
            prop_assert!(compute_modifier(&rec(p + dp, w), c, &cfg).m_env >= base.m_env);
            prop_assert!(compute_modifier(&rec(p, w + dw), c, &cfg).m_env >= base.m_env);
            prop_assert!(compute_modifier(&rec(p, w), c + 1, &cfg).m_env >= base.m_env);
            let dry = compute_modifier(&rec(0.0, w), 0, &cfg);
            prop_assert_eq!(dry.corrosion_potential, 0.0);
            prop_assert_eq!(dry.m_env, 1.0);
        }
    }
}
