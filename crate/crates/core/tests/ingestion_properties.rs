use bridge_twin::ingestion::{
    align_weather, generate_synthetic_traffic, map_to_density, parse_detection_log, parse_weather_log,
    write_detection_log, write_weather_log, BoundingBox, DemandProfile, Detection, DetectionFrame, LogFormat,
    ObservedDensity, SegmentConfig, VehicleClass, WeatherRecord,
};
use proptest::prelude::*;

fn round_trip(frames: &[DetectionFrame], format: LogFormat) -> Vec<DetectionFrame> {
    let mut buf = Vec::new();
    write_detection_log(&mut buf, frames, format).unwrap();
    parse_detection_log(buf.as_slice(), format).unwrap()
}

#[test]
fn hundred_frame_log_round_trips() {
    let profile = DemandProfile {
        base_rate: 1.5,
        ..Default::default()
    };
    let frames = generate_synthetic_traffic(&profile, 100.0, 17).unwrap();
    assert_eq!(frames.len(), 100);
    // several detections share each timestamp, so shared-timestamp rows
    // must regroup into one frame
    assert!(frames.iter().any(|f| f.detections.len() >= 2));
    assert!(frames.iter().any(|f| f.detections.is_empty()));
    assert_eq!(round_trip(&frames, LogFormat::Csv), frames);
    assert_eq!(round_trip(&frames, LogFormat::Jsonl), frames);
}

#[test]
fn poisson_totals_within_three_sigma() {
    let profile = DemandProfile {
        base_rate: 0.5,
        peak_rate: 0.5,
        ..Default::default()
    };
    let sigma = 5000f64.sqrt();
    let mut totals = Vec::new();
    for seed in 0..20 {
        let frames = generate_synthetic_traffic(&profile, 10_000.0, seed).unwrap();
        let total: usize = frames.iter().map(|f| f.detections.len()).sum();
        assert!((total as f64 - 5000.0).abs() <= 3.0 * sigma, "seed {seed}: {total}");
        totals.push(total as f64);
    }
    // the 20 totals together: mean within 3σ/√20, variance of plausible size
    let n = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / n;
    assert!((mean - 5000.0).abs() <= 3.0 * sigma / n.sqrt(), "mean {mean}");
    let var = totals.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(var > 5000.0 * 0.25 && var < 5000.0 * 2.5, "variance {var}");
}

#[test]
fn weather_round_trip() {
    let records: Vec<WeatherRecord> = (0..24)
        .map(|h| WeatherRecord {
            timestamp: 1_700_000_000 + 3600 * h,
            temperature: -3.0 + 0.37 * h as f64,
            precipitation: (h % 5) as f64 * 0.7,
            wind_speed: 3.3 + h as f64,
        })
        .collect();
    let mut buf = Vec::new();
    write_weather_log(&mut buf, &records).unwrap();
    assert_eq!(parse_weather_log(buf.as_slice()).unwrap(), records);
}

fn detection_strategy() -> impl Strategy<Value = Detection> {
    (0usize..3, 0.0f64..1.0, 0.0f64..1000.0, 1.0f64..200.0).prop_map(|(c, p, x, w)| Detection {
        class: VehicleClass::ALL[c],
        bbox: BoundingBox {
            x,
            y: x / 2.0,
            width: w,
            height: w / 2.0,
        },
        confidence: p,
    })
}

fn frame_strategy() -> impl Strategy<Value = DetectionFrame> {
    (0i64..1_000_000, proptest::collection::vec(detection_strategy(), 0..12))
        .prop_map(|(timestamp, detections)| DetectionFrame { timestamp, detections })
}

proptest! {
    #[test]
    fn generated_logs_round_trip(seed in any::<u64>(), rate in 0.0f64..3.0, duration in 1.0f64..60.0) {
        let profile = DemandProfile { base_rate: rate, peak_rate: rate, ..Default::default() };
        let frames = generate_synthetic_traffic(&profile, duration, seed).unwrap();
        prop_assert_eq!(&round_trip(&frames, LogFormat::Csv), &frames);
        prop_assert_eq!(&round_trip(&frames, LogFormat::Jsonl), &frames);
        prop_assert_eq!(&generate_synthetic_traffic(&profile, duration, seed).unwrap(), &frames);
    }

    #[test]
    fn raw_density_counts_filtered_detections(frame in frame_strategy(), l_eff in 10.0f64..500.0, min_conf in 0.0f64..1.0) {
        let cfg = SegmentConfig { effective_length: l_eff, min_confidence: min_conf, ..Default::default() };
        let o = map_to_density(&frame, None, &cfg);
        let kept = frame.detections.iter().filter(|d| d.confidence >= min_conf).count();
        prop_assert_eq!(o.vehicle_count as usize, kept);
        prop_assert_eq!(o.rho_raw, kept as f64 / l_eff);
        prop_assert!(((o.rho_raw * l_eff) - kept as f64).abs() < 1e-9);
    }

    #[test]
    fn ema_is_a_convex_combination(frame in frame_strategy(), prev_rho in 0.0f64..0.2, alpha in 0.01f64..=1.0) {
        let cfg = SegmentConfig { ema_alpha: alpha, ..Default::default() };
        let prev = ObservedDensity {
            timestamp: 0,
            rho_raw: prev_rho,
            rho_stable: prev_rho,
            vehicle_count: 0,
            class_counts: Default::default(),
            valid: true,
        };
        let o = map_to_density(&frame, Some(&prev), &cfg);
        let (lo, hi) = (prev_rho.min(o.rho_raw), prev_rho.max(o.rho_raw));
        prop_assert!(o.rho_stable >= lo - 1e-15 && o.rho_stable <= hi + 1e-15);
    }

    #[test]
    fn align_weather_is_right_continuous_step(gaps in proptest::collection::vec(1i64..5000, 1..20), q in -10_000i64..100_000) {
        let mut t = 0;
        let records: Vec<WeatherRecord> = gaps.iter().enumerate().map(|(i, g)| {
            t += g;
            WeatherRecord { timestamp: t, temperature: i as f64, precipitation: 0.0, wind_speed: 0.0 }
        }).collect();
        let got = align_weather(&records, q).unwrap();
        let expected = records.iter().rev().find(|r| r.timestamp <= q).copied().unwrap_or(records[0]);
        prop_assert_eq!(got, expected);
        // right-continuity: querying exactly at a record time returns that record
        let at = records[records.len() / 2];
        prop_assert_eq!(align_weather(&records, at.timestamp).unwrap(), at);
    }
}
