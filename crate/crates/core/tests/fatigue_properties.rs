use bridge_twin::fatigue::{
    extract_turning_points, miner_damage, rainflow, series_damage, DamageModifier, RainflowCycle, SNCurve, StressSample,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four-point rainflow: an inner range no larger than both neighbours is
/// a full cycle; whatever remains is counted as half cycles.
fn four_point(points: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut stack: Vec<f64> = Vec::new();
    for &p in points {
        stack.push(p);
        while stack.len() >= 4 {
            let n = stack.len();
            let (a, b, c, d) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            let inner = (c - b).abs();
            if inner <= (b - a).abs() && inner <= (d - c).abs() {
                out.push((inner, 1.0));
                stack.drain(n - 3..n - 1);
            } else {
                break;
            }
        }
    }
    for w in stack.windows(2) {
        out.push(((w[1] - w[0]).abs(), 0.5));
    }
    out
}

fn sorted(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v
}

fn same_multiset(a: &[RainflowCycle], b: &[(f64, f64)]) -> bool {
    let a = sorted(a.iter().map(|c| (c.range, c.count)).collect());
    let b = sorted(b.to_vec());
    a.len() == b.len()
        && a.iter()
            .zip(&b)
            .all(|(x, y)| (x.0 - y.0).abs() <= 1e-12 * x.0.max(1.0) && x.1 == y.1)
}

fn samples(stress: &[f64]) -> Vec<StressSample> {
    stress
        .iter()
        .enumerate()
        .map(|(i, &s)| StressSample {
            timestamp: i as i64,
            load_intensity: 0.0,
            density_norm: 0.0,
            speed_penalty: 0.0,
            stress: s,
            m_env: 1.0,
        })
        .collect()
}

#[test]
fn thousand_random_series_match_four_point_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..1000 {
        let series: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
        let tps = extract_turning_points(&series);
        let got = rainflow(&tps).unwrap();
        let oracle = four_point(&tps);
        assert!(same_multiset(&got, &oracle), "trial {trial}: {got:?} vs {oracle:?}");

        let sn = SNCurve::default();
        let d_oracle: f64 = oracle.iter().map(|(r, n)| n * r.powi(3) / 2e6).sum();
        let d = miner_damage(&got, &sn, DamageModifier::Scalar(1.0)).unwrap();
        assert!((d - d_oracle).abs() <= 1e-12 * d_oracle.max(1e-300));
    }
}

#[test]
fn counted_ranges_cover_every_turning_point_pair() {
    // every turning point belongs to exactly two cycle ends, so the total
    // count equals half the number of ranges between turning points
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let series: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let tps = extract_turning_points(&series);
        let cycles = rainflow(&tps).unwrap();
        let total: f64 = cycles.iter().map(|c| 2.0 * c.count).sum();
        assert_eq!(total, (tps.len() - 1) as f64);
    }
}

proptest! {
    #[test]
    fn damage_scales_with_amplitude_power(
        series in proptest::collection::vec(-5.0f64..5.0, 3..80),
        lambda in 0.1f64..10.0,
        exponent in 2.0f64..6.0,
    ) {
        let sn = SNCurve { reference_cycles: 2e6, exponent };
        let base = series_damage(&samples(&series), &sn).total;
        let scaled_series: Vec<f64> = series.iter().map(|s| lambda * s).collect();
        let scaled = series_damage(&samples(&scaled_series), &sn).total;
        let expected = lambda.powf(exponent) * base;
        prop_assert!((scaled - expected).abs() <= 1e-9 * expected.max(1e-300), "{scaled} vs {expected}");
    }

    #[test]
    fn damage_is_shift_invariant(series in proptest::collection::vec(-5.0f64..5.0, 3..60), shift in -100.0f64..100.0) {
        let sn = SNCurve::default();
        let base = series_damage(&samples(&series), &sn).total;
        let shifted: Vec<f64> = series.iter().map(|s| s + shift).collect();
        let moved = series_damage(&samples(&shifted), &sn).total;
        prop_assert!((moved - base).abs() <= 1e-6 * base.max(1e-12));
    }
}
