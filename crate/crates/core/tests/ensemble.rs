use bridge_twin::montecarlo::{
    default_mc_scenario, run_ensemble, run_replicate, sample_parameters, DistributionKind, McConfig,
    ParameterDistribution,
};
use bridge_twin::pipeline::ScenarioConfig;

fn fixed(name: &str, value: f64) -> ParameterDistribution {
    ParameterDistribution::new(name, DistributionKind::Fixed { value })
}

fn scale_only(kind: DistributionKind, n: usize) -> McConfig {
    McConfig {
        n_replicates: n,
        traffic_seed: Some(99),
        distributions: vec![ParameterDistribution::new("demand.scale", kind)],
        ..Default::default()
    }
}

#[test]
fn uniform_jam_density_has_expected_mean() {
    let mc = McConfig {
        distributions: vec![ParameterDistribution::new(
            "traffic.rho_jam",
            DistributionKind::Uniform { low: 0.1, high: 0.2 },
        )],
        ..Default::default()
    };
    let scenario = ScenarioConfig::default();
    let n = 10_000;
    let draws: Vec<f64> = (0..n)
        .map(|i| {
            sample_parameters(&mc, &scenario, i)
                .unwrap()
                .fundamental_diagram
                .jam_density
        })
        .collect();
    assert!(draws.iter().all(|&r| (0.1..0.2).contains(&r)));
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sigma = 0.1 / 12f64.sqrt();
    assert!((mean - 0.15).abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
}

/// Score of one replicate at a fixed demand scale and traffic seed.
fn score_at(scale: f64) -> f64 {
    let mc = McConfig {
        n_replicates: 1,
        traffic_seed: Some(99),
        distributions: vec![fixed("demand.scale", scale)],
        ..Default::default()
    };
    run_replicate(&mc, &default_mc_scenario(), 0).unwrap().fatigue_score
}

/// Smallest scale (to bisection precision) whose score reaches `target`.
fn bisect_scale(target: f64) -> f64 {
    let (mut lo, mut hi) = (0.01, 16.0);
    assert!(score_at(lo) < target && score_at(hi) >= target);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if score_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn demand_range_spanning_the_monitor_band_lands_partly_inside_it() {
    let s50 = bisect_scale(50.0);
    let s70 = bisect_scale(70.0);
    assert!(s50 < s70, "{s50} {s70}");
    let width = s70 - s50;
    let mc = scale_only(
        DistributionKind::Uniform {
            low: s50 - width,
            high: s70 + width,
        },
        120,
    );
    let summary = run_ensemble(&mc, &default_mc_scenario()).unwrap();
    assert!(summary.frac_monitor > 0.0 && summary.frac_monitor < 1.0, "{summary:?}");
    assert!(summary.frac_safe > 0.0 && summary.frac_critical > 0.0);
    let total = summary.frac_safe + summary.frac_monitor + summary.frac_critical;
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn median_score_grows_with_demand() {
    let scenario = default_mc_scenario();
    let mut prev = f64::NEG_INFINITY;
    for scale in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let mut mc = McConfig {
            n_replicates: 60,
            ..Default::default()
        };
        mc.distributions.retain(|d| d.name != "demand.scale");
        mc.distributions.push(fixed("demand.scale", scale));
        let p50 = run_ensemble(&mc, &scenario).unwrap().p50;
        assert!(p50 >= prev, "scale {scale}: {p50} < {prev}");
        prev = p50;
    }
}

#[test]
fn fixed_parameters_collapse_the_distribution() {
    let mc = McConfig {
        n_replicates: 50,
        traffic_seed: Some(5),
        distributions: vec![fixed("demand.scale", 1.3), fixed("traffic.rho_jam", 0.13)],
        ..Default::default()
    };
    let summary = run_ensemble(&mc, &default_mc_scenario()).unwrap();
    assert_eq!(summary.p50, summary.p90);
    let first = summary.replicates[0];
    assert!(summary
        .replicates
        .iter()
        .all(|r| r.fatigue_score == first.fatigue_score && r.final_beta == first.final_beta));
}
