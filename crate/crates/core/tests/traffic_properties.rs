use bridge_twin::traffic::{
    interface_fluxes, step_with_boundary, Boundary, FundamentalDiagram, SolverConfig, TrafficState,
};
use proptest::prelude::*;

fn fd() -> FundamentalDiagram {
    FundamentalDiagram::default()
}

fn state_strategy(cells: usize) -> impl Strategy<Value = TrafficState> {
    let cfg = SolverConfig {
        cell_count: cells,
        ..Default::default()
    };
    let dx = cfg.cell_length();
    proptest::collection::vec(0.0f64..=1.0, cells).prop_map(move |u| TrafficState {
        time: 0.0,
        cell_densities: u.into_iter().map(|x| x * 0.12).collect(),
        cell_length: dx,
    })
}

/// Total variation including the ghost states a zero-flux wall implies:
/// an empty road upstream and a jammed one downstream.
fn closed_total_variation(s: &TrafficState, fd: &FundamentalDiagram) -> f64 {
    let rho = &s.cell_densities;
    rho[0] + s.total_variation() + (fd.jam_density - rho[rho.len() - 1])
}

fn cfg(cells: usize) -> SolverConfig {
    SolverConfig {
        cell_count: cells,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn open_boundary_conservation_ledger(s in state_strategy(32), inflow in 0.0f64..=0.12, frac in 0.1f64..=1.0) {
        let fd = fd();
        let c = cfg(32);
        let dt = frac * c.max_dt(&fd);
        let boundary = Boundary::Open { inflow };
        let f = interface_fluxes(&s, &fd, boundary).unwrap();
        let next = step_with_boundary(&s, &fd, &c, boundary, dt).unwrap();
        let change = next.mass() - s.mass();
        let ledger = dt * (f[0] - f[32]);
        let scale = s.mass().max(next.mass()).max(1e-12);
        prop_assert!((change - ledger).abs() <= 1e-13 * scale, "{change} vs {ledger}");
    }

    #[test]
    fn densities_stay_in_bounds(s in state_strategy(24), inflow in 0.0f64..=0.12, steps in 1usize..60) {
        let fd = fd();
        let c = cfg(24);
        let dt = c.max_dt(&fd);
        let mut cur = s;
        for _ in 0..steps {
            cur = step_with_boundary(&cur, &fd, &c, Boundary::Open { inflow }, dt).unwrap();
            prop_assert!(cur.cell_densities.iter().all(|&r| (0.0..=0.12).contains(&r)));
        }
    }

    #[test]
    fn closed_box_total_variation_non_increasing(s in state_strategy(24), steps in 1usize..60) {
        let fd = fd();
        let c = cfg(24);
        let dt = c.max_dt(&fd);
        let m0 = s.mass();
        let mut cur = s;
        for _ in 0..steps {
            let next = step_with_boundary(&cur, &fd, &c, Boundary::Closed, dt).unwrap();
            prop_assert!(closed_total_variation(&next, &fd) <= closed_total_variation(&cur, &fd) * (1.0 + 1e-12) + 1e-15);
            cur = next;
        }
        prop_assert!((cur.mass() - m0).abs() <= 1e-12 * m0.max(1e-12));
    }

    #[test]
    fn constant_states_are_fixed_points(rho in 0.0f64..=0.12) {
        let fd = fd();
        let c = cfg(16);
        let s = TrafficState::uniform(&c, rho, 0.0);
        let next = step_with_boundary(&s, &fd, &c, Boundary::Open { inflow: rho }, c.max_dt(&fd)).unwrap();
        prop_assert_eq!(next.cell_densities, s.cell_densities);
    }
}
