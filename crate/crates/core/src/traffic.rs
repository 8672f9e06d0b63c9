//! First-order LWR traffic model on a uniform grid: Greenshields flux,
//! Godunov interface fluxes, explicit conservative updates, and
//! compressive-front (shock) detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("density {rho} outside [0, {jam}]")]
    Domain { rho: f64, jam: f64 },
    #[error("time step {dt} s violates CFL limit {limit} s")]
    Cfl { dt: f64, limit: f64 },
    #[error("cell {cell} left [0, jam] after update: {rho}")]
    BoundViolation { cell: usize, rho: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Greenshields fundamental diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FundamentalDiagram {
    /// v_f, m/s
    pub free_flow_speed: f64,
    /// veh/m
    pub jam_density: f64,
}

impl Default for FundamentalDiagram {
    fn default() -> Self {
        Self {
            free_flow_speed: 16.7,
            jam_density: 0.12,
        }
    }
}

impl FundamentalDiagram {
    pub fn new(free_flow_speed: f64, jam_density: f64) -> Result<Self, TrafficError> {
        let fd = Self {
            free_flow_speed,
            jam_density,
        };
        fd.validate()?;
        Ok(fd)
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.free_flow_speed > 0.0 && self.free_flow_speed.is_finite()) {
            return Err(TrafficError::Config("free_flow_speed must be > 0".into()));
        }
        if !(self.jam_density > 0.0 && self.jam_density.is_finite()) {
            return Err(TrafficError::Config("jam_density must be > 0".into()));
        }
        Ok(())
    }

    /// Density at which flux peaks.
    pub fn critical_density(&self) -> f64 {
        0.5 * self.jam_density
    }

    pub fn capacity(&self) -> f64 {
        0.25 * self.free_flow_speed * self.jam_density
    }

    /// Equilibrium speed v(ρ) = v_f (1 − ρ/ρ_jam).
    pub fn speed(&self, rho: f64) -> f64 {
        self.free_flow_speed * (1.0 - rho / self.jam_density)
    }

    fn flux_unchecked(&self, rho: f64) -> f64 {
        self.free_flow_speed * rho * (1.0 - rho / self.jam_density)
    }

    fn check(&self, rho: f64) -> Result<(), TrafficError> {
        if (0.0..=self.jam_density).contains(&rho) {
            Ok(())
        } else {
            Err(TrafficError::Domain {
                rho,
                jam: self.jam_density,
            })
        }
    }

    /// Rankine–Hugoniot speed of a jump between two states.
    pub fn shock_speed(&self, rho_left: f64, rho_right: f64) -> f64 {
        if rho_left == rho_right {
            return self.free_flow_speed * (1.0 - 2.0 * rho_left / self.jam_density);
        }
        (self.flux_unchecked(rho_right) - self.flux_unchecked(rho_left)) / (rho_right - rho_left)
    }
}

pub fn flux(fd: &FundamentalDiagram, rho: f64) -> Result<f64, TrafficError> {
    fd.check(rho)?;
    Ok(fd.flux_unchecked(rho))
}

/// Exact Riemann flux for the concave Greenshields diagram.
pub fn godunov_flux(fd: &FundamentalDiagram, rho_left: f64, rho_right: f64) -> Result<f64, TrafficError> {
    fd.check(rho_left)?;
    fd.check(rho_right)?;
    Ok(godunov_unchecked(fd, rho_left, rho_right))
}

fn godunov_unchecked(fd: &FundamentalDiagram, rho_left: f64, rho_right: f64) -> f64 {
    let rho_c = fd.critical_density();
    if rho_left <= rho_right {
        // concave q: the minimum over an interval sits at an endpoint
        fd.flux_unchecked(rho_left).min(fd.flux_unchecked(rho_right))
    } else if rho_right <= rho_c && rho_c <= rho_left {
        fd.capacity()
    } else {
        fd.flux_unchecked(rho_left).max(fd.flux_unchecked(rho_right))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub cell_count: usize,
    /// m
    pub span_length: f64,
    pub cfl_target: f64,
    /// Minimum compressive jump between adjacent cells, as a fraction of ρ_jam.
    pub shock_gradient_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            cell_count: 64,
            span_length: 1000.0,
            cfl_target: 0.9,
            shock_gradient_threshold: 0.15,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), TrafficError> {
        if self.cell_count < 3 {
            return Err(TrafficError::Config("cell_count must be >= 3".into()));
        }
        if !(self.span_length > 0.0 && self.span_length.is_finite()) {
            return Err(TrafficError::Config("span_length must be > 0".into()));
        }
        if !(self.cfl_target > 0.0 && self.cfl_target <= 1.0) {
            return Err(TrafficError::Config("cfl_target must lie in (0, 1]".into()));
        }
        if !(self.shock_gradient_threshold > 0.0) {
            return Err(TrafficError::Config("shock_gradient_threshold must be > 0".into()));
        }
        Ok(())
    }

    pub fn cell_length(&self) -> f64 {
        self.span_length / self.cell_count as f64
    }

    /// Largest stable step for the configured CFL target.
    pub fn max_dt(&self, fd: &FundamentalDiagram) -> f64 {
        self.cfl_target * self.cell_length() / fd.free_flow_speed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficState {
    pub time: f64,
    pub cell_densities: Vec<f64>,
    pub cell_length: f64,
}

impl TrafficState {
    pub fn uniform(cfg: &SolverConfig, rho: f64, time: f64) -> Self {
        Self {
            time,
            cell_densities: vec![rho; cfg.cell_count],
            cell_length: cfg.cell_length(),
        }
    }

    /// Total vehicles on the grid, Σ ρ_i Δx.
    pub fn mass(&self) -> f64 {
        self.cell_densities.iter().sum::<f64>() * self.cell_length
    }

    pub fn mean_density(&self) -> f64 {
        self.cell_densities.iter().sum::<f64>() / self.cell_densities.len() as f64
    }

    pub fn peak_density(&self) -> f64 {
        self.cell_densities.iter().copied().fold(0.0, f64::max)
    }

    pub fn total_variation(&self) -> f64 {
        self.cell_densities.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Ghost-cell treatment at the two ends of the span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Upstream ghost holds `inflow`; downstream ghost copies the last cell.
    Open { inflow: f64 },
    /// No flux through either end.
    Closed,
}

/// Interface fluxes F_{-1/2} .. F_{n-1/2}; `n + 1` values.
pub fn interface_fluxes(
    state: &TrafficState,
    fd: &FundamentalDiagram,
    boundary: Boundary,
) -> Result<Vec<f64>, TrafficError> {
    let rho = &state.cell_densities;
    for &r in rho {
        fd.check(r)?;
    }
    let n = rho.len();
    let mut f = Vec::with_capacity(n + 1);
    match boundary {
        Boundary::Open { inflow } => {
            fd.check(inflow)?;
            f.push(godunov_unchecked(fd, inflow, rho[0]));
        }
        Boundary::Closed => f.push(0.0),
    }
    f.extend(rho.windows(2).map(|w| godunov_unchecked(fd, w[0], w[1])));
    match boundary {
        Boundary::Open { .. } => f.push(godunov_unchecked(fd, rho[n - 1], rho[n - 1])),
        Boundary::Closed => f.push(0.0),
    }
    Ok(f)
}

/// One explicit Godunov update with the observed density as upstream inflow.
pub fn step(
    state: &TrafficState,
    fd: &FundamentalDiagram,
    cfg: &SolverConfig,
    inflow_density: f64,
    dt: f64,
) -> Result<TrafficState, TrafficError> {
    step_with_boundary(state, fd, cfg, Boundary::Open { inflow: inflow_density }, dt)
}

pub fn step_with_boundary(
    state: &TrafficState,
    fd: &FundamentalDiagram,
    cfg: &SolverConfig,
    boundary: Boundary,
    dt: f64,
) -> Result<TrafficState, TrafficError> {
    let limit = cfg.cfl_target * state.cell_length / fd.free_flow_speed;
    if !(dt > 0.0 && dt <= limit * (1.0 + 1e-12)) {
        return Err(TrafficError::Cfl { dt, limit });
    }
    let f = interface_fluxes(state, fd, boundary)?;
    let lambda = dt / state.cell_length;
    let mut next = Vec::with_capacity(state.cell_densities.len());
    for (i, &rho) in state.cell_densities.iter().enumerate() {
        let r = rho - lambda * (f[i + 1] - f[i]);
        if !(0.0..=fd.jam_density).contains(&r) {
            return Err(TrafficError::BoundViolation { cell: i, rho: r });
        }
        next.push(r);
    }
    Ok(TrafficState {
        time: state.time + dt,
        cell_densities: next,
        cell_length: state.cell_length,
    })
}

/// Advances the state by `duration` using the fewest equal sub-steps that
/// respect the CFL target.
pub fn advance(
    state: &TrafficState,
    fd: &FundamentalDiagram,
    cfg: &SolverConfig,
    inflow_density: f64,
    duration: f64,
) -> Result<TrafficState, TrafficError> {
    let limit = cfg.cfl_target * state.cell_length / fd.free_flow_speed;
    let n = (duration / limit).ceil().max(1.0) as usize;
    let dt = duration / n as f64;
    let mut s = state.clone();
    for _ in 0..n {
        s = step(&s, fd, cfg, inflow_density, dt)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockEvent {
    pub time: f64,
    /// Index of the upstream cell of the steepest interface.
    pub position: usize,
    pub upstream_density: f64,
    pub downstream_density: f64,
    /// m/s; negative values travel upstream
    pub wave_speed: f64,
    pub severity: f64,
}

impl ShockEvent {
    /// Interface position along the span, m.
    pub fn position_m(&self, cell_length: f64) -> f64 {
        (self.position + 1) as f64 * cell_length
    }
}

/// Finds compressive fronts (density rising downstream by more than the
/// configured fraction of ρ_jam between adjacent cells).
///
/// Runs of adjacent qualifying interfaces are one front, reported at the
/// steepest interface. The front's states are the ends of the monotone
/// ramp containing the run, so a front smeared over several cells still
/// reports the full jump and its Rankine–Hugoniot speed.
pub fn detect_shocks(
    prev: &TrafficState,
    curr: &TrafficState,
    fd: &FundamentalDiagram,
    cfg: &SolverConfig,
) -> Vec<ShockEvent> {
    debug_assert_eq!(prev.cell_densities.len(), curr.cell_densities.len());
    let rho = &curr.cell_densities;
    let threshold = cfg.shock_gradient_threshold * fd.jam_density;
    let qualifies = |i: usize| rho[i + 1] - rho[i] > threshold;
    let mut events = Vec::new();
    let n = rho.len();
    let mut i = 0;
    while i + 1 < n {
        if !qualifies(i) {
            i += 1;
            continue;
        }
        let run_start = i;
        let mut steepest = i;
        while i + 1 < n && qualifies(i) {
            if rho[i + 1] - rho[i] > rho[steepest + 1] - rho[steepest] {
                steepest = i;
            }
            i += 1;
        }
        let run_end = i; // last cell of the run
        let mut lo = run_start;
        while lo > 0 && rho[lo - 1] < rho[lo] {
            lo -= 1;
        }
        let mut hi = run_end;
        while hi + 1 < n && rho[hi + 1] > rho[hi] {
            hi += 1;
        }
        let (up, down) = (rho[lo], rho[hi]);
        events.push(ShockEvent {
            time: curr.time,
            position: steepest,
            upstream_density: up,
            downstream_density: down,
            wave_speed: fd.shock_speed(up, down),
            severity: ((down - up) / fd.jam_density).min(1.0),
        });
    }
    events
}

/// Proxy front from two consecutive observed densities at the camera.
///
/// A rise at a fixed point means a denser state arrived, so the newer
/// sample plays the downstream (congested) side. Observation noise makes
/// these speeds a proxy only.
pub fn observed_shock_proxy(
    prev_rho: f64,
    curr_rho: f64,
    time: f64,
    fd: &FundamentalDiagram,
    cfg: &SolverConfig,
) -> Option<ShockEvent> {
    let up = prev_rho.min(fd.jam_density);
    let down = curr_rho.min(fd.jam_density);
    if down - up > cfg.shock_gradient_threshold * fd.jam_density {
        Some(ShockEvent {
            time,
            position: 0,
            upstream_density: up,
            downstream_density: down,
            wave_speed: fd.shock_speed(up, down),
            severity: ((down - up) / fd.jam_density).min(1.0),
        })
    } else {
        None
    }
}

/// Density-weighted mean speed; `v_f` for an empty road.
pub fn mean_speed(state: &TrafficState, fd: &FundamentalDiagram) -> f64 {
    let total: f64 = state.cell_densities.iter().sum();
    if total <= 0.0 {
        return fd.free_flow_speed;
    }
    state.cell_densities.iter().map(|&r| r * fd.speed(r)).sum::<f64>() / total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd() -> FundamentalDiagram {
        FundamentalDiagram::new(20.0, 0.2).unwrap()
    }

    #[test]
    fn flux_points() {
        let fd = fd();
        assert_eq!(flux(&fd, 0.0).unwrap(), 0.0);
        assert_eq!(flux(&fd, 0.2).unwrap(), 0.0);
        assert!((flux(&fd, 0.1).unwrap() - 20.0 * 0.2 / 4.0).abs() < 1e-15);
        assert!(matches!(flux(&fd, 0.21), Err(TrafficError::Domain { .. })));
        assert!(flux(&fd, -1e-9).is_err());
    }

    #[test]
    fn godunov_cases() {
        let fd = fd();
        let j = fd.jam_density;
        for r in [0.0, 0.03, 0.1, 0.17] {
            assert_eq!(godunov_flux(&fd, r, r).unwrap(), flux(&fd, r).unwrap());
        }
        assert_eq!(godunov_flux(&fd, 0.8 * j, 0.2 * j).unwrap(), fd.capacity());
        let g = godunov_flux(&fd, 0.2 * j, 0.8 * j).unwrap();
        assert!((g - 0.16 * fd.free_flow_speed * j).abs() < 1e-15);
        assert!(godunov_flux(&fd, 0.3, 0.1).is_err());
    }

    #[test]
    fn godunov_matches_interval_extremum() {
        // brute-force min/max over a fine grid of the interval
        let fd = fd();
        let j = fd.jam_density;
        let pts: Vec<f64> = (0..=20).map(|k| k as f64 * j / 20.0).collect();
        for &a in &pts {
            for &b in &pts {
                let (lo, hi) = (a.min(b), a.max(b));
                let samples = (0..=1000).map(|k| flux(&fd, lo + (hi - lo) * k as f64 / 1000.0).unwrap());
                let expected = if a <= b {
                    samples.fold(f64::INFINITY, f64::min)
                } else {
                    samples.fold(f64::NEG_INFINITY, f64::max)
                };
                let got = godunov_flux(&fd, a, b).unwrap();
                // grid spacing bounds the sampling error near the flux peak
                assert!(
                    got >= expected - 1e-15 && got - expected < 1e-6,
                    "{a} {b}: {got} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn constant_state_fixed_point() {
        let fd = fd();
        let cfg = SolverConfig::default();
        let s = TrafficState::uniform(&cfg, 0.07, 0.0);
        let next = step(&s, &fd, &cfg, 0.07, cfg.max_dt(&fd)).unwrap();
        assert_eq!(next.cell_densities, s.cell_densities);

        let empty = TrafficState::uniform(&cfg, 0.0, 0.0);
        let next = step(&empty, &fd, &cfg, 0.0, cfg.max_dt(&fd)).unwrap();
        assert!(next.cell_densities.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn cfl_violation_is_an_error() {
        let fd = fd();
        let cfg = SolverConfig::default();
        let s = TrafficState::uniform(&cfg, 0.05, 0.0);
        let err = step(&s, &fd, &cfg, 0.05, cfg.max_dt(&fd) * 1.01).unwrap_err();
        assert!(matches!(err, TrafficError::Cfl { .. }));
        assert!(step(&s, &fd, &cfg, 0.05, 0.0).is_err());
    }

    #[test]
    fn stationary_shock_stays_put() {
        let fd = fd();
        let j = fd.jam_density;
        let cfg = SolverConfig {
            cell_count: 400,
            ..Default::default()
        };
        let mut s = TrafficState::uniform(&cfg, 0.2 * j, 0.0);
        for r in &mut s.cell_densities[200..] {
            *r = 0.8 * j;
        }
        let dt = cfg.max_dt(&fd);
        for _ in 0..500 {
            s = step(&s, &fd, &cfg, 0.2 * j, dt).unwrap();
        }
        let front = s.cell_densities.iter().position(|&r| r > 0.5 * j).unwrap();
        assert!((front as i64 - 200).abs() < 2, "front at {front}");
    }

    #[test]
    fn shock_detection_closed_forms() {
        let fd = fd();
        let j = fd.jam_density;
        let cfg = SolverConfig::default();
        let uniform = TrafficState::uniform(&cfg, 0.3 * j, 0.0);
        assert!(detect_shocks(&uniform, &uniform, &fd, &cfg).is_empty());

        let mut s = TrafficState::uniform(&cfg, 0.2 * j, 0.0);
        for r in &mut s.cell_densities[30..] {
            *r = 0.8 * j;
        }
        let ev = detect_shocks(&s, &s, &fd, &cfg);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].position, 29);
        assert!(ev[0].wave_speed.abs() < 1e-12);
        assert!((ev[0].severity - 0.6).abs() < 1e-12);

        let mut s = TrafficState::uniform(&cfg, 0.5 * j, 0.0);
        for r in &mut s.cell_densities[30..] {
            *r = 0.9 * j;
        }
        let ev = detect_shocks(&s, &s, &fd, &cfg);
        assert!((ev[0].wave_speed + 0.4 * fd.free_flow_speed).abs() < 1e-12);
    }

    #[test]
    fn rarefactions_and_small_jumps_ignored() {
        let fd = fd();
        let j = fd.jam_density;
        let cfg = SolverConfig::default();
        let mut s = TrafficState::uniform(&cfg, 0.8 * j, 0.0);
        for r in &mut s.cell_densities[30..] {
            *r = 0.2 * j;
        }
        assert!(detect_shocks(&s, &s, &fd, &cfg).is_empty());
        let mut s = TrafficState::uniform(&cfg, 0.2 * j, 0.0);
        for r in &mut s.cell_densities[30..] {
            *r = 0.3 * j;
        }
        assert!(detect_shocks(&s, &s, &fd, &cfg).is_empty());
    }

    #[test]
    fn smeared_front_merges_into_one_event() {
        let fd = fd();
        let j = fd.jam_density;
        let cfg = SolverConfig::default();
        let mut s = TrafficState::uniform(&cfg, 0.1 * j, 0.0);
        s.cell_densities[20] = 0.3 * j;
        s.cell_densities[21] = 0.7 * j;
        for r in &mut s.cell_densities[22..] {
            *r = 0.9 * j;
        }
        let ev = detect_shocks(&s, &s, &fd, &cfg);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].position, 20);
        assert!((ev[0].upstream_density - 0.1 * j).abs() < 1e-15);
        assert!((ev[0].downstream_density - 0.9 * j).abs() < 1e-15);
    }

    #[test]
    fn mean_speed_cases() {
        let fd = fd();
        let j = fd.jam_density;
        let cfg = SolverConfig::default();
        assert_eq!(
            mean_speed(&TrafficState::uniform(&cfg, 0.0, 0.0), &fd),
            fd.free_flow_speed
        );
        assert_eq!(mean_speed(&TrafficState::uniform(&cfg, j, 0.0), &fd), 0.0);
        let two = TrafficState {
            time: 0.0,
            cell_densities: vec![j / 4.0, j / 2.0],
            cell_length: 1.0,
        };
        let expected = (0.25 * 0.75 + 0.5 * 0.5) / 0.75 * fd.free_flow_speed;
        assert!((mean_speed(&two, &fd) - expected).abs() < 1e-12);
    }

    #[test]
    fn observed_proxy_only_for_rises() {
        let fd = fd();
        let cfg = SolverConfig::default();
        let j = fd.jam_density;
        let ev = observed_shock_proxy(0.5 * j, 0.9 * j, 3.0, &fd, &cfg).unwrap();
        assert!((ev.wave_speed + 0.4 * fd.free_flow_speed).abs() < 1e-12);
        assert!(observed_shock_proxy(0.9 * j, 0.5 * j, 3.0, &fd, &cfg).is_none());
    }
}
