//! CSV writers for run outputs and a generic reader for re-parsing them.
//!
//! Every file starts with a header row. Floats use the shortest decimal
//! that parses back to the same value, so identical runs produce identical
//! bytes and re-reading loses nothing.

use std::io::{Read, Write};

use crate::environment::EnvState;
use crate::fatigue::{RainflowCycle, StressSample};
use crate::ingestion::ObservedDensity;
use crate::montecarlo::{HistogramBin, ReplicateResult, RiskSummary, SensitivityEntry};
use crate::numfmt::{fmt_f64, fmt_opt};
use crate::pipeline::FinalReport;
use crate::reliability::BetaSample;
use crate::traffic::{ShockEvent, TrafficState};

pub const DENSITY_HEADER: &str = "timestamp,rho_raw,rho_stable,vehicle_count,car,truck,bus,valid";
pub const STATES_HEADER: &str = "time,cell_index,rho";
pub const SHOCKS_HEADER: &str = "time,position_m,rho_up,rho_down,wave_speed_ms,severity";
pub const ENV_HEADER: &str = "timestamp,m_env,ft_cycles,corrosion_potential";
pub const STRESS_HEADER: &str = "timestamp,load,density,speedpen,stress,m_env";
pub const CYCLES_HEADER: &str = "range,mean,count";
pub const REPORT_HEADER: &str = "D_total,score,alert";
pub const BETA_HEADER: &str = "timestamp,beta_sim,beta_obs,beta_primary,source,breach";
pub const REPLICATES_HEADER: &str = "replicate,seed,fatigue_score,final_beta";
pub const SUMMARY_HEADER: &str = "p50,p90,frac_safe,frac_monitor,frac_critical";
pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count";
pub const SENSITIVITY_HEADER: &str = "rank,parameter,spread";

pub fn write_density<W: Write>(mut out: W, rows: &[ObservedDensity]) -> std::io::Result<()> {
    writeln!(out, "{DENSITY_HEADER}")?;
    for o in rows {
        let c = &o.class_counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            o.timestamp,
            fmt_f64(o.rho_raw),
            fmt_f64(o.rho_stable),
            o.vehicle_count,
            c.car,
            c.truck,
            c.bus,
            o.valid
        )?;
    }
    Ok(())
}

pub fn write_states<W: Write>(mut out: W, states: &[TrafficState]) -> std::io::Result<()> {
    writeln!(out, "{STATES_HEADER}")?;
    for s in states {
        let t = fmt_f64(s.time);
        for (i, rho) in s.cell_densities.iter().enumerate() {
            writeln!(out, "{t},{i},{}", fmt_f64(*rho))?;
        }
    }
    Ok(())
}

pub fn write_shocks<W: Write>(mut out: W, shocks: &[ShockEvent], cell_length: f64) -> std::io::Result<()> {
    writeln!(out, "{SHOCKS_HEADER}")?;
    for s in shocks {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(s.time),
            fmt_f64(s.position_m(cell_length)),
            fmt_f64(s.upstream_density),
            fmt_f64(s.downstream_density),
            fmt_f64(s.wave_speed),
            fmt_f64(s.severity)
        )?;
    }
    Ok(())
}

pub fn write_env<W: Write>(mut out: W, env: &[EnvState]) -> std::io::Result<()> {
    writeln!(out, "{ENV_HEADER}")?;
    for e in env {
        writeln!(
            out,
            "{},{},{},{}",
            e.timestamp,
            fmt_f64(e.m_env),
            e.freeze_thaw_cycles_in_window,
            fmt_f64(e.corrosion_potential)
        )?;
    }
    Ok(())
}

pub fn write_stress<W: Write>(mut out: W, samples: &[StressSample]) -> std::io::Result<()> {
    writeln!(out, "{STRESS_HEADER}")?;
    for s in samples {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.timestamp,
            fmt_f64(s.load_intensity),
            fmt_f64(s.density_norm),
            fmt_f64(s.speed_penalty),
            fmt_f64(s.stress),
            fmt_f64(s.m_env)
        )?;
    }
    Ok(())
}

pub fn write_cycles<W: Write>(mut out: W, cycles: &[RainflowCycle]) -> std::io::Result<()> {
    writeln!(out, "{CYCLES_HEADER}")?;
    for c in cycles {
        writeln!(out, "{},{},{}", fmt_f64(c.range), fmt_f64(c.mean), fmt_f64(c.count))?;
    }
    Ok(())
}

pub fn write_report<W: Write>(mut out: W, report: &FinalReport) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    writeln!(
        out,
        "{},{},{}",
        fmt_f64(report.total_damage),
        fmt_f64(report.score),
        report.alert
    )
}

pub fn write_beta<W: Write>(mut out: W, beta: &[BetaSample]) -> std::io::Result<()> {
    writeln!(out, "{BETA_HEADER}")?;
    for b in beta {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            b.timestamp,
            fmt_opt(b.beta_sim),
            fmt_opt(b.beta_obs),
            fmt_f64(b.beta_primary),
            b.source,
            b.breach
        )?;
    }
    Ok(())
}

pub fn write_replicates<W: Write>(mut out: W, reps: &[ReplicateResult]) -> std::io::Result<()> {
    writeln!(out, "{REPLICATES_HEADER}")?;
    for r in reps {
        writeln!(
            out,
            "{},{},{},{}",
            r.replicate,
            r.seed,
            fmt_f64(r.fatigue_score),
            fmt_opt(r.final_beta)
        )?;
    }
    Ok(())
}

pub fn write_summary<W: Write>(mut out: W, s: &RiskSummary) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    writeln!(
        out,
        "{},{},{},{},{}",
        fmt_f64(s.p50),
        fmt_f64(s.p90),
        fmt_f64(s.frac_safe),
        fmt_f64(s.frac_monitor),
        fmt_f64(s.frac_critical)
    )
}

pub fn write_histogram<W: Write>(mut out: W, bins: &[HistogramBin]) -> std::io::Result<()> {
    writeln!(out, "{HISTOGRAM_HEADER}")?;
    for b in bins {
        writeln!(out, "{},{},{}", b.lo, b.hi, b.count)?;
    }
    Ok(())
}

pub fn write_sensitivity<W: Write>(mut out: W, entries: &[SensitivityEntry]) -> std::io::Result<()> {
    writeln!(out, "{SENSITIVITY_HEADER}")?;
    for (i, e) in entries.iter().enumerate() {
        writeln!(out, "{},{},{}", i + 1, e.parameter, fmt_f64(e.spread))?;
    }
    Ok(())
}

/// A parsed CSV file: header plus string rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Value of `name` in the last row.
    pub fn last_value(&self, name: &str) -> Option<&str> {
        let i = self.column(name)?;
        self.rows.last().map(|r| r[i].as_str())
    }
}

/// Reads a headed CSV, requiring every row to match the header width.
pub fn read_table<R: Read>(input: R) -> Result<Table, csv::Error> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fatigue::Alert;
    use crate::pipeline::{run_simulation, ScenarioConfig, SyntheticWeather};

    #[test]
    fn outputs_reparse_with_expected_headers() {
        let cfg = ScenarioConfig {
            weather: SyntheticWeather::WinterStorm,
            ..Default::default()
        };
        let run = run_simulation(&cfg, 120.0, 5, None, true).unwrap();
        let check = |bytes: Vec<u8>, header: &str, rows: usize| {
            let t = read_table(bytes.as_slice()).unwrap();
            assert_eq!(t.header.join(","), header);
            assert_eq!(t.rows.len(), rows);
        };
        let mut b = Vec::new();
        write_density(&mut b, &run.observed).unwrap();
        check(b, DENSITY_HEADER, 120);
        let mut b = Vec::new();
        write_states(&mut b, &run.states).unwrap();
        check(b, STATES_HEADER, 120 * cfg.solver.cell_count);
        let mut b = Vec::new();
        write_env(&mut b, &run.env).unwrap();
        check(b, ENV_HEADER, 120);
        let mut b = Vec::new();
        write_stress(&mut b, &run.stress).unwrap();
        check(b, STRESS_HEADER, 120);
        let mut b = Vec::new();
        write_cycles(&mut b, &run.damage.cycles).unwrap();
        check(b, CYCLES_HEADER, run.damage.cycles.len());
        let mut b = Vec::new();
        write_beta(&mut b, &run.beta).unwrap();
        let t = read_table(b.as_slice()).unwrap();
        assert_eq!(t.header.join(","), BETA_HEADER);
        let last: f64 = t.last_value("beta_primary").unwrap().parse().unwrap();
        assert_eq!(Some(last), run.final_beta());
        let mut b = Vec::new();
        write_report(&mut b, &run.report).unwrap();
        let t = read_table(b.as_slice()).unwrap();
        let d: f64 = t.last_value("D_total").unwrap().parse().unwrap();
        assert_eq!(d, run.report.total_damage);
        let alert: Alert = t.last_value("alert").unwrap().parse().unwrap();
        assert_eq!(alert, run.report.alert);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(read_table(&b"a,b\n1,2\n3\n"[..]).is_err());
    }
}
