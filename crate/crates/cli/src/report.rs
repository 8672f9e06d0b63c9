//! Consolidates a run directory into `report_bundle.csv` and `summary.txt`.

use std::fmt::Write as _;
use std::path::Path;

use bridge_twin::export::{read_table, Table};
use bridge_twin::fatigue::{Alert, CRITICAL_ABOVE, SAFE_BELOW};
use bridge_twin::numfmt::fmt_f64;

use crate::manifest::{read_manifest, sha256_file};
use crate::{CliError, Outcome};

pub const BUNDLE_FILE: &str = "report_bundle.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

const PIPELINE_STAGES: [&str; 9] = [
    "density.csv",
    "shocks.csv",
    "env.csv",
    "stress.csv",
    "cycles.csv",
    "report.csv",
    "beta.csv",
    "features.csv",
    "states.csv",
];
const MC_STAGES: [&str; 3] = ["mc_replicates.csv", "mc_summary.csv", "mc_histogram.csv"];

fn maintenance_action(alert: Alert) -> &'static str {
    match alert {
        Alert::Safe => "routine inspection schedule",
        Alert::Monitor => "increase inspection frequency",
        Alert::Critical => "engineering assessment required",
    }
}

fn load(dir: &Path, name: &str) -> Option<Table> {
    let file = std::fs::File::open(dir.join(name)).ok()?;
    read_table(file).ok()
}

pub fn report(dir: &Path, out: Option<&Path>) -> Result<Outcome, CliError> {
    let manifest = read_manifest(dir)?;
    let mut bundle: Vec<(String, String, String)> = Vec::new();
    let mut push = |section: &str, key: &str, value: String| bundle.push((section.into(), key.into(), value));
    let mut summary = String::new();
    let mut warnings = Vec::new();

    push("run", "command", manifest.command.clone());
    push("run", "tool_version", manifest.tool_version.clone());
    push("run", "config_hash", manifest.config_hash.clone());
    if let Some(seed) = manifest.master_seed {
        push("run", "master_seed", seed.to_string());
    }

    for rec in &manifest.outputs {
        let path = dir.join(&rec.file);
        let status = match sha256_file(&path) {
            Ok(d) if d == rec.sha256 => "ok",
            Ok(_) => {
                warnings.push(format!(
                    "integrity warning: {} does not match its manifest digest",
                    rec.file
                ));
                "digest_mismatch"
            }
            Err(_) => {
                warnings.push(format!(
                    "integrity warning: {} listed in the manifest is missing",
                    rec.file
                ));
                "missing"
            }
        };
        push("integrity", &rec.file, status.into());
    }

    let expected: &[&str] = match manifest.command.as_str() {
        "replay" | "simulate" => &PIPELINE_STAGES,
        "mc" => &MC_STAGES,
        _ => &[],
    };
    let missing: Vec<&str> = expected.iter().copied().filter(|f| !dir.join(f).exists()).collect();
    for f in &missing {
        push("missing_stage", f, "absent".into());
    }

    let _ = writeln!(
        summary,
        "Run: {} (bridge-twin {})",
        manifest.command, manifest.tool_version
    );
    let _ = writeln!(summary, "Config hash: {}", manifest.config_hash);

    let mut alert = None;
    if let Some(t) = load(dir, "report.csv") {
        let d = t.last_value("D_total").unwrap_or("").to_string();
        let score = t.last_value("score").unwrap_or("").to_string();
        let a = t.last_value("alert").unwrap_or("").to_string();
        let _ = writeln!(summary, "\nFatigue");
        let _ = writeln!(summary, "  cumulative damage D: {d}");
        let _ = writeln!(summary, "  fatigue score:       {score}");
        let _ = writeln!(summary, "  alert band:          {a}");
        if let Ok(parsed) = a.parse::<Alert>() {
            let _ = writeln!(summary, "  maintenance class:   {}", maintenance_action(parsed));
            alert = Some(parsed);
        }
        push("fatigue", "D_total", d);
        push("fatigue", "score", score);
        push("fatigue", "alert", a);
    }
    if let Some(t) = load(dir, "beta.csv") {
        let _ = writeln!(summary, "\nReliability");
        match t.last_value("beta_primary") {
            Some(b) => {
                let source = t.last_value("source").unwrap_or("");
                let breaches = t
                    .column("breach")
                    .map_or(0, |i| t.rows.iter().filter(|r| r[i] == "true").count());
                let _ = writeln!(summary, "  final beta:   {b} ({source})");
                let _ = writeln!(summary, "  breach steps: {breaches} of {}", t.rows.len());
                push("reliability", "final_beta", b.into());
                push("reliability", "final_source", source.into());
                push("reliability", "breach_steps", breaches.to_string());
                // mean β_obs − β_sim where both exist; shows how conservative
                // the resistance priors are against the observed loads
                if let (Some(io), Some(is)) = (t.column("beta_obs"), t.column("beta_sim")) {
                    let gaps: Vec<f64> = t
                        .rows
                        .iter()
                        .filter_map(|r| Some(r[io].parse::<f64>().ok()? - r[is].parse::<f64>().ok()?))
                        .collect();
                    if !gaps.is_empty() {
                        let mean = fmt_f64(gaps.iter().sum::<f64>() / gaps.len() as f64);
                        let _ = writeln!(summary, "  mean obs - sim beta: {mean} over {} steps", gaps.len());
                        push("reliability", "mean_obs_minus_sim_beta", mean);
                    }
                }
            }
            None => {
                let _ = writeln!(summary, "  no samples");
            }
        }
    }
    match load(dir, "mc_summary.csv") {
        Some(t) => {
            let _ = writeln!(summary, "\nMonte Carlo");
            for key in ["p50", "p90", "frac_safe", "frac_monitor", "frac_critical"] {
                let v = t.last_value(key).unwrap_or("").to_string();
                let _ = writeln!(summary, "  {key:<14}{v}");
                push("monte_carlo", key, v);
            }
            let _ = writeln!(
                summary,
                "  bands: safe < {SAFE_BELOW}, monitor {SAFE_BELOW}..={CRITICAL_ABOVE}, critical > {CRITICAL_ABOVE}"
            );
        }
        None => {
            let _ = writeln!(
                summary,
                "\nMonte Carlo: no ensemble outputs in this run; percentiles omitted"
            );
        }
    }
    if !missing.is_empty() {
        let _ = writeln!(summary, "\nMissing stage outputs: {}", missing.join(", "));
    }
    for w in &warnings {
        log::warn!("{w}");
        eprintln!("warning: {w}");
        let _ = writeln!(summary, "\n{w}");
    }

    let out_dir = out.unwrap_or(dir);
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut csv = String::from("section,key,value\n");
    for (s, k, v) in &bundle {
        let _ = writeln!(csv, "{s},{k},{v}");
    }
    let bundle_path = out_dir.join(BUNDLE_FILE);
    std::fs::write(&bundle_path, csv).map_err(|e| CliError::io(&bundle_path, e))?;
    let summary_path = out_dir.join(SUMMARY_FILE);
    std::fs::write(&summary_path, &summary).map_err(|e| CliError::io(&summary_path, e))?;
    print!("{summary}");
    Ok(if alert == Some(Alert::Critical) {
        Outcome::Critical
    } else {
        Outcome::Ok
    })
}
