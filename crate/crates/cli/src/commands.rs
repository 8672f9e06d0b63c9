use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bridge_twin::export;
use bridge_twin::fatigue::{Alert, CRITICAL_ABOVE};
use bridge_twin::ingestion::{
    generate_synthetic_traffic, parse_detection_log, parse_weather_log, write_detection_log, write_weather_log,
    LogFormat, WeatherRecord,
};
use bridge_twin::ml::{
    fit, holdout_rmse, read_features_csv, write_features_csv, write_importance_csv, FeatureRow, MlError, ModelDocument,
    WindowedRow,
};
use bridge_twin::montecarlo::{run_ensemble, sensitivity_report};
use bridge_twin::numfmt::{fmt_f64, fmt_opt};
use bridge_twin::pipeline::{run_features, run_pipeline, PipelineRun, ScenarioConfig};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::manifest::{sha256_file, FileDigest, OutputDir, RunManifest};
use crate::{CliError, Common, Outcome};

const DEFAULT_OUT: &str = "bridge-twin-out";

fn output_dir(common: &Common, cfg: &RunConfig) -> Result<OutputDir, CliError> {
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    OutputDir::create(&dir)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn infer_format(path: &Path) -> LogFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl" | "ndjson") => LogFormat::Jsonl,
        _ => LogFormat::Csv,
    }
}

fn read_weather(path: &Path) -> Result<Vec<WeatherRecord>, CliError> {
    parse_weather_log(open(path)?).map_err(|e| CliError::input(path, e))
}

struct ManifestParts<'a> {
    command: &'a str,
    seed: Option<u64>,
    simulated_duration: Option<f64>,
    inputs: Vec<PathBuf>,
    started: Instant,
}

fn finish(out: &OutputDir, cfg: &RunConfig, parts: ManifestParts<'_>) -> Result<(), CliError> {
    let outputs = out.records()?;
    let row_counts: BTreeMap<String, usize> = outputs.iter().map(|o| (o.file.clone(), o.rows)).collect();
    let inputs = parts
        .inputs
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.write_manifest(&RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: parts.command.into(),
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        master_seed: parts.seed,
        simulated_duration_s: parts.simulated_duration,
        wall_clock_s: parts.started.elapsed().as_secs_f64(),
        inputs,
        outputs,
        row_counts,
    })
}

fn write_run_outputs(
    out: &mut OutputDir,
    cfg: &RunConfig,
    scenario: &ScenarioConfig,
    run: &PipelineRun,
) -> Result<(), CliError> {
    out.write("density.csv", run.observed.len(), |w| {
        export::write_density(w, &run.observed)
    })?;
    if cfg.output.write_states {
        let rows = run.states.len() * scenario.solver.cell_count;
        out.write("states.csv", rows, |w| export::write_states(w, &run.states))?;
    }
    let dx = scenario.solver.cell_length();
    out.write("shocks.csv", run.shocks.len(), |w| {
        export::write_shocks(w, &run.shocks, dx)
    })?;
    out.write("shocks_observed.csv", run.observed_shocks.len(), |w| {
        export::write_shocks(w, &run.observed_shocks, dx)
    })?;
    out.write("env.csv", run.env.len(), |w| export::write_env(w, &run.env))?;
    out.write("stress.csv", run.stress.len(), |w| export::write_stress(w, &run.stress))?;
    out.write("cycles.csv", run.damage.cycles.len(), |w| {
        export::write_cycles(w, &run.damage.cycles)
    })?;
    out.write("report.csv", 1, |w| export::write_report(w, &run.report))?;
    out.write("beta.csv", run.beta.len(), |w| export::write_beta(w, &run.beta))?;
    let features: Vec<WindowedRow> = if run.span.is_empty() {
        Vec::new()
    } else {
        let assembled = run_features(scenario, run)?;
        if assembled.dropped > 0 {
            log::warn!("{} feature windows dropped for camera outages", assembled.dropped);
        }
        assembled.rows
    };
    out.write("features.csv", features.len(), |w| write_features_csv(w, &features))
}

fn run_outcome(run: &PipelineRun) -> Outcome {
    if run.report.alert == Alert::Critical {
        Outcome::Critical
    } else {
        Outcome::Ok
    }
}

pub fn replay(
    common: &Common,
    detections: Option<PathBuf>,
    weather: Option<PathBuf>,
    format: Option<LogFormat>,
) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if detections.is_some() {
        cfg.inputs.detections = detections;
    }
    if weather.is_some() {
        cfg.inputs.weather = weather;
    }
    let det_path = cfg
        .inputs
        .detections
        .clone()
        .ok_or_else(|| CliError::Usage("replay needs --detections or inputs.detections".into()))?;
    let format = format.unwrap_or_else(|| infer_format(&det_path));
    let frames = parse_detection_log(open(&det_path)?, format).map_err(|e| CliError::input(&det_path, e))?;
    let weather = match &cfg.inputs.weather {
        Some(p) => read_weather(p)?,
        None => Vec::new(),
    };
    let scenario = cfg.scenario();
    let run = run_pipeline(&scenario, &frames, &weather, cfg.output.write_states)?;
    let mut out = output_dir(common, &cfg)?;
    write_run_outputs(&mut out, &cfg, &scenario, &run)?;
    let mut inputs = vec![det_path];
    inputs.extend(cfg.inputs.weather.clone());
    finish(
        &out,
        &cfg,
        ManifestParts {
            command: "replay",
            seed: None,
            simulated_duration: None,
            inputs,
            started,
        },
    )?;
    println!(
        "D_total={} score={} alert={}",
        fmt_f64(run.report.total_damage),
        fmt_f64(run.report.score),
        run.report.alert
    );
    Ok(run_outcome(&run))
}

pub fn simulate(
    common: &Common,
    seed: Option<u64>,
    duration: Option<f64>,
    format: LogFormat,
    weather: Option<PathBuf>,
) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(d) = duration {
        cfg.run.duration = d;
    }
    if weather.is_some() {
        cfg.inputs.weather = weather;
    }
    let scenario = cfg.scenario();
    scenario.validate()?;
    let frames = generate_synthetic_traffic(&scenario.demand, cfg.run.duration, cfg.run.seed)
        .map_err(bridge_twin::pipeline::PipelineError::from)?;
    let weather = match &cfg.inputs.weather {
        Some(p) => read_weather(p)?,
        None => scenario.synthetic_weather(scenario.demand.start_timestamp, cfg.run.duration),
    };
    let run = run_pipeline(&scenario, &frames, &weather, cfg.output.write_states)?;
    let mut out = output_dir(common, &cfg)?;
    let log_name = match format {
        LogFormat::Csv => "detections.csv",
        LogFormat::Jsonl => "detections.jsonl",
    };
    // CSV holds one row per detection and one marker row per empty frame
    let n_det: usize = match format {
        LogFormat::Csv => frames.iter().map(|f| f.detections.len().max(1)).sum(),
        LogFormat::Jsonl => frames.len(),
    };
    out.write(log_name, n_det, |w| write_detection_log(w, &frames, format))?;
    out.write("weather.csv", weather.len(), |w| write_weather_log(w, &weather))?;
    write_run_outputs(&mut out, &cfg, &scenario, &run)?;
    finish(
        &out,
        &cfg,
        ManifestParts {
            command: "simulate",
            seed: Some(cfg.run.seed),
            simulated_duration: Some(cfg.run.duration),
            inputs: cfg.inputs.weather.clone().into_iter().collect(),
            started,
        },
    )?;
    println!(
        "D_total={} score={} alert={}",
        fmt_f64(run.report.total_damage),
        fmt_f64(run.report.score),
        run.report.alert
    );
    Ok(run_outcome(&run))
}

pub fn monte_carlo(
    common: &Common,
    seed: Option<u64>,
    duration: Option<f64>,
    replicates: Option<usize>,
    sensitivity: bool,
) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = seed {
        cfg.mc.master_seed = s;
    }
    if let Some(d) = duration {
        cfg.mc.duration = d;
    }
    if let Some(n) = replicates {
        cfg.mc.n_replicates = n;
    }
    let scenario = cfg.mc_scenario();
    let summary = run_ensemble(&cfg.mc, &scenario)?;
    let mut out = output_dir(common, &cfg)?;
    out.write("mc_replicates.csv", summary.replicates.len(), |w| {
        export::write_replicates(w, &summary.replicates)
    })?;
    out.write("mc_summary.csv", 1, |w| export::write_summary(w, &summary))?;
    out.write("mc_histogram.csv", summary.histogram.len(), |w| {
        export::write_histogram(w, &summary.histogram)
    })?;
    if sensitivity {
        let ranking = sensitivity_report(&cfg.mc, &scenario)?;
        out.write("mc_sensitivity.csv", ranking.len(), |w| {
            export::write_sensitivity(w, &ranking)
        })?;
    }
    finish(
        &out,
        &cfg,
        ManifestParts {
            command: "mc",
            seed: Some(cfg.mc.master_seed),
            simulated_duration: Some(cfg.mc.duration),
            inputs: Vec::new(),
            started,
        },
    )?;
    println!(
        "p50={} p90={} safe={} monitor={} critical={}",
        fmt_f64(summary.p50),
        fmt_f64(summary.p90),
        fmt_f64(summary.frac_safe),
        fmt_f64(summary.frac_monitor),
        fmt_f64(summary.frac_critical)
    );
    Ok(if summary.p90 > CRITICAL_ABOVE {
        Outcome::Critical
    } else {
        Outcome::Ok
    })
}

fn read_feature_file(path: &Path) -> Result<Vec<WindowedRow>, CliError> {
    read_features_csv(open(path)?).map_err(|e| CliError::input(path, e))
}

pub fn train(common: &Common, features: Vec<PathBuf>, seed: Option<u64>) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if !features.is_empty() {
        cfg.inputs.features = features;
    }
    if let Some(s) = seed {
        cfg.forest.seed = s;
    }
    if cfg.inputs.features.is_empty() {
        return Err(CliError::Usage("train needs --features or inputs.features".into()));
    }
    let mut rows: Vec<FeatureRow> = Vec::new();
    for path in &cfg.inputs.features {
        for r in read_feature_file(path)? {
            if !r.row.target.is_finite() {
                return Err(CliError::input(path, "training rows need a finite target column"));
            }
            rows.push(r.row);
        }
    }
    let forest = fit(&rows, &cfg.forest)?;
    let holdout = holdout_rmse(&rows, &cfg.forest)?;
    let doc = ModelDocument::new(forest, holdout);
    let json = doc.to_json()?;
    let mut out = output_dir(common, &cfg)?;
    out.write("model.json", doc.forest.trees.len(), |w| {
        use std::io::Write;
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")
    })?;
    out.write("importance.csv", doc.importance.importance.len(), |w| {
        write_importance_csv(w, &doc.importance)
    })?;
    out.write("train_metrics.csv", 3, |w| {
        use std::io::Write;
        writeln!(w, "metric,value")?;
        writeln!(w, "rows,{}", rows.len())?;
        writeln!(w, "oob_rmse,{}", fmt_opt(doc.importance.oob_rmse))?;
        writeln!(w, "holdout_rmse,{}", fmt_opt(doc.holdout_rmse))
    })?;
    finish(
        &out,
        &cfg,
        ManifestParts {
            command: "train",
            seed: Some(cfg.forest.seed),
            simulated_duration: None,
            inputs: cfg.inputs.features.clone(),
            started,
        },
    )?;
    println!(
        "rows={} oob_rmse={} holdout_rmse={}",
        rows.len(),
        fmt_opt(doc.importance.oob_rmse),
        fmt_opt(doc.holdout_rmse)
    );
    Ok(Outcome::Ok)
}

pub fn predict(common: &Common, model: Option<PathBuf>, features: Option<PathBuf>) -> Result<Outcome, CliError> {
    let started = Instant::now();
    let mut cfg = RunConfig::load_or_default(common.config.as_deref())?;
    if model.is_some() {
        cfg.inputs.model = model;
    }
    if let Some(f) = features {
        cfg.inputs.features = vec![f];
    }
    let model_path = cfg
        .inputs
        .model
        .clone()
        .ok_or_else(|| CliError::Usage("predict needs --model or inputs.model".into()))?;
    let [feature_path] = cfg.inputs.features.as_slice() else {
        return Err(CliError::Usage("predict needs exactly one feature CSV".into()));
    };
    let text = std::fs::read_to_string(&model_path).map_err(|e| CliError::io(&model_path, e))?;
    let doc = ModelDocument::from_json(&text).map_err(|e| CliError::input(&model_path, e))?;
    let rows = read_feature_file(feature_path)?;
    let predictions = rows
        .iter()
        .map(|r| bridge_twin::ml::predict(&doc.forest, &r.row.features))
        .collect::<Result<Vec<f64>, MlError>>()?;
    let mut out = output_dir(common, &cfg)?;
    out.write("predictions.csv", rows.len(), |w| {
        use std::io::Write;
        writeln!(w, "window_start,window_end,predicted_score_increment,alert")?;
        for (r, p) in rows.iter().zip(&predictions) {
            writeln!(
                w,
                "{},{},{},{}",
                r.window_start,
                r.window_end,
                fmt_f64(*p),
                Alert::from_score(*p)
            )?;
        }
        Ok(())
    })?;
    finish(
        &out,
        &cfg,
        ManifestParts {
            command: "predict",
            seed: None,
            simulated_duration: None,
            inputs: vec![model_path, feature_path.clone()],
            started,
        },
    )?;
    println!("predicted {} windows", predictions.len());
    Ok(Outcome::Ok)
}
