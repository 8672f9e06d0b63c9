//! Random forest regression on per-window pipeline features.
//!
//! Trees are CART regressors grown on bootstrap resamples with
//! sum-of-squared-error splits over a random subset of features. Each tree
//! draws from its own RNG stream derived from the master seed, so trees fit
//! in parallel and still reproduce the serial result bit for bit.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::EnvState;
use crate::fatigue::{series_damage, SNCurve, StressSample};
use crate::ingestion::ClassCounts;
use crate::numfmt::fmt_f64;
use crate::seeding::splitmix64;

/// Feature order used by every row, model and CSV.
pub const FEATURE_NAMES: [&str; 7] = [
    "mean_density",
    "peak_density",
    "truck_fraction",
    "shock_count",
    "mean_m_env",
    "ft_cycles",
    "mean_speed_ratio",
];

pub const MODEL_FORMAT: &str = "bridge-twin-forest";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MlError {
    #[error("need at least 2 training rows, got {0}")]
    TooFewRows(usize),
    #[error("rows must have at least one feature")]
    NoFeatures,
    #[error("feature vector has {got} values, model expects {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("invalid forest configuration: {0}")]
    Config(String),
    #[error("no samples to assemble features from")]
    EmptyOverlap,
    #[error("feature series misaligned: {0}")]
    Misaligned(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("model schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub features: Vec<f64>,
    /// Fatigue-score increment over the row's window.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ⌈p/3⌉.
    pub m_try: Option<usize>,
    pub seed: u64,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            m_try: None,
            seed: 42,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self, n_features: usize) -> Result<(), MlError> {
        if self.n_trees < 1 {
            return Err(MlError::Config("n_trees must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(MlError::Config("max_depth must be >= 1".into()));
        }
        if self.min_leaf < 1 {
            return Err(MlError::Config("min_leaf must be >= 1".into()));
        }
        if let Some(m) = self.m_try {
            if m < 1 || m > n_features {
                return Err(MlError::Config(format!("m_try must lie in [1, {n_features}]")));
            }
        }
        Ok(())
    }

    pub fn features_per_split(&self, n_features: usize) -> usize {
        self.m_try.unwrap_or_else(|| n_features.div_ceil(3)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        impurity_decrease: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        prediction: f64,
        samples: usize,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { prediction, .. } => return *prediction,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    fn accumulate_importance(&self, acc: &mut [f64]) {
        if let TreeNode::Split {
            feature,
            impurity_decrease,
            left,
            right,
            ..
        } = self
        {
            acc[*feature] += impurity_decrease;
            left.accumulate_importance(acc);
            right.accumulate_importance(acc);
        }
    }

    pub fn split_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.split_count() + right.split_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub config: ForestConfig,
    pub trees: Vec<TreeNode>,
    pub oob_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// One entry per feature; sums to 1 when any split exists, else all 0.
    pub importance: Vec<f64>,
    pub oob_rmse: Option<f64>,
}

/// Seed for tree `index` derived from the master seed.
pub fn tree_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64 + 1))
}

/// Order-independent mean of the targets, kept inside their hull.
fn leaf_value(targets: &mut [f64]) -> f64 {
    targets.sort_by(f64::total_cmp);
    let (lo, hi) = (targets[0], targets[targets.len() - 1]);
    if lo == hi {
        return lo;
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    mean.clamp(lo, hi)
}

struct TreeBuilder<'a> {
    rows: &'a [FeatureRow],
    n_features: usize,
    m_try: usize,
    max_depth: usize,
    min_leaf: usize,
    rng: ChaCha8Rng,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let mut targets: Vec<f64> = idx.iter().map(|&i| self.rows[i].target).collect();
        let prediction = leaf_value(&mut targets);
        let constant = targets.first() == targets.last();
        let leaf = TreeNode::Leaf {
            prediction,
            samples: idx.len(),
        };
        if constant || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
            return leaf;
        }
        let features = self.sample_features();
        match self.best_split(&idx, &features) {
            Some(best) => TreeNode::Split {
                feature: best.feature,
                threshold: best.threshold,
                impurity_decrease: best.gain,
                left: Box::new(self.build(best.left, depth + 1)),
                right: Box::new(self.build(best.right, depth + 1)),
            },
            None => leaf,
        }
    }

    /// Partial Fisher-Yates draw of `m_try` distinct features, ascending.
    fn sample_features(&mut self) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.n_features).collect();
        if self.m_try < self.n_features {
            for k in 0..self.m_try {
                let j = self.rng.random_range(k..self.n_features);
                all.swap(k, j);
            }
            all.truncate(self.m_try);
            all.sort_unstable();
        }
        all
    }

    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
        for &f in features {
            order.clear();
            order.extend(idx.iter().map(|&i| (self.rows[i].features[f], self.rows[i].target, i)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let total: f64 = order.iter().map(|o| o.1).sum();
            let base = total * total / n as f64;
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += order[k - 1].1;
                if k < self.min_leaf || n - k < self.min_leaf {
                    continue;
                }
                let (a, b) = (order[k - 1].0, order[k].0);
                if a == b {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64 - base;
                if gain > 0.0 && best.is_none_or(|(_, _, g)| gain > g) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((f, threshold, gain));
                }
            }
        }
        let (feature, threshold, gain) = best?;
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i].features[feature] <= threshold);
        Some(BestSplit {
            feature,
            threshold,
            gain,
            left,
            right,
        })
    }
}

struct FittedTree {
    tree: TreeNode,
    in_bag: Vec<bool>,
}

fn fit_tree(rows: &[FeatureRow], n_features: usize, cfg: &ForestConfig, index: usize) -> FittedTree {
    let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(cfg.seed, index));
    let n = rows.len();
    let mut in_bag = vec![!cfg.bootstrap; n];
    let idx: Vec<usize> = if cfg.bootstrap {
        (0..n)
            .map(|_| {
                let i = rng.random_range(0..n);
                in_bag[i] = true;
                i
            })
            .collect()
    } else {
        (0..n).collect()
    };
    let mut builder = TreeBuilder {
        rows,
        n_features,
        m_try: cfg.features_per_split(n_features),
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        rng,
    };
    FittedTree {
        tree: builder.build(idx, 0),
        in_bag,
    }
}

pub fn fit(rows: &[FeatureRow], cfg: &ForestConfig) -> Result<Forest, MlError> {
    if rows.len() < 2 {
        return Err(MlError::TooFewRows(rows.len()));
    }
    let p = rows[0].features.len();
    if p == 0 {
        return Err(MlError::NoFeatures);
    }
    if let Some(bad) = rows.iter().find(|r| r.features.len() != p) {
        return Err(MlError::FeatureLength {
            expected: p,
            got: bad.features.len(),
        });
    }
    cfg.validate(p)?;
    let fitted: Vec<FittedTree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|i| fit_tree(rows, p, cfg, i))
        .collect();

    let oob_rmse = if cfg.bootstrap {
        let mut sq = 0.0;
        let mut counted = 0usize;
        for (r, row) in rows.iter().enumerate() {
            let preds: Vec<f64> = fitted
                .iter()
                .filter(|t| !t.in_bag[r])
                .map(|t| t.tree.predict(&row.features))
                .collect();
            if !preds.is_empty() {
                let e = mean_in_hull(&preds) - row.target;
                sq += e * e;
                counted += 1;
            }
        }
        (counted > 0).then(|| (sq / counted as f64).sqrt())
    } else {
        None
    };
    Ok(Forest {
        n_features: p,
        config: *cfg,
        trees: fitted.into_iter().map(|t| t.tree).collect(),
        oob_rmse,
    })
}

fn mean_in_hull(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return lo;
    }
    (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi)
}

pub fn predict(forest: &Forest, features: &[f64]) -> Result<f64, MlError> {
    if features.len() != forest.n_features {
        return Err(MlError::FeatureLength {
            expected: forest.n_features,
            got: features.len(),
        });
    }
    let preds: Vec<f64> = forest.trees.iter().map(|t| t.predict(features)).collect();
    Ok(mean_in_hull(&preds))
}

pub fn importance(forest: &Forest) -> ImportanceReport {
    let mut acc = vec![0.0; forest.n_features];
    for t in &forest.trees {
        t.accumulate_importance(&mut acc);
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        for v in &mut acc {
            *v /= total;
        }
    }
    ImportanceReport {
        importance: acc,
        oob_rmse: forest.oob_rmse,
    }
}

pub fn rmse(forest: &Forest, rows: &[FeatureRow]) -> Result<f64, MlError> {
    let mut sq = 0.0;
    for r in rows {
        let e = predict(forest, &r.features)? - r.target;
        sq += e * e;
    }
    Ok((sq / rows.len().max(1) as f64).sqrt())
}

/// RMSE on the most recent 20% of windows for a forest fit on the rest.
pub fn holdout_rmse(rows: &[FeatureRow], cfg: &ForestConfig) -> Result<Option<f64>, MlError> {
    let split = rows.len() * 4 / 5;
    if split < 2 || split == rows.len() {
        return Ok(None);
    }
    let forest = fit(&rows[..split], cfg)?;
    Ok(Some(rmse(&forest, &rows[split..])?))
}

// ---------------------------------------------------------------------------
// Feature assembly

/// Aligned per-sample pipeline outputs.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSource<'a> {
    pub timestamps: &'a [i64],
    pub mean_density: &'a [f64],
    pub peak_density: &'a [f64],
    pub mean_speed: &'a [f64],
    pub class_counts: &'a [ClassCounts],
    pub valid: &'a [bool],
    pub env: &'a [EnvState],
    /// Simulated stress samples, carrying m_env.
    pub stress: &'a [StressSample],
    /// Times of simulated shock events.
    pub shock_times: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedRow {
    pub window_start: i64,
    pub window_end: i64,
    pub row: FeatureRow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledFeatures {
    pub rows: Vec<WindowedRow>,
    /// Windows dropped because they contained an invalid observation.
    pub dropped: usize,
}

/// One row per consecutive window of `window` seconds (the trailing window
/// may be partial). Aggregates: mean and peak density, truck share of
/// counted vehicles, shock count, mean M_env, peak freeze-thaw count, mean
/// speed over v_f. Target: 100 · D_window / D_ref, with D_window from
/// rainflow on the window's own stress samples.
pub fn assemble_features(
    src: &FeatureSource<'_>,
    window: i64,
    free_flow_speed: f64,
    sn: &SNCurve,
    d_ref: f64,
) -> Result<AssembledFeatures, MlError> {
    let n = src.timestamps.len();
    if n == 0 {
        return Err(MlError::EmptyOverlap);
    }
    let lens = [
        src.mean_density.len(),
        src.peak_density.len(),
        src.mean_speed.len(),
        src.class_counts.len(),
        src.valid.len(),
        src.env.len(),
        src.stress.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(MlError::Misaligned(format!(
            "expected {n} samples per series, got {lens:?}"
        )));
    }
    if window < 1 {
        return Err(MlError::Config("feature window must be >= 1 s".into()));
    }
    let t0 = src.timestamps[0];
    let mut rows = Vec::new();
    let mut dropped = 0;
    let mut lo = 0;
    while lo < n {
        let k = (src.timestamps[lo] - t0) / window;
        let (start, end) = (t0 + k * window, t0 + (k + 1) * window);
        let hi = lo + src.timestamps[lo..].partition_point(|&t| t < end);
        if src.valid[lo..hi].iter().any(|v| !v) {
            dropped += 1;
            lo = hi;
            continue;
        }
        let m = (hi - lo) as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / m;
        let counts = src.class_counts[lo..hi]
            .iter()
            .fold(ClassCounts::default(), |mut acc, c| {
                acc.car += c.car;
                acc.truck += c.truck;
                acc.bus += c.bus;
                acc
            });
        let truck_fraction = if counts.total() > 0 {
            f64::from(counts.truck) / f64::from(counts.total())
        } else {
            0.0
        };
        let shock_count = src
            .shock_times
            .iter()
            .filter(|&&t| t >= start as f64 && t < end as f64)
            .count() as f64;
        let env = &src.env[lo..hi];
        let mean_m_env = env.iter().map(|e| e.m_env).sum::<f64>() / m;
        let ft_cycles = env.iter().map(|e| e.freeze_thaw_cycles_in_window).max().unwrap_or(0);
        let speed_ratio = mean(&src.mean_speed[lo..hi]) / free_flow_speed;
        let damage = series_damage(&src.stress[lo..hi], sn).total;
        rows.push(WindowedRow {
            window_start: start,
            window_end: end,
            row: FeatureRow {
                features: vec![
                    mean(&src.mean_density[lo..hi]),
                    src.peak_density[lo..hi].iter().copied().fold(0.0, f64::max),
                    truck_fraction,
                    shock_count,
                    mean_m_env,
                    f64::from(ft_cycles),
                    speed_ratio,
                ],
                target: 100.0 * damage / d_ref,
            },
        });
        lo = hi;
    }
    Ok(AssembledFeatures { rows, dropped })
}

// ---------------------------------------------------------------------------
// Files

fn features_header(with_target: bool) -> String {
    let mut h = vec!["window_start", "window_end"];
    h.extend(FEATURE_NAMES);
    if with_target {
        h.push("target");
    }
    h.join(",")
}

pub fn write_features_csv<W: Write>(mut out: W, rows: &[WindowedRow]) -> std::io::Result<()> {
    writeln!(out, "{}", features_header(true))?;
    for r in rows {
        let feats: Vec<String> = r.row.features.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(
            out,
            "{},{},{},{}",
            r.window_start,
            r.window_end,
            feats.join(","),
            fmt_f64(r.row.target)
        )?;
    }
    Ok(())
}

/// Reads a feature CSV; the target column is optional (absent for
/// prediction inputs, in which case targets read as NaN).
pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<WindowedRow>, MlError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = Vec::new();
    let mut with_target = None;
    for rec in reader.records() {
        let rec = rec.map_err(|e| MlError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let Some(has_target) = with_target else {
            let header: Vec<&str> = rec.iter().collect();
            let header = header.join(",");
            with_target = if header == features_header(true) {
                Some(true)
            } else if header == features_header(false) {
                Some(false)
            } else {
                return Err(MlError::Schema(format!(
                    "feature header `{header}` does not match `{}`",
                    features_header(true)
                )));
            };
            continue;
        };
        let expected = 2 + FEATURE_NAMES.len() + usize::from(has_target);
        if rec.len() != expected {
            return Err(MlError::Csv {
                line,
                message: format!("expected {expected} fields, found {}", rec.len()),
            });
        }
        let num = |i: usize| -> Result<f64, MlError> {
            rec[i].trim().parse::<f64>().map_err(|e| MlError::Csv {
                line,
                message: format!("field {i}: {e}"),
            })
        };
        let int = |i: usize| -> Result<i64, MlError> {
            rec[i].trim().parse::<i64>().map_err(|e| MlError::Csv {
                line,
                message: format!("field {i}: {e}"),
            })
        };
        let features = (2..2 + FEATURE_NAMES.len()).map(num).collect::<Result<Vec<_>, _>>()?;
        if features.iter().any(|v| !v.is_finite()) {
            return Err(MlError::Csv {
                line,
                message: "features must be finite".into(),
            });
        }
        rows.push(WindowedRow {
            window_start: int(0)?,
            window_end: int(1)?,
            row: FeatureRow {
                features,
                target: if has_target { num(expected - 1)? } else { f64::NAN },
            },
        });
    }
    Ok(rows)
}

/// Versioned on-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub forest: Forest,
    pub importance: ImportanceReport,
    pub holdout_rmse: Option<f64>,
}

impl ModelDocument {
    pub fn new(forest: Forest, holdout_rmse: Option<f64>) -> Self {
        let importance = importance(&forest);
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            forest,
            importance,
            holdout_rmse,
        }
    }

    pub fn to_json(&self) -> Result<String, MlError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, MlError> {
        let doc: ModelDocument = serde_json::from_str(s)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(MlError::Schema(format!(
                "unsupported model `{}` v{}",
                doc.format, doc.version
            )));
        }
        if doc.feature_names != FEATURE_NAMES {
            return Err(MlError::Schema("model feature names differ from this build".into()));
        }
        Ok(doc)
    }
}

pub fn write_importance_csv<W: Write>(mut out: W, report: &ImportanceReport) -> std::io::Result<()> {
    writeln!(out, "feature,importance")?;
    for (name, v) in FEATURE_NAMES.iter().zip(&report.importance) {
        writeln!(out, "{name},{}", fmt_f64(*v))?;
    }
    Ok(())
}
