//! Detection and weather log ingestion, synthetic demand, and the
//! observation-to-density mapping with EMA stabilization.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_f64;

pub const DETECTION_CSV_HEADER: &str = "timestamp,class,x,y,w,h,confidence";
pub const WEATHER_CSV_HEADER: &str = "timestamp,temp_c,precip_mmh,wind_ms";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: u64,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("line {line}: timestamp {timestamp} is not after previous frame timestamp {previous}")]
    NonMonotone { line: u64, timestamp: i64, previous: i64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error("no weather records available")]
    EmptyWeather,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vehicle class as reported by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Truck,
    Bus,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 3] = [VehicleClass::Car, VehicleClass::Truck, VehicleClass::Bus];

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::Truck => "truck",
            VehicleClass::Bus => "bus",
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(VehicleClass::Car),
            "truck" => Ok(VehicleClass::Truck),
            "bus" => Ok(VehicleClass::Bus),
            other => Err(format!("unknown vehicle class `{other}`")),
        }
    }
}

/// Axis-aligned bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class: VehicleClass,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Detection {
    fn validate(&self) -> Result<(), (&'static str, String)> {
        let b = &self.bbox;
        for (name, v) in [("x", b.x), ("y", b.y)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err((name, format!("must be a non-negative number, got {v}")));
            }
        }
        for (name, v) in [("w", b.width), ("h", b.height)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((name, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(("confidence", format!("must lie in [0, 1], got {}", self.confidence)));
        }
        Ok(())
    }
}

/// All detections reported for one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub timestamp: i64,
    pub detections: Vec<Detection>,
}

impl DetectionFrame {
    pub fn vehicle_count(&self) -> usize {
        self.detections.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    Csv,
    Jsonl,
}

impl FromStr for LogFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(LogFormat::Csv),
            "jsonl" => Ok(LogFormat::Jsonl),
            other => Err(format!("unknown log format `{other}` (expected csv or jsonl)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: i64,
    pub temperature: f64,
    pub precipitation: f64,
    pub wind_speed: f64,
}

/// Per-class vehicle tallies for one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub car: u32,
    pub truck: u32,
    pub bus: u32,
}

impl ClassCounts {
    pub fn total(&self) -> u32 {
        self.car + self.truck + self.bus
    }

    pub fn get(&self, class: VehicleClass) -> u32 {
        match class {
            VehicleClass::Car => self.car,
            VehicleClass::Truck => self.truck,
            VehicleClass::Bus => self.bus,
        }
    }

    pub fn add(&mut self, class: VehicleClass, n: u32) {
        match class {
            VehicleClass::Car => self.car += n,
            VehicleClass::Truck => self.truck += n,
            VehicleClass::Bus => self.bus += n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedDensity {
    pub timestamp: i64,
    pub rho_raw: f64,
    pub rho_stable: f64,
    pub vehicle_count: u32,
    pub class_counts: ClassCounts,
    /// False when the frame was missing and the stable density is held.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    /// Effective monitored length of the deck segment, m.
    pub effective_length: f64,
    pub min_confidence: f64,
    pub ema_alpha: f64,
    /// Nominal camera cadence, s. Slots without a frame are treated as dropped.
    pub frame_interval: i64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            effective_length: 100.0,
            min_confidence: 0.25,
            ema_alpha: 0.3,
            frame_interval: 1,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.effective_length > 0.0 && self.effective_length.is_finite()) {
            return Err(IngestError::Config("segment.effective_length must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(IngestError::Config("segment.min_confidence must lie in [0, 1]".into()));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(IngestError::Config("segment.ema_alpha must lie in (0, 1]".into()));
        }
        if self.frame_interval < 1 {
            return Err(IngestError::Config("segment.frame_interval must be >= 1 s".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Detection logs

fn field<T: FromStr>(raw: &str, line: u64, name: &'static str) -> Result<T, IngestError>
where
    T::Err: fmt::Display,
{
    raw.trim().parse::<T>().map_err(|e| IngestError::Field {
        line,
        field: name,
        message: format!("cannot parse `{raw}`: {e}"),
    })
}

/// Appends a detection to the frame list, opening a new frame when the
/// timestamp advances.
fn push_detection(
    frames: &mut Vec<DetectionFrame>,
    timestamp: i64,
    detection: Option<Detection>,
    line: u64,
) -> Result<(), IngestError> {
    match frames.last_mut() {
        Some(last) if last.timestamp == timestamp => {
            if let Some(d) = detection {
                last.detections.push(d);
            }
            Ok(())
        }
        Some(last) if last.timestamp > timestamp => Err(IngestError::NonMonotone {
            line,
            timestamp,
            previous: last.timestamp,
        }),
        _ => {
            frames.push(DetectionFrame {
                timestamp,
                detections: detection.into_iter().collect(),
            });
            Ok(())
        }
    }
}

pub fn parse_detection_log<R: Read>(input: R, format: LogFormat) -> Result<Vec<DetectionFrame>, IngestError> {
    match format {
        LogFormat::Csv => parse_detection_csv(input),
        LogFormat::Jsonl => parse_detection_jsonl(input),
    }
}

fn parse_detection_csv<R: Read>(input: R) -> Result<Vec<DetectionFrame>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut frames = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            let header: Vec<&str> = record.iter().collect();
            if header.join(",") != DETECTION_CSV_HEADER {
                return Err(IngestError::Row {
                    line,
                    message: format!("expected header `{DETECTION_CSV_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        if record.len() != 7 {
            return Err(IngestError::Row {
                line,
                message: format!("expected 7 fields, found {}", record.len()),
            });
        }
        let timestamp: i64 = field(&record[0], line, "timestamp")?;
        // A row with an empty class marks a frame with no detections.
        let detection = if record[1].is_empty() {
            if record.iter().skip(2).any(|f| !f.is_empty()) {
                return Err(IngestError::Field {
                    line,
                    field: "class",
                    message: "empty-frame marker rows must leave all detection fields empty".into(),
                });
            }
            None
        } else {
            let d = Detection {
                class: field(&record[1], line, "class")?,
                bbox: BoundingBox {
                    x: field(&record[2], line, "x")?,
                    y: field(&record[3], line, "y")?,
                    width: field(&record[4], line, "w")?,
                    height: field(&record[5], line, "h")?,
                },
                confidence: field(&record[6], line, "confidence")?,
            };
            d.validate()
                .map_err(|(field, message)| IngestError::Field { line, field, message })?;
            Some(d)
        };
        push_detection(&mut frames, timestamp, detection, line)?;
    }
    Ok(frames)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonDetection {
    c: String,
    b: [f64; 4],
    p: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonFrame {
    t: i64,
    det: Vec<JsonDetection>,
}

fn parse_detection_jsonl<R: Read>(input: R) -> Result<Vec<DetectionFrame>, IngestError> {
    let reader = std::io::BufReader::new(input);
    let mut frames: Vec<DetectionFrame> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonFrame = serde_json::from_str(&line).map_err(|e| IngestError::Row {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(last) = frames.last() {
            if raw.t <= last.timestamp {
                return Err(IngestError::NonMonotone {
                    line: line_no,
                    timestamp: raw.t,
                    previous: last.timestamp,
                });
            }
        }
        let mut detections = Vec::with_capacity(raw.det.len());
        for jd in raw.det {
            let class = jd.c.parse().map_err(|message| IngestError::Field {
                line: line_no,
                field: "c",
                message,
            })?;
            let d = Detection {
                class,
                bbox: BoundingBox {
                    x: jd.b[0],
                    y: jd.b[1],
                    width: jd.b[2],
                    height: jd.b[3],
                },
                confidence: jd.p,
            };
            d.validate().map_err(|(field, message)| IngestError::Field {
                line: line_no,
                field,
                message,
            })?;
            detections.push(d);
        }
        frames.push(DetectionFrame {
            timestamp: raw.t,
            detections,
        });
    }
    Ok(frames)
}

pub fn write_detection_log<W: Write>(mut out: W, frames: &[DetectionFrame], format: LogFormat) -> std::io::Result<()> {
    match format {
        LogFormat::Csv => {
            writeln!(out, "{DETECTION_CSV_HEADER}")?;
            for frame in frames {
                if frame.detections.is_empty() {
                    writeln!(out, "{},,,,,,", frame.timestamp)?;
                }
                for d in &frame.detections {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        frame.timestamp,
                        d.class,
                        fmt_f64(d.bbox.x),
                        fmt_f64(d.bbox.y),
                        fmt_f64(d.bbox.width),
                        fmt_f64(d.bbox.height),
                        fmt_f64(d.confidence)
                    )?;
                }
            }
        }
        LogFormat::Jsonl => {
            for frame in frames {
                let jf = JsonFrame {
                    t: frame.timestamp,
                    det: frame
                        .detections
                        .iter()
                        .map(|d| JsonDetection {
                            c: d.class.as_str().to_string(),
                            b: [d.bbox.x, d.bbox.y, d.bbox.width, d.bbox.height],
                            p: d.confidence,
                        })
                        .collect(),
                };
                serde_json::to_writer(&mut out, &jf)?;
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Observation -> density

pub fn map_to_density(frame: &DetectionFrame, prev: Option<&ObservedDensity>, cfg: &SegmentConfig) -> ObservedDensity {
    let mut class_counts = ClassCounts::default();
    for d in frame.detections.iter().filter(|d| d.confidence >= cfg.min_confidence) {
        class_counts.add(d.class, 1);
    }
    let vehicle_count = class_counts.total();
    let rho_raw = f64::from(vehicle_count) / cfg.effective_length;
    let rho_stable = match prev {
        Some(p) => cfg.ema_alpha * rho_raw + (1.0 - cfg.ema_alpha) * p.rho_stable,
        None => rho_raw,
    };
    ObservedDensity {
        timestamp: frame.timestamp,
        rho_raw,
        rho_stable,
        vehicle_count,
        class_counts,
        valid: true,
    }
}

/// Hold-last-value policy for a dropped frame.
pub fn handle_missing_frame(prev: &ObservedDensity, timestamp: i64) -> ObservedDensity {
    ObservedDensity {
        timestamp,
        rho_raw: 0.0,
        rho_stable: prev.rho_stable,
        vehicle_count: 0,
        class_counts: ClassCounts::default(),
        valid: false,
    }
}

/// Maps a frame log onto the regular camera cadence, filling gaps with held
/// (invalid) observations. Frames off the cadence grid are snapped to the
/// slot that contains them.
pub fn observe_series(frames: &[DetectionFrame], cfg: &SegmentConfig) -> Vec<ObservedDensity> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let start = first.timestamp;
    let end = frames.last().map_or(start, |f| f.timestamp);
    let step = cfg.frame_interval;
    let slots = ((end - start) / step + 1) as usize;
    let mut out: Vec<ObservedDensity> = Vec::with_capacity(slots);
    let mut next_frame = frames.iter().peekable();
    for k in 0..slots {
        let t = start + k as i64 * step;
        let mut hit = None;
        while let Some(f) = next_frame.peek() {
            if f.timestamp < t + step {
                hit = Some(*f);
                next_frame.next();
            } else {
                break;
            }
        }
        let obs = match (hit, out.last()) {
            (Some(f), prev) => {
                let mut o = map_to_density(f, prev, cfg);
                o.timestamp = t;
                o
            }
            (None, Some(prev)) => handle_missing_frame(prev, t),
            // The first slot always holds the first frame.
            (None, None) => unreachable!("first slot always contains a frame"),
        };
        out.push(obs);
    }
    out
}

// ---------------------------------------------------------------------------
// Synthetic demand

/// Fractions of arrivals per class; must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMix {
    pub car: f64,
    pub truck: f64,
    pub bus: f64,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self {
            car: 0.78,
            truck: 0.18,
            bus: 0.04,
        }
    }
}

/// Piecewise-constant arrival-rate profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandProfile {
    /// veh/s outside the peak window
    pub base_rate: f64,
    /// veh/s inside the peak window
    pub peak_rate: f64,
    /// Peak window as offsets from the start of the run, s: [start, end).
    pub peak_start: f64,
    pub peak_end: f64,
    pub class_mix: ClassMix,
    /// Multiplier applied to both rates.
    pub scale: f64,
    pub start_timestamp: i64,
    pub frame_interval: i64,
}

impl Default for DemandProfile {
    fn default() -> Self {
        Self {
            base_rate: 0.5,
            peak_rate: 1.2,
            peak_start: 1200.0,
            peak_end: 2400.0,
            class_mix: ClassMix::default(),
            scale: 1.0,
            start_timestamp: 1_700_000_000,
            frame_interval: 1,
        }
    }
}

impl DemandProfile {
    pub fn validate(&self) -> Result<(), IngestError> {
        for (name, v) in [
            ("base_rate", self.base_rate),
            ("peak_rate", self.peak_rate),
            ("scale", self.scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(IngestError::Config(format!("demand.{name} must be >= 0")));
            }
        }
        let m = self.class_mix;
        if [m.car, m.truck, m.bus].iter().any(|f| !(*f >= 0.0)) {
            return Err(IngestError::Config("demand.class_mix fractions must be >= 0".into()));
        }
        let sum = m.car + m.truck + m.bus;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IngestError::Config(format!(
                "demand.class_mix must sum to 1, got {sum}"
            )));
        }
        if self.frame_interval < 1 {
            return Err(IngestError::Config("demand.frame_interval must be >= 1 s".into()));
        }
        Ok(())
    }

    /// Arrival rate at `offset` seconds into the run, veh/s.
    pub fn rate_at(&self, offset: f64) -> f64 {
        let r = if offset >= self.peak_start && offset < self.peak_end {
            self.peak_rate
        } else {
            self.base_rate
        };
        r * self.scale
    }
}

/// Poisson variate by CDF inversion from a single uniform, so that counts
/// are monotone in `lambda` for a fixed `u`.
fn poisson_inverse(lambda: f64, u: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= lambda / f64::from(k);
        cdf += p;
    }
    k
}

const MAX_INVERSION_LAMBDA: f64 = 200.0;

/// Generates one frame per `frame_interval` holding the vehicles that
/// entered the segment during that interval.
pub fn generate_synthetic_traffic(
    profile: &DemandProfile,
    duration: f64,
    seed: u64,
) -> Result<Vec<DetectionFrame>, IngestError> {
    profile.validate()?;
    if !(duration > 0.0) {
        return Err(IngestError::Config("duration must be > 0".into()));
    }
    // Counts and vehicle attributes draw from separate streams so that a
    // higher rate only ever adds vehicles to a frame.
    let mut count_rng = ChaCha8Rng::seed_from_u64(seed);
    count_rng.set_stream(0);
    let mut attr_rng = ChaCha8Rng::seed_from_u64(seed);
    attr_rng.set_stream(1);

    let step = profile.frame_interval;
    let n_frames = (duration / step as f64).ceil() as usize;
    let mix = profile.class_mix;
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let offset = (k as i64 * step) as f64;
        let lambda = profile.rate_at(offset) * step as f64;
        let chunks = (lambda / MAX_INVERSION_LAMBDA).ceil().max(1.0) as u32;
        let mut count = 0u32;
        for _ in 0..chunks {
            let u: f64 = count_rng.random();
            count += poisson_inverse(lambda / f64::from(chunks), u);
        }
        let mut detections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let u: f64 = attr_rng.random();
            let class = if u < mix.car {
                VehicleClass::Car
            } else if u < mix.car + mix.truck {
                VehicleClass::Truck
            } else {
                VehicleClass::Bus
            };
            let (w, h) = match class {
                VehicleClass::Car => (40.0, 30.0),
                VehicleClass::Truck => (110.0, 45.0),
                VehicleClass::Bus => (95.0, 42.0),
            };
            detections.push(Detection {
                class,
                bbox: BoundingBox {
                    x: (attr_rng.random::<f64>() * 1800.0).floor(),
                    y: (attr_rng.random::<f64>() * 1000.0).floor(),
                    width: w,
                    height: h,
                },
                confidence: 0.5 + 0.49 * attr_rng.random::<f64>(),
            });
        }
        frames.push(DetectionFrame {
            timestamp: profile.start_timestamp + k as i64 * step,
            detections,
        });
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Weather

pub fn parse_weather_log<R: Read>(input: R) -> Result<Vec<WeatherRecord>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut records = Vec::new();
    let mut saw_header = false;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if !saw_header {
            let header: Vec<&str> = record.iter().collect();
            if header.join(",") != WEATHER_CSV_HEADER {
                return Err(IngestError::Row {
                    line,
                    message: format!("expected header `{WEATHER_CSV_HEADER}`"),
                });
            }
            saw_header = true;
            continue;
        }
        let rec = WeatherRecord {
            timestamp: field(&record[0], line, "timestamp")?,
            temperature: field(&record[1], line, "temp_c")?,
            precipitation: field(&record[2], line, "precip_mmh")?,
            wind_speed: field(&record[3], line, "wind_ms")?,
        };
        if !(rec.precipitation >= 0.0) {
            return Err(IngestError::Field {
                line,
                field: "precip_mmh",
                message: format!("must be >= 0, got {}", rec.precipitation),
            });
        }
        if !(rec.wind_speed >= 0.0) {
            return Err(IngestError::Field {
                line,
                field: "wind_ms",
                message: format!("must be >= 0, got {}", rec.wind_speed),
            });
        }
        records.push(rec);
    }
    records.sort_by_key(|r| r.timestamp);
    Ok(records)
}

pub fn write_weather_log<W: Write>(mut out: W, records: &[WeatherRecord]) -> std::io::Result<()> {
    writeln!(out, "{WEATHER_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{}",
            r.timestamp,
            fmt_f64(r.temperature),
            fmt_f64(r.precipitation),
            fmt_f64(r.wind_speed)
        )?;
    }
    Ok(())
}

/// Step-hold lookup: the latest record at or before `timestamp`, or the
/// earliest record when the query precedes them all.
pub fn align_weather(records: &[WeatherRecord], timestamp: i64) -> Result<WeatherRecord, IngestError> {
    let first = records.first().ok_or(IngestError::EmptyWeather)?;
    let idx = records.partition_point(|r| r.timestamp <= timestamp);
    Ok(if idx == 0 { *first } else { records[idx - 1] })
}

/// Class tallies over a set of observations.
pub fn total_class_counts<'a, I>(obs: I) -> BTreeMap<VehicleClass, u64>
where
    I: IntoIterator<Item = &'a ObservedDensity>,
{
    let mut out: BTreeMap<VehicleClass, u64> = VehicleClass::ALL.iter().map(|c| (*c, 0)).collect();
    for o in obs {
        for c in VehicleClass::ALL {
            *out.entry(c).or_default() += u64::from(o.class_counts.get(c));
        }
    }
    out
}
