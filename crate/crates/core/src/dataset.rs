//! Detection streams, ground-truth logs, feature extraction, pairing,
//! normalization statistics and train/validation splitting.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::{normalize_lon, wrap_bearing, wrap_signed_deg, GeoError, GeoPoint};

/// Number of network inputs.
pub const NUM_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] =
    ["cx_n", "cy_n", "w_n", "h_n", "area_n", "aspect", "class_id"];

/// Default tolerance when pairing detections with ground truth, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.5;

pub const GROUND_TRUTH_HEADER: [&str; 7] = [
    "t",
    "distance_nm",
    "bearing_deg",
    "lat_deg",
    "lon_deg",
    "cam_lat_deg",
    "cam_lon_deg",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("feature {index} ({name}) has zero variance", name = FEATURE_NAMES[*index])]
    DegenerateFeature { index: usize },
    #[error("target {index} has zero variance")]
    DegenerateTarget { index: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("{0}")]
    Invalid(String),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One bounding-box observation. Pixel coordinates, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    pub t: f64,
    #[serde(rename = "class")]
    pub class_id: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    /// Carried through from the detector; never used as a feature.
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self, frame_w: u32, frame_h: u32) -> Result<(), String> {
        let all = [self.t, self.x, self.y, self.w, self.h, self.confidence];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value in detection".into());
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(format!("box size {}x{} must be positive", self.w, self.h));
        }
        if self.x < 0.0 || self.y < 0.0 {
            return Err(format!("box origin ({}, {}) is negative", self.x, self.y));
        }
        if self.x + self.w > f64::from(frame_w) || self.y + self.h > f64::from(frame_h) {
            return Err(format!(
                "box ({}, {}, {}, {}) exceeds frame {}x{}",
                self.x, self.y, self.w, self.h, frame_w, frame_h
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }
}

/// Header line of a detections JSONL stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    #[serde(rename = "type")]
    pub kind: String,
    pub frame_w: u32,
    pub frame_h: u32,
    pub source: String,
}

impl StreamHeader {
    pub fn new(frame_w: u32, frame_h: u32, source: impl Into<String>) -> Self {
        Self {
            kind: "header".into(),
            frame_w,
            frame_h,
            source: source.into(),
        }
    }
}

/// A parsed detections file: frame geometry plus detections in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStream {
    pub header: StreamHeader,
    pub detections: Vec<Detection>,
}

impl DetectionStream {
    pub fn frame_w(&self) -> u32 {
        self.header.frame_w
    }

    pub fn frame_h(&self) -> u32 {
        self.header.frame_h
    }
}

pub fn load_detections(path: &Path) -> Result<DetectionStream, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    read_detections(BufReader::new(file))
}

pub fn read_detections<R: BufRead>(reader: R) -> Result<DetectionStream, DatasetError> {
    let mut header: Option<StreamHeader> = None;
    let mut detections = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(hdr) = &header else {
            let h: StreamHeader = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: lineno,
                msg: format!("expected stream header: {e}"),
            })?;
            if h.kind != "header" {
                return Err(DatasetError::Parse {
                    line: lineno,
                    msg: format!("expected type \"header\", found {:?}", h.kind),
                });
            }
            if h.frame_w == 0 || h.frame_h == 0 {
                return Err(DatasetError::Validation {
                    line: lineno,
                    msg: "frame dimensions must be positive".into(),
                });
            }
            header = Some(h);
            continue;
        };
        let d: Detection = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        d.validate(hdr.frame_w, hdr.frame_h)
            .map_err(|msg| DatasetError::Validation { line: lineno, msg })?;
        if let Some(prev) = detections.last() {
            let prev: &Detection = prev;
            if d.t < prev.t || d.frame_index < prev.frame_index {
                return Err(DatasetError::Validation {
                    line: lineno,
                    msg: format!("time goes backwards ({} after {})", d.t, prev.t),
                });
            }
        }
        detections.push(d);
    }
    let header = header.ok_or_else(|| DatasetError::Parse {
        line: 1,
        msg: "missing stream header".into(),
    })?;
    Ok(DetectionStream { header, detections })
}

pub fn write_detections<W: Write>(stream: &DetectionStream, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &stream.header)?;
    out.write_all(b"\n")?;
    for d in &stream.detections {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRecord {
    pub t: f64,
    pub distance_nm: f64,
    pub bearing_deg: f64,
    pub vessel: GeoPoint,
    pub camera: GeoPoint,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthRow {
    t: f64,
    distance_nm: f64,
    bearing_deg: f64,
    lat_deg: f64,
    lon_deg: f64,
    cam_lat_deg: f64,
    cam_lon_deg: f64,
}

impl GroundTruthRow {
    fn into_record(self) -> Result<GroundTruthRecord, String> {
        let geo = |e: GeoError| e.to_string();
        if !self.t.is_finite() {
            return Err(format!("timestamp {} is not finite", self.t));
        }
        if !self.distance_nm.is_finite() || self.distance_nm < 0.0 {
            return Err(format!(
                "distance {} must be non-negative",
                self.distance_nm
            ));
        }
        if !self.bearing_deg.is_finite() || !(0.0..360.0).contains(&self.bearing_deg) {
            return Err(format!("bearing {} outside [0, 360)", self.bearing_deg));
        }
        Ok(GroundTruthRecord {
            t: self.t,
            distance_nm: self.distance_nm,
            bearing_deg: self.bearing_deg,
            vessel: GeoPoint::new(self.lat_deg, self.lon_deg).map_err(geo)?,
            camera: GeoPoint::new(self.cam_lat_deg, self.cam_lon_deg).map_err(geo)?,
        })
    }
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRecord>, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    read_ground_truth(file)
}

pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<GroundTruthRecord>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    for col in GROUND_TRUTH_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(DatasetError::Parse {
                line: 1,
                msg: format!("missing column {col:?}"),
            });
        }
    }

    let mut records: Vec<GroundTruthRecord> = Vec::new();
    for (i, row) in rdr.deserialize::<GroundTruthRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| DatasetError::Parse {
            line,
            msg: e.to_string(),
        })?;
        let rec = row
            .into_record()
            .map_err(|msg| DatasetError::Validation { line, msg })?;
        if let Some(prev) = records.last() {
            if rec.t <= prev.t {
                return Err(DatasetError::Validation {
                    line,
                    msg: format!("timestamp {} not after {}", rec.t, prev.t),
                });
            }
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_ground_truth<W: Write>(records: &[GroundTruthRecord], out: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for r in records {
        wtr.serialize(GroundTruthRow {
            t: r.t,
            distance_nm: r.distance_nm,
            bearing_deg: r.bearing_deg,
            lat_deg: r.vessel.lat_deg,
            lon_deg: r.vessel.lon_deg,
            cam_lat_deg: r.camera.lat_deg,
            cam_lon_deg: r.camera.lon_deg,
        })?;
    }
    if records.is_empty() {
        wtr.write_record(GROUND_TRUTH_HEADER)?;
    }
    wtr.flush()?;
    Ok(())
}

/// The seven network inputs, in order:
/// `(cx_n, cy_n, w_n, h_n, area_n, aspect, class_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn values(&self) -> &[f64; NUM_FEATURES] {
        &self.0
    }
}

/// Box geometry normalized by the frame size, plus area, aspect and class.
pub fn extract_features(d: &Detection, frame_w: f64, frame_h: f64) -> FeatureVector {
    let w_n = d.w / frame_w;
    let h_n = d.h / frame_h;
    FeatureVector([
        (d.x + d.w / 2.0) / frame_w,
        (d.y + d.h / 2.0) / frame_h,
        w_n,
        h_n,
        w_n * h_n,
        d.w / d.h,
        f64::from(d.class_id),
    ])
}

/// A feature vector with its supervised targets and the truth geometry it
/// was paired with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub t: f64,
    pub features: FeatureVector,
    pub target_distance_nm: f64,
    pub target_bearing_deg: f64,
    pub camera: GeoPoint,
    pub vessel: GeoPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub samples: Vec<LabeledSample>,
    pub dropped: usize,
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    a + (b - a) * frac
}

fn lerp_point(a: GeoPoint, b: GeoPoint, frac: f64) -> GeoPoint {
    let lat = lerp(a.lat_deg, b.lat_deg, frac);
    let lon = a.lon_deg + wrap_signed_deg(b.lon_deg - a.lon_deg) * frac;
    GeoPoint {
        lat_deg: lat,
        lon_deg: normalize_lon(lon).unwrap_or(a.lon_deg),
    }
}

/// Interpolates along the shorter arc between two bearings.
pub fn lerp_bearing(a_deg: f64, b_deg: f64, frac: f64) -> f64 {
    wrap_bearing(a_deg + wrap_signed_deg(b_deg - a_deg) * frac)
}

/// Ground truth at time `t`, linearly interpolated between the bracketing
/// records. `None` when the nearest record is more than `max_dt` away.
pub fn interpolate_truth(
    gts: &[GroundTruthRecord],
    t: f64,
    max_dt: f64,
) -> Option<GroundTruthRecord> {
    let idx = gts.partition_point(|g| g.t <= t);
    let lo = idx.checked_sub(1).map(|i| &gts[i]);
    let hi = gts.get(idx);
    let nearest = match (lo, hi) {
        (Some(l), Some(h)) => (t - l.t).min(h.t - t),
        (Some(l), None) => t - l.t,
        (None, Some(h)) => h.t - t,
        (None, None) => return None,
    };
    if nearest > max_dt {
        return None;
    }
    match (lo, hi) {
        (Some(l), _) if l.t == t => Some(*l),
        (Some(l), Some(h)) => {
            let frac = (t - l.t) / (h.t - l.t);
            Some(GroundTruthRecord {
                t,
                distance_nm: lerp(l.distance_nm, h.distance_nm, frac),
                bearing_deg: lerp_bearing(l.bearing_deg, h.bearing_deg, frac),
                vessel: lerp_point(l.vessel, h.vessel, frac),
                camera: lerp_point(l.camera, h.camera, frac),
            })
        }
        (Some(only), None) | (None, Some(only)) => Some(GroundTruthRecord { t, ..*only }),
        (None, None) => None,
    }
}

/// Pairs every detection with ground truth interpolated at its timestamp.
/// Detections farther than `max_dt` from any truth record are dropped.
pub fn pair_samples(stream: &DetectionStream, gts: &[GroundTruthRecord], max_dt: f64) -> Pairing {
    let (fw, fh) = (f64::from(stream.frame_w()), f64::from(stream.frame_h()));
    let mut samples = Vec::with_capacity(stream.detections.len());
    let mut dropped = 0;
    for d in &stream.detections {
        match interpolate_truth(gts, d.t, max_dt) {
            Some(gt) => samples.push(LabeledSample {
                t: d.t,
                features: extract_features(d, fw, fh),
                target_distance_nm: gt.distance_nm,
                target_bearing_deg: gt.bearing_deg,
                camera: gt.camera,
                vessel: gt.vessel,
            }),
            None => dropped += 1,
        }
    }
    Pairing { samples, dropped }
}

/// How the bearing target is presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BearingEncoding {
    /// Regress bearing in degrees directly: targets `(distance, bearing)`.
    #[default]
    Degrees,
    /// Regress `(distance, sin, cos)` and decode with atan2.
    Sincos,
}

impl BearingEncoding {
    pub fn target_dim(self) -> usize {
        match self {
            BearingEncoding::Degrees => 2,
            BearingEncoding::Sincos => 3,
        }
    }

    pub fn encode(self, distance_nm: f64, bearing_deg: f64) -> Vec<f64> {
        match self {
            BearingEncoding::Degrees => vec![distance_nm, bearing_deg],
            BearingEncoding::Sincos => {
                let (s, c) = bearing_deg.to_radians().sin_cos();
                vec![distance_nm, s, c]
            }
        }
    }

    /// Inverse of [`encode`](Self::encode). Degrees are returned unwrapped.
    pub fn decode(self, values: &[f64]) -> (f64, f64) {
        match self {
            BearingEncoding::Degrees => (values[0], values[1]),
            BearingEncoding::Sincos => (
                values[0],
                wrap_bearing(values[1].atan2(values[2]).to_degrees()),
            ),
        }
    }
}

impl std::str::FromStr for BearingEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "degrees" => Ok(BearingEncoding::Degrees),
            "sincos" => Ok(BearingEncoding::Sincos),
            other => Err(format!(
                "unknown bearing encoding {other:?} (expected degrees|sincos)"
            )),
        }
    }
}

/// What to do with a feature that is constant over the fitted samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Reject,
    /// Center the feature and leave its scale at 1.
    Passthrough,
}

/// Z-score statistics for features and encoded targets (population sd).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_mean: [f64; NUM_FEATURES],
    pub feature_sd: [f64; NUM_FEATURES],
    pub target_mean: Vec<f64>,
    pub target_sd: Vec<f64>,
    pub encoding: BearingEncoding,
    /// Features found constant at fit time (sd forced to 1).
    #[serde(default)]
    pub constant_features: Vec<usize>,
}

/// A sample in network units.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSample {
    pub features: [f64; NUM_FEATURES],
    pub targets: Vec<f64>,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn is_degenerate(mean: f64, sd: f64) -> bool {
    // also true for NaN
    sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0)
}

pub fn fit_norm_stats(
    samples: &[LabeledSample],
    encoding: BearingEncoding,
) -> Result<NormStats, DatasetError> {
    fit_norm_stats_with(samples, encoding, DegeneratePolicy::Reject)
}

pub fn fit_norm_stats_with(
    samples: &[LabeledSample],
    encoding: BearingEncoding,
    policy: DegeneratePolicy,
) -> Result<NormStats, DatasetError> {
    if samples.len() < 2 {
        return Err(DatasetError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut feature_mean = [0.0; NUM_FEATURES];
    let mut feature_sd = [0.0; NUM_FEATURES];
    let mut constant_features = Vec::new();
    for j in 0..NUM_FEATURES {
        let (m, sd) = mean_sd(samples.iter().map(|s| s.features.0[j]));
        feature_mean[j] = m;
        feature_sd[j] = sd;
        if is_degenerate(m, sd) {
            match policy {
                DegeneratePolicy::Reject => {
                    return Err(DatasetError::DegenerateFeature { index: j })
                }
                DegeneratePolicy::Passthrough => {
                    feature_sd[j] = 1.0;
                    constant_features.push(j);
                }
            }
        }
    }

    let encoded: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| encoding.encode(s.target_distance_nm, s.target_bearing_deg))
        .collect();
    let dim = encoding.target_dim();
    let mut target_mean = Vec::with_capacity(dim);
    let mut target_sd = Vec::with_capacity(dim);
    for k in 0..dim {
        let (m, sd) = mean_sd(encoded.iter().map(|e| e[k]));
        if is_degenerate(m, sd) {
            return Err(DatasetError::DegenerateTarget { index: k });
        }
        target_mean.push(m);
        target_sd.push(sd);
    }
    Ok(NormStats {
        feature_mean,
        feature_sd,
        target_mean,
        target_sd,
        encoding,
        constant_features,
    })
}

impl NormStats {
    pub fn target_dim(&self) -> usize {
        self.target_mean.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let dim = self.encoding.target_dim();
        if self.target_mean.len() != dim || self.target_sd.len() != dim {
            return Err(format!(
                "expected {dim} target statistics for {:?}",
                self.encoding
            ));
        }
        let all_sd = self.feature_sd.iter().chain(&self.target_sd);
        if all_sd.clone().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err("standard deviations must be finite and positive".into());
        }
        let all_mean = self.feature_mean.iter().chain(&self.target_mean);
        if all_mean.clone().any(|m| !m.is_finite()) {
            return Err("means must be finite".into());
        }
        Ok(())
    }

    pub fn normalize_features(&self, f: &FeatureVector) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| (f.0[j] - self.feature_mean[j]) / self.feature_sd[j])
    }

    pub fn normalize_targets(&self, distance_nm: f64, bearing_deg: f64) -> Vec<f64> {
        self.encoding
            .encode(distance_nm, bearing_deg)
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.target_mean[k]) / self.target_sd[k])
            .collect()
    }
}

pub fn apply_norm(stats: &NormStats, sample: &LabeledSample) -> NormalizedSample {
    NormalizedSample {
        features: stats.normalize_features(&sample.features),
        targets: stats.normalize_targets(sample.target_distance_nm, sample.target_bearing_deg),
    }
}

/// Maps normalized network outputs back to `(distance_nm, bearing_deg)`.
pub fn invert_norm(stats: &NormStats, outputs: &[f64]) -> (f64, f64) {
    let physical: Vec<f64> = outputs
        .iter()
        .enumerate()
        .map(|(k, v)| v * stats.target_sd[k] + stats.target_mean[k])
        .collect();
    stats.encoding.decode(&physical)
}

/// Seeded shuffle and partition into `(train, validation)`.
pub fn split<T: Clone>(
    samples: &[T],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let n = samples.len();
    if n < 2 {
        return Err(DatasetError::TooFewSamples { needed: 2, got: n });
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train]
        .iter()
        .map(|&i| samples[i].clone())
        .collect();
    let val = order[n_train..]
        .iter()
        .map(|&i| samples[i].clone())
        .collect();
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(frame: u64, t: f64, x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection {
            frame_index: frame,
            t,
            class_id: 0,
            x,
            y,
            w,
            h,
            confidence: 0.9,
        }
    }

    fn gt(t: f64, d: f64, b: f64) -> GroundTruthRecord {
        GroundTruthRecord {
            t,
            distance_nm: d,
            bearing_deg: b,
            vessel: GeoPoint::new(10.0, 20.0).unwrap(),
            camera: GeoPoint::new(10.0, 19.0).unwrap(),
        }
    }

    const HEADER: &str = r#"{"type":"header","frame_w":640,"frame_h":480,"source":"test"}"#;

    #[test]
    fn header_only_stream_is_empty() {
        let s = read_detections(format!("{HEADER}\n").as_bytes()).unwrap();
        assert!(s.detections.is_empty());
        assert_eq!((s.frame_w(), s.frame_h()), (640, 480));
    }

    #[test]
    fn single_record_parses_verbatim() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"frame":0,"t":0.0,"class":0,"x":100,"y":50,"w":40,"h":20,"conf":0.9}"#
        );
        let s = read_detections(text.as_bytes()).unwrap();
        assert_eq!(s.detections, vec![det(0, 0.0, 100.0, 50.0, 40.0, 20.0)]);
    }

    #[test]
    fn zero_width_is_validation_error() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"frame":0,"t":0.0,"class":0,"x":100,"y":50,"w":0,"h":20,"conf":0.9}"#
        );
        let err = read_detections(text.as_bytes()).unwrap_err();
        assert!(
            matches!(err, DatasetError::Validation { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn box_outside_frame_and_bad_json() {
        let outside = format!(
            "{HEADER}\n{}\n",
            r#"{"frame":0,"t":0.0,"class":0,"x":620,"y":50,"w":40,"h":20,"conf":0.9}"#
        );
        assert!(matches!(
            read_detections(outside.as_bytes()),
            Err(DatasetError::Validation { line: 2, .. })
        ));
        let garbage = format!("{HEADER}\n{{\"frame\":0,\n");
        assert!(matches!(
            read_detections(garbage.as_bytes()),
            Err(DatasetError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            read_detections("".as_bytes()),
            Err(DatasetError::Parse { .. })
        ));
    }

    #[test]
    fn ground_truth_loading() {
        let header = GROUND_TRUTH_HEADER.join(",");
        assert!(read_ground_truth(format!("{header}\n").as_bytes())
            .unwrap()
            .is_empty());

        let one = format!("{header}\n0.5,1.25,45,10,20,10,19\n");
        let recs = read_ground_truth(one.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].t, 0.5);
        assert_eq!(recs[0].bearing_deg, 45.0);
        assert_eq!(recs[0].camera.lon_deg, 19.0);

        let dup = format!("{header}\n1,1,0,0,0,0,0\n1,2,0,0,0,0,0\n");
        assert!(matches!(
            read_ground_truth(dup.as_bytes()),
            Err(DatasetError::Validation { line: 3, .. })
        ));

        let missing = "t,distance_nm,bearing_deg,lat_deg,lon_deg,cam_lat_deg\n1,1,0,0,0,0\n";
        assert!(matches!(
            read_ground_truth(missing.as_bytes()),
            Err(DatasetError::Parse { .. })
        ));
    }

    #[test]
    fn ground_truth_write_read_round_trip() {
        let recs = vec![gt(0.0, 1.0, 359.5), gt(0.1, 1.1, 0.25)];
        let mut buf = Vec::new();
        write_ground_truth(&recs, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with(&GROUND_TRUTH_HEADER.join(",")));
        assert_eq!(read_ground_truth(buf.as_slice()).unwrap(), recs);

        let mut empty = Vec::new();
        write_ground_truth(&[], &mut empty).unwrap();
        assert!(read_ground_truth(empty.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn full_frame_features() {
        let d = det(0, 0.0, 0.0, 0.0, 640.0, 480.0);
        let f = extract_features(&d, 640.0, 480.0);
        assert_eq!(f.0, [0.5, 0.5, 1.0, 1.0, 1.0, 640.0 / 480.0, 0.0]);
    }

    #[test]
    fn hand_computed_features() {
        let d = det(0, 0.0, 100.0, 50.0, 40.0, 20.0);
        let f = extract_features(&d, 640.0, 480.0).0;
        let expected = [0.1875, 0.125, 0.0625, 0.041667, 0.0026042, 2.0, 0.0];
        for (a, e) in f.iter().zip(expected) {
            assert!((a - e).abs() < 5e-7, "{a} vs {e}");
        }
    }

    #[test]
    fn exact_hit_midpoint_and_circular_midpoint() {
        let gts = vec![gt(0.0, 1.0, 350.0), gt(1.0, 2.0, 10.0)];
        let at0 = interpolate_truth(&gts, 0.0, 0.5).unwrap();
        assert_eq!(at0, gts[0]);
        let mid = interpolate_truth(&gts, 0.5, 0.5).unwrap();
        assert_eq!(mid.distance_nm, 1.5);

        // unit-vector averaging oracle for the circular midpoint
        let (s, c) = [350.0f64, 10.0].iter().fold((0.0, 0.0), |(s, c), b| {
            (s + b.to_radians().sin(), c + b.to_radians().cos())
        });
        let oracle = wrap_bearing(s.atan2(c).to_degrees());
        let diff = wrap_signed_deg(mid.bearing_deg - oracle);
        assert!(diff.abs() < 1e-9, "{} vs {oracle}", mid.bearing_deg);
        assert!(wrap_signed_deg(mid.bearing_deg).abs() < 1e-9);
    }

    #[test]
    fn pairing_drops_far_detections() {
        let stream = DetectionStream {
            header: StreamHeader::new(640, 480, "t"),
            detections: vec![
                det(0, 0.0, 10.0, 10.0, 5.0, 5.0),
                det(1, 0.4, 10.0, 10.0, 5.0, 5.0),
                det(2, 3.0, 10.0, 10.0, 5.0, 5.0),
                det(3, 10.0, 10.0, 10.0, 5.0, 5.0),
            ],
        };
        let gts = vec![gt(0.0, 1.0, 0.0), gt(1.0, 2.0, 0.0), gt(5.0, 3.0, 0.0)];
        let p = pair_samples(&stream, &gts, 0.5);
        assert_eq!(p.dropped, 2);
        assert_eq!(p.samples.len(), 2);
        assert!((p.samples[1].target_distance_nm - 1.4).abs() < 1e-12);
    }

    fn sample(features: [f64; 7], d: f64, b: f64) -> LabeledSample {
        LabeledSample {
            t: 0.0,
            features: FeatureVector(features),
            target_distance_nm: d,
            target_bearing_deg: b,
            camera: GeoPoint::new(0.0, 0.0).unwrap(),
            vessel: GeoPoint::new(0.0, 0.0).unwrap(),
        }
    }

    #[test]
    fn norm_stats_population_sd() {
        let a = sample([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.0], 1.0, 10.0);
        let b = sample([0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 1.0], 3.0, 20.0);
        let stats = fit_norm_stats(&[a, b], BearingEncoding::Degrees).unwrap();
        assert_eq!(stats.target_mean[0], 2.0);
        assert_eq!(stats.target_sd[0], 1.0);

        let mean = sample(stats.feature_mean, 2.0, 15.0);
        let n = apply_norm(&stats, &mean);
        assert!(n.features.iter().chain(&n.targets).all(|v| *v == 0.0));
    }

    #[test]
    fn zero_variance_feature_names_index() {
        let a = sample([0.1, 0.5, 0.3, 0.4, 0.5, 0.6, 0.0], 1.0, 10.0);
        let b = sample([0.2, 0.5, 0.4, 0.5, 0.6, 0.7, 1.0], 3.0, 20.0);
        match fit_norm_stats(&[a, b], BearingEncoding::Degrees) {
            Err(DatasetError::DegenerateFeature { index }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        let stats = fit_norm_stats_with(
            &[a, b],
            BearingEncoding::Degrees,
            DegeneratePolicy::Passthrough,
        )
        .unwrap();
        assert_eq!(stats.constant_features, vec![1]);
        assert_eq!(stats.feature_sd[1], 1.0);
        assert!(stats.validate().is_ok());
        assert!(fit_norm_stats(&[a], BearingEncoding::Degrees).is_err());
    }

    #[test]
    fn split_counts_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, va) = split(&items, 0.8, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let mut all: Vec<u32> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, items);
        assert_eq!(split(&items, 0.8, 7).unwrap(), (tr, va));
        assert!(split(&[1u32], 0.5, 0).is_err());
        assert!(split(&items, 1.0, 0).is_err());
        assert!(split(&items, 0.0, 0).is_err());
    }

    #[test]
    fn split_seeds_differ() {
        let items: Vec<u32> = (0..100).collect();
        let mut differing = 0;
        for k in 0..20u64 {
            let a = split(&items, 0.8, 2 * k).unwrap();
            let b = split(&items, 0.8, 2 * k + 1).unwrap();
            if a != b {
                differing += 1;
            }
        }
        assert_eq!(differing, 20);
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        (
            0u64..1000,
            0.0f64..100.0,
            0u32..3,
            0.0f64..500.0,
            0.0f64..400.0,
            0.5f64..100.0,
            0.5f64..60.0,
            0.0f64..=1.0,
        )
            .prop_map(|(frame, t, class_id, x, y, w, h, confidence)| Detection {
                frame_index: frame,
                t,
                class_id,
                x,
                y,
                w,
                h,
                confidence,
            })
    }

    proptest! {
        #[test]
        fn features_are_scale_invariant(d in arb_detection(), k in 1i32..6) {
            let s = 2f64.powi(k);
            let scaled = Detection { x: d.x * s, y: d.y * s, w: d.w * s, h: d.h * s, ..d };
            let a = extract_features(&d, 640.0, 480.0);
            let b = extract_features(&scaled, 640.0 * s, 480.0 * s);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn detections_reserialize_identically(mut dets in proptest::collection::vec(arb_detection(), 0..20)) {
            dets.sort_by(|a, b| a.t.total_cmp(&b.t));
            for (i, d) in dets.iter_mut().enumerate() {
                d.frame_index = i as u64;
            }
            let stream = DetectionStream { header: StreamHeader::new(640, 480, "p"), detections: dets };
            let mut buf = Vec::new();
            write_detections(&stream, &mut buf).unwrap();
            let back = read_detections(buf.as_slice()).unwrap();
            prop_assert_eq!(back, stream);
        }

        #[test]
        fn pairing_respects_max_dt(ts in proptest::collection::vec(0.0f64..50.0, 1..30), gap in 0.1f64..3.0, max_dt in 0.05f64..1.0) {
            let mut ts = ts;
            ts.sort_by(f64::total_cmp);
            let gts: Vec<_> = (0..20).map(|i| gt(i as f64 * gap, 1.0 + i as f64, 0.0)).collect();
            let stream = DetectionStream {
                header: StreamHeader::new(640, 480, "p"),
                detections: ts.iter().enumerate().map(|(i, &t)| det(i as u64, t, 1.0, 1.0, 2.0, 2.0)).collect(),
            };
            let p = pair_samples(&stream, &gts, max_dt);
            prop_assert_eq!(p.samples.len() + p.dropped, ts.len());
            for s in &p.samples {
                let nearest = gts.iter().map(|g| (g.t - s.t).abs()).fold(f64::INFINITY, f64::min);
                prop_assert!(nearest <= max_dt);
            }
        }

        #[test]
        fn normalization_round_trips(
            rows in proptest::collection::vec((proptest::array::uniform7(-5.0f64..5.0), 0.1f64..5.0, 0.0f64..360.0), 2..30),
            sincos in any::<bool>(),
        ) {
            let samples: Vec<_> = rows.iter().map(|(f, d, b)| sample(*f, *d, *b)).collect();
            let enc = if sincos { BearingEncoding::Sincos } else { BearingEncoding::Degrees };
            let Ok(stats) = fit_norm_stats(&samples, enc) else { return Ok(()); };
            for s in &samples {
                let n = apply_norm(&stats, s);
                let (d, b) = invert_norm(&stats, &n.targets);
                prop_assert!((d - s.target_distance_nm).abs() <= 1e-12 * s.target_distance_nm.abs().max(1.0));
                let db = if sincos { wrap_signed_deg(b - s.target_bearing_deg) } else { b - s.target_bearing_deg };
                prop_assert!(db.abs() <= 1e-12 * s.target_bearing_deg.abs().max(1.0));
            }
        }
    }
}
