//! Command-line pipeline: synth -> train -> track-predict -> georef -> eval.
//!
//! Every command reads a JSON [`PipelineConfig`] (optional) plus flag
//! overrides. Exit codes: 0 success, 2 input/config error, 3 numeric failure.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    fit_norm_stats_with, interpolate_truth, load_detections, load_ground_truth, pair_samples,
    split, BearingEncoding, DegeneratePolicy, GroundTruthRecord, LabeledSample, DEFAULT_MAX_DT,
};
use crate::eval::{emit_report, evaluate, EvalReport};
use crate::geodesy::{
    destination_point, EarthModel, GeoPoint, RangeBearing, DEFAULT_EARTH_RADIUS_NM,
};
use crate::mlp::{
    self, hidden_layer_sweep, init, load_model, save_model, Activation, LayerSpec, LossHistory,
    MlpError, Network, OptimizerKind, SweepRow, TrainConfig, DEFAULT_DEPTH, DEFAULT_HIDDEN_WIDTH,
};
use crate::synth::{generate, Scenario, SynthSummary};
use crate::tracker::{Tracker, TrackerConfig};

pub const SEED_ENV: &str = "DISBEANET_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Input,
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: FailureKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Input,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            FailureKind::Input => 2,
            FailureKind::Numeric => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<MlpError> for CliError {
    fn from(e: MlpError) -> Self {
        let diverged = match &e {
            MlpError::Diverged { .. } => true,
            MlpError::Sweep { source, .. } => matches!(**source, MlpError::Diverged { .. }),
            _ => false,
        };
        Self {
            kind: if diverged {
                FailureKind::Numeric
            } else {
                FailureKind::Input
            },
            message: e.to_string(),
        }
    }
}

macro_rules! input_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::input(e.to_string())
            }
        }
    )*};
}
input_error_from!(
    crate::dataset::DatasetError,
    crate::synth::SynthError,
    crate::eval::EvalError,
    crate::geodesy::GeoError
);

type CliResult<T> = Result<T, CliError>;

/// Network architecture knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub bearing_encoding: BearingEncoding,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            width: DEFAULT_HIDDEN_WIDTH,
            activation: Activation::Tanh,
            bearing_encoding: BearingEncoding::Degrees,
        }
    }
}

/// File locations. Unset outputs default to files inside `out_dir`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub out_dir: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub tracks_csv: Option<PathBuf>,
    pub tracks_geojson: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
    pub sweep_csv: Option<PathBuf>,
}

impl Paths {
    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn or_default(&self, p: &Option<PathBuf>, name: &str) -> PathBuf {
        p.clone().unwrap_or_else(|| self.out_dir().join(name))
    }

    pub fn detections(&self) -> PathBuf {
        self.or_default(&self.detections, "detections.jsonl")
    }
    pub fn truth(&self) -> PathBuf {
        self.or_default(&self.truth, "truth.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.out_dir().join("summary.json")
    }
    pub fn model(&self) -> PathBuf {
        self.or_default(&self.model, "model.json")
    }
    pub fn predictions(&self) -> PathBuf {
        self.or_default(&self.predictions, "predictions.csv")
    }
    pub fn tracks_csv(&self) -> PathBuf {
        self.or_default(&self.tracks_csv, "tracks.csv")
    }
    pub fn tracks_geojson(&self) -> PathBuf {
        self.or_default(&self.tracks_geojson, "tracks.geojson")
    }
    pub fn report_json(&self) -> PathBuf {
        self.or_default(&self.report_json, "report.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.or_default(&self.report_csv, "report.csv")
    }
    pub fn sweep_csv(&self) -> PathBuf {
        self.or_default(&self.sweep_csv, "sweep.csv")
    }

    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.out_dir,
            &mut self.scenario,
            &mut self.detections,
            &mut self.truth,
            &mut self.model,
            &mut self.predictions,
            &mut self.tracks_csv,
            &mut self.tracks_geojson,
            &mut self.report_json,
            &mut self.report_csv,
            &mut self.sweep_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub earth_radius_nm: f64,
    pub tracker: TrackerConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    /// Pairing/join tolerance between detections and truth, seconds.
    pub max_dt: f64,
    /// Fixed camera used by georef when no truth log is available.
    pub camera: Option<GeoPoint>,
    /// Overrides the scenario and training seeds when set.
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            earth_radius_nm: DEFAULT_EARTH_RADIUS_NM,
            tracker: TrackerConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            max_dt: DEFAULT_MAX_DT,
            camera: None,
            seed: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::input(format!("invalid config {}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn earth(&self) -> CliResult<EarthModel> {
        Ok(EarthModel::new(self.earth_radius_nm)?)
    }

    /// Training config with the pipeline seed applied.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "{what} not found: {}",
            path.display()
        )))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    crate::io::write_atomic(path, bytes)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> CliResult<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        wtr.write_record(header)
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    for r in rows {
        wtr.serialize(r)
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    wtr.into_inner().map_err(|e| CliError::input(e.to_string()))
}

// ---------------------------------------------------------------- synth

pub fn cmd_synth(cfg: &PipelineConfig) -> CliResult<SynthSummary> {
    let scenario_path = cfg
        .paths
        .scenario
        .clone()
        .ok_or_else(|| CliError::input("no scenario file given (--scenario)"))?;
    require_file(&scenario_path, "scenario file")?;
    let mut scenario = Scenario::load(&scenario_path)?;
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    let summary = generate(&scenario, &cfg.paths.detections(), &cfg.paths.truth())?;
    let mut json = serde_json::to_vec_pretty(&summary).expect("plain struct");
    json.push(b'\n');
    write_file(&cfg.paths.summary(), &json)?;
    Ok(summary)
}

// ---------------------------------------------------------------- train

/// Everything produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub network: Network,
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub history: LossHistory,
    pub sweep: Vec<SweepRow>,
    pub dropped: usize,
    /// (distance NM, bearing deg) RMSE on each split.
    pub train_rmse: (f64, f64),
    pub val_rmse: Option<(f64, f64)>,
}

pub fn cmd_train(cfg: &PipelineConfig, sweep_depths: Option<&[usize]>) -> CliResult<TrainRun> {
    let (det_path, truth_path) = (cfg.paths.detections(), cfg.paths.truth());
    require_file(&det_path, "detections file")?;
    require_file(&truth_path, "truth file")?;
    let stream = load_detections(&det_path)?;
    let truth = load_ground_truth(&truth_path)?;
    let pairing = pair_samples(&stream, &truth, cfg.max_dt);
    if pairing.dropped > 0 {
        log::warn!(
            "{} detections had no truth within {} s",
            pairing.dropped,
            cfg.max_dt
        );
    }

    let tcfg = cfg.effective_train();
    let (train_set, val_set) = split(&pairing.samples, cfg.train_fraction, tcfg.seed)?;
    let stats = fit_norm_stats_with(
        &train_set,
        cfg.network.bearing_encoding,
        DegeneratePolicy::Passthrough,
    )?;
    if !stats.constant_features.is_empty() {
        log::info!(
            "constant input features (centered only): {:?}",
            stats.constant_features
        );
    }

    let net_cfg = &cfg.network;
    let mut sweep = Vec::new();
    let mut from_sweep = None;
    let mut history = LossHistory::default();
    if let Some(depths) = sweep_depths {
        let results = hidden_layer_sweep(
            &train_set,
            &val_set,
            &stats,
            net_cfg.width,
            depths,
            net_cfg.activation,
            &tcfg,
        )?;
        for (row, net) in results {
            if row.depth == net_cfg.depth && from_sweep.is_none() {
                from_sweep = Some(net);
            }
            sweep.push(row);
        }
        write_file(
            &cfg.paths.sweep_csv(),
            &csv_bytes(
                &sweep,
                &[
                    "depth",
                    "epochs_run",
                    "val_rmse",
                    "val_rmse_distance_nm",
                    "val_rmse_bearing_deg",
                ],
            )?,
        )?;
    }

    let network = match from_sweep {
        Some(net) => net,
        None => {
            let spec = LayerSpec::with_depth(
                net_cfg.depth,
                net_cfg.width,
                net_cfg.activation,
                net_cfg.bearing_encoding,
            )?;
            let net = init(&spec, tcfg.seed)?.with_norm_stats(stats.clone());
            let outcome = mlp::train(net, &train_set, &val_set, &tcfg)?;
            history = outcome.history;
            outcome.network
        }
    };
    save_model(&network, &cfg.paths.model())?;

    let train_rmse = mlp_physical_rmse(&network, &train_set)?;
    let val_rmse = if val_set.is_empty() {
        None
    } else {
        Some(mlp_physical_rmse(&network, &val_set)?)
    };

    Ok(TrainRun {
        network,
        train: train_set,
        val: val_set,
        history,
        sweep,
        dropped: pairing.dropped,
        train_rmse,
        val_rmse,
    })
}

fn mlp_physical_rmse(net: &Network, samples: &[LabeledSample]) -> CliResult<(f64, f64)> {
    let stats = net.norm_stats.as_ref().ok_or(MlpError::MissingNormStats)?;
    Ok(mlp::physical_rmse(net, stats, samples)?)
}

// -------------------------------------------------------- track-predict

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub t: f64,
    pub track_id: u64,
    pub distance_nm: f64,
    pub bearing_deg: f64,
}

const PREDICTION_HEADER: [&str; 4] = ["t", "track_id", "distance_nm", "bearing_deg"];

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> CliResult<()> {
    write_file(path, &csv_bytes(rows, &PREDICTION_HEADER)?)
}

pub fn read_predictions(path: &Path) -> CliResult<Vec<PredictionRow>> {
    require_file(path, "predictions file")?;
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let rows: Result<Vec<PredictionRow>, _> = rdr.deserialize().collect();
    let rows = rows.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    for r in &rows {
        RangeBearing {
            distance_nm: r.distance_nm,
            bearing_deg: r.bearing_deg,
        }
        .validate()
        .map_err(|e| CliError::input(format!("{}: t={}: {e}", path.display(), r.t)))?;
    }
    Ok(rows)
}

pub fn cmd_track_predict(cfg: &PipelineConfig) -> CliResult<Vec<PredictionRow>> {
    let (model_path, det_path) = (cfg.paths.model(), cfg.paths.detections());
    require_file(&model_path, "model file")?;
    require_file(&det_path, "detections file")?;
    let net = load_model(&model_path)?;
    if net.norm_stats.is_none() {
        return Err(MlpError::MissingNormStats.into());
    }
    let stream = load_detections(&det_path)?;
    let (fw, fh) = (f64::from(stream.frame_w()), f64::from(stream.frame_h()));

    let mut tracker = Tracker::new(cfg.tracker);
    let mut rows = Vec::with_capacity(stream.detections.len());
    let mut clamped = 0usize;
    let mut prev_frame: Option<u64> = None;
    for frame in stream
        .detections
        .chunk_by(|a, b| a.frame_index == b.frame_index)
    {
        let index = frame[0].frame_index;
        if let Some(prev) = prev_frame {
            // frames with no detections still age the tracks
            let gap = (index - prev)
                .saturating_sub(1)
                .min(cfg.tracker.max_misses as u64 + 1);
            for _ in 0..gap {
                tracker.step(&[]);
            }
        }
        prev_frame = Some(index);
        let ids = tracker.step(frame);
        for (d, id) in frame.iter().zip(ids) {
            let p = net.predict(d, fw, fh)?;
            clamped += usize::from(p.distance_clamped);
            rows.push(PredictionRow {
                t: d.t,
                track_id: id,
                distance_nm: p.range_bearing.distance_nm,
                bearing_deg: p.range_bearing.bearing_deg,
            });
        }
    }
    if clamped > 0 {
        log::warn!("{clamped} predictions had negative distance clamped to 0");
    }
    write_predictions(&cfg.paths.predictions(), &rows)?;
    Ok(rows)
}

// --------------------------------------------------------------- georef

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPointRow {
    pub t: f64,
    pub track_id: u64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub distance_nm: f64,
    pub bearing_deg: f64,
}

const TRACK_HEADER: [&str; 6] = [
    "t",
    "track_id",
    "lat_deg",
    "lon_deg",
    "distance_nm",
    "bearing_deg",
];

fn camera_for(
    t: f64,
    truth: Option<&[GroundTruthRecord]>,
    cfg: &PipelineConfig,
) -> CliResult<GeoPoint> {
    match (truth, cfg.camera) {
        (Some(gts), _) => interpolate_truth(gts, t, cfg.max_dt)
            .map(|g| g.camera)
            .ok_or_else(|| {
                CliError::input(format!("no truth record within {} s of t={t}", cfg.max_dt))
            }),
        (None, Some(cam)) => Ok(cam),
        (None, None) => Err(CliError::input(
            "no camera position: provide a truth file or a fixed camera",
        )),
    }
}

/// Tracks as a GeoJSON FeatureCollection, one feature per track id.
pub fn tracks_geojson(points: &[TrackPointRow]) -> serde_json::Value {
    let mut by_track: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
    for p in points {
        by_track
            .entry(p.track_id)
            .or_default()
            .push([p.lon_deg, p.lat_deg]);
    }
    let features: Vec<_> = by_track
        .into_iter()
        .map(|(id, coords)| {
            // a LineString needs two positions
            let geometry = if coords.len() == 1 {
                serde_json::json!({"type": "Point", "coordinates": coords[0]})
            } else {
                serde_json::json!({"type": "LineString", "coordinates": coords})
            };
            serde_json::json!({
                "type": "Feature",
                "properties": {"track_id": id, "points": coords.len()},
                "geometry": geometry,
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

pub fn cmd_georef(cfg: &PipelineConfig) -> CliResult<Vec<TrackPointRow>> {
    let earth = cfg.earth()?;
    let predictions = read_predictions(&cfg.paths.predictions())?;
    let truth_path = cfg.paths.truth();
    let truth = if truth_path.is_file() {
        Some(load_ground_truth(&truth_path)?)
    } else if cfg.camera.is_some() {
        None
    } else {
        return Err(CliError::input(format!(
            "truth file not found: {} (and no fixed camera configured)",
            truth_path.display()
        )));
    };

    let mut points = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let camera = camera_for(p.t, truth.as_deref(), cfg)?;
        let rb = RangeBearing {
            distance_nm: p.distance_nm,
            bearing_deg: p.bearing_deg,
        };
        let pos = destination_point(camera, rb, earth)?;
        points.push(TrackPointRow {
            t: p.t,
            track_id: p.track_id,
            lat_deg: pos.lat_deg,
            lon_deg: pos.lon_deg,
            distance_nm: p.distance_nm,
            bearing_deg: p.bearing_deg,
        });
    }

    write_file(&cfg.paths.tracks_csv(), &csv_bytes(&points, &TRACK_HEADER)?)?;
    let mut geojson = serde_json::to_vec_pretty(&tracks_geojson(&points)).expect("json value");
    geojson.push(b'\n');
    write_file(&cfg.paths.tracks_geojson(), &geojson)?;
    Ok(points)
}

// ----------------------------------------------------------------- eval

pub fn cmd_eval(cfg: &PipelineConfig) -> CliResult<EvalReport> {
    let earth = cfg.earth()?;
    let predictions = read_predictions(&cfg.paths.predictions())?;
    let truth_path = cfg.paths.truth();
    require_file(&truth_path, "truth file")?;
    let truth = load_ground_truth(&truth_path)?;

    let mut aligned = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let gt = interpolate_truth(&truth, p.t, cfg.max_dt).ok_or_else(|| {
            CliError::input(format!(
                "prediction at t={} has no truth within {} s",
                p.t, cfg.max_dt
            ))
        })?;
        aligned.push(gt);
    }
    let preds: Vec<_> = predictions
        .iter()
        .map(|p| {
            (
                p.t,
                RangeBearing {
                    distance_nm: p.distance_nm,
                    bearing_deg: p.bearing_deg,
                },
            )
        })
        .collect();
    let cameras: Vec<_> = aligned.iter().map(|g| g.camera).collect();
    let report = evaluate(&preds, &aligned, &cameras, earth)?;
    emit_report(&report, &cfg.paths.report_json(), &cfg.paths.report_csv())?;
    Ok(report)
}

// ------------------------------------------------------------ arguments

#[derive(Debug, Parser)]
#[command(
    name = "disbeanet",
    version,
    about = "Monocular vessel distance/bearing estimation and geo-referencing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic detections + truth dataset from a scenario file.
    Synth,
    /// Pair detections with truth, train the network and save the model.
    Train {
        /// Comma-separated hidden depths to sweep, e.g. 1,2,3,5,20.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
    },
    /// Track detections and predict distance/bearing for each one.
    TrackPredict,
    /// Convert predictions into geo-referenced tracks (CSV + GeoJSON).
    Georef,
    /// Compare predictions with truth and write RMSE reports.
    Eval,
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Pipeline config file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    pub detections: Option<PathBuf>,
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub predictions: Option<PathBuf>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, global = true)]
    pub activation: Option<Activation>,
    #[arg(long, global = true)]
    pub bearing_encoding: Option<BearingEncoding>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    #[arg(long, global = true)]
    pub iou_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub max_misses: Option<usize>,
    #[arg(long, global = true)]
    pub earth_radius_nm: Option<f64>,
    #[arg(long, global = true)]
    pub camera_lat: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub camera_lon: Option<f64>,
}

/// Builds the effective config: file, then `DISBEANET_SEED`, then flags.
pub fn resolve_config(o: &Overrides, env_seed: Option<&str>) -> CliResult<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            require_file(path, "config file")?;
            PipelineConfig::load(path)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(raw) = env_seed {
        let seed = raw.trim().parse().map_err(|_| {
            CliError::input(format!("{SEED_ENV}={raw:?} is not an unsigned integer"))
        })?;
        cfg.seed = Some(seed);
    }
    let p = &mut cfg.paths;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v.into();
            }
        };
    }
    set!(cfg.seed, o.seed);
    set!(p.out_dir, o.out_dir);
    set!(p.scenario, o.scenario);
    set!(p.detections, o.detections);
    set!(p.truth, o.truth);
    set!(p.model, o.model);
    set!(p.predictions, o.predictions);
    set!(cfg.network.depth, o.depth);
    set!(cfg.network.width, o.width);
    set!(cfg.network.activation, o.activation);
    set!(cfg.network.bearing_encoding, o.bearing_encoding);
    set!(cfg.train.epochs, o.epochs);
    set!(cfg.train.batch_size, o.batch_size);
    set!(cfg.train.learning_rate, o.lr);
    set!(cfg.train.optimizer, o.optimizer);
    set!(cfg.train.patience, o.patience);
    set!(cfg.tracker.iou_threshold, o.iou_threshold);
    set!(cfg.tracker.max_misses, o.max_misses);
    set!(cfg.earth_radius_nm, o.earth_radius_nm);
    match (o.camera_lat, o.camera_lon) {
        (Some(lat), Some(lon)) => cfg.camera = Some(GeoPoint::new(lat, lon)?),
        (None, None) => {}
        _ => {
            return Err(CliError::input(
                "--camera-lat and --camera-lon must be given together",
            ))
        }
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(CliError::input(
            "train_fraction must lie strictly between 0 and 1",
        ));
    }
    Ok(cfg)
}

/// Runs one command and prints its summary to stdout.
pub fn run_command(command: &Command, cfg: &PipelineConfig) -> CliResult<()> {
    match command {
        Command::Synth => {
            let s = cmd_synth(cfg)?;
            println!(
                "synth: {} frames, {} detections, {} dropouts, {} out of view",
                s.frames, s.detections, s.dropouts, s.out_of_fov
            );
        }
        Command::Train { sweep } => {
            let run = cmd_train(cfg, sweep.as_deref())?;
            for r in &run.sweep {
                println!(
                    "sweep depth {:>2}: val distance rmse {:.5} NM, val bearing rmse {:.4} deg",
                    r.depth, r.val_rmse_distance_nm, r.val_rmse_bearing_deg
                );
            }
            let (d, b) = run.train_rmse;
            println!(
                "train: {} samples, distance rmse {d:.5} NM, bearing rmse {b:.4} deg",
                run.train.len()
            );
            if let Some((d, b)) = run.val_rmse {
                println!(
                    "val:   {} samples, distance rmse {d:.5} NM, bearing rmse {b:.4} deg",
                    run.val.len()
                );
            }
            println!("model written to {}", cfg.paths.model().display());
        }
        Command::TrackPredict => {
            let rows = cmd_track_predict(cfg)?;
            let tracks: std::collections::BTreeSet<_> = rows.iter().map(|r| r.track_id).collect();
            println!(
                "track-predict: {} predictions over {} tracks",
                rows.len(),
                tracks.len()
            );
        }
        Command::Georef => {
            let points = cmd_georef(cfg)?;
            println!(
                "georef: {} points written to {}",
                points.len(),
                cfg.paths.tracks_geojson().display()
            );
        }
        Command::Eval => {
            let r = cmd_eval(cfg)?;
            println!("eval: {} samples", r.n_samples);
            println!("  rmse distance  {:.6} NM", r.rmse_distance_nm);
            println!("  rmse bearing   {:.6} deg", r.rmse_bearing_deg);
            println!("  rmse latitude  {:.9} deg", r.rmse_lat_deg);
            println!("  rmse longitude {:.9} deg", r.rmse_lon_deg);
            println!("  mean position error {:.2} m", r.mean_position_error_m);
        }
    }
    Ok(())
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_ENV).ok();
    let result = resolve_config(&cli.overrides, env_seed.as_deref())
        .and_then(|cfg| run_command(&cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_seed_and_flag_precedence() {
        let o = Overrides::default();
        assert_eq!(resolve_config(&o, None).unwrap().seed, None);
        assert_eq!(resolve_config(&o, Some("7")).unwrap().seed, Some(7));
        assert!(resolve_config(&o, Some("x")).is_err());
        let o = Overrides {
            seed: Some(9),
            ..Default::default()
        };
        let cfg = resolve_config(&o, Some("7")).unwrap();
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.effective_train().seed, 9);
    }

    #[test]
    fn config_paths_rebase_on_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"paths": {"out_dir": "run", "model": "/abs/m.json"}, "seed": 3}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(
            cfg.paths.detections(),
            dir.path().join("run/detections.jsonl")
        );
        assert_eq!(cfg.paths.model(), PathBuf::from("/abs/m.json"));
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.network, NetworkConfig::default());
    }

    #[test]
    fn defaults_match_reference_architecture() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.network.depth, 3);
        assert_eq!(cfg.network.width, 16);
        assert_eq!(cfg.train.epochs, 5000);
        assert_eq!(cfg.train.patience, Some(200));
        assert_eq!(cfg.max_dt, 0.5);
    }

    #[test]
    fn geojson_layout() {
        let pts = [
            TrackPointRow {
                t: 0.0,
                track_id: 4,
                lat_deg: 1.0,
                lon_deg: 2.0,
                distance_nm: 1.0,
                bearing_deg: 0.0,
            },
            TrackPointRow {
                t: 1.0,
                track_id: 4,
                lat_deg: 1.5,
                lon_deg: 2.5,
                distance_nm: 1.0,
                bearing_deg: 0.0,
            },
            TrackPointRow {
                t: 1.0,
                track_id: 1,
                lat_deg: 3.0,
                lon_deg: 4.0,
                distance_nm: 1.0,
                bearing_deg: 0.0,
            },
        ];
        let g = tracks_geojson(&pts);
        assert_eq!(g["type"], "FeatureCollection");
        let f = g["features"].as_array().unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0]["properties"]["track_id"], 1);
        assert_eq!(f[0]["geometry"]["type"], "Point");
        assert_eq!(f[1]["geometry"]["type"], "LineString");
        assert_eq!(
            f[1]["geometry"]["coordinates"][0],
            serde_json::json!([2.0, 1.0])
        );
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            CliError::from(MlpError::Diverged { epoch: 3 }).exit_code(),
            3
        );
        assert_eq!(CliError::from(MlpError::MissingNormStats).exit_code(), 2);
        let swept = MlpError::Sweep {
            depth: 2,
            source: Box::new(MlpError::Diverged { epoch: 1 }),
        };
        assert_eq!(CliError::from(swept).exit_code(), 3);
    }
}
