//! RMSE metrics and predicted-vs-truth comparison reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GroundTruthRecord;
use crate::geodesy::{
    destination_point, distance_m, wrap_signed_deg, EarthModel, GeoError, GeoPoint, RangeBearing,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot evaluate an empty series")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

fn root_mean_square(residuals: impl Iterator<Item = f64>, n: usize) -> f64 {
    (residuals.map(|r| r * r).sum::<f64>() / n as f64).sqrt()
}

/// `sqrt(sum((predicted_i - actual_i)^2) / N)`.
pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64, EvalError> {
    check_lengths(predicted.len(), actual.len())?;
    Ok(root_mean_square(
        predicted.iter().zip(actual).map(|(p, a)| p - a),
        predicted.len(),
    ))
}

/// RMSE of angular residuals wrapped into (-180, 180].
pub fn circular_rmse_deg(predicted_deg: &[f64], actual_deg: &[f64]) -> Result<f64, EvalError> {
    check_lengths(predicted_deg.len(), actual_deg.len())?;
    Ok(root_mean_square(
        predicted_deg
            .iter()
            .zip(actual_deg)
            .map(|(p, a)| wrap_signed_deg(p - a)),
        predicted_deg.len(),
    ))
}

/// One aligned sample of the comparison series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub dist_pred: f64,
    pub dist_true: f64,
    pub brg_pred: f64,
    pub brg_true: f64,
    pub lat_pred: f64,
    pub lat_true: f64,
    pub lon_pred: f64,
    pub lon_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub rmse_distance_nm: f64,
    /// Wrapped residuals.
    pub rmse_bearing_deg: f64,
    /// Raw residuals, as a plain plot of bearing would show them.
    pub rmse_bearing_linear_deg: f64,
    pub rmse_lat_deg: f64,
    pub rmse_lon_deg: f64,
    pub mean_position_error_m: f64,
    #[serde(skip)]
    pub series: Vec<SeriesRow>,
}

/// Compares time-aligned predictions against truth. `cameras[i]` is the
/// observer position used to geo-reference `predictions[i]`.
pub fn evaluate(
    predictions: &[(f64, RangeBearing)],
    truth: &[GroundTruthRecord],
    cameras: &[GeoPoint],
    earth: EarthModel,
) -> Result<EvalReport, EvalError> {
    check_lengths(predictions.len(), truth.len())?;
    check_lengths(predictions.len(), cameras.len())?;

    let mut series = Vec::with_capacity(predictions.len());
    let mut position_error_sum = 0.0;
    for ((&(t, rb), gt), &camera) in predictions.iter().zip(truth).zip(cameras) {
        let p = destination_point(camera, rb, earth)?;
        position_error_sum += distance_m(p, gt.vessel, earth)?;
        series.push(SeriesRow {
            t,
            dist_pred: rb.distance_nm,
            dist_true: gt.distance_nm,
            brg_pred: rb.bearing_deg,
            brg_true: gt.bearing_deg,
            lat_pred: p.lat_deg,
            lat_true: gt.vessel.lat_deg,
            lon_pred: p.lon_deg,
            lon_true: gt.vessel.lon_deg,
        });
    }

    let col = |f: fn(&SeriesRow) -> f64| series.iter().map(f).collect::<Vec<_>>();
    let n = series.len();
    Ok(EvalReport {
        n_samples: n,
        rmse_distance_nm: rmse(&col(|r| r.dist_pred), &col(|r| r.dist_true))?,
        rmse_bearing_deg: circular_rmse_deg(&col(|r| r.brg_pred), &col(|r| r.brg_true))?,
        rmse_bearing_linear_deg: rmse(&col(|r| r.brg_pred), &col(|r| r.brg_true))?,
        rmse_lat_deg: rmse(&col(|r| r.lat_pred), &col(|r| r.lat_true))?,
        rmse_lon_deg: rmse(&col(|r| r.lon_pred), &col(|r| r.lon_true))?,
        mean_position_error_m: position_error_sum / n as f64,
        series,
    })
}

/// Writes the scalar report as JSON and the series as CSV.
pub fn emit_report(
    report: &EvalReport,
    json_path: &Path,
    csv_path: &Path,
) -> Result<(), EvalError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| EvalError::Io { path, source }
    };
    let mut json = serde_json::to_vec_pretty(report).map_err(|e| io_err(json_path)(e.into()))?;
    json.push(b'\n');
    crate::io::write_atomic(json_path, &json).map_err(io_err(json_path))?;

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in &report.series {
        wtr.serialize(row).map_err(|e| io_err(csv_path)(e.into()))?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| io_err(csv_path)(e.into_error()))?;
    crate::io::write_atomic(csv_path, &bytes).map_err(io_err(csv_path))
}
