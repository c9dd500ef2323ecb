//! Synthetic single-vessel scenarios: dead-reckoned trajectory, pinhole
//! projection to a bounding box, optional pixel noise and dropouts.
//!
//! The vertical model is a flat horizon: every box is centered on the
//! middle row of the frame. Box width always uses the vessel length.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    write_detections, write_ground_truth, Detection, DetectionStream, GroundTruthRecord,
    StreamHeader,
};
use crate::geodesy::{
    destination_point, inverse_problem, wrap_signed_deg, EarthModel, GeoError, GeoPoint,
    RangeBearing, METERS_PER_NM,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("time {t} s outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("vessel coincides with the camera")]
    ZeroRange,
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub camera: GeoPoint,
    pub camera_heading_deg: f64,
    /// Documented only; the flat-horizon model ignores it.
    pub camera_height_m: f64,
    pub focal_px: f64,
    pub frame_w: u32,
    pub frame_h: u32,
    pub vessel_start: GeoPoint,
    pub speed_kn: f64,
    pub course_deg: f64,
    pub vessel_length_m: f64,
    pub vessel_height_m: f64,
    pub duration_s: f64,
    pub fps: f64,
    #[serde(default)]
    pub pixel_noise_sd: f64,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthSummary {
    pub frames: usize,
    pub detections: usize,
    pub dropouts: usize,
    pub out_of_fov: usize,
}

/// What the camera saw in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sighting {
    Detected(Detection),
    OutOfFov,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub truth: RangeBearing,
    /// Bearing relative to the camera axis, (-180, 180].
    pub relative_bearing_deg: f64,
    pub sighting: Sighting,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let s: Scenario = serde_json::from_str(&text)
            .map_err(|e| SynthError::InvalidScenario(format!("{}: {e}", path.display())))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidScenario(m.into()));
        self.camera.validate()?;
        self.vessel_start.validate()?;
        let positive = [
            ("fps", self.fps),
            ("duration_s", self.duration_s),
            ("focal_px", self.focal_px),
            ("vessel_length_m", self.vessel_length_m),
            ("vessel_height_m", self.vessel_height_m),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SynthError::InvalidScenario(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.frame_w == 0 || self.frame_h == 0 {
            return bad("frame dimensions must be positive");
        }
        if !(self.speed_kn.is_finite() && self.speed_kn >= 0.0) {
            return bad("speed_kn must be non-negative");
        }
        if !(self.pixel_noise_sd.is_finite() && self.pixel_noise_sd >= 0.0) {
            return bad("pixel_noise_sd must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if ![
            self.camera_heading_deg,
            self.course_deg,
            self.camera_height_m,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            return bad("heading, course and camera height must be finite");
        }
        Ok(())
    }

    /// Frames attempted over the whole duration.
    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps + 1e-9).floor() as usize
    }

    pub fn half_fov_deg(&self) -> f64 {
        (f64::from(self.frame_w) / 2.0 / self.focal_px)
            .atan()
            .to_degrees()
    }

    /// Vessel position at `t` seconds by great-circle dead reckoning.
    pub fn propagate(&self, t: f64) -> Result<GeoPoint, SynthError> {
        if !(0.0..=self.duration_s).contains(&t) {
            return Err(SynthError::TimeOutOfRange {
                t,
                duration: self.duration_s,
            });
        }
        let run = RangeBearing::new(self.speed_kn * t / 3600.0, self.course_deg)?;
        Ok(destination_point(
            self.vessel_start,
            run,
            EarthModel::default(),
        )?)
    }

    /// Noiseless box `(x, y, w, h)` for a truth observation, or `None` when
    /// the vessel is outside the field of view or the box leaves the frame.
    pub fn project(&self, truth: RangeBearing) -> Result<Option<[f64; 4]>, SynthError> {
        let range_m = truth.distance_nm * METERS_PER_NM;
        if range_m <= 0.0 {
            return Err(SynthError::ZeroRange);
        }
        let beta = wrap_signed_deg(truth.bearing_deg - self.camera_heading_deg);
        if beta.abs() >= self.half_fov_deg() {
            return Ok(None);
        }
        let (fw, fh) = (f64::from(self.frame_w), f64::from(self.frame_h));
        let cx = fw / 2.0 + self.focal_px * beta.to_radians().tan();
        let cy = fh / 2.0;
        let w = self.focal_px * self.vessel_length_m / range_m;
        let h = self.focal_px * self.vessel_height_m / range_m;
        let (x, y) = (cx - w / 2.0, cy - h / 2.0);
        if x < 0.0 || y < 0.0 || x + w > fw || y + h > fh {
            return Ok(None);
        }
        Ok(Some([x, y, w, h]))
    }

    /// Truth and (possibly corrupted) detection for one frame.
    pub fn observe<R: Rng>(
        &self,
        vessel: GeoPoint,
        frame_index: u64,
        t: f64,
        rng: &mut R,
    ) -> Result<Observation, SynthError> {
        let truth = inverse_problem(self.camera, vessel, EarthModel::default())?;
        let relative_bearing_deg = wrap_signed_deg(truth.bearing_deg - self.camera_heading_deg);
        let Some([x, y, w, h]) = self.project(truth)? else {
            return Ok(Observation {
                truth,
                relative_bearing_deg,
                sighting: Sighting::OutOfFov,
            });
        };

        let (mut cx, mut cy, mut w, mut h) = (x + w / 2.0, y + h / 2.0, w, h);
        if self.pixel_noise_sd > 0.0 {
            let noise = Normal::new(0.0, self.pixel_noise_sd).expect("finite sd");
            cx += noise.sample(rng);
            cy += noise.sample(rng);
            w = (w + noise.sample(rng)).max(0.5);
            h = (h + noise.sample(rng)).max(0.5);
        }
        if self.dropout > 0.0 && rng.random::<f64>() < self.dropout {
            return Ok(Observation {
                truth,
                relative_bearing_deg,
                sighting: Sighting::Dropped,
            });
        }

        let (x, y) = if self.pixel_noise_sd > 0.0 {
            // noise may push the box over the frame edge
            let (fw, fh) = (f64::from(self.frame_w), f64::from(self.frame_h));
            let (x0, y0) = ((cx - w / 2.0).max(0.0), (cy - h / 2.0).max(0.0));
            let (x1, y1) = ((cx + w / 2.0).min(fw), (cy + h / 2.0).min(fh));
            if x1 <= x0 || y1 <= y0 {
                return Ok(Observation {
                    truth,
                    relative_bearing_deg,
                    sighting: Sighting::OutOfFov,
                });
            }
            w = x1 - x0;
            h = y1 - y0;
            (x0, y0)
        } else {
            (x, y)
        };

        Ok(Observation {
            truth,
            relative_bearing_deg,
            sighting: Sighting::Detected(Detection {
                frame_index,
                t,
                class_id: 0,
                x,
                y,
                w,
                h,
                confidence: 1.0,
            }),
        })
    }

    /// Runs the whole scenario in memory.
    pub fn simulate(
        &self,
    ) -> Result<(DetectionStream, Vec<GroundTruthRecord>, SynthSummary), SynthError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut summary = SynthSummary::default();
        let mut detections = Vec::new();
        let mut truth = Vec::new();
        for k in 0..self.frame_count() {
            let t = k as f64 / self.fps;
            let vessel = self.propagate(t)?;
            let obs = self.observe(vessel, k as u64, t, &mut rng)?;
            summary.frames += 1;
            match obs.sighting {
                Sighting::Detected(d) => {
                    summary.detections += 1;
                    detections.push(d);
                }
                Sighting::Dropped => summary.dropouts += 1,
                Sighting::OutOfFov => summary.out_of_fov += 1,
            }
            truth.push(GroundTruthRecord {
                t,
                distance_nm: obs.truth.distance_nm,
                bearing_deg: obs.truth.bearing_deg,
                vessel,
                camera: self.camera,
            });
        }
        let stream = DetectionStream {
            header: StreamHeader::new(self.frame_w, self.frame_h, "synth"),
            detections,
        };
        Ok((stream, truth, summary))
    }
}

/// Writes a detections JSONL file and a truth CSV for `scenario`.
pub fn generate(
    scenario: &Scenario,
    detections_path: &Path,
    truth_path: &Path,
) -> Result<SynthSummary, SynthError> {
    let (stream, truth, summary) = scenario.simulate()?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: std::io::Error| SynthError::Io { path, source }
    };

    let mut det_bytes = Vec::new();
    write_detections(&stream, &mut det_bytes).map_err(io_err(detections_path))?;
    crate::io::write_atomic(detections_path, &det_bytes).map_err(io_err(detections_path))?;

    let mut truth_bytes = Vec::new();
    write_ground_truth(&truth, &mut truth_bytes).map_err(|e| io_err(truth_path)(e.into()))?;
    crate::io::write_atomic(truth_path, &truth_bytes).map_err(io_err(truth_path))?;
    Ok(summary)
}
