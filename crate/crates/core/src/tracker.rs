//! Frame-to-frame IoU association of detections into persistent tracks.
//!
//! Matching is greedy in descending IoU with deterministic tie-breaks
//! (lower track id first, then detection input order). There is no motion
//! model: a track is compared through the last box it was matched to.

use serde::{Deserialize, Serialize};

use crate::dataset::Detection;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;
pub const DEFAULT_MAX_MISSES: usize = 10;

/// Axis-aligned box, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl From<&Detection> for BBox {
    fn from(d: &Detection) -> Self {
        Self::new(d.x, d.y, d.w, d.h)
    }
}

/// Intersection over union, in [0, 1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    // (x + w) - x is not always w in floating point
    if a == b && a.area() > 0.0 {
        return 1.0;
    }
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
    pub max_misses: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            max_misses: DEFAULT_MAX_MISSES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub track_id: u64,
    pub last_box: BBox,
    /// Frames stepped since creation.
    pub age: usize,
    /// Consecutive frames without a match.
    pub misses: usize,
    pub history: Vec<(f64, Detection)>,
}

/// Live track set for one detection stream.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self {
            config,
            tracks: Vec::new(),
            next_id: 0,
        }
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Total number of track ids handed out so far.
    pub fn ids_issued(&self) -> u64 {
        self.next_id
    }

    /// Associates one frame of detections; returns the track id assigned to
    /// each detection, in input order.
    pub fn step(&mut self, detections: &[Detection]) -> Vec<u64> {
        step(
            &mut self.tracks,
            &mut self.next_id,
            detections,
            &self.config,
        )
    }
}

/// Free-standing form of [`Tracker::step`]. `next_id` must only ever grow.
pub fn step(
    tracks: &mut Vec<TrackState>,
    next_id: &mut u64,
    detections: &[Detection],
    config: &TrackerConfig,
) -> Vec<u64> {
    let boxes: Vec<BBox> = detections.iter().map(BBox::from).collect();

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        for (di, b) in boxes.iter().enumerate() {
            let score = iou(&track.last_box, b);
            if score > 0.0 && score >= config.iou_threshold {
                candidates.push((score, ti, di));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(tracks[a.1].track_id.cmp(&tracks[b.1].track_id))
            .then(a.2.cmp(&b.2))
    });

    let mut track_taken = vec![false; tracks.len()];
    let mut assignment: Vec<Option<u64>> = vec![None; detections.len()];
    for (_, ti, di) in candidates {
        if track_taken[ti] || assignment[di].is_some() {
            continue;
        }
        track_taken[ti] = true;
        let d = &detections[di];
        let track = &mut tracks[ti];
        track.last_box = boxes[di];
        track.misses = 0;
        track.history.push((d.t, *d));
        assignment[di] = Some(track.track_id);
    }

    for (track, taken) in tracks.iter_mut().zip(&track_taken) {
        track.age += 1;
        if !taken {
            track.misses += 1;
        }
    }
    tracks.retain(|t| t.misses <= config.max_misses);

    assignment
        .into_iter()
        .zip(detections)
        .map(|(slot, d)| {
            slot.unwrap_or_else(|| {
                let id = *next_id;
                *next_id += 1;
                tracks.push(TrackState {
                    track_id: id,
                    last_box: BBox::from(d),
                    age: 0,
                    misses: 0,
                    history: vec![(d.t, *d)],
                });
                id
            })
        })
        .collect()
}
