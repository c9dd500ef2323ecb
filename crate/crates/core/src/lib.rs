//! Monocular vessel distance and bearing estimation from bounding boxes,
//! with IoU tracking and great-circle geo-referencing.
//!
//! The pipeline runs synth -> train -> track-predict -> georef -> eval; see
//! [`cli`] for the orchestration and the individual modules for each stage.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod geodesy;
pub mod io;
pub mod mlp;
pub mod synth;
pub mod tracker;
