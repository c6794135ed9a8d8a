//! Coarse-to-fine spatio-temporal action tube toolkit.
//!
//! The crate covers the non-learned parts of a tube detector: polynomial
//! tube parameterization and fitting, segment-wise anchor matching, greedy
//! key-timestamp labeling, local-search refinement around coarse boxes, and
//! tube-level metrics (video-mAP, frame-mAP, MABO and an error taxonomy).
//! Synthetic generators stand in for the learned components so the whole
//! pipeline can be exercised deterministically.

pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod harness;
pub mod keyframe;
pub mod matching;
pub mod paramtube;
pub mod pipeline;
pub mod refine;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{box_iou, tube_iou, BBox, TemporalSpan, Tube, TubeFrame};
