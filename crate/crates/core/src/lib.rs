//! Outlier rejection for image-to-point-cloud correspondences.
//!
//! The pipeline back-projects image pixels through estimated depth, scores
//! correspondence pairs by a scale-invariant angular consistency measure,
//! refines per-correspondence features with a consistency-reweighted
//! hierarchical attention network, and thresholds the resulting confidence
//! scores. A PnP-RANSAC harness and a synthetic scene generator close the
//! loop for end-to-end evaluation against known ground truth.

pub mod error;
pub mod eval;
pub mod geom;
pub mod graph;
pub mod io;
pub mod net;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
