//! Per-correspondence initial feature rows.

use super::{centroid_and_center, CorrespondenceSet, Point3};
use crate::error::{Error, Result};

/// Width of one feature row: 6 coordinates, their half-angle sines and
/// cosines, and two unit normals.
pub const FEATURE_WIDTH: usize = 24;

/// `[c (6) ; sin(c/2) (6) ; cos(c/2) (6) ; n_est (3) ; n_ref (3)]`.
pub type FeatureRow = [f64; FEATURE_WIDTH];

/// Which way the estimated global scale is applied when aligning the
/// estimate cloud with the reference cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ScaleRatioDirection {
    /// Multiply the centered estimate by `1 / s_est` so it lands in the
    /// reference cloud's metric frame (`s_est` being the estimate-over-
    /// reference distance ratio). The default and the only direction that
    /// makes the two coordinate blocks commensurate.
    #[default]
    Reciprocal,
    /// Multiply by `s_est` as literally written.
    AsWritten,
}

impl ScaleRatioDirection {
    /// Converts the estimated ratio to the multiplier applied to the
    /// centered estimate cloud.
    pub fn multiplier(&self, s_est: f64) -> f64 {
        match self {
            ScaleRatioDirection::Reciprocal => 1.0 / s_est,
            ScaleRatioDirection::AsWritten => s_est,
        }
    }
}

/// Builds one 24-wide row per correspondence.
///
/// `scale_multiplier` rescales the centered estimate cloud before the
/// coordinates enter the row (pass 1.0 to disable scale alignment).
pub fn initial_features(
    corrs: &CorrespondenceSet,
    scale_multiplier: f64,
    normals_est: &[Point3],
    normals_ref: &[Point3],
) -> Result<Vec<FeatureRow>> {
    let n = corrs.len();
    if normals_est.len() != n || normals_ref.len() != n {
        return Err(Error::CountExceedsPoints {
            requested: n,
            available: normals_est.len().min(normals_ref.len()),
        });
    }
    let (_, est_centered) = centroid_and_center(&corrs.est_points())?;
    let (_, ref_centered) = centroid_and_center(&corrs.ref_points())?;

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let o = est_centered[i].scaled(scale_multiplier);
        let p = ref_centered[i];
        let c = [o.x, o.y, o.z, p.x, p.y, p.z];
        let mut row = [0.0; FEATURE_WIDTH];
        for (j, &v) in c.iter().enumerate() {
            row[j] = v;
            row[6 + j] = (0.5 * v).sin();
            row[12 + j] = (0.5 * v).cos();
        }
        row[18] = normals_est[i].x;
        row[19] = normals_est[i].y;
        row[20] = normals_est[i].z;
        row[21] = normals_ref[i].x;
        row[22] = normals_ref[i].y;
        row[23] = normals_ref[i].z;
        rows.push(row);
    }
    Ok(rows)
}
