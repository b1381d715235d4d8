//! Pinhole projection and back-projection.

use super::{CameraIntrinsics, Pixel, Point3};
use crate::error::{Error, Result};

/// Lifts a pixel with a depth through the inverse pinhole model:
/// `((u - cx) d / fx, (v - cy) d / fy, d)`.
pub fn back_project(pixel: &Pixel, depth: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if depth <= 0.0 {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(Point3::new(
        (pixel.u - k.cx) * depth / k.fx,
        (pixel.v - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Forward pinhole projection of a camera-frame point with positive depth.
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<Pixel> {
    if p.z <= 0.0 {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok(Pixel::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}
