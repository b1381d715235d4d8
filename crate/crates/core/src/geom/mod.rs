//! Camera model, spatial-consistency scoring, scale estimation, normals and
//! initial feature construction.

mod camera;
mod consistency;
mod features;
mod normals;
mod scale;

pub use camera::{back_project, project};
pub use consistency::{
    angle_consistency_pair, centroid_and_center, consistency_matrix, consistency_matrix_points,
    cross_consistency_points, theta_voting_scores, CenteredClouds, ConsistencyConfig,
    ConsistencyMatrix, ConsistencyMode,
};
pub use features::{initial_features, FeatureRow, ScaleRatioDirection, FEATURE_WIDTH};
pub use normals::{estimate_normals, NormalSet};
pub use scale::estimate_scale;

use crate::error::{Error, Result};

/// Norm below which a centered vector is treated as degenerate.
pub const DEGENERACY_EPS: f64 = 1e-9;

/// A 3D point (or vector) in meters.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn normalized(&self) -> Point3 {
        let n = self.norm();
        self.scaled(1.0 / n)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

/// Continuous image coordinates in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Pixel { u, v }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        ((self.u - other.u).powi(2) + (self.v - other.v).powi(2)).sqrt()
    }
}

/// Pinhole camera intrinsics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = CameraIntrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width) {
            return Err(Error::InvalidIntrinsics(format!(
                "cx={} outside (0, width={})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height) {
            return Err(Error::InvalidIntrinsics(format!(
                "cy={} outside (0, height={})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Pixel) -> bool {
        p.u >= 0.0 && p.u < self.width && p.v >= 0.0 && p.v < self.height
    }
}

/// Rigid transform: `x_cam = R * q + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    /// Row-major 3x3 rotation matrix.
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: Point3::ZERO,
        }
    }

    pub fn new(rotation: [[f64; 3]; 3], translation: Point3) -> Result<Self> {
        let pose = Pose { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    /// Checks R^T R = I and det(R) = +1 within 1e-9.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += r[k][i] * r[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::NonFinite {
                        context: format!("rotation not orthonormal at ({i},{j}): {dot}"),
                    });
                }
            }
        }
        if (self.det() - 1.0).abs() > 1e-9 {
            return Err(Error::NonFinite {
                context: format!("rotation determinant {} != +1", self.det()),
            });
        }
        Ok(())
    }

    pub fn det(&self) -> f64 {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn rotate(&self, p: &Point3) -> Point3 {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }

    pub fn transform(&self, p: &Point3) -> Point3 {
        self.rotate(p) + self.translation
    }

    /// self ∘ other: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rot = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    rot[i][j] += self.rotation[i][k] * other.rotation[k][j];
                }
            }
        }
        Pose {
            rotation: rot,
            translation: self.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let inv = Pose { rotation: rt, translation: Point3::ZERO };
        let t = inv.rotate(&self.translation).scaled(-1.0);
        Pose { rotation: rt, translation: t }
    }

    /// Rotation about an arbitrary axis by `angle_rad` (Rodrigues).
    pub fn from_axis_angle(axis: Point3, angle_rad: f64, translation: Point3) -> Pose {
        let a = axis.normalized();
        let (s, c) = angle_rad.sin_cos();
        let omc = 1.0 - c;
        let rotation = [
            [
                c + a.x * a.x * omc,
                a.x * a.y * omc - a.z * s,
                a.x * a.z * omc + a.y * s,
            ],
            [
                a.y * a.x * omc + a.z * s,
                c + a.y * a.y * omc,
                a.y * a.z * omc - a.x * s,
            ],
            [
                a.z * a.x * omc - a.y * s,
                a.z * a.y * omc + a.x * s,
                c + a.z * a.z * omc,
            ],
        ];
        Pose { rotation, translation }
    }
}

/// One putative 2D-pixel / 3D-point match with its back-projected estimate.
#[derive(Clone, Copy, Debug)]
pub struct Correspondence {
    pub pixel: Pixel,
    /// The reference-cloud point q_i (world frame).
    pub point: Point3,
    /// Estimated depth of the pixel, meters.
    pub est_depth: f64,
    /// Back-projection of the pixel at the estimated depth (camera frame).
    pub est_point: Point3,
}

impl Correspondence {
    /// Canonical constructor: derives `est_point` from the pixel and the
    /// estimated depth so the back-projection invariant holds exactly.
    pub fn from_depth(pixel: Pixel, point: Point3, est_depth: f64, k: &CameraIntrinsics) -> Result<Self> {
        let est_point = back_project(&pixel, est_depth, k)?;
        Ok(Correspondence { pixel, point, est_depth, est_point })
    }
}

/// A set of correspondences together with the camera and optional ground truth.
#[derive(Clone, Debug)]
pub struct CorrespondenceSet {
    pub items: Vec<Correspondence>,
    pub intrinsics: CameraIntrinsics,
    pub gt_pose: Option<Pose>,
    pub gt_labels: Option<Vec<bool>>,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>, intrinsics: CameraIntrinsics) -> Self {
        CorrespondenceSet { items, intrinsics, gt_pose: None, gt_labels: None }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn est_points(&self) -> Vec<Point3> {
        self.items.iter().map(|c| c.est_point).collect()
    }

    pub fn ref_points(&self) -> Vec<Point3> {
        self.items.iter().map(|c| c.point).collect()
    }

    /// Checks that every estimate sits on its pixel ray (holds for all
    /// canonically constructed sets; corrupted synthetic clouds with a
    /// cloud-level offset intentionally relax this).
    pub fn check_ray_consistency(&self, tol: f64) -> bool {
        self.items.iter().all(|c| {
            back_project(&c.pixel, c.est_depth, &self.intrinsics)
                .map(|p| (p - c.est_point).norm() <= tol)
                .unwrap_or(false)
        })
    }

    /// Retains items where `keep` is true, carrying labels through.
    pub fn retain_by_mask(&self, keep: &[bool]) -> CorrespondenceSet {
        let items = self
            .items
            .iter()
            .zip(keep)
            .filter_map(|(c, &k)| k.then_some(*c))
            .collect();
        let gt_labels = self.gt_labels.as_ref().map(|labels| {
            labels
                .iter()
                .zip(keep)
                .filter_map(|(&l, &k)| k.then_some(l))
                .collect()
        });
        CorrespondenceSet {
            items,
            intrinsics: self.intrinsics,
            gt_pose: self.gt_pose,
            gt_labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_identity_roundtrip() {
        let p = Pose::identity();
        p.validate().unwrap();
        let q = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(p.transform(&q), q);
    }

    #[test]
    fn pose_compose_inverse_is_identity() {
        let p = Pose::from_axis_angle(Point3::new(1.0, 2.0, -0.5), 0.7, Point3::new(0.3, -1.0, 2.0));
        p.validate().unwrap();
        let id = p.compose(&p.inverse());
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((id.rotation[i][j] - expect).abs() < 1e-12);
            }
        }
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn intrinsics_validation_rejects_bad_values() {
        assert!(CameraIntrinsics::new(0.0, 525.0, 320.0, 240.0, 640.0, 480.0).is_err());
        assert!(CameraIntrinsics::new(525.0, 525.0, 700.0, 240.0, 640.0, 480.0).is_err());
        assert!(CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640.0, 480.0).is_ok());
    }

    #[test]
    fn bad_rotation_rejected() {
        let r = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Pose::new(r, Point3::ZERO).is_err());
    }
}
