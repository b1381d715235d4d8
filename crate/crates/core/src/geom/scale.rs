//! Global scale factor between the estimate cloud and the reference cloud.

use super::{centroid_and_center, CorrespondenceSet, DEGENERACY_EPS};
use crate::error::{Error, Result};

/// Mean ratio of centroid distances, estimate over reference:
/// `mean_i ||o_i - o_c|| / ||p_i - p_c||`.
///
/// Terms whose reference point coincides with the centroid carry no ratio and
/// are excluded from the mean; if every term is excluded the set is
/// degenerate.
pub fn estimate_scale(corrs: &CorrespondenceSet) -> Result<f64> {
    if corrs.len() < 2 {
        return Err(Error::NotEnoughCorrespondences { min: 2, got: corrs.len() });
    }
    let (_, est_centered) = centroid_and_center(&corrs.est_points())?;
    let (_, ref_centered) = centroid_and_center(&corrs.ref_points())?;

    let mut sum = 0.0;
    let mut count = 0usize;
    for (o, p) in est_centered.iter().zip(&ref_centered) {
        let lp = p.norm();
        if lp <= DEGENERACY_EPS {
            continue;
        }
        sum += o.norm() / lp;
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateScale);
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{CameraIntrinsics, Correspondence, Pixel, Point3, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set_from_clouds(est: &[Point3], refp: &[Point3]) -> CorrespondenceSet {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640.0, 480.0).unwrap();
        let items = est
            .iter()
            .zip(refp)
            .map(|(o, p)| Correspondence {
                pixel: Pixel::new(320.0, 240.0),
                point: *p,
                est_depth: 1.0,
                est_point: *o,
            })
            .collect();
        CorrespondenceSet::new(items, k)
    }

    fn random_cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect()
    }

    #[test]
    fn identical_clouds_give_unit_scale() {
        let cloud = random_cloud(20, 1);
        let set = set_from_clouds(&cloud, &cloud);
        assert!((estimate_scale(&set).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_plus_scale_recovers_exactly() {
        let refp = random_cloud(50, 2);
        let pose = Pose::from_axis_angle(
            Point3::new(1.0, -2.0, 0.5),
            1.1,
            Point3::new(4.0, -1.0, 2.0),
        );
        let est: Vec<Point3> = refp.iter().map(|p| pose.transform(p).scaled(2.5)).collect();
        let set = set_from_clouds(&est, &refp);
        assert!((estimate_scale(&set).unwrap() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn scale_is_equivariant_in_the_estimate_cloud() {
        let refp = random_cloud(30, 3);
        let est = random_cloud(30, 4);
        let set = set_from_clouds(&est, &refp);
        let s1 = estimate_scale(&set).unwrap();
        let est2: Vec<Point3> = est.iter().map(|p| p.scaled(3.0)).collect();
        let set2 = set_from_clouds(&est2, &refp);
        let s2 = estimate_scale(&set2).unwrap();
        assert!((s2 - 3.0 * s1).abs() < 1e-9 * s1.max(1.0));
    }

    #[test]
    fn centroid_coincident_reference_points_are_excluded() {
        // the third reference point sits exactly on the centroid and carries
        // no ratio; the remaining terms still produce the mean
        let refp = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::ZERO,
        ];
        let est: Vec<Point3> = refp.iter().map(|p| p.scaled(2.0)).collect();
        let set = set_from_clouds(&est, &refp);
        assert!((estimate_scale(&set).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_points_at_centroid_is_domain_error() {
        let refp = vec![Point3::new(1.0, 1.0, 1.0); 4];
        let est = random_cloud(4, 5);
        let set = set_from_clouds(&est, &refp);
        assert!(matches!(estimate_scale(&set), Err(Error::DegenerateScale)));
    }

    #[test]
    fn noisy_depth_recovers_scale_within_five_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let refp = random_cloud(500, 7);
        let pose = Pose::from_axis_angle(Point3::new(0.0, 1.0, 0.0), 0.4, Point3::new(0.0, 0.0, 8.0));
        let est: Vec<Point3> = refp
            .iter()
            .map(|p| {
                let cam = pose.transform(p);
                let noisy = 1.0 + 0.01 * gauss(&mut rng);
                cam.scaled(1.3 * noisy)
            })
            .collect();
        let set = set_from_clouds(&est, &refp);
        let s = estimate_scale(&set).unwrap();
        assert!((s - 1.3).abs() / 1.3 < 0.05, "s = {s}");
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
