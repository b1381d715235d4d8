//! Pairwise spatial-consistency scoring between the back-projected estimate
//! cloud and the reference cloud.
//!
//! The angle mode compares centroid-centered direction cosines, which cancels
//! any global scale and translation of either cloud. The distance mode keeps
//! the classic metric-difference score and is retained for ablation.

use super::{CorrespondenceSet, Point3, DEGENERACY_EPS};
use crate::error::{Error, Result};

/// Which pairwise score to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConsistencyMode {
    /// Centered direction-cosine difference (scale invariant).
    Angle,
    /// Pairwise distance difference in meters.
    Distance,
}

impl std::str::FromStr for ConsistencyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angle" => Ok(ConsistencyMode::Angle),
            "distance" => Ok(ConsistencyMode::Distance),
            other => Err(Error::Config {
                key: "mode".into(),
                msg: format!("expected angle|distance, got {other}"),
            }),
        }
    }
}

/// Parameters of the consistency score.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyConfig {
    /// Sensitivity parameter; the score hits zero once the raw difference
    /// reaches this value. Unitless in angle mode, meters in distance mode.
    pub sigma_d: f64,
    pub mode: ConsistencyMode,
    /// Compare signed cosines instead of the default absolute values.
    pub signed_cosine: bool,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { sigma_d: 0.1, mode: ConsistencyMode::Angle, signed_cosine: false }
    }
}

/// Symmetric K x K score matrix with unit diagonal, entries in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyMatrix {
    size: usize,
    data: Vec<f64>,
    /// Pairs hit by the point-at-centroid degeneracy rule (scored zero).
    pub degenerate_pairs: usize,
}

impl ConsistencyMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn ones(size: usize) -> ConsistencyMatrix {
        ConsistencyMatrix { size, data: vec![1.0; size * size], degenerate_pairs: 0 }
    }

    /// Rebuilds a matrix from its serialized parts.
    pub fn from_parts(size: usize, data: Vec<f64>, degenerate_pairs: usize) -> crate::error::Result<ConsistencyMatrix> {
        if data.len() != size * size {
            return Err(crate::error::Error::Format(format!(
                "consistency matrix payload {} does not match size {size}",
                data.len()
            )));
        }
        Ok(ConsistencyMatrix { size, data, degenerate_pairs })
    }

    pub fn row_mean_off_diagonal(&self, i: usize) -> f64 {
        if self.size < 2 {
            return 1.0;
        }
        let mut sum = 0.0;
        for j in 0..self.size {
            if j != i {
                sum += self.get(i, j);
            }
        }
        sum / (self.size - 1) as f64
    }
}

/// Arithmetic-mean centroid and the centered copies of the input points.
pub fn centroid_and_center(points: &[Point3]) -> Result<(Point3, Vec<Point3>)> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let n = points.len() as f64;
    let mut sum = Point3::ZERO;
    for p in points {
        sum = sum + *p;
    }
    let centroid = sum.scaled(1.0 / n);
    let centered = points.iter().map(|p| *p - centroid).collect();
    Ok((centroid, centered))
}

/// Both clouds of a correspondence set centered on their full-set centroids.
///
/// Centering always runs over the full set, never a sub-group, so group
/// matrices of the same scene share one frame of reference.
#[derive(Clone, Debug)]
pub struct CenteredClouds {
    pub est: Vec<Point3>,
    pub refp: Vec<Point3>,
    pub est_centroid: Point3,
    pub ref_centroid: Point3,
    /// Original (uncentered) points, kept for the distance mode.
    pub est_raw: Vec<Point3>,
    pub ref_raw: Vec<Point3>,
}

impl CenteredClouds {
    pub fn from_set(corrs: &CorrespondenceSet) -> Result<Self> {
        Self::from_points(&corrs.est_points(), &corrs.ref_points())
    }

    pub fn from_points(est: &[Point3], refp: &[Point3]) -> Result<Self> {
        if est.len() != refp.len() {
            return Err(Error::CountExceedsPoints { requested: est.len(), available: refp.len() });
        }
        let (est_centroid, est_centered) = centroid_and_center(est)?;
        let (ref_centroid, ref_centered) = centroid_and_center(refp)?;
        Ok(CenteredClouds {
            est: est_centered,
            refp: ref_centered,
            est_centroid,
            ref_centroid,
            est_raw: est.to_vec(),
            ref_raw: refp.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.est.len()
    }

    pub fn is_empty(&self) -> bool {
        self.est.is_empty()
    }
}

fn cosine(a: &Point3, b: &Point3) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

/// Angle-based score for one pair of correspondences on centered vectors.
///
/// Returns `max(0, 1 - delta^2 / sigma_d^2)` where delta is the difference of
/// the absolute direction cosines on the two sides. A vector shorter than
/// [`DEGENERACY_EPS`] carries no angular evidence and scores zero.
pub fn angle_consistency_pair(
    oi: &Point3,
    oj: &Point3,
    pi: &Point3,
    pj: &Point3,
    sigma_d: f64,
) -> f64 {
    angle_pair_with(oi, oj, pi, pj, sigma_d, false).unwrap_or(0.0)
}

/// Returns `None` on the point-at-centroid degeneracy.
fn angle_pair_with(
    oi: &Point3,
    oj: &Point3,
    pi: &Point3,
    pj: &Point3,
    sigma_d: f64,
    signed: bool,
) -> Option<f64> {
    if oi.norm() <= DEGENERACY_EPS
        || oj.norm() <= DEGENERACY_EPS
        || pi.norm() <= DEGENERACY_EPS
        || pj.norm() <= DEGENERACY_EPS
    {
        return None;
    }
    let cos_o = cosine(oi, oj);
    let cos_p = cosine(pi, pj);
    let delta = if signed {
        (cos_o - cos_p).abs()
    } else {
        (cos_o.abs() - cos_p.abs()).abs()
    };
    Some((1.0 - delta * delta / (sigma_d * sigma_d)).max(0.0))
}

fn distance_pair(oi: &Point3, oj: &Point3, pi: &Point3, pj: &Point3, sigma_d: f64) -> f64 {
    let d = (*oi - *oj).norm() - (*pi - *pj).norm();
    (1.0 - d * d / (sigma_d * sigma_d)).max(0.0)
}

/// Consistency matrix over a group of indices into an already-centered pair
/// of clouds.
pub fn consistency_matrix_points(
    clouds: &CenteredClouds,
    group: &[usize],
    config: &ConsistencyConfig,
) -> Result<ConsistencyMatrix> {
    let k = group.len();
    if k < 2 {
        return Err(Error::GroupTooSmall { size: k, min: 2 });
    }
    let n = clouds.len();
    for &idx in group {
        if idx >= n {
            return Err(Error::IndexOutOfBounds { index: idx, len: n });
        }
    }
    let mut data = vec![0.0; k * k];
    let mut degenerate = 0usize;
    for a in 0..k {
        data[a * k + a] = 1.0;
        for b in (a + 1)..k {
            let (i, j) = (group[a], group[b]);
            let theta = match config.mode {
                ConsistencyMode::Angle => {
                    match angle_pair_with(
                        &clouds.est[i],
                        &clouds.est[j],
                        &clouds.refp[i],
                        &clouds.refp[j],
                        config.sigma_d,
                        config.signed_cosine,
                    ) {
                        Some(t) => t,
                        None => {
                            degenerate += 1;
                            0.0
                        }
                    }
                }
                ConsistencyMode::Distance => distance_pair(
                    &clouds.est_raw[i],
                    &clouds.est_raw[j],
                    &clouds.ref_raw[i],
                    &clouds.ref_raw[j],
                    config.sigma_d,
                ),
            };
            data[a * k + b] = theta;
            data[b * k + a] = theta;
        }
    }
    Ok(ConsistencyMatrix { size: k, data, degenerate_pairs: degenerate })
}

/// Consistency matrix over a group of a correspondence set, centering on the
/// full set.
pub fn consistency_matrix(
    corrs: &CorrespondenceSet,
    group: &[usize],
    config: &ConsistencyConfig,
) -> Result<ConsistencyMatrix> {
    let clouds = CenteredClouds::from_set(corrs)?;
    consistency_matrix_points(&clouds, group, config)
}

/// Rectangular cross-group score block (rows: `group_a`, cols: `group_b`).
/// Used by the optional geometric cross-attention reweighting.
pub fn cross_consistency_points(
    clouds: &CenteredClouds,
    group_a: &[usize],
    group_b: &[usize],
    config: &ConsistencyConfig,
) -> Result<Vec<f64>> {
    let n = clouds.len();
    for &idx in group_a.iter().chain(group_b) {
        if idx >= n {
            return Err(Error::IndexOutOfBounds { index: idx, len: n });
        }
    }
    let mut data = vec![0.0; group_a.len() * group_b.len()];
    for (a, &i) in group_a.iter().enumerate() {
        for (b, &j) in group_b.iter().enumerate() {
            let theta = match config.mode {
                ConsistencyMode::Angle => angle_pair_with(
                    &clouds.est[i],
                    &clouds.est[j],
                    &clouds.refp[i],
                    &clouds.refp[j],
                    config.sigma_d,
                    config.signed_cosine,
                )
                .unwrap_or(0.0),
                ConsistencyMode::Distance => distance_pair(
                    &clouds.est_raw[i],
                    &clouds.est_raw[j],
                    &clouds.ref_raw[i],
                    &clouds.ref_raw[j],
                    config.sigma_d,
                ),
            };
            data[a * group_b.len() + b] = if i == j { 1.0 } else { theta };
        }
    }
    Ok(data)
}

/// Per-correspondence mean consistency against every other correspondence.
/// A cheap oracle-style score used by ablations and self-tests.
pub fn theta_voting_scores(
    corrs: &CorrespondenceSet,
    config: &ConsistencyConfig,
) -> Result<Vec<f64>> {
    let group: Vec<usize> = (0..corrs.len()).collect();
    let matrix = consistency_matrix(corrs, &group, config)?;
    Ok((0..corrs.len())
        .map(|i| matrix.row_mean_off_diagonal(i))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{back_project, CameraIntrinsics, Pixel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_point(rng: &mut ChaCha8Rng, span: f64) -> Point3 {
        Point3::new(
            rng.random_range(-span..span),
            rng.random_range(-span..span),
            rng.random_range(-span..span),
        )
    }

    #[test]
    fn identical_directions_score_one() {
        let o = Point3::new(1.0, 2.0, 3.0);
        let p = Point3::new(-0.3, 0.5, 1.0);
        assert_eq!(angle_consistency_pair(&o, &o, &p, &p, 0.1), 1.0);
    }

    #[test]
    fn orthogonal_vs_parallel_clamps_to_zero() {
        let oi = Point3::new(1.0, 0.0, 0.0);
        let oj = Point3::new(0.0, 1.0, 0.0);
        let pi = Point3::new(0.0, 0.0, 2.0);
        let pj = Point3::new(0.0, 0.0, 5.0);
        // delta = |0 - 1| = 1, delta^2/sigma^2 = 4 > 1
        assert_eq!(angle_consistency_pair(&oi, &oj, &pi, &pj, 0.5), 0.0);
    }

    #[test]
    fn scaled_cloud_scores_one_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let pi = rand_point(&mut rng, 4.0);
            let pj = rand_point(&mut rng, 4.0);
            let oi = pi.scaled(3.7);
            let oj = pj.scaled(3.7);
            let theta = angle_consistency_pair(&oi, &oj, &pi, &pj, 0.1);
            assert!((theta - 1.0).abs() < 1e-12, "theta = {theta}");
        }
    }

    #[test]
    fn signed_cosine_variant_separates_antipodal_directions() {
        // default absolute-value cosines map antipodal pairs together; the
        // signed variant keeps them apart. The third point keeps the
        // centered pair (0, 1) from collapsing to an exact +/- pair.
        let est = vec![
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(-2.0, 0.0, 0.0),
            Point3::new(0.0, 0.0, 2.0),
        ];
        let refp = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 0.1, 0.0),
            Point3::new(-2.0, 0.0, 0.0),
        ];
        let clouds = CenteredClouds::from_points(&est, &refp).unwrap();
        // centered est pair (0,1): strongly opposed; ref pair: nearly parallel
        let unsigned = consistency_matrix_points(
            &clouds,
            &[0, 1],
            &ConsistencyConfig { sigma_d: 0.5, ..Default::default() },
        )
        .unwrap();
        let signed = consistency_matrix_points(
            &clouds,
            &[0, 1],
            &ConsistencyConfig { sigma_d: 0.5, signed_cosine: true, ..Default::default() },
        )
        .unwrap();
        assert!(unsigned.get(0, 1) > 0.8, "unsigned {}", unsigned.get(0, 1));
        assert_eq!(signed.get(0, 1), 0.0, "signed {}", signed.get(0, 1));
    }

    #[test]
    fn degenerate_vector_scores_zero() {
        let z = Point3::ZERO;
        let p = Point3::new(1.0, 0.0, 0.0);
        assert_eq!(angle_consistency_pair(&z, &p, &p, &p, 0.1), 0.0);
    }

    #[test]
    fn centroid_of_symmetric_pair_is_origin() {
        let pts = vec![Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)];
        let (c, centered) = centroid_and_center(&pts).unwrap();
        assert_eq!(c, Point3::ZERO);
        assert_eq!(centered, pts);
    }

    #[test]
    fn centroid_of_singleton_is_itself() {
        let p = Point3::new(0.3, -0.7, 2.0);
        let (c, centered) = centroid_and_center(&[p]).unwrap();
        assert_eq!(c, p);
        assert_eq!(centered, vec![Point3::ZERO]);
    }

    #[test]
    fn centered_cloud_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..50).map(|_| rand_point(&mut rng, 10.0)).collect();
        let (_, centered) = centroid_and_center(&pts).unwrap();
        let mut mean = Point3::ZERO;
        for p in &centered {
            mean = mean + *p;
        }
        mean = mean.scaled(1.0 / centered.len() as f64);
        assert!(mean.norm() < 1e-12);
    }

    #[test]
    fn empty_set_is_domain_error() {
        assert!(centroid_and_center(&[]).is_err());
    }

    fn synthetic_set(n: usize, seed: u64) -> CorrespondenceSet {
        let k = CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640.0, 480.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..n)
            .map(|_| {
                let pixel = Pixel::new(rng.random_range(10.0..630.0), rng.random_range(10.0..470.0));
                let depth = rng.random_range(1.0..5.0);
                let est_point = back_project(&pixel, depth, &k).unwrap();
                let point = rand_point(&mut rng, 3.0);
                super::super::Correspondence { pixel, point, est_depth: depth, est_point }
            })
            .collect();
        CorrespondenceSet::new(items, k)
    }

    #[test]
    fn group_of_two_identical_after_jitter_is_ones() {
        let mut set = synthetic_set(4, 7);
        // duplicate index 0 into index 1 with a microscopic jitter so the
        // centered vectors stay distinct from the centroid
        set.items[1] = set.items[0];
        set.items[1].point.x += 1e-13;
        let m = consistency_matrix(&set, &[0, 1], &ConsistencyConfig::default()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.get(i, j) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matrix_is_symmetric_unit_diagonal_in_range() {
        let set = synthetic_set(30, 8);
        let group: Vec<usize> = (0..30).collect();
        for mode in [ConsistencyMode::Angle, ConsistencyMode::Distance] {
            let cfg = ConsistencyConfig { mode, ..Default::default() };
            let m = consistency_matrix(&set, &group, &cfg).unwrap();
            for i in 0..30 {
                assert_eq!(m.get(i, i), 1.0);
                for j in 0..30 {
                    let t = m.get(i, j);
                    assert!((0.0..=1.0).contains(&t));
                    assert_eq!(t, m.get(j, i));
                }
            }
        }
    }

    #[test]
    fn group_smaller_than_two_is_domain_error() {
        let set = synthetic_set(5, 9);
        assert!(consistency_matrix(&set, &[0], &ConsistencyConfig::default()).is_err());
    }

    #[test]
    fn angle_mode_ignores_scale_and_offset_corruption_distance_mode_does_not() {
        // est cloud = 2.5 * ref cloud + constant offset: the angle matrix must
        // match the uncorrupted one, the distance matrix must not.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let refp: Vec<Point3> = (0..40).map(|_| rand_point(&mut rng, 2.0)).collect();
        let bias = Point3::new(0.4, -0.2, 0.9);
        let est_clean = refp.clone();
        let est_corrupt: Vec<Point3> = refp.iter().map(|p| p.scaled(2.5) + bias).collect();
        let group: Vec<usize> = (0..refp.len()).collect();

        let clean = CenteredClouds::from_points(&est_clean, &refp).unwrap();
        let corrupt = CenteredClouds::from_points(&est_corrupt, &refp).unwrap();

        let cfg_angle = ConsistencyConfig::default();
        let m_clean = consistency_matrix_points(&clean, &group, &cfg_angle).unwrap();
        let m_corrupt = consistency_matrix_points(&corrupt, &group, &cfg_angle).unwrap();
        let max_diff = m_clean
            .data()
            .iter()
            .zip(m_corrupt.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "angle mode drifted by {max_diff}");

        let cfg_dist = ConsistencyConfig { mode: ConsistencyMode::Distance, ..Default::default() };
        let d_clean = consistency_matrix_points(&clean, &group, &cfg_dist).unwrap();
        let d_corrupt = consistency_matrix_points(&corrupt, &group, &cfg_dist).unwrap();
        let dist_diff = d_clean
            .data()
            .iter()
            .zip(d_corrupt.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dist_diff > 0.5, "distance mode should degrade, diff = {dist_diff}");
    }

    #[test]
    fn voting_scores_separate_inliers_from_outliers() {
        // every estimate derives from the true structure; outliers have the
        // REFERENCE point resampled (mismatched), mirroring the generator
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 60;
        let n_out = 20;
        let structure: Vec<Point3> = (0..n).map(|_| rand_point(&mut rng, 2.0)).collect();
        let pose = crate::geom::Pose::from_axis_angle(
            Point3::new(0.2, 1.0, -0.4),
            0.8,
            Point3::new(0.5, 0.1, 3.0),
        );
        let est: Vec<Point3> = structure.iter().map(|p| pose.transform(p).scaled(1.7)).collect();
        let mut refp = structure.clone();
        for item in refp.iter_mut().take(n_out) {
            *item = rand_point(&mut rng, 2.0);
        }
        let clouds = CenteredClouds::from_points(&est, &refp).unwrap();
        let group: Vec<usize> = (0..n).collect();
        let m = consistency_matrix_points(&clouds, &group, &ConsistencyConfig::default()).unwrap();
        // mean score over pairs of true inliers vs pairs involving an outlier
        let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if i >= n_out && j >= n_out {
                    in_sum += m.get(i, j);
                    in_n += 1.0;
                } else {
                    out_sum += m.get(i, j);
                    out_n += 1.0;
                }
            }
        }
        let mean_in = in_sum / in_n;
        let mean_out = out_sum / out_n;
        assert!(mean_in > 0.45, "inlier-pair mean {mean_in}");
        assert!(mean_out < 0.35, "outlier-pair mean {mean_out}");
    }
}
