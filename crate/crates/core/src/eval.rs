//! Pose recovery by PnP-RANSAC, ground-truth labeling, and the four
//! evaluation metrics (IR, MRE, MTE, RR).

use crate::error::{Error, Result};
use crate::geom::{back_project, project, CameraIntrinsics, CorrespondenceSet, Point3, Pose};
use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Thresholds and RANSAC settings used by [`evaluate_scene`].
#[derive(Clone, Copy, Debug)]
pub struct EvalThresholds {
    /// 3D distance below which a correspondence counts as an inlier.
    pub inlier_dist_m: f64,
    /// Scene-level registration threshold on the median reprojection distance.
    pub rr_dist_m: f64,
    pub ransac_iterations: usize,
    pub reproj_threshold_px: f64,
    pub seed: u64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        EvalThresholds {
            inlier_dist_m: 0.05,
            rr_dist_m: 0.1,
            ransac_iterations: 1000,
            reproj_threshold_px: 3.0,
            seed: 0,
        }
    }
}

/// Ground-truth inlier labels: a correspondence is an inlier when the pixel
/// ray lifted to the candidate's own ground-truth depth lands within
/// `dist_threshold` of the transformed reference point.
pub fn label_inliers(
    corrs: &CorrespondenceSet,
    gt_pose: &Pose,
    dist_threshold: f64,
) -> Vec<bool> {
    corrs
        .items
        .iter()
        .map(|c| {
            let cam = gt_pose.transform(&c.point);
            if cam.z <= 0.0 {
                return false;
            }
            match back_project(&c.pixel, cam.z, &corrs.intrinsics) {
                Ok(ray_point) => (ray_point - cam).norm() < dist_threshold,
                Err(_) => false,
            }
        })
        .collect()
}

/// Pose hypothesis from >= 6 2D-3D pairs via the DLT on camera-normalized
/// image coordinates, with SVD orthonormalization of the rotation. The 3D
/// side is centered and isotropically scaled first (Hartley normalization).
/// Returns None when the linear system is rank deficient (for instance a
/// coplanar sample).
fn dlt_pose(pairs: &[(Point3, f64, f64)]) -> Option<Pose> {
    dlt_pose_weighted(pairs, None)
}

/// Weighted variant: each pair's two rows are scaled by its weight. Weights
/// proportional to inverse projective depth turn the algebraic residual into
/// an approximation of the geometric one.
fn dlt_pose_weighted(pairs: &[(Point3, f64, f64)], weights: Option<&[f64]>) -> Option<Pose> {
    let n = pairs.len();
    if n < 6 {
        return None;
    }
    let mut centroid = Point3::ZERO;
    for (q, _, _) in pairs {
        centroid = centroid + *q;
    }
    centroid = centroid.scaled(1.0 / n as f64);
    let mean_dist = pairs
        .iter()
        .map(|(q, _, _)| (*q - centroid).norm())
        .sum::<f64>()
        / n as f64;
    if mean_dist < 1e-12 {
        return None;
    }
    let scale = 3.0_f64.sqrt() / mean_dist;

    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (r, (q_raw, xn, yn)) in pairs.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[r]);
        let q = (*q_raw - centroid).scaled(scale * w);
        let row = 2 * r;
        a[(row, 0)] = q.x;
        a[(row, 1)] = q.y;
        a[(row, 2)] = q.z;
        a[(row, 3)] = w;
        a[(row, 8)] = -xn * q.x;
        a[(row, 9)] = -xn * q.y;
        a[(row, 10)] = -xn * q.z;
        a[(row, 11)] = -xn * w;
        let row = row + 1;
        a[(row, 4)] = q.x;
        a[(row, 5)] = q.y;
        a[(row, 6)] = q.z;
        a[(row, 7)] = w;
        a[(row, 8)] = -yn * q.x;
        a[(row, 9)] = -yn * q.y;
        a[(row, 10)] = -yn * q.z;
        a[(row, 11)] = -yn * w;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref()?;
    let sv = &svd.singular_values;
    // nalgebra does not order singular values; locate them explicitly and
    // require a one-dimensional nullspace (the two smallest must separate)
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_unstable_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap());
    let largest = sv[*order.last().unwrap()];
    if sv[order[1]] <= 1e-9 * largest.max(1.0) {
        return None;
    }
    let m = v_t.row(order[0]);

    // undo the 3D normalization: M [q;1] = M' [(q-c)s ; 1]
    let mut p = [0.0f64; 12];
    for i in 0..3 {
        for j in 0..3 {
            p[i * 4 + j] = m[i * 4 + j] * scale;
        }
        p[i * 4 + 3] = m[i * 4 + 3]
            - scale * (m[i * 4] * centroid.x + m[i * 4 + 1] * centroid.y + m[i * 4 + 2] * centroid.z);
    }

    // scale so the third rotation row is unit length
    let r3_norm = (p[8] * p[8] + p[9] * p[9] + p[10] * p[10]).sqrt();
    if r3_norm < 1e-12 {
        return None;
    }
    for v in &mut p {
        *v /= r3_norm;
    }
    // cheirality: flip so sampled points sit in front of the camera
    let mut positive = 0usize;
    for (q, _, _) in pairs {
        let depth = p[8] * q.x + p[9] * q.y + p[10] * q.z + p[11];
        if depth > 0.0 {
            positive += 1;
        }
    }
    if positive * 2 < pairs.len() {
        for v in &mut p {
            *v = -*v;
        }
    }

    let r_raw = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
    let svd_r = r_raw.svd(true, true);
    let u = svd_r.u?;
    let v_t = svd_r.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).scale_mut(-1.0);
        r = u_fixed * v_t;
    }
    if !r.iter().all(|v| v.is_finite()) {
        return None;
    }
    let rotation = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ];
    let translation = Point3::new(p[3], p[7], p[11]);
    if !translation.is_finite() {
        return None;
    }
    Some(Pose { rotation, translation })
}

fn normalized_coords(c: &crate::geom::Correspondence, k: &CameraIntrinsics) -> (Point3, f64, f64) {
    (
        c.point,
        (c.pixel.u - k.cx) / k.fx,
        (c.pixel.v - k.cy) / k.fy,
    )
}

fn score_pose(
    pose: &Pose,
    corrs: &CorrespondenceSet,
    threshold_px: f64,
) -> (usize, f64, Vec<bool>) {
    let mut mask = vec![false; corrs.len()];
    let mut count = 0usize;
    let mut total_err = 0.0;
    for (i, c) in corrs.items.iter().enumerate() {
        let cam = pose.transform(&c.point);
        if cam.z <= 1e-9 {
            continue;
        }
        if let Ok(px) = project(&cam, &corrs.intrinsics) {
            let err = px.distance(&c.pixel);
            if err < threshold_px {
                mask[i] = true;
                count += 1;
                total_err += err;
            }
        }
    }
    (count, total_err, mask)
}

/// Recovered pose plus its consensus set.
#[derive(Clone, Debug)]
pub struct PnpSolution {
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
}

/// Overdetermined refit: one plain solve, then two reweighted rounds with
/// rows scaled by the inverse projective depth of the current estimate.
fn refit_pose(pairs: &[(Point3, f64, f64)]) -> Option<Pose> {
    let mut pose = dlt_pose(pairs)?;
    for _ in 0..2 {
        let weights: Vec<f64> = pairs
            .iter()
            .map(|(q, _, _)| 1.0 / pose.transform(q).z.max(0.05))
            .collect();
        match dlt_pose_weighted(pairs, Some(&weights)) {
            Some(p) => pose = p,
            None => break,
        }
    }
    Some(pose)
}

fn rodrigues(omega: &Point3) -> [[f64; 3]; 3] {
    let angle = omega.norm();
    if angle < 1e-15 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        return r;
    }
    Pose::from_axis_angle(*omega, angle, Point3::ZERO).rotation
}

/// Gauss-Newton polish of the geometric reprojection error over a fixed
/// support set. The linear solve gets the pose into the right basin; this
/// recovers the last millimeters the algebraic residual gives away.
fn refine_pose_geometric(
    start: &Pose,
    corrs: &CorrespondenceSet,
    mask: &[bool],
    iterations: usize,
) -> Pose {
    let k = &corrs.intrinsics;
    let mut pose = *start;
    for _ in 0..iterations {
        let mut h = nalgebra::Matrix6::<f64>::zeros();
        let mut g = nalgebra::Vector6::<f64>::zeros();
        let mut supported = 0usize;
        for (c, &keep) in corrs.items.iter().zip(mask) {
            if !keep {
                continue;
            }
            let x = pose.transform(&c.point);
            if x.z <= 1e-6 {
                continue;
            }
            supported += 1;
            let inv_z = 1.0 / x.z;
            let ju = [k.fx * inv_z, 0.0, -k.fx * x.x * inv_z * inv_z];
            let jv = [0.0, k.fy * inv_z, -k.fy * x.y * inv_z * inv_z];
            let ru = k.fx * x.x * inv_z + k.cx - c.pixel.u;
            let rv = k.fy * x.y * inv_z + k.cy - c.pixel.v;
            // d x / d omega = -[x]_x, d x / d t = I
            let neg_skew = [
                [0.0, x.z, -x.y],
                [-x.z, 0.0, x.x],
                [x.y, -x.x, 0.0],
            ];
            let mut rows = [[0.0f64; 6]; 2];
            for (row, j) in rows.iter_mut().zip([ju, jv]) {
                for col in 0..3 {
                    row[col] =
                        j[0] * neg_skew[0][col] + j[1] * neg_skew[1][col] + j[2] * neg_skew[2][col];
                    row[3 + col] = j[col];
                }
            }
            for (row, r) in rows.iter().zip([ru, rv]) {
                for a in 0..6 {
                    g[a] += row[a] * r;
                    for b in 0..6 {
                        h[(a, b)] += row[a] * row[b];
                    }
                }
            }
        }
        if supported < 3 {
            break;
        }
        let Some(delta) = h.lu().solve(&(-g)) else { break };
        if !delta.iter().all(|v| v.is_finite()) {
            break;
        }
        let omega = Point3::new(delta[0], delta[1], delta[2]);
        let dt = Point3::new(delta[3], delta[4], delta[5]);
        let rot = Pose { rotation: rodrigues(&omega), translation: Point3::ZERO };
        let new_rotation = rot.compose(&pose).rotation;
        let new_translation = rot.rotate(&pose.translation) + dt;
        pose = Pose { rotation: new_rotation, translation: new_translation };
        if delta.norm() < 1e-14 {
            break;
        }
    }
    pose
}

/// Consensus refit with an annealed gate: refit the pose on everything
/// within a widened threshold, shrinking the gate toward the base threshold.
/// Rescues hypotheses whose minimal-sample pose is in the right basin but
/// too imprecise to gather tight consensus directly.
fn local_optimize(
    start: &Pose,
    corrs: &CorrespondenceSet,
    reproj_threshold_px: f64,
) -> (usize, f64, Pose) {
    let mut pose = *start;
    for multiplier in [16.0, 8.0, 4.0, 2.0, 1.0, 1.0] {
        let gate = multiplier * reproj_threshold_px;
        let (count, _, mask) = score_pose(&pose, corrs, gate);
        if count < 6 {
            continue;
        }
        let pairs: Vec<(Point3, f64, f64)> = corrs
            .items
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(c, _)| normalized_coords(c, &corrs.intrinsics))
            .collect();
        if let Some(refit) = refit_pose(&pairs) {
            let polished = refine_pose_geometric(&refit, corrs, &mask, 5);
            let (old_count, old_err, _) = score_pose(&pose, corrs, gate);
            for candidate in [polished, refit] {
                let (new_count, new_err, _) = score_pose(&candidate, corrs, gate);
                if new_count > old_count || (new_count == old_count && new_err < old_err) {
                    pose = candidate;
                    break;
                }
            }
        }
    }
    let (count, _, mask) = score_pose(&pose, corrs, reproj_threshold_px);
    if count >= 6 {
        let polished = refine_pose_geometric(&pose, corrs, &mask, 5);
        let (pc, perr, _) = score_pose(&polished, corrs, reproj_threshold_px);
        let (oc, oerr, _) = score_pose(&pose, corrs, reproj_threshold_px);
        if pc > oc || (pc == oc && perr < oerr) {
            return (pc, perr, polished);
        }
    }
    let (count, err, _) = score_pose(&pose, corrs, reproj_threshold_px);
    (count, err, pose)
}

/// Hypothesize-and-verify pose estimation: 6-point DLT hypotheses scored by
/// reprojection-inlier count (ties by lower total error), each improving
/// hypothesis locally optimized by consensus refits, and the winner refit on
/// its final consensus set. Deterministic per seed.
pub fn solve_pnp_ransac(
    corrs: &CorrespondenceSet,
    iterations: usize,
    reproj_threshold_px: f64,
    seed: u64,
) -> Result<PnpSolution> {
    let n = corrs.len();
    if n < 6 {
        return Err(Error::NotEnoughCorrespondences { min: 6, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Pose)> = None;

    for _ in 0..iterations.max(1) {
        let sample = rand::seq::index::sample(&mut rng, n, 6);
        let pairs: Vec<(Point3, f64, f64)> = sample
            .iter()
            .map(|i| normalized_coords(&corrs.items[i], &corrs.intrinsics))
            .collect();
        let Some(pose) = dlt_pose(&pairs) else { continue };
        let (count, err, _) = score_pose(&pose, corrs, reproj_threshold_px);
        // optimize anything plausible; orthonormalization noise makes raw
        // counts of good hypotheses undershoot badly
        let near_best = match &best {
            None => true,
            Some((bc, _, _)) => count >= 6 || count + 4 >= *bc,
        };
        if near_best {
            let (lo_count, lo_err, lo_pose) = local_optimize(&pose, corrs, reproj_threshold_px);
            let (cand_count, cand_err, cand_pose) =
                if lo_count > count || (lo_count == count && lo_err < err) {
                    (lo_count, lo_err, lo_pose)
                } else {
                    (count, err, pose)
                };
            let improves = match &best {
                None => true,
                Some((bc, be, _)) => cand_count > *bc || (cand_count == *bc && cand_err < *be),
            };
            if improves {
                best = Some((cand_count, cand_err, cand_pose));
            }
        }
    }

    let (base_count, _, base_pose) = best.ok_or(Error::NoConsensus)?;
    if base_count < 6 {
        return Err(Error::NoConsensus);
    }
    let (lo_count, _, lo_pose) = local_optimize(&base_pose, corrs, reproj_threshold_px);
    let pose = if lo_count >= base_count { lo_pose } else { base_pose };
    let (inlier_count, _, inlier_mask) = score_pose(&pose, corrs, reproj_threshold_px);
    Ok(PnpSolution { pose, inlier_mask, inlier_count })
}

/// Geodesic rotation distance in degrees:
/// `acos((trace(R_est^T R_gt) - 1) / 2)` with a clamped domain.
pub fn rotation_error(r_est: &Pose, r_gt: &Pose) -> f64 {
    let (a, b) = (&r_est.rotation, &r_gt.rotation);
    let mut tr = 0.0;
    for i in 0..3 {
        for k in 0..3 {
            tr += a[k][i] * b[k][i];
        }
    }
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Euclidean distance between translations in meters.
pub fn translation_error(t_est: &Pose, t_gt: &Pose) -> f64 {
    (t_est.translation - t_gt.translation).norm()
}

/// Per-scene evaluation outcome.
#[derive(Clone, Copy, Debug)]
pub struct SceneEvaluation {
    pub inlier_ratio: f64,
    pub rotation_error_deg: f64,
    pub translation_error_m: f64,
    pub rr_pass: bool,
    pub median_reproj_dist_m: f64,
    /// Diagnostic: fraction of points whose reprojection distance is within
    /// the RR threshold.
    pub reproj_ratio_within: f64,
    pub pnp_failed: bool,
}

/// Aggregate over a scene set.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub scenes: usize,
    pub inlier_ratio: f64,
    pub mean_rotation_error_deg: f64,
    pub mean_translation_error_m: f64,
    pub registration_recall: f64,
    pub thresholds: EvalThresholds,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Evaluates one (typically filtered) correspondence set against its ground
/// truth: IR at the inlier threshold, pose errors of the RANSAC estimate,
/// and the scene-level registration criterion.
pub fn evaluate_scene(
    corrs: &CorrespondenceSet,
    thresholds: &EvalThresholds,
) -> Result<SceneEvaluation> {
    let gt_pose = corrs.gt_pose.ok_or(Error::MissingPose)?;
    let labels = label_inliers(corrs, &gt_pose, thresholds.inlier_dist_m);
    let inlier_ratio = if labels.is_empty() {
        0.0
    } else {
        labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64
    };

    let pnp = solve_pnp_ransac(
        corrs,
        thresholds.ransac_iterations,
        thresholds.reproj_threshold_px,
        thresholds.seed,
    );
    match pnp {
        Err(Error::NotEnoughCorrespondences { .. }) | Err(Error::NoConsensus) => {
            Ok(SceneEvaluation {
                inlier_ratio,
                rotation_error_deg: f64::NAN,
                translation_error_m: f64::NAN,
                rr_pass: false,
                median_reproj_dist_m: f64::NAN,
                reproj_ratio_within: 0.0,
                pnp_failed: true,
            })
        }
        Err(e) => Err(e),
        Ok(solution) => {
            let mut dists: Vec<f64> = corrs
                .items
                .iter()
                .map(|c| {
                    (solution.pose.transform(&c.point) - gt_pose.transform(&c.point)).norm()
                })
                .collect();
            let within = dists.iter().filter(|&&d| d < thresholds.rr_dist_m).count() as f64
                / dists.len() as f64;
            let med = median(&mut dists);
            Ok(SceneEvaluation {
                inlier_ratio,
                rotation_error_deg: rotation_error(&solution.pose, &gt_pose),
                translation_error_m: translation_error(&solution.pose, &gt_pose),
                rr_pass: med < thresholds.rr_dist_m,
                median_reproj_dist_m: med,
                reproj_ratio_within: within,
                pnp_failed: false,
            })
        }
    }
}

/// Means over scenes; rotation/translation average only the scenes whose
/// pose solve succeeded. A failed solve still counts against recall.
pub fn aggregate(evals: &[SceneEvaluation], thresholds: EvalThresholds) -> MetricsReport {
    let n = evals.len();
    let ir = evals.iter().map(|e| e.inlier_ratio).sum::<f64>() / n.max(1) as f64;
    let solved: Vec<&SceneEvaluation> = evals.iter().filter(|e| !e.pnp_failed).collect();
    let (mre, mte) = if solved.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            solved.iter().map(|e| e.rotation_error_deg).sum::<f64>() / solved.len() as f64,
            solved.iter().map(|e| e.translation_error_m).sum::<f64>() / solved.len() as f64,
        )
    };
    let rr = evals.iter().filter(|e| e.rr_pass).count() as f64 / n.max(1) as f64;
    MetricsReport {
        scenes: n,
        inlier_ratio: ir,
        mean_rotation_error_deg: mre,
        mean_translation_error_m: mte,
        registration_recall: rr,
        thresholds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Correspondence, Pixel};
    use rand::Rng;

    fn test_k() -> CameraIntrinsics {
        CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640.0, 480.0).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-0.8..0.8);
        let t = Point3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(2.0..5.0),
        );
        Pose::from_axis_angle(axis, angle, t)
    }

    /// Builds a scene: world points in general position visible in the
    /// camera, `n_in` correct matches, the rest mismatched, optional pixel
    /// noise.
    fn pnp_scene(
        n: usize,
        n_in: usize,
        pixel_noise: f64,
        seed: u64,
    ) -> (CorrespondenceSet, Pose) {
        let k = test_k();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng);
        let inv = pose.inverse();
        let mut items = Vec::with_capacity(n);
        while items.len() < n {
            let pixel = Pixel::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
            let depth = rng.random_range(1.0..6.0);
            let cam = back_project(&pixel, depth, &k).unwrap();
            let world = inv.transform(&cam);
            let noisy_pixel = Pixel::new(
                pixel.u + pixel_noise * gauss(&mut rng),
                pixel.v + pixel_noise * gauss(&mut rng),
            );
            let point = if items.len() < n_in {
                world
            } else {
                // mismatch: an unrelated world point
                let px2 = Pixel::new(rng.random_range(20.0..620.0), rng.random_range(20.0..460.0));
                let d2 = rng.random_range(1.0..6.0);
                inv.transform(&back_project(&px2, d2, &k).unwrap())
            };
            items.push(Correspondence {
                pixel: noisy_pixel,
                point,
                est_depth: depth,
                est_point: cam,
            });
        }
        let mut set = CorrespondenceSet::new(items, k);
        set.gt_pose = Some(pose);
        (set, pose)
    }

    fn gauss(rng: &mut ChaCha8Rng) -> f64 {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn exact_correspondences_recover_pose_exactly() {
        let (set, gt) = pnp_scene(20, 20, 0.0, 1);
        let sol = solve_pnp_ransac(&set, 1, 3.0, 0).unwrap();
        assert!(rotation_error(&sol.pose, &gt) < 1e-6);
        assert!(translation_error(&sol.pose, &gt) < 1e-8);
        assert_eq!(sol.inlier_count, 20);
    }

    #[test]
    fn too_few_correspondences_fail() {
        let (set, _) = pnp_scene(5, 5, 0.0, 2);
        assert!(matches!(
            solve_pnp_ransac(&set, 10, 3.0, 0),
            Err(Error::NotEnoughCorrespondences { .. })
        ));
    }

    #[test]
    fn labels_flag_perfect_and_displaced_points() {
        let (mut set, gt) = pnp_scene(10, 10, 0.0, 3);
        // displace one reference point 0.2 m laterally
        set.items[4].point.x += 0.2;
        let labels = label_inliers(&set, &gt, 0.05);
        for (i, l) in labels.iter().enumerate() {
            assert_eq!(*l, i != 4, "index {i}");
        }
    }

    #[test]
    fn rotation_error_of_constructed_rotation() {
        let gt = Pose::identity();
        let est = Pose::from_axis_angle(Point3::new(0.0, 0.0, 1.0), 10.0_f64.to_radians(), Point3::ZERO);
        assert!((rotation_error(&est, &gt) - 10.0).abs() < 1e-9);
        assert!((rotation_error(&gt, &gt)).abs() < 1e-9);
        assert_eq!(translation_error(&gt, &gt), 0.0);
    }

    fn mat_to_quat(r: &[[f64; 3]; 3]) -> [f64; 4] {
        let tr = r[0][0] + r[1][1] + r[2][2];
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (r[2][1] - r[1][2]) / s,
                (r[0][2] - r[2][0]) / s,
                (r[1][0] - r[0][1]) / s,
            ]
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            [
                (r[2][1] - r[1][2]) / s,
                0.25 * s,
                (r[0][1] + r[1][0]) / s,
                (r[0][2] + r[2][0]) / s,
            ]
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            [
                (r[0][2] - r[2][0]) / s,
                (r[0][1] + r[1][0]) / s,
                0.25 * s,
                (r[1][2] + r[2][1]) / s,
            ]
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            [
                (r[1][0] - r[0][1]) / s,
                (r[0][2] + r[2][0]) / s,
                (r[1][2] + r[2][1]) / s,
                0.25 * s,
            ]
        }
    }

    #[test]
    fn rotation_error_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let qa = mat_to_quat(&a.rotation);
            let qb = mat_to_quat(&b.rotation);
            let dot: f64 = qa.iter().zip(&qb).map(|(x, y)| x * y).sum();
            let oracle = 2.0 * dot.abs().clamp(0.0, 1.0).acos().to_degrees();
            let got = rotation_error(&a, &b);
            assert!((got - oracle).abs() < 1e-9, "got {got}, oracle {oracle}");
        }
    }

    #[test]
    fn pose_errors_are_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let g = random_pose(&mut rng);
            let (ga, gb) = (g.compose(&a), g.compose(&b));
            assert!((rotation_error(&a, &b) - rotation_error(&ga, &gb)).abs() < 1e-9);
            assert!((translation_error(&a, &b) - translation_error(&ga, &gb)).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluate_perfect_scene() {
        let (set, _) = pnp_scene(30, 30, 0.0, 6);
        let eval = evaluate_scene(&set, &EvalThresholds::default()).unwrap();
        assert_eq!(eval.inlier_ratio, 1.0);
        assert!(eval.rotation_error_deg < 1e-6);
        assert!(eval.translation_error_m < 1e-6);
        assert!(eval.rr_pass);
        assert!(!eval.pnp_failed);
    }

    #[test]
    fn ir_counts_distances_against_threshold() {
        // three correspondences at 3D distances [0.01, 0.2, 0.04]:
        // lateral displacement keeps the lifted ray point fixed
        let (mut set, gt) = pnp_scene(3, 3, 0.0, 7);
        let dir = |p: &Point3, i: usize| {
            // displace orthogonally to the viewing ray
            let cam = gt.transform(p);
            let ray = cam.normalized();
            let up = if ray.x.abs() < 0.9 {
                Point3::new(1.0, 0.0, 0.0)
            } else {
                Point3::new(0.0, 1.0, 0.0)
            };
            let orth = ray.cross(&up).normalized();
            let d = [0.01, 0.2, 0.04][i];
            gt.inverse().transform(&(cam + orth.scaled(d)))
        };
        for i in 0..3 {
            set.items[i].point = dir(&set.items[i].point.clone(), i);
        }
        let labels = label_inliers(&set, &gt, 0.05);
        let ir = labels.iter().filter(|&&l| l).count() as f64 / 3.0;
        assert!((ir - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_mask_never_decreases_ir() {
        for seed in 0..10 {
            let (set, gt) = pnp_scene(40, 25, 0.0, 100 + seed);
            let labels = label_inliers(&set, &gt, 0.05);
            let ir_before = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
            let filtered = set.retain_by_mask(&labels);
            let labels_after = label_inliers(&filtered, &gt, 0.05);
            let ir_after = if labels_after.is_empty() {
                0.0
            } else {
                labels_after.iter().filter(|&&l| l).count() as f64 / labels_after.len() as f64
            };
            assert!(ir_after >= ir_before);
        }
    }

    #[test]
    fn ransac_survives_forty_percent_inliers() {
        let (set, gt) = pnp_scene(100, 40, 1.0, 8);
        let sol = solve_pnp_ransac(&set, 1000, 3.0, 0).unwrap();
        assert!(rotation_error(&sol.pose, &gt) < 1.0);
        assert!(translation_error(&sol.pose, &gt) < 0.01);
    }

    #[test]
    fn aggregate_handles_mixed_outcomes() {
        let evals = vec![
            SceneEvaluation {
                inlier_ratio: 1.0,
                rotation_error_deg: 0.5,
                translation_error_m: 0.01,
                rr_pass: true,
                median_reproj_dist_m: 0.01,
                reproj_ratio_within: 1.0,
                pnp_failed: false,
            },
            SceneEvaluation {
                inlier_ratio: 0.2,
                rotation_error_deg: f64::NAN,
                translation_error_m: f64::NAN,
                rr_pass: false,
                median_reproj_dist_m: f64::NAN,
                reproj_ratio_within: 0.0,
                pnp_failed: true,
            },
        ];
        let report = aggregate(&evals, EvalThresholds::default());
        assert_eq!(report.scenes, 2);
        assert!((report.inlier_ratio - 0.6).abs() < 1e-12);
        assert!((report.registration_recall - 0.5).abs() < 1e-12);
        assert!((report.mean_rotation_error_deg - 0.5).abs() < 1e-12);
    }
}
