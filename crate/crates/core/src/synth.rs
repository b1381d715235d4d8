//! Ground-truth scene generation: box-room structure, depth corruption with
//! scale/bias/noise, exact-count outlier injection, and dataset assembly.

use crate::error::{Error, Result};
use crate::geom::{
    back_project, CameraIntrinsics, Correspondence, CorrespondenceSet, Pixel, Point3, Pose,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// How injected outliers corrupt a correspondence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutlierMode {
    /// Replace the reference point with a uniform draw in the structure
    /// bounding box.
    UniformResample,
    /// Cyclically permute the pixel side among the outlier subset.
    PixelShuffle,
}

impl std::str::FromStr for OutlierMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_resample" => Ok(OutlierMode::UniformResample),
            "pixel_shuffle" => Ok(OutlierMode::PixelShuffle),
            other => Err(Error::Config {
                key: "outlier_mode".into(),
                msg: format!("expected uniform_resample|pixel_shuffle, got {other}"),
            }),
        }
    }
}

/// Generator parameters for one scene.
#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub n_points: usize,
    /// Ground-truth world-to-camera pose; None draws one from the seed.
    pub pose: Option<Pose>,
    pub intrinsics: CameraIntrinsics,
    /// Multiplicative depth corruption (s of the estimate cloud).
    pub depth_scale: f64,
    /// Per-scene constant offset of the estimate cloud along +z, meters.
    /// The stored estimated depth becomes `s * depth + bias (+ noise)`.
    pub depth_bias: f64,
    /// Relative multiplicative Gaussian noise applied to the true depth
    /// before scale and bias.
    pub depth_noise_sigma: f64,
    /// Gaussian pixel noise in pixels (applied to the stored pixel).
    pub pixel_noise_px: f64,
    /// Fraction of correspondences corrupted into outliers (exact count).
    pub outlier_ratio: f64,
    pub outlier_mode: OutlierMode,
    pub seed: u64,
    /// Half extents of the box room the camera sits in.
    pub room_half_extents: Point3,
    /// Fraction of points pulled off the walls into the room interior.
    pub interior_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_points: 100,
            pose: None,
            intrinsics: CameraIntrinsics::new(525.0, 525.0, 320.0, 240.0, 640.0, 480.0).unwrap(),
            depth_scale: 1.0,
            depth_bias: 0.0,
            depth_noise_sigma: 0.0,
            pixel_noise_px: 0.0,
            outlier_ratio: 0.0,
            outlier_mode: OutlierMode::UniformResample,
            seed: 0,
            room_half_extents: Point3::new(3.0, 2.0, 3.0),
            interior_fraction: 0.3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outlier_ratio >= 0.0 && self.outlier_ratio < 1.0) {
            return Err(Error::Config {
                key: "outlier_ratio".into(),
                msg: format!("must lie in [0, 1), got {}", self.outlier_ratio),
            });
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::Config {
                key: "depth_scale".into(),
                msg: format!("must be positive, got {}", self.depth_scale),
            });
        }
        self.intrinsics.validate()
    }
}

/// Provenance kept alongside a generated scene.
#[derive(Clone, Debug)]
pub struct SceneProvenance {
    pub config: SceneConfig,
    pub outlier_count: usize,
    /// True (uncorrupted) depth per correspondence.
    pub true_depths: Vec<f64>,
}

/// A generated scene: labeled correspondences plus the corruption record.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub corrs: CorrespondenceSet,
    pub true_scale: f64,
    pub provenance: SceneProvenance,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_camera(rng: &mut ChaCha8Rng, half: &Point3) -> Pose {
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let pitch = rng.random_range(-0.3..0.3);
    let roll = rng.random_range(-0.1..0.1);
    let ry = Pose::from_axis_angle(Point3::new(0.0, 1.0, 0.0), yaw, Point3::ZERO);
    let rx = Pose::from_axis_angle(Point3::new(1.0, 0.0, 0.0), pitch, Point3::ZERO);
    let rz = Pose::from_axis_angle(Point3::new(0.0, 0.0, 1.0), roll, Point3::ZERO);
    let cam_to_world_rot = ry.compose(&rx).compose(&rz);
    let position = Point3::new(
        rng.random_range(-0.5 * half.x..0.5 * half.x),
        rng.random_range(-0.5 * half.y..0.5 * half.y),
        rng.random_range(-0.5 * half.z..0.5 * half.z),
    );
    let cam_to_world = Pose { rotation: cam_to_world_rot.rotation, translation: position };
    cam_to_world.inverse()
}

/// Distance along `dir` (world units per unit camera depth) at which the ray
/// leaving `origin` exits the axis-aligned room.
fn ray_exit(origin: &Point3, dir: &Point3, half: &Point3) -> f64 {
    let mut t_exit = f64::INFINITY;
    for (o, d, h) in [
        (origin.x, dir.x, half.x),
        (origin.y, dir.y, half.y),
        (origin.z, dir.z, half.z),
    ] {
        if d > 1e-12 {
            t_exit = t_exit.min((h - o) / d);
        } else if d < -1e-12 {
            t_exit = t_exit.min((-h - o) / d);
        }
    }
    t_exit
}

/// Generates one scene. Inlier correspondences project exactly (up to the
/// configured pixel noise); the estimate cloud carries the depth corruption
/// `s * d * (1 + noise)` plus the constant per-scene z offset. Deterministic
/// per seed.
pub fn generate_scene(config: &SceneConfig) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = &config.intrinsics;
    let half = config.room_half_extents;

    let gt_pose = match config.pose {
        Some(p) => {
            p.validate()?;
            p
        }
        None => random_camera(&mut rng, &half),
    };
    let cam_to_world = gt_pose.inverse();
    let cam_pos = cam_to_world.translation;
    if cam_pos.x.abs() >= half.x || cam_pos.y.abs() >= half.y || cam_pos.z.abs() >= half.z {
        return Err(Error::Generation("camera sits outside the room".into()));
    }

    let n = config.n_points;
    let mut pixels = Vec::with_capacity(n);
    let mut world_points = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    let margin = 5.0;
    let mut attempts = 0usize;
    while pixels.len() < n {
        attempts += 1;
        if attempts > 200 * n + 10_000 {
            return Err(Error::Generation("could not sample enough visible structure".into()));
        }
        let pixel = Pixel::new(
            rng.random_range(margin..k.width - margin),
            rng.random_range(margin..k.height - margin),
        );
        // camera ray scaled so the parameter equals camera depth
        let ray_cam = Point3::new((pixel.u - k.cx) / k.fx, (pixel.v - k.cy) / k.fy, 1.0);
        let ray_world = cam_to_world.rotate(&ray_cam);
        let exit = ray_exit(&cam_pos, &ray_world, &half);
        if !exit.is_finite() || exit < 0.5 {
            continue;
        }
        let depth = if rng.random::<f64>() < config.interior_fraction {
            rng.random_range(0.3 * exit..0.9 * exit)
        } else {
            exit
        };
        if depth < 0.3 {
            continue;
        }
        pixels.push(pixel);
        world_points.push(cam_pos + ray_world.scaled(depth));
        depths.push(depth);
    }

    // exact-count outlier selection
    let n_out = (config.outlier_ratio * n as f64).round() as usize;
    if n - n_out < 6 {
        return Err(Error::Generation(format!(
            "{} inliers remain after outlier injection, need at least 6",
            n - n_out
        )));
    }
    let outlier_idx: Vec<usize> = rand::seq::index::sample(&mut rng, n, n_out).into_vec();
    let mut is_outlier = vec![false; n];
    for &i in &outlier_idx {
        is_outlier[i] = true;
    }

    // structure bounding box for resampled outliers
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &world_points {
        lo = Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }

    match config.outlier_mode {
        OutlierMode::UniformResample => {
            for &i in &outlier_idx {
                world_points[i] = Point3::new(
                    rng.random_range(lo.x..=hi.x),
                    rng.random_range(lo.y..=hi.y),
                    rng.random_range(lo.z..=hi.z),
                );
            }
        }
        OutlierMode::PixelShuffle => {
            if outlier_idx.len() == 1 {
                // a 1-cycle would leave the pair intact; resample instead
                let i = outlier_idx[0];
                world_points[i] = Point3::new(
                    rng.random_range(lo.x..=hi.x),
                    rng.random_range(lo.y..=hi.y),
                    rng.random_range(lo.z..=hi.z),
                );
            } else {
                // rotate the pixel side by one among the selected subset
                let saved_px: Vec<Pixel> = outlier_idx.iter().map(|&i| pixels[i]).collect();
                let saved_d: Vec<f64> = outlier_idx.iter().map(|&i| depths[i]).collect();
                let m = outlier_idx.len();
                for (slot, &i) in outlier_idx.iter().enumerate() {
                    let src = (slot + 1) % m;
                    pixels[i] = saved_px[src];
                    depths[i] = saved_d[src];
                }
            }
        }
    }

    // assemble correspondences with the corrupted estimate cloud
    let bias_offset = Point3::new(0.0, 0.0, config.depth_bias);
    let mut items = Vec::with_capacity(n);
    let mut true_depths = Vec::with_capacity(n);
    for i in 0..n {
        let stored_pixel = if config.pixel_noise_px > 0.0 {
            Pixel::new(
                (pixels[i].u + config.pixel_noise_px * gauss(&mut rng))
                    .clamp(0.0, k.width - 1e-6),
                (pixels[i].v + config.pixel_noise_px * gauss(&mut rng))
                    .clamp(0.0, k.height - 1e-6),
            )
        } else {
            pixels[i]
        };
        let noisy_depth = if config.depth_noise_sigma > 0.0 {
            let mut d = depths[i] * (1.0 + config.depth_noise_sigma * gauss(&mut rng));
            if d <= 0.01 {
                d = 0.01;
            }
            d
        } else {
            depths[i]
        };
        let est_base = back_project(&stored_pixel, config.depth_scale * noisy_depth, k)?;
        let est_point = est_base + bias_offset;
        let est_depth = est_point.z;
        if est_depth <= 0.0 {
            return Err(Error::Generation(format!(
                "corrupted depth {est_depth} is non-positive; lower the bias magnitude"
            )));
        }
        items.push(Correspondence {
            pixel: stored_pixel,
            point: world_points[i],
            est_depth,
            est_point,
        });
        true_depths.push(depths[i]);
    }

    let labels: Vec<bool> = is_outlier.iter().map(|&o| !o).collect();
    let mut corrs = CorrespondenceSet::new(items, *k);
    corrs.gt_pose = Some(gt_pose);
    corrs.gt_labels = Some(labels);

    Ok(SyntheticScene {
        corrs,
        true_scale: config.depth_scale,
        provenance: SceneProvenance {
            config: config.clone(),
            outlier_count: n_out,
            true_depths,
        },
    })
}

/// SplitMix64 stream used to derive per-scene seeds from a master seed.
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Dataset split membership, assigned 70/15/15 by scene index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other}"))),
        }
    }
}

pub fn split_for_index(index: usize, n_scenes: usize) -> Split {
    let train_end = (n_scenes as f64 * 0.70).round() as usize;
    let val_end = (n_scenes as f64 * 0.85).round() as usize;
    if index < train_end {
        Split::Train
    } else if index < val_end {
        Split::Val
    } else {
        Split::Test
    }
}

/// Dataset generation parameters.
#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub n_scenes: usize,
    /// Per-scene template; the seed and depth scale are overridden per scene.
    pub template: SceneConfig,
    /// Uniform range the per-scene depth scale is drawn from.
    pub scale_range: (f64, f64),
    pub master_seed: u64,
    /// Force every scene into the test split (single-scene evaluation runs).
    pub force_test: bool,
}

/// One manifest line.
#[derive(Clone, Debug)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub split: Split,
    pub config: SceneConfig,
}

/// Generates `n_scenes` scenes with per-scene seeds derived by SplitMix64
/// from the master seed.
pub fn make_dataset(config: &DatasetConfig) -> Result<(Vec<SyntheticScene>, Vec<ManifestEntry>)> {
    if config.n_scenes == 0 {
        return Err(Error::Config { key: "n_scenes".into(), msg: "must be >= 1".into() });
    }
    if !(config.scale_range.0 > 0.0 && config.scale_range.1 >= config.scale_range.0) {
        return Err(Error::Config {
            key: "scale_range".into(),
            msg: format!("invalid range {:?}", config.scale_range),
        });
    }
    let mut seeder = SplitMix64::new(config.master_seed);
    let mut scale_rng = ChaCha8Rng::seed_from_u64(SplitMix64::new(config.master_seed ^ 0x5CA1E).next_u64());

    let mut scenes = Vec::with_capacity(config.n_scenes);
    let mut manifest = Vec::with_capacity(config.n_scenes);
    for index in 0..config.n_scenes {
        let seed = seeder.next_u64();
        let depth_scale = if config.scale_range.0 == config.scale_range.1 {
            config.scale_range.0
        } else {
            scale_rng.random_range(config.scale_range.0..config.scale_range.1)
        };
        let scene_config = SceneConfig { seed, depth_scale, ..config.template.clone() };
        let scene = generate_scene(&scene_config)?;
        let split = if config.force_test {
            Split::Test
        } else {
            split_for_index(index, config.n_scenes)
        };
        manifest.push(ManifestEntry { index, seed, split, config: scene_config });
        scenes.push(scene);
    }
    Ok((scenes, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::label_inliers;
    use crate::geom::{
        consistency_matrix_points, estimate_scale, CenteredClouds, ConsistencyConfig,
    };

    #[test]
    fn clean_scene_is_all_inliers_with_unit_consistency() {
        let config = SceneConfig { n_points: 60, seed: 5, ..Default::default() };
        let scene = generate_scene(&config).unwrap();
        let labels = scene.corrs.gt_labels.as_ref().unwrap();
        assert!(labels.iter().all(|&l| l));

        let gt = scene.corrs.gt_pose.unwrap();
        let checked = label_inliers(&scene.corrs, &gt, 0.05);
        assert!(checked.iter().all(|&l| l));

        let clouds = CenteredClouds::from_set(&scene.corrs).unwrap();
        let group: Vec<usize> = (0..60).collect();
        let theta = consistency_matrix_points(&clouds, &group, &ConsistencyConfig::default()).unwrap();
        for &v in theta.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        assert!(scene.corrs.check_ray_consistency(1e-12));
    }

    #[test]
    fn outlier_count_is_exact() {
        for mode in [OutlierMode::UniformResample, OutlierMode::PixelShuffle] {
            let config = SceneConfig {
                n_points: 100,
                outlier_ratio: 0.6,
                outlier_mode: mode,
                seed: 9,
                ..Default::default()
            };
            let scene = generate_scene(&config).unwrap();
            let outliers = scene
                .corrs
                .gt_labels
                .as_ref()
                .unwrap()
                .iter()
                .filter(|&&l| !l)
                .count();
            assert_eq!(outliers, 60);
            assert_eq!(scene.provenance.outlier_count, 60);
        }
    }

    #[test]
    fn scale_and_bias_recoverable_through_distance_ratio() {
        let config = SceneConfig {
            n_points: 80,
            depth_scale: 2.5,
            depth_bias: 0.3,
            seed: 11,
            ..Default::default()
        };
        let scene = generate_scene(&config).unwrap();
        let s = estimate_scale(&scene.corrs).unwrap();
        assert!((s - 2.5).abs() < 1e-9, "s = {s}");
    }

    #[test]
    fn corruption_commutes_with_centered_cosines() {
        let clean = generate_scene(&SceneConfig { n_points: 50, seed: 13, ..Default::default() })
            .unwrap();
        let corrupt = generate_scene(&SceneConfig {
            n_points: 50,
            depth_scale: 1.8,
            depth_bias: 0.4,
            seed: 13,
            ..Default::default()
        })
        .unwrap();
        let group: Vec<usize> = (0..50).collect();
        let cfg = ConsistencyConfig::default();
        let a = consistency_matrix_points(
            &CenteredClouds::from_set(&clean.corrs).unwrap(),
            &group,
            &cfg,
        )
        .unwrap();
        let b = consistency_matrix_points(
            &CenteredClouds::from_set(&corrupt.corrs).unwrap(),
            &group,
            &cfg,
        )
        .unwrap();
        let max_diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-9, "max diff {max_diff}");
    }

    #[test]
    fn pixel_shuffle_outliers_fail_the_label_check() {
        let config = SceneConfig {
            n_points: 60,
            outlier_ratio: 0.4,
            outlier_mode: OutlierMode::PixelShuffle,
            seed: 17,
            ..Default::default()
        };
        let scene = generate_scene(&config).unwrap();
        let gt = scene.corrs.gt_pose.unwrap();
        let checked = label_inliers(&scene.corrs, &gt, 0.05);
        let labels = scene.corrs.gt_labels.as_ref().unwrap();
        for (c, l) in checked.iter().zip(labels) {
            assert_eq!(c, l);
        }
    }

    #[test]
    fn too_few_inliers_is_generation_error() {
        let config = SceneConfig { n_points: 10, outlier_ratio: 0.8, seed: 3, ..Default::default() };
        assert!(generate_scene(&config).is_err());
    }

    #[test]
    fn identical_seeds_reproduce_scenes_and_manifest() {
        let dataset_config = DatasetConfig {
            n_scenes: 8,
            template: SceneConfig { n_points: 40, outlier_ratio: 0.3, ..Default::default() },
            scale_range: (0.8, 1.5),
            master_seed: 77,
            force_test: false,
        };
        let (scenes_a, manifest_a) = make_dataset(&dataset_config).unwrap();
        let (scenes_b, manifest_b) = make_dataset(&dataset_config).unwrap();
        for (a, b) in scenes_a.iter().zip(&scenes_b) {
            assert_eq!(a.corrs.items.len(), b.corrs.items.len());
            for (ca, cb) in a.corrs.items.iter().zip(&b.corrs.items) {
                assert_eq!(ca.pixel, cb.pixel);
                assert_eq!(ca.point, cb.point);
                assert_eq!(ca.est_depth, cb.est_depth);
            }
        }
        for (a, b) in manifest_a.iter().zip(&manifest_b) {
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.split, b.split);
            assert_eq!(a.config.depth_scale, b.config.depth_scale);
        }
    }

    #[test]
    fn dataset_split_is_70_15_15() {
        let n = 200;
        let counts = (0..n).fold([0usize; 3], |mut acc, i| {
            match split_for_index(i, n) {
                Split::Train => acc[0] += 1,
                Split::Val => acc[1] += 1,
                Split::Test => acc[2] += 1,
            }
            acc
        });
        assert_eq!(counts, [140, 30, 30]);
        assert_eq!(split_for_index(0, 1), Split::Train);
    }

    #[test]
    fn dataset_mean_ir_tracks_outlier_ratio() {
        let dataset_config = DatasetConfig {
            n_scenes: 50,
            template: SceneConfig { n_points: 100, outlier_ratio: 0.7, ..Default::default() },
            scale_range: (0.8, 1.5),
            master_seed: 123,
            force_test: false,
        };
        let (scenes, _) = make_dataset(&dataset_config).unwrap();
        let mean_ir: f64 = scenes
            .iter()
            .map(|s| {
                let labels = s.corrs.gt_labels.as_ref().unwrap();
                labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64
            })
            .sum::<f64>()
            / scenes.len() as f64;
        assert!((mean_ir - 0.30).abs() < 0.02, "mean IR {mean_ir}");
    }
}
