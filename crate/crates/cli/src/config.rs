//! Effective run configuration: defaults, overridden by a key-value config
//! file, overridden by command-line flags. The merged result is echoed into
//! every run directory.

use anyhow::{bail, Context, Result};
use i2pfilter::geom::{ConsistencyConfig, ConsistencyMode, ScaleRatioDirection};
use i2pfilter::net::{LossKind, ModelConfig, NetOptions, TrainConfig};
use i2pfilter::pipeline::{CrossThetaMode, PipelineConfig};
use i2pfilter::synth::{OutlierMode, SceneConfig};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub tau: f64,
    pub sigma_d: f64,
    pub mode: ConsistencyMode,
    pub signed_cosine: bool,
    pub k: usize,
    pub k_global: usize,
    pub keypoints: usize,
    /// Node count; 0 means the ceil(N/16) default.
    pub nodes: usize,
    pub normals_k: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub no_reweight: bool,
    pub no_cross_attention: bool,
    pub no_scale_alignment: bool,
    pub mask_mode: bool,
    pub cross_theta: CrossThetaMode,
    pub scale_ratio_direction: ScaleRatioDirection,
    pub ransac_iters: usize,
    pub reproj_threshold_px: f64,
    pub rr_threshold: f64,
    pub inlier_threshold: f64,
    // generation
    pub scenes: usize,
    pub n_points: usize,
    pub outlier_ratio: f64,
    pub outlier_mode: OutlierMode,
    pub scale_min: f64,
    pub scale_max: f64,
    pub depth_bias: f64,
    pub depth_noise: f64,
    pub pixel_noise: f64,
    pub interior_fraction: f64,
    pub force_test: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            tau: 0.2,
            sigma_d: 0.1,
            mode: ConsistencyMode::Angle,
            signed_cosine: false,
            k: 32,
            k_global: 32,
            keypoints: 100,
            nodes: 0,
            normals_k: 16,
            d_model: 128,
            heads: 4,
            blocks: 3,
            lr: 1e-4,
            weight_decay: 1e-6,
            epochs: 50,
            batch_size: 1,
            loss: LossKind::Bce,
            no_reweight: false,
            no_cross_attention: false,
            no_scale_alignment: false,
            mask_mode: false,
            cross_theta: CrossThetaMode::Ones,
            scale_ratio_direction: ScaleRatioDirection::Reciprocal,
            ransac_iters: 1000,
            reproj_threshold_px: 3.0,
            rr_threshold: 0.1,
            inlier_threshold: 0.05,
            scenes: 200,
            n_points: 100,
            outlier_ratio: 0.7,
            outlier_mode: OutlierMode::UniformResample,
            scale_min: 0.8,
            scale_max: 1.5,
            depth_bias: 0.0,
            depth_noise: 0.01,
            pixel_noise: 0.0,
            interior_fraction: 0.3,
            force_test: false,
        }
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => bail!("invalid config value for `{key}`: expected bool, got {other:?}"),
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let fail = |what: &str| format!("invalid config value for `{key}`: {what}");
        macro_rules! num {
            ($field:expr, $ty:ty) => {
                $field = value.parse::<$ty>().with_context(|| fail("not a number"))?
            };
        }
        match key {
            "seed" => num!(self.seed, u64),
            "tau" => num!(self.tau, f64),
            "sigma_d" => num!(self.sigma_d, f64),
            "mode" => self.mode = value.parse().with_context(|| fail("angle|distance"))?,
            "signed_cosine" => self.signed_cosine = parse_bool(key, value)?,
            "k" => num!(self.k, usize),
            "k_global" => num!(self.k_global, usize),
            "keypoints" => num!(self.keypoints, usize),
            "nodes" => num!(self.nodes, usize),
            "normals_k" => num!(self.normals_k, usize),
            "d_model" => num!(self.d_model, usize),
            "heads" => num!(self.heads, usize),
            "blocks" => num!(self.blocks, usize),
            "lr" => num!(self.lr, f64),
            "weight_decay" => num!(self.weight_decay, f64),
            "epochs" => num!(self.epochs, usize),
            "batch_size" => num!(self.batch_size, usize),
            "loss" => self.loss = value.parse().with_context(|| fail("bce|focal"))?,
            "no_reweight" => self.no_reweight = parse_bool(key, value)?,
            "no_cross_attention" => self.no_cross_attention = parse_bool(key, value)?,
            "no_scale_alignment" => self.no_scale_alignment = parse_bool(key, value)?,
            "mask_mode" => self.mask_mode = parse_bool(key, value)?,
            "cross_theta" => {
                self.cross_theta = match value {
                    "ones" => CrossThetaMode::Ones,
                    "geometric" => CrossThetaMode::Geometric,
                    other => bail!(fail(&format!("ones|geometric, got {other:?}"))),
                }
            }
            "scale_ratio_direction" => {
                self.scale_ratio_direction = match value {
                    "reciprocal" => ScaleRatioDirection::Reciprocal,
                    "as_written" => ScaleRatioDirection::AsWritten,
                    other => bail!(fail(&format!("reciprocal|as_written, got {other:?}"))),
                }
            }
            "ransac_iters" => num!(self.ransac_iters, usize),
            "reproj_threshold_px" => num!(self.reproj_threshold_px, f64),
            "rr_threshold" => num!(self.rr_threshold, f64),
            "inlier_threshold" => num!(self.inlier_threshold, f64),
            "scenes" => num!(self.scenes, usize),
            "n_points" => num!(self.n_points, usize),
            "outlier_ratio" => num!(self.outlier_ratio, f64),
            "outlier_mode" => {
                self.outlier_mode = value.parse().with_context(|| fail("uniform_resample|pixel_shuffle"))?
            }
            "scale_min" => num!(self.scale_min, f64),
            "scale_max" => num!(self.scale_max, f64),
            "depth_bias" => num!(self.depth_bias, f64),
            "depth_noise" => num!(self.depth_noise, f64),
            "pixel_noise" => num!(self.pixel_noise, f64),
            "interior_fraction" => num!(self.interior_fraction, f64),
            "force_test" => self.force_test = parse_bool(key, value)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Loads `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (lno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", lno + 1))?;
            self.apply_kv(key.trim(), value.trim())
                .with_context(|| format!("line {}", lno + 1))?;
        }
        Ok(())
    }

    /// Rejects out-of-range values before any work starts.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            bail!("invalid config value for `tau`: must lie in (0, 1), got {}", self.tau);
        }
        if !(self.sigma_d > 0.0) {
            bail!("invalid config value for `sigma_d`: must be positive, got {}", self.sigma_d);
        }
        if !(self.lr > 0.0) {
            bail!("invalid config value for `lr`: must be positive, got {}", self.lr);
        }
        if !(self.outlier_ratio >= 0.0 && self.outlier_ratio < 1.0) {
            bail!(
                "invalid config value for `outlier_ratio`: must lie in [0, 1), got {}",
                self.outlier_ratio
            );
        }
        if !(self.scale_min > 0.0 && self.scale_max >= self.scale_min) {
            bail!(
                "invalid config value for `scale_min`/`scale_max`: bad range {}..{}",
                self.scale_min,
                self.scale_max
            );
        }
        if self.k == 0 || self.k_global == 0 || self.keypoints == 0 {
            bail!("invalid config value for `k`/`k_global`/`keypoints`: must be positive");
        }
        if self.k_global > self.keypoints {
            bail!(
                "invalid config value for `k_global`: {} exceeds keypoints {}",
                self.k_global,
                self.keypoints
            );
        }
        i2pfilter::net::ModelConfig {
            feat_dim: i2pfilter::geom::FEATURE_WIDTH,
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
        }
        .validate()
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    pub fn consistency(&self) -> ConsistencyConfig {
        ConsistencyConfig {
            sigma_d: self.sigma_d,
            mode: self.mode,
            signed_cosine: self.signed_cosine,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            consistency: self.consistency(),
            k_local: self.k,
            k_global: self.k_global,
            global_keypoints: self.keypoints,
            nodes: if self.nodes == 0 { None } else { Some(self.nodes) },
            normals_k: self.normals_k,
            scale_alignment: !self.no_scale_alignment,
            scale_ratio_direction: self.scale_ratio_direction,
            cross_theta: self.cross_theta,
            seed: self.seed,
        }
    }

    pub fn net_options(&self) -> NetOptions {
        NetOptions {
            reweight: !self.no_reweight,
            cross_attention: !self.no_cross_attention,
            mask_mode: self.mask_mode,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feat_dim: i2pfilter::geom::FEATURE_WIDTH,
            d_model: self.d_model,
            heads: self.heads,
            blocks: self.blocks,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            tau: self.tau,
            sigma_d: self.sigma_d,
            loss: self.loss,
        }
    }

    pub fn scene_template(&self) -> SceneConfig {
        SceneConfig {
            n_points: self.n_points,
            pose: None,
            depth_scale: 1.0,
            depth_bias: self.depth_bias,
            depth_noise_sigma: self.depth_noise,
            pixel_noise_px: self.pixel_noise,
            outlier_ratio: self.outlier_ratio,
            outlier_mode: self.outlier_mode,
            seed: self.seed,
            interior_fraction: self.interior_fraction,
            ..Default::default()
        }
    }

    pub fn thresholds(&self) -> i2pfilter::eval::EvalThresholds {
        i2pfilter::eval::EvalThresholds {
            inlier_dist_m: self.inlier_threshold,
            rr_dist_m: self.rr_threshold,
            ransac_iterations: self.ransac_iters,
            reproj_threshold_px: self.reproj_threshold_px,
            seed: self.seed,
        }
    }

    /// Deterministic key-sorted echo of the effective configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        push("batch_size", self.batch_size.to_string());
        push("blocks", self.blocks.to_string());
        push(
            "cross_theta",
            match self.cross_theta {
                CrossThetaMode::Ones => "ones".into(),
                CrossThetaMode::Geometric => "geometric".into(),
            },
        );
        push("d_model", self.d_model.to_string());
        push("depth_bias", self.depth_bias.to_string());
        push("depth_noise", self.depth_noise.to_string());
        push("epochs", self.epochs.to_string());
        push("force_test", self.force_test.to_string());
        push("heads", self.heads.to_string());
        push("inlier_threshold", self.inlier_threshold.to_string());
        push("interior_fraction", self.interior_fraction.to_string());
        push("k", self.k.to_string());
        push("k_global", self.k_global.to_string());
        push("keypoints", self.keypoints.to_string());
        push(
            "loss",
            match self.loss {
                LossKind::Bce => "bce".into(),
                LossKind::Focal { .. } => "focal".into(),
            },
        );
        push("lr", self.lr.to_string());
        push("mask_mode", self.mask_mode.to_string());
        push(
            "mode",
            match self.mode {
                ConsistencyMode::Angle => "angle".into(),
                ConsistencyMode::Distance => "distance".into(),
            },
        );
        push("n_points", self.n_points.to_string());
        push("no_cross_attention", self.no_cross_attention.to_string());
        push("no_reweight", self.no_reweight.to_string());
        push("no_scale_alignment", self.no_scale_alignment.to_string());
        push("nodes", self.nodes.to_string());
        push("normals_k", self.normals_k.to_string());
        push(
            "outlier_mode",
            match self.outlier_mode {
                OutlierMode::UniformResample => "uniform_resample".into(),
                OutlierMode::PixelShuffle => "pixel_shuffle".into(),
            },
        );
        push("outlier_ratio", self.outlier_ratio.to_string());
        push("pixel_noise", self.pixel_noise.to_string());
        push("ransac_iters", self.ransac_iters.to_string());
        push("reproj_threshold_px", self.reproj_threshold_px.to_string());
        push("rr_threshold", self.rr_threshold.to_string());
        push(
            "scale_ratio_direction",
            match self.scale_ratio_direction {
                ScaleRatioDirection::Reciprocal => "reciprocal".into(),
                ScaleRatioDirection::AsWritten => "as_written".into(),
            },
        );
        push("scale_max", self.scale_max.to_string());
        push("scale_min", self.scale_min.to_string());
        push("scenes", self.scenes.to_string());
        push("seed", self.seed.to_string());
        push("sigma_d", self.sigma_d.to_string());
        push("signed_cosine", self.signed_cosine.to_string());
        push("tau", self.tau.to_string());
        push("weight_decay", self.weight_decay.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_kv("bogus", "1").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn out_of_range_tau_is_rejected_with_key() {
        let mut cfg = RunConfig::default();
        cfg.apply_kv("tau", "1.5").unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("tau"));
    }

    #[test]
    fn echo_roundtrips_through_apply() {
        let mut cfg = RunConfig::default();
        cfg.apply_kv("tau", "0.4").unwrap();
        cfg.apply_kv("mode", "distance").unwrap();
        cfg.apply_kv("loss", "focal").unwrap();
        let echo = cfg.echo();
        let mut other = RunConfig::default();
        for line in echo.lines() {
            let (k, v) = line.split_once('=').unwrap();
            other.apply_kv(k.trim(), v.trim()).unwrap();
        }
        assert_eq!(other.echo(), echo);
    }
}
