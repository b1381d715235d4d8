//! Glue from a raw correspondence set to network-ready inputs: scale
//! alignment, normals, feature rows, node sampling and graph construction.

use crate::error::Result;
use crate::geom::{
    cross_consistency_points, estimate_normals, estimate_scale, initial_features, CenteredClouds,
    ConsistencyConfig, CorrespondenceSet, ScaleRatioDirection, FEATURE_WIDTH,
};
use crate::graph::{build_graphs, sample_nodes, GraphConfig};
use crate::net::{PreparedScene, Tensor};

/// How the cross-attention weights are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CrossThetaMode {
    /// Unweighted cross-attention (all-ones weights).
    #[default]
    Ones,
    /// Angle consistency computed between local members and global keypoints.
    Geometric,
}

/// Everything needed to turn a correspondence set into a [`PreparedScene`].
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub consistency: ConsistencyConfig,
    pub k_local: usize,
    pub k_global: usize,
    /// Number of global keypoints (M).
    pub global_keypoints: usize,
    /// Number of sampled nodes; None picks ceil(N / 16).
    pub nodes: Option<usize>,
    /// Neighborhood size for normal estimation.
    pub normals_k: usize,
    /// Rescale the estimate cloud onto the reference cloud's metric frame.
    pub scale_alignment: bool,
    pub scale_ratio_direction: ScaleRatioDirection,
    pub cross_theta: CrossThetaMode,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            consistency: ConsistencyConfig::default(),
            k_local: 32,
            k_global: 32,
            global_keypoints: 100,
            nodes: None,
            normals_k: 16,
            scale_alignment: true,
            scale_ratio_direction: ScaleRatioDirection::Reciprocal,
            cross_theta: CrossThetaMode::Ones,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn node_count(&self, n: usize) -> usize {
        self.nodes.unwrap_or_else(|| n.div_ceil(16)).clamp(1, n)
    }
}

/// Builds feature rows and the hierarchical graph for one scene.
pub fn prepare_scene(corrs: &CorrespondenceSet, config: &PipelineConfig) -> Result<PreparedScene> {
    let n = corrs.len();
    let scale_multiplier = if config.scale_alignment {
        let s_est = estimate_scale(corrs)?;
        config.scale_ratio_direction.multiplier(s_est)
    } else {
        1.0
    };
    let normals_est = estimate_normals(&corrs.est_points(), config.normals_k)?;
    let normals_ref = estimate_normals(&corrs.ref_points(), config.normals_k)?;
    let rows = initial_features(corrs, scale_multiplier, &normals_est.normals, &normals_ref.normals)?;
    let mut flat = Vec::with_capacity(n * FEATURE_WIDTH);
    for row in &rows {
        flat.extend_from_slice(row);
    }
    let features = Tensor::matrix(n, FEATURE_WIDTH, flat)?;

    let nodes = sample_nodes(corrs, config.node_count(n), config.seed)?;
    let graph_config = GraphConfig {
        k_local: config.k_local.min(n),
        k_global: config.k_global.min(config.global_keypoints.min(n)),
        global_keypoints: config.global_keypoints.min(n),
        consistency: config.consistency,
        seed: config.seed,
    };
    let graph = build_graphs(corrs, &nodes, &graph_config)?;

    let scene = PreparedScene::new(features, graph)?;
    match config.cross_theta {
        CrossThetaMode::Ones => Ok(scene),
        CrossThetaMode::Geometric => {
            let clouds = CenteredClouds::from_set(corrs)?;
            let mut cross = Vec::with_capacity(scene.graph.node_count());
            for (local, global) in scene.graph.local_groups.iter().zip(&scene.graph.global_groups) {
                let global_corr: Vec<usize> = global
                    .iter()
                    .map(|&ki| scene.graph.global_keypoints[ki])
                    .collect();
                let block =
                    cross_consistency_points(&clouds, local, &global_corr, &config.consistency)?;
                cross.push(Tensor::matrix(local.len(), global_corr.len(), block)?);
            }
            scene.with_cross_theta(cross)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneConfig};

    #[test]
    fn prepare_scene_produces_consistent_shapes() {
        let scene = generate_scene(&SceneConfig {
            n_points: 64,
            outlier_ratio: 0.5,
            depth_scale: 1.4,
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let config = PipelineConfig {
            k_local: 12,
            k_global: 8,
            global_keypoints: 30,
            normals_k: 8,
            ..Default::default()
        };
        let prepared = prepare_scene(&scene.corrs, &config).unwrap();
        assert_eq!(prepared.features.rows(), 64);
        assert_eq!(prepared.features.cols(), FEATURE_WIDTH);
        assert_eq!(prepared.graph.node_count(), 64usize.div_ceil(16));
        for g in &prepared.graph.local_groups {
            assert_eq!(g.len(), 12);
        }
        for g in &prepared.graph.global_groups {
            assert_eq!(g.len(), 8);
        }
    }

    #[test]
    fn geometric_cross_theta_blocks_have_matching_shapes() {
        let scene = generate_scene(&SceneConfig { n_points: 50, seed: 4, ..Default::default() })
            .unwrap();
        let config = PipelineConfig {
            k_local: 10,
            k_global: 6,
            global_keypoints: 20,
            normals_k: 8,
            cross_theta: CrossThetaMode::Geometric,
            ..Default::default()
        };
        let prepared = prepare_scene(&scene.corrs, &config).unwrap();
        // all-inlier scene: cross weights are all ones as well
        let opts = crate::net::NetOptions::default();
        let cross = prepared.cross_theta_lg(&opts).unwrap();
        assert_eq!(cross.len(), prepared.graph.node_count());
        for block in cross {
            assert_eq!(block.rows(), 10);
            assert_eq!(block.cols(), 6);
            for &v in block.data() {
                assert!((v - 1.0).abs() < 1e-9);
            }
        }
    }
}
