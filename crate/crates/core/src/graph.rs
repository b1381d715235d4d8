//! Node sampling, KNN group assignment and assembly of the hierarchical
//! local/global graph with its consistency matrices.

use crate::error::{Error, Result};
use crate::geom::{
    centroid_and_center, consistency_matrix_points, CenteredClouds, ConsistencyConfig,
    ConsistencyMatrix, CorrespondenceSet, Point3,
};

/// Anchor points sampled from the reference-side cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    /// Indices into the correspondence set, in selection order.
    pub indices: Vec<usize>,
    pub points: Vec<Point3>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Local and global index groups per node plus their consistency matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct HierGraph {
    pub nodes: NodeSet,
    /// Per node: the k nearest correspondence indices.
    pub local_groups: Vec<Vec<usize>>,
    /// Per node: indices INTO `global_keypoints` of its k nearest keypoints.
    pub global_groups: Vec<Vec<usize>>,
    /// Correspondence indices of the selected global keypoints.
    pub global_keypoints: Vec<usize>,
    pub theta_local: Vec<ConsistencyMatrix>,
    pub theta_global: Vec<ConsistencyMatrix>,
}

impl HierGraph {
    pub fn node_count(&self) -> usize {
        self.local_groups.len()
    }

    /// Fraction of correspondences covered by at least one local group.
    pub fn local_coverage(&self, n: usize) -> f64 {
        let mut seen = vec![false; n];
        for group in &self.local_groups {
            for &i in group {
                seen[i] = true;
            }
        }
        seen.iter().filter(|&&s| s).count() as f64 / n as f64
    }
}

/// Graph construction parameters.
#[derive(Clone, Debug)]
pub struct GraphConfig {
    /// Neighbors per local group.
    pub k_local: usize,
    /// Neighbors per global group (defaults to `k_local`).
    pub k_global: usize,
    /// Number of global keypoints (M).
    pub global_keypoints: usize,
    pub consistency: ConsistencyConfig,
    pub seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            k_local: 32,
            k_global: 32,
            global_keypoints: 100,
            consistency: ConsistencyConfig::default(),
            seed: 0,
        }
    }
}

fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    (*a - *b).norm_squared()
}

/// Farthest-point sampling seeded at the point nearest the cloud centroid.
/// Ties break toward the lower index. Deterministic for fixed inputs.
fn farthest_point_indices(points: &[Point3], count: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if count > n {
        return Err(Error::CountExceedsPoints { requested: count, available: n });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let (centroid, _) = centroid_and_center(points)?;

    let mut seed_idx = 0usize;
    let mut seed_d = dist_sq(&points[0], &centroid);
    for (i, p) in points.iter().enumerate().skip(1) {
        let d = dist_sq(p, &centroid);
        if d < seed_d {
            seed_d = d;
            seed_idx = i;
        }
    }

    let mut selected = Vec::with_capacity(count);
    selected.push(seed_idx);
    let mut min_d: Vec<f64> = points.iter().map(|p| dist_sq(p, &points[seed_idx])).collect();

    while selected.len() < count {
        let mut best = 0usize;
        let mut best_d = min_d[0];
        for (i, &d) in min_d.iter().enumerate().skip(1) {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        selected.push(best);
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, &points[best]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    Ok(selected)
}

/// Samples `count` nodes from the reference-side points by farthest-point
/// sampling. The `seed` is accepted for interface stability; the sampler is
/// fully deterministic and does not consume it.
pub fn sample_nodes(corrs: &CorrespondenceSet, count: usize, _seed: u64) -> Result<NodeSet> {
    let points = corrs.ref_points();
    let indices = farthest_point_indices(&points, count)?;
    let node_points = indices.iter().map(|&i| points[i]).collect();
    Ok(NodeSet { indices, points: node_points })
}

/// For each node, the indices of its `k` nearest reference-side points.
/// Distance ties break toward the lower correspondence index.
pub fn knn_assign(nodes: &NodeSet, corrs: &CorrespondenceSet, k: usize) -> Result<Vec<Vec<usize>>> {
    knn_among(&nodes.points, &corrs.ref_points(), k)
}

fn knn_among(queries: &[Point3], candidates: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k > candidates.len() {
        return Err(Error::CountExceedsPoints { requested: k, available: candidates.len() });
    }
    let mut groups = Vec::with_capacity(queries.len());
    for q in queries {
        let mut dists: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, p)| (dist_sq(q, p), i))
            .collect();
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        groups.push(dists.iter().take(k).map(|&(_, i)| i).collect());
    }
    Ok(groups)
}

/// Deterministic geometric-saliency proxy for global keypoints: farthest-point
/// sampling over the reference cloud, returned in selection order.
pub fn select_global_keypoints(
    corrs: &CorrespondenceSet,
    m: usize,
    _seed: u64,
) -> Result<Vec<usize>> {
    farthest_point_indices(&corrs.ref_points(), m)
}

/// Alternative keypoint selection from externally supplied saliency scores
/// (highest first, ties toward the lower index). Lets a learned detector
/// replace the geometric proxy.
pub fn select_top_saliency(scores: &[f64], m: usize) -> Result<Vec<usize>> {
    if m > scores.len() {
        return Err(Error::CountExceedsPoints { requested: m, available: scores.len() });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order.truncate(m);
    Ok(order)
}

/// Builds local and global groups with their consistency matrices.
pub fn build_graphs(
    corrs: &CorrespondenceSet,
    nodes: &NodeSet,
    config: &GraphConfig,
) -> Result<HierGraph> {
    if config.k_global > config.global_keypoints {
        return Err(Error::CountExceedsPoints {
            requested: config.k_global,
            available: config.global_keypoints,
        });
    }
    let local_groups = knn_assign(nodes, corrs, config.k_local)?;

    let global_keypoints = select_global_keypoints(corrs, config.global_keypoints, config.seed)?;
    let keypoint_points: Vec<Point3> =
        global_keypoints.iter().map(|&i| corrs.items[i].point).collect();
    let global_groups = knn_among(&nodes.points, &keypoint_points, config.k_global)?;

    let clouds = CenteredClouds::from_set(corrs)?;
    let theta_local = local_groups
        .iter()
        .map(|g| consistency_matrix_points(&clouds, g, &config.consistency))
        .collect::<Result<Vec<_>>>()?;
    let theta_global = global_groups
        .iter()
        .map(|g| {
            let corr_indices: Vec<usize> = g.iter().map(|&ki| global_keypoints[ki]).collect();
            consistency_matrix_points(&clouds, &corr_indices, &config.consistency)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(HierGraph {
        nodes: nodes.clone(),
        local_groups,
        global_groups,
        global_keypoints,
        theta_local,
        theta_global,
    })
}
