//! PCA surface normals over k-nearest-neighbor patches.

use super::{centroid_and_center, Point3};
use crate::error::{Error, Result};
use nalgebra::Matrix3;

/// Unit normals plus per-point degeneracy flags (rank-deficient patches fall
/// back to +z).
#[derive(Clone, Debug)]
pub struct NormalSet {
    pub normals: Vec<Point3>,
    pub degenerate: Vec<bool>,
}

/// Normal per point from the covariance of its k nearest neighbors (the point
/// itself included). The smallest-eigenvalue eigenvector is oriented away
/// from the cloud centroid.
pub fn estimate_normals(points: &[Point3], k: usize) -> Result<NormalSet> {
    if k < 3 {
        return Err(Error::GroupTooSmall { size: k, min: 3 });
    }
    if points.len() < k + 1 {
        return Err(Error::CountExceedsPoints { requested: k + 1, available: points.len() });
    }
    let (cloud_centroid, _) = centroid_and_center(points)?;

    let mut normals = Vec::with_capacity(points.len());
    let mut degenerate = Vec::with_capacity(points.len());

    for p in points.iter() {
        let mut dists: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(j, q)| ((*q - *p).norm_squared(), j))
            .collect();
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        // nearest k including the point itself (distance zero sorts first)
        let neighborhood: Vec<Point3> = dists.iter().take(k).map(|&(_, j)| points[j]).collect();

        let (patch_centroid, centered) = centroid_and_center(&neighborhood)?;
        let mut cov = Matrix3::<f64>::zeros();
        for c in &centered {
            cov[(0, 0)] += c.x * c.x;
            cov[(0, 1)] += c.x * c.y;
            cov[(0, 2)] += c.x * c.z;
            cov[(1, 1)] += c.y * c.y;
            cov[(1, 2)] += c.y * c.z;
            cov[(2, 2)] += c.z * c.z;
        }
        cov[(1, 0)] = cov[(0, 1)];
        cov[(2, 0)] = cov[(0, 2)];
        cov[(2, 1)] = cov[(1, 2)];

        let eig = nalgebra::SymmetricEigen::new(cov);
        // indices of eigenvalues sorted ascending
        let mut order = [0usize, 1, 2];
        order.sort_unstable_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let lambda = [
            eig.eigenvalues[order[0]],
            eig.eigenvalues[order[1]],
            eig.eigenvalues[order[2]],
        ];

        // rank < 2: middle eigenvalue vanishes relative to the largest
        let is_degenerate = lambda[2] <= 1e-18 || lambda[1] <= 1e-12 * lambda[2];
        if is_degenerate {
            normals.push(Point3::new(0.0, 0.0, 1.0));
            degenerate.push(true);
            continue;
        }

        let col = eig.eigenvectors.column(order[0]);
        let mut n = Point3::new(col[0], col[1], col[2]).normalized();
        // consistent orientation: point away from the cloud centroid
        let outward = *p - cloud_centroid;
        let reference = if outward.norm() > 1e-12 { outward } else { *p - patch_centroid };
        if n.dot(&reference) < 0.0 {
            n = n.scaled(-1.0);
        }
        normals.push(n);
        degenerate.push(false);
    }
    Ok(NormalSet { normals, degenerate })
}
