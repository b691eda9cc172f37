use super::{GeomError, KdTree, Matrix3, PointCloud, Vector3};
use crate::Real;
use rayon::prelude::*;

/// Neighbourhood size used when none is configured.
pub const DEFAULT_NORMAL_K: usize = 20;

/// Per-point normals from the smallest-eigenvalue direction of the k-NN
/// covariance, oriented to have a non-negative dot product with `up_hint`.
pub fn estimate_normals<T: Real>(
    cloud: &PointCloud<T>,
    k: usize,
    up_hint: &Vector3<T>,
) -> Result<PointCloud<T>, GeomError> {
    if k < 3 {
        return Err(GeomError::InvalidK { k, len: cloud.len() });
    }
    if cloud.len() < k {
        return Err(GeomError::InvalidK { k, len: cloud.len() });
    }
    let tree = KdTree::from_cloud(cloud);
    let up = up_hint.normalize();
    let normals: Result<Vec<Vector3<T>>, GeomError> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nb = tree.knn(p, k)?;
            let n = T::from_usize(nb.len()).unwrap();
            let mean = nb
                .iter()
                .fold(Vector3::zeros(), |a, q| a + cloud.points[q.index].coords)
                / n;
            let cov = nb.iter().fold(Matrix3::zeros(), |m, q| {
                let d = cloud.points[q.index].coords - mean;
                m + d * d.transpose()
            });
            let eig = cov.symmetric_eigen();
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
            let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
            if l_max <= T::zero() || l_mid <= l_max * T::rank_tol() {
                return Err(GeomError::DegenerateConfiguration(format!(
                    "neighbourhood of point {i} is rank-deficient"
                )));
            }
            let mut v = eig.eigenvectors.column(order[0]).into_owned().normalize();
            if v.dot(&up) < T::zero() {
                v = -v;
            }
            Ok(v)
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals?),
    })
}
