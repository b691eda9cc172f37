use super::{GeomError, Matrix3, Point3, PointCloud, Vector3};
use crate::Real;
use serde::{Deserialize, Serialize};

/// Principal-axis box of a cloud: covariance eigenvectors ordered by
/// descending eigenvalue and the projection extents along each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct PrincipalBox<T: Real> {
    pub centroid: Point3<T>,
    pub axes: [Vector3<T>; 3],
    pub variances: [T; 3],
    pub extents: [T; 3],
}

/// Per-axis scale mapping a source principal box onto a target one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct ObbScale<T: Real> {
    pub axes: [Vector3<T>; 3],
    pub extents_source: [T; 3],
    pub extents_target: [T; 3],
    pub factors: [T; 3],
}

impl<T: Real> ObbScale<T> {
    pub fn unit(axes: [Vector3<T>; 3], extents: [T; 3]) -> Self {
        Self {
            axes,
            extents_source: extents,
            extents_target: extents,
            factors: [T::one(); 3],
        }
    }

    /// Scale along the source axes; extents are paired by eigenvalue rank.
    pub fn between(source: &PrincipalBox<T>, target: &PrincipalBox<T>) -> Result<Self, GeomError> {
        let mut factors = [T::one(); 3];
        for (i, f) in factors.iter_mut().enumerate() {
            if source.extents[i] <= T::zero() || target.extents[i] <= T::zero() {
                return Err(GeomError::DegenerateConfiguration(format!(
                    "zero extent along principal axis {i}"
                )));
            }
            *f = target.extents[i] / source.extents[i];
        }
        Ok(Self {
            axes: source.axes,
            extents_source: source.extents,
            extents_target: target.extents,
            factors,
        })
    }

    /// Linear part of the scaling: `Σ f_i a_i a_iᵀ`.
    pub fn matrix(&self) -> Matrix3<T> {
        self.axes
            .iter()
            .zip(&self.factors)
            .fold(Matrix3::zeros(), |m, (a, &f)| m + a * a.transpose() * f)
    }

    /// Scales `p` about `center`.
    pub fn apply(&self, center: &Point3<T>, p: &Point3<T>) -> Point3<T> {
        center + self.matrix() * (p - center)
    }
}

/// Principal-axis analysis of `cloud`.
pub fn pca_obb<T: Real>(cloud: &PointCloud<T>) -> Result<PrincipalBox<T>, GeomError> {
    if cloud.len() < 4 {
        return Err(GeomError::DegenerateConfiguration(format!(
            "need at least 4 points, got {}",
            cloud.len()
        )));
    }
    let c = cloud.centroid().unwrap();
    let n = T::from_usize(cloud.len()).unwrap();
    let cov = cloud.points.iter().fold(Matrix3::zeros(), |m, p| {
        let d = p - c;
        m + d * d.transpose()
    }) / n;

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let variances = order.map(|i| eig.eigenvalues[i]);
    if variances[0] <= T::zero() || variances[2] <= variances[0] * T::rank_tol() {
        return Err(GeomError::DegenerateConfiguration(
            "covariance rank < 3 (points are coplanar)".into(),
        ));
    }
    let axes = order.map(|i| canonical_sign(eig.eigenvectors.column(i).into_owned()));

    let mut extents = [T::zero(); 3];
    for (k, a) in axes.iter().enumerate() {
        let (lo, hi) = cloud.points.iter().fold(
            (T::max_value().unwrap(), T::min_value().unwrap()),
            |(lo, hi), p| {
                let s = a.dot(&(p - c));
                (lo.min(s), hi.max(s))
            },
        );
        extents[k] = hi - lo;
    }
    Ok(PrincipalBox {
        centroid: c,
        axes,
        variances,
        extents,
    })
}

/// Flips `v` so that its largest-magnitude component is positive.
fn canonical_sign<T: Real>(v: Vector3<T>) -> Vector3<T> {
    let v = v.normalize();
    let imax = v.iamax();
    if v[imax] < T::zero() {
        -v
    } else {
        v
    }
}
