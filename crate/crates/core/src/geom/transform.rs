use super::{GeomError, Matrix3, Point3, PointCloud, Vector3};
use crate::Real;
use serde::{Deserialize, Serialize};

/// Rotation plus translation mapping points from one frame into another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct RigidTransform<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform after checking orthonormality and `det = +1`.
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeomError> {
        let t = Self {
            rotation,
            translation,
        };
        t.validate(T::lit(1e-9).max(T::rank_tol() * T::lit(10.0)))?;
        Ok(t)
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation by `angle` radians about `axis` passing through `pivot`.
    pub fn about_axis(axis: &Vector3<T>, angle: T, pivot: &Point3<T>) -> Self {
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle);
        let rotation = *rot.matrix();
        let p = pivot.coords;
        Self {
            rotation,
            translation: p - rotation * p,
        }
    }

    /// Frame whose columns are the given orthonormal axes, placed at `origin`.
    pub fn from_axes(x: Vector3<T>, y: Vector3<T>, z: Vector3<T>, origin: Point3<T>) -> Self {
        Self {
            rotation: Matrix3::from_columns(&[x, y, z]),
            translation: origin.coords,
        }
    }

    pub fn validate(&self, tol: T) -> Result<(), GeomError> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidTransform("non-finite entry".into()));
        }
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > tol {
            return Err(GeomError::InvalidTransform(format!(
                "rotation not orthonormal (max deviation {ortho:?})"
            )));
        }
        let det = r.determinant();
        if (det - T::one()).abs() > tol {
            return Err(GeomError::InvalidTransform(format!("det = {det:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<T>) -> Vector3<T> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Angle of the relative rotation between two transforms, in radians.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        let rel = self.rotation.transpose() * other.rotation;
        let c = (rel.trace() - T::one()) * T::lit(0.5);
        c.clamp(-T::one(), T::one()).acos()
    }

    pub fn axis(&self, i: usize) -> Vector3<T> {
        self.rotation.column(i).into_owned()
    }
}

/// Least-squares rigid transform (no scale) with `R·s_i + t ≈ t_i`.
///
/// Closed form via SVD of the cross-covariance, with the determinant
/// correction that excludes reflections.
pub fn fit_rigid<T: Real>(
    source: &PointCloud<T>,
    target: &PointCloud<T>,
) -> Result<RigidTransform<T>, GeomError> {
    fit_rigid_points(&source.points, &target.points)
}

pub(crate) fn fit_rigid_points<T: Real>(
    src: &[Point3<T>],
    dst: &[Point3<T>],
) -> Result<RigidTransform<T>, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(GeomError::DegenerateConfiguration(format!(
            "need at least 3 correspondences, got {}",
            src.len()
        )));
    }
    let n = T::from_usize(src.len()).unwrap();
    let cs = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cd = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut h = Matrix3::<T>::zeros();
    let mut cov_s = Matrix3::<T>::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s.coords - cs;
        let b = d.coords - cd;
        h += a * b.transpose();
        cov_s += a * a.transpose();
    }

    let eig = cov_s.symmetric_eigen();
    let mut ev: Vec<T> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if ev[0] <= T::zero() || ev[1] <= ev[0] * T::rank_tol() {
        return Err(GeomError::DegenerateConfiguration(
            "source points are collinear".into(),
        ));
    }

    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let mut corr = Matrix3::<T>::identity();
    if d < T::zero() {
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, T::max_value().unwrap()), |acc, (i, &s)| {
                if s < acc.1 {
                    (i, s)
                } else {
                    acc
                }
            });
        corr[(imin, imin)] = -T::one();
    }
    let rotation = v * corr * u.transpose();
    let translation = cd - rotation * cs;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}
