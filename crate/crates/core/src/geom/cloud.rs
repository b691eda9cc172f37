use super::{GeomError, Point3, RigidTransform, Vector3};
use crate::Real;
use serde::{Deserialize, Serialize};

/// Ordered set of 3D points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + for<'a> Deserialize<'a>")]
pub struct PointCloud<T: Real> {
    pub points: Vec<Point3<T>>,
    pub normals: Option<Vec<Vector3<T>>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Point3<T>>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Point3<T>>, normals: Vec<Vector3<T>>) -> Result<Self, GeomError> {
        if points.len() != normals.len() {
            return Err(GeomError::LengthMismatch(points.len(), normals.len()));
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normal(&self, i: usize) -> Option<Vector3<T>> {
        self.normals.as_ref().map(|n| n[i])
    }

    /// Checks finiteness and, when normals are present, their unit length.
    pub fn validate(&self) -> Result<(), GeomError> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GeomError::NonFinite(i));
            }
        }
        if let Some(n) = &self.normals {
            if n.len() != self.points.len() {
                return Err(GeomError::LengthMismatch(self.points.len(), n.len()));
            }
            let tol = T::lit(1e-6).max(T::rank_tol() * T::lit(10.0));
            for (i, v) in n.iter().enumerate() {
                if (v.norm() - T::one()).abs() > tol {
                    return Err(GeomError::DegenerateConfiguration(format!(
                        "normal {i} is not unit length"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Option<Point3<T>> {
        if self.is_empty() {
            return None;
        }
        let n = T::from_usize(self.len()).unwrap();
        let sum = self.points.iter().fold(Vector3::zeros(), |a, p| a + p.coords);
        Some(Point3::from(sum / n))
    }

    pub fn transformed(&self, t: &RigidTransform<T>) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| n.iter().map(|v| t.apply_vector(v)).collect()),
        }
    }

    /// Sub-cloud made of the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Concatenates two clouds; normals are kept only if both carry them.
    pub fn concat(&self, other: &Self) -> Self {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let normals = match (&self.normals, &other.normals) {
            (Some(a), Some(b)) => {
                let mut n = a.clone();
                n.extend_from_slice(b);
                Some(n)
            }
            _ => None,
        };
        Self { points, normals }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3<T>, Point3<T>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (
                Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
                Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
            )
        }))
    }

    /// Keeps the first point falling into each cubic voxel of side `voxel`.
    /// Returns the indices of the kept points in original order.
    pub fn voxel_subsample(&self, voxel: T) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        let mut keep = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            let key = (
                (p.x / voxel).floor().as_f64() as i64,
                (p.y / voxel).floor().as_f64() as i64,
                (p.z / voxel).floor().as_f64() as i64,
            );
            if seen.insert(key) {
                keep.push(i);
            }
        }
        keep
    }
}

impl<T: Real> FromIterator<Point3<T>> for PointCloud<T> {
    fn from_iter<I: IntoIterator<Item = Point3<T>>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}
