//! Foundational geometry: rigid transforms, principal-axis boxes, rigid
//! point-set fitting, nearest-neighbour queries and local surface normals.
//!
//! Everything here is generic over [`Real`](crate::Real); the crate root
//! exports `f64` aliases used by the rest of the pipeline.

mod cloud;
pub mod io;
mod kdtree;
mod normals;
mod pca;
mod transform;

pub use cloud::PointCloud;
pub use kdtree::{knn, KdTree, Neighbor};
pub use normals::{estimate_normals, DEFAULT_NORMAL_K};
pub use pca::{pca_obb, ObbScale, PrincipalBox};
pub use transform::{fit_rigid, RigidTransform};

pub type Point3<T> = nalgebra::Point3<T>;
pub type Vector3<T> = nalgebra::Vector3<T>;
pub type Matrix3<T> = nalgebra::Matrix3<T>;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeomError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("requested {k} neighbours from a cloud of {len} points")]
    InvalidK { k: usize, len: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
}

/// Squared Euclidean distance between two points.
#[inline]
pub fn dist2<T: crate::Real>(a: &Point3<T>, b: &Point3<T>) -> T {
    (a - b).norm_squared()
}
