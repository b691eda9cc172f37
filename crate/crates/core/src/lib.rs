//! Atlas-driven ultrasound scan planning for articulated limbs.
//!
//! The crate builds a synthetic arm scene, extracts the limb surface from a
//! depth image, registers an atlas arm to it non-rigidly, transfers the
//! atlas scan trajectory, and simulates the vessel-centering scan loop
//! through to sub-segment radius estimation.
//!
//! Geometry and segmentation kernels are generic over [`Real`]; the
//! aliases below fix them to `f64` (and `f32` where useful).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arm_scene;
pub mod atlas_traj;
pub mod flow_seg;
pub mod geom;
pub mod nonrigid_reg;
pub mod pipeline;
pub mod scan_sim;
pub mod surface_extract;
mod scalar;

pub use scalar::Real;

pub type Point3 = geom::Point3<f64>;
pub type Vector3 = geom::Vector3<f64>;
pub type Matrix3 = geom::Matrix3<f64>;
pub type PointCloud3 = geom::PointCloud<f64>;
pub type RigidTransform = geom::RigidTransform<f64>;
pub type ObbScale = geom::ObbScale<f64>;
pub type PrincipalBox = geom::PrincipalBox<f64>;
pub type KdTree = geom::KdTree<f64>;

pub type Point3f = geom::Point3<f32>;
pub type PointCloud3f = geom::PointCloud<f32>;
pub type RigidTransformf = geom::RigidTransform<f32>;

#[cfg(test)]
pub(crate) mod testutil;
