use super::RegError;
use crate::arm_scene::{DepthImage, Joints, Segment};
use crate::geom::pca_obb;
use crate::surface_extract::{JointPixels, SegmentedArm};
use crate::{Matrix3, ObbScale, Point3, PointCloud3, RigidTransform, Vector3};
use serde::{Deserialize, Serialize};

/// Segmented arm surface with its joint landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSurface {
    pub forearm: PointCloud3,
    pub upperarm: PointCloud3,
    pub joints: Joints,
}

impl ArmSurface {
    /// Joints are the surface points seen at the joint pixels.
    pub fn from_extraction(arm: &SegmentedArm, img: &DepthImage, joints: &JointPixels) -> Self {
        let at = |(r, c): (usize, usize)| img.unproject(r, c);
        Self {
            forearm: arm.forearm.clone(),
            upperarm: arm.upperarm.clone(),
            joints: Joints {
                wrist: at(joints.wrist),
                elbow: at(joints.elbow),
                shoulder: at(joints.shoulder),
            },
        }
    }

    pub fn segment(&self, s: Segment) -> &PointCloud3 {
        match s {
            Segment::Forearm => &self.forearm,
            Segment::UpperArm => &self.upperarm,
        }
    }

    /// Distal then proximal joint of a segment.
    pub fn segment_joints(&self, s: Segment) -> (Point3, Point3) {
        match s {
            Segment::Forearm => (self.joints.wrist, self.joints.elbow),
            Segment::UpperArm => (self.joints.elbow, self.joints.shoulder),
        }
    }

    pub fn union(&self) -> (PointCloud3, Vec<Segment>) {
        let labels = std::iter::repeat_n(Segment::Forearm, self.forearm.len())
            .chain(std::iter::repeat_n(Segment::UpperArm, self.upperarm.len()))
            .collect();
        (self.forearm.concat(&self.upperarm), labels)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            forearm: self.forearm.transformed(t),
            upperarm: self.upperarm.transformed(t),
            joints: self.joints.map(|p| t.apply(p)),
        }
    }
}

/// PCA scaling about `center` followed by a rigid motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAlignment {
    pub segment: Segment,
    pub center: Point3,
    pub scale: ObbScale,
    pub rigid: RigidTransform,
}

impl SegmentAlignment {
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rigid.apply(&self.scale.apply(&self.center, p))
    }

    pub fn apply_cloud(&self, c: &PointCloud3) -> PointCloud3 {
        c.points.iter().map(|p| self.apply(p)).collect()
    }

    /// Linear part of the whole map.
    pub fn linear(&self) -> Matrix3 {
        self.rigid.rotation * self.scale.matrix()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialAlignment {
    pub forearm: SegmentAlignment,
    pub upperarm: SegmentAlignment,
}

impl InitialAlignment {
    pub fn segment(&self, s: Segment) -> &SegmentAlignment {
        match s {
            Segment::Forearm => &self.forearm,
            Segment::UpperArm => &self.upperarm,
        }
    }

    /// The atlas with each segment moved by its own alignment; the elbow is
    /// taken from the forearm map.
    pub fn apply(&self, atlas: &ArmSurface) -> ArmSurface {
        ArmSurface {
            forearm: self.forearm.apply_cloud(&atlas.forearm),
            upperarm: self.upperarm.apply_cloud(&atlas.upperarm),
            joints: Joints {
                wrist: self.forearm.apply(&atlas.joints.wrist),
                elbow: self.forearm.apply(&atlas.joints.elbow),
                shoulder: self.upperarm.apply(&atlas.joints.shoulder),
            },
        }
    }
}

/// Orthonormal frame: joint axis, surface "up" (centroid offset from the
/// axis), and their cross product.
fn segment_frame(cloud_centroid: &Point3, a: &Point3, b: &Point3, seg: Segment) -> Result<Matrix3, RegError> {
    let axis = b - a;
    if axis.norm() < 1e-9 {
        return Err(RegError::DegenerateSegment(seg));
    }
    let u = axis.normalize();
    let off = cloud_centroid - a;
    let up = off - u * off.dot(&u);
    if up.norm() < 1e-9 {
        return Err(RegError::DegenerateSegment(seg));
    }
    let v = up.normalize();
    Ok(Matrix3::from_columns(&[u, v, u.cross(&v)]))
}

pub fn align_segment(atlas: &ArmSurface, scene: &ArmSurface, seg: Segment) -> Result<SegmentAlignment, RegError> {
    let (s_cloud, t_cloud) = (atlas.segment(seg), scene.segment(seg));
    let (sa, sb) = atlas.segment_joints(seg);
    let (ta, tb) = scene.segment_joints(seg);
    if (sb - sa).norm() < 1e-9 || (tb - ta).norm() < 1e-9 {
        return Err(RegError::DegenerateSegment(seg));
    }
    let box_s = pca_obb(s_cloud).map_err(|_| RegError::DegenerateSegment(seg))?;
    let box_t = pca_obb(t_cloud).map_err(|_| RegError::DegenerateSegment(seg))?;
    let scale = ObbScale::between(&box_s, &box_t).map_err(|_| RegError::DegenerateSegment(seg))?;
    let center = box_s.centroid;
    let (sa, sb) = (scale.apply(&center, &sa), scale.apply(&center, &sb));
    let fs = segment_frame(&center, &sa, &sb, seg)?;
    let ft = segment_frame(&box_t.centroid, &ta, &tb, seg)?;
    let rotation = ft * fs.transpose();
    let mid_s = nalgebra::center(&sa, &sb);
    let mid_t = nalgebra::center(&ta, &tb);
    let translation: Vector3 = mid_t.coords - rotation * mid_s.coords;
    Ok(SegmentAlignment {
        segment: seg,
        center,
        scale,
        rigid: RigidTransform { rotation, translation },
    })
}

/// Per-segment PCA scaling and joint-pair rigid alignment of the atlas onto
/// the scene.
pub fn initial_align(atlas: &ArmSurface, scene: &ArmSurface) -> Result<InitialAlignment, RegError> {
    Ok(InitialAlignment {
        forearm: align_segment(atlas, scene, Segment::Forearm)?,
        upperarm: align_segment(atlas, scene, Segment::UpperArm)?,
    })
}
