use super::{invalid, ArmTemplate, SceneError};
use crate::{Point3, RigidTransform, Vector3};
use serde::{Deserialize, Serialize};

/// Half-width of the smooth elbow transition, mm.
pub const DEFAULT_BLEND_HALFWIDTH: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedPose {
    elbow_angle: f64,
    pub global_pose: RigidTransform,
    blend_halfwidth: f64,
}

impl ArticulatedPose {
    pub fn new(elbow_angle: f64, global_pose: RigidTransform, blend_halfwidth: f64) -> Result<Self, SceneError> {
        if !(90.0..=180.0).contains(&elbow_angle) {
            return Err(invalid("elbow_angle", format!("{elbow_angle} outside [90, 180] degrees")));
        }
        if !(blend_halfwidth > 0.0 && blend_halfwidth.is_finite()) {
            return Err(invalid("blend_halfwidth", "must be positive"));
        }
        Ok(Self {
            elbow_angle,
            global_pose,
            blend_halfwidth,
        })
    }

    pub fn straight() -> Self {
        Self {
            elbow_angle: 180.0,
            global_pose: RigidTransform::identity(),
            blend_halfwidth: DEFAULT_BLEND_HALFWIDTH,
        }
    }

    pub fn elbow_angle(&self) -> f64 {
        self.elbow_angle
    }

    pub fn blend_halfwidth(&self) -> f64 {
        self.blend_halfwidth
    }

    /// Rigid forearm motion about the vertical hinge through `elbow`.
    pub fn hinge(&self, elbow: &Point3) -> RigidTransform {
        RigidTransform::about_axis(&Vector3::z(), (180.0 - self.elbow_angle).to_radians(), elbow)
    }

    /// Forearm weight: 0 on the rigid upper arm, 1 on the rigid forearm,
    /// smooth-step across `elbow_x ± blend_halfwidth`.
    pub fn forearm_weight(&self, axial: f64, elbow_x: f64) -> f64 {
        let t = ((axial - (elbow_x - self.blend_halfwidth)) / (2.0 * self.blend_halfwidth)).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    }

    /// Maps a template-frame point with the given axial coordinate.
    pub fn map_point(&self, template: &ArmTemplate, p: &Point3, axial: f64) -> Point3 {
        let elbow = template.joints.elbow;
        let w = self.forearm_weight(axial, elbow.x);
        let hinge = self.hinge(&elbow);
        let blended = Point3::from(p.coords * (1.0 - w) + hinge.apply(p).coords * w);
        self.global_pose.apply(&blended)
    }

    fn map_normal(&self, template: &ArmTemplate, n: &Vector3, axial: f64) -> Vector3 {
        let w = self.forearm_weight(axial, template.joints.elbow.x);
        let r = self.hinge(&template.joints.elbow).rotation;
        let v = (n * (1.0 - w) + r * n * w).normalize();
        self.global_pose.apply_vector(&v)
    }
}

/// Poses a template-frame arm; the result is in world coordinates.
pub fn articulate(template: &ArmTemplate, pose: &ArticulatedPose) -> ArmTemplate {
    let mut out = template.clone();
    out.surface.points = template
        .surface
        .points
        .iter()
        .zip(&template.surface_axial)
        .map(|(p, &s)| pose.map_point(template, p, s))
        .collect();
    if let Some(n) = &template.surface.normals {
        out.surface.normals = Some(
            n.iter()
                .zip(&template.surface_axial)
                .map(|(v, &s)| pose.map_normal(template, v, s))
                .collect(),
        );
    }
    out.centerline.points = template
        .centerline
        .points
        .iter()
        .zip(&template.centerline_axial)
        .map(|(p, &s)| pose.map_point(template, p, s))
        .collect();
    out.joints = template.joints.map(|j| pose.map_point(template, j, j.x));
    out
}
