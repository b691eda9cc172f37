//! Synthetic world: a parametric atlas arm, articulated posing about the
//! elbow, and orthographic depth rendering of the posed arm on a table.

mod articulate;
mod depth;
mod render;
mod template;

pub use articulate::{articulate, ArticulatedPose, DEFAULT_BLEND_HALFWIDTH};
pub use depth::{DepthImage, PixelIndex};
pub use render::{render_depth, render_depth_with_owners, Camera, RenderParams, Rendered, TablePlane};
pub use template::{make_template, ArmTemplate, Joints, RadiusProfile, Segment, TemplateParams};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("{count} point(s) project outside the {width}x{height} image")]
    OutOfFrame { count: usize, width: usize, height: usize },
    #[error("malformed depth image: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for SceneError {
    fn from(e: std::io::Error) -> Self {
        SceneError::Io(e.to_string())
    }
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> SceneError {
    SceneError::InvalidParams {
        field,
        reason: reason.into(),
    }
}

/// Scene description as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub template: TemplateParams,
    /// Elbow angle in degrees.
    pub elbow_angle: f64,
    /// Rotation of the whole arm about the table normal, degrees.
    pub yaw_deg: f64,
    /// Translation of the arm on the table, mm.
    pub offset_x: f64,
    pub offset_y: f64,
    pub blend_halfwidth: f64,
    pub render: RenderParams,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            template: TemplateParams::default(),
            elbow_angle: 180.0,
            yaw_deg: 0.0,
            offset_x: 0.0,
            offset_y: 0.0,
            blend_halfwidth: DEFAULT_BLEND_HALFWIDTH,
            render: RenderParams::default(),
        }
    }
}

impl SceneConfig {
    pub fn pose(&self) -> Result<ArticulatedPose, SceneError> {
        let yaw = crate::RigidTransform::about_axis(
            &crate::Vector3::z(),
            self.yaw_deg.to_radians(),
            &crate::Point3::origin(),
        );
        let global = crate::RigidTransform::from_translation(crate::Vector3::new(self.offset_x, self.offset_y, 0.0))
            .compose(&yaw);
        ArticulatedPose::new(self.elbow_angle, global, self.blend_halfwidth)
    }

    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        toml::from_str(text).map_err(|e| SceneError::Malformed(e.to_string()))
    }

    /// Generates the atlas, poses it and renders the posed arm.
    pub fn build(&self) -> Result<BuiltScene, SceneError> {
        let atlas = make_template(&self.template)?;
        self.build_from(atlas)
    }

    /// As [`SceneConfig::build`] with an already generated atlas.
    pub fn build_from(&self, atlas: ArmTemplate) -> Result<BuiltScene, SceneError> {
        let pose = self.pose()?;
        let posed = articulate(&atlas, &pose);
        let r = &self.render;
        let camera = Camera::framing(&posed.surface, r.camera_height, r.pitch, r.margin);
        let table = TablePlane::default();
        let rendered = Rendered::of(&posed, &table, &camera, r)?;
        Ok(BuiltScene {
            atlas,
            pose,
            posed,
            camera,
            table,
            rendered,
        })
    }
}

/// Everything produced while synthesizing one scene.
#[derive(Debug, Clone)]
pub struct BuiltScene {
    pub atlas: ArmTemplate,
    pub pose: ArticulatedPose,
    pub posed: ArmTemplate,
    pub camera: Camera,
    pub table: TablePlane,
    pub rendered: Rendered,
}

impl BuiltScene {
    pub fn image(&self) -> &DepthImage {
        &self.rendered.image
    }

    /// Joint positions of the posed arm as image pixels.
    pub fn joint_pixels(&self) -> Option<[PixelIndex; 3]> {
        let img = self.image();
        let j = &self.posed.joints;
        Some([
            img.project_pixel(&j.wrist)?,
            img.project_pixel(&j.elbow)?,
            img.project_pixel(&j.shoulder)?,
        ])
    }
}
