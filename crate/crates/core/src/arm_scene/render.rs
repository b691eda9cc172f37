use super::{ArmTemplate, DepthImage, SceneError};
use crate::{Matrix3, Point3, PointCloud3, RigidTransform, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Infinite horizontal table at world height `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TablePlane {
    pub z: f64,
}

impl Default for TablePlane {
    fn default() -> Self {
        Self { z: 0.0 }
    }
}

/// Orthographic camera: pose (camera → world), resolution and pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub pose: RigidTransform,
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
}

impl Camera {
    /// Looking straight down from `height`; pixel (0, 0) above `(x0, y0)`,
    /// columns along +x and rows along −y.
    pub fn top_down(x0: f64, y0: f64, height: f64, width: usize, rows: usize, pitch: f64) -> Self {
        Self {
            pose: RigidTransform {
                rotation: Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
                translation: Vector3::new(x0, y0, height),
            },
            width,
            height: rows,
            pitch,
        }
    }

    /// Top-down camera framing `cloud` with a margin on every side.
    pub fn framing(cloud: &PointCloud3, height: f64, pitch: f64, margin: f64) -> Self {
        let (lo, hi) = cloud.bounds().unwrap_or((Point3::origin(), Point3::origin()));
        // Snap the origin to the pitch grid so that framing is shift-stable.
        let x0 = ((lo.x - margin) / pitch).floor() * pitch;
        let y0 = ((hi.y + margin) / pitch).ceil() * pitch;
        let width = ((hi.x + margin - x0) / pitch).ceil() as usize + 1;
        let rows = ((y0 - (lo.y - margin)) / pitch).ceil() as usize + 1;
        Self::top_down(x0, y0, height, width, rows, pitch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub pitch: f64,
    /// Camera height above the table.
    pub camera_height: f64,
    pub margin: f64,
    /// Splat footprint radius; `None` uses 0.75 × the surface sample spacing.
    pub splat_radius: Option<f64>,
    /// Standard deviation of optional Gaussian depth noise; 0 disables it.
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            pitch: 1.0,
            camera_height: 800.0,
            margin: 40.0,
            splat_radius: None,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

/// Rendered image plus, per pixel, the index of the surface sample that
/// produced its depth (`u32::MAX` where the table shows).
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: DepthImage,
    pub owner: Vec<u32>,
}

/// Orthographic splatting of the scene surface over the table plane.
pub fn render_depth(
    scene: &ArmTemplate,
    table: &TablePlane,
    camera: &Camera,
    params: &RenderParams,
) -> Result<DepthImage, SceneError> {
    Ok(render_depth_with_owners(&scene.surface, table, camera, splat_radius(scene, params), params)?.image)
}

fn splat_radius(scene: &ArmTemplate, params: &RenderParams) -> f64 {
    params
        .splat_radius
        .unwrap_or(0.75 * scene.params.sample_spacing)
}

impl Rendered {
    pub fn of(scene: &ArmTemplate, table: &TablePlane, camera: &Camera, params: &RenderParams) -> Result<Self, SceneError> {
        render_depth_with_owners(&scene.surface, table, camera, splat_radius(scene, params), params)
    }
}

pub fn render_depth_with_owners(
    surface: &PointCloud3,
    table: &TablePlane,
    camera: &Camera,
    splat_radius: f64,
    params: &RenderParams,
) -> Result<Rendered, SceneError> {
    if !(camera.pitch > 0.0) || camera.width == 0 || camera.height == 0 {
        return Err(super::invalid("pitch", "camera needs positive pitch and resolution"));
    }
    let mut img = DepthImage::filled(camera.width, camera.height, 0.0, camera.pitch, camera.pose);
    let plane_pt = Point3::new(0.0, 0.0, table.z);
    for r in 0..img.height {
        for c in 0..img.width {
            let d = img
                .ray_plane_depth(r as f64, c as f64, &plane_pt, &Vector3::z())
                .unwrap_or(DepthImage::INVALID);
            img.set(r, c, d);
        }
    }
    let mut owner = vec![u32::MAX; img.width * img.height];
    let inv = camera.pose.inverse();
    let p = camera.pitch;
    let reach = (splat_radius / p).ceil() as i64;
    let r2 = (splat_radius / p).powi(2);
    let mut outside = 0usize;
    for (idx, pt) in surface.points.iter().enumerate() {
        let q = inv.apply(pt);
        let (cf, rf, d) = (q.x / p, q.y / p, q.z);
        let (rc, cc) = (rf.round() as i64, cf.round() as i64);
        if !img.in_bounds(rc, cc) {
            outside += 1;
            continue;
        }
        for r in (rc - reach)..=(rc + reach) {
            for c in (cc - reach)..=(cc + reach) {
                if !img.in_bounds(r, c) {
                    continue;
                }
                let inside = (r == rc && c == cc) || ((r as f64 - rf).powi(2) + (c as f64 - cf).powi(2)) <= r2;
                if !inside {
                    continue;
                }
                let (ru, cu) = (r as usize, c as usize);
                let cur = img.get(ru, cu);
                if d > 0.0 && (cur == DepthImage::INVALID || d < cur) {
                    img.set(ru, cu, d);
                    owner[ru * img.width + cu] = idx as u32;
                }
            }
        }
    }
    if outside > 0 {
        return Err(SceneError::OutOfFrame {
            count: outside,
            width: img.width,
            height: img.height,
        });
    }
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(params.noise_seed);
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| super::invalid("noise_sigma", e.to_string()))?;
        for d in img.depth.iter_mut() {
            if *d > 0.0 {
                *d = (*d + normal.sample(&mut rng)).max(1e-3);
            }
        }
    }
    Ok(Rendered { image: img, owner })
}
