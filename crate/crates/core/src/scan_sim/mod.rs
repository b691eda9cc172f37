//! Simulated ultrasound scan along a planned trajectory: binary vessel
//! cross-sections, the centroid-centering servo, and vessel reconstruction
//! with sub-segment radius estimates.

mod io;
mod recon;

pub use io::{read_poses_csv, write_frames, write_poses_csv, ScanReport};
pub use recon::{radius_report, reconstruct, RadiusReport, ReconstructedVessel, SubSegment, DEFAULT_SUB_SEGMENTS};

use crate::arm_scene::ArmTemplate;
use crate::atlas_traj::ScanTrajectory;
use crate::flow_seg::{mask_centroid, BinaryMask};
use crate::{Matrix3, Point3, RigidTransform, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScanError {
    #[error("vessel not visible in frame {index}")]
    VesselLost { index: usize },
    #[error("need at least 2 frames showing the vessel, got {got}")]
    TooFewFrames { got: usize },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("reconstructed vessel has zero arc length")]
    ZeroLength,
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ScanError {
    fn from(e: std::io::Error) -> Self {
        ScanError::Io(e.to_string())
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScanError {
    ScanError::InvalidParams {
        field,
        reason: reason.into(),
    }
}

/// Image axes in probe coordinates: image x is the probe's y axis, image y
/// (depth) is the probe's z axis, and the image normal is the probe's x axis.
const IMAGE_TO_PROBE: [[f64; 3]; 3] = [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

fn image_to_probe() -> Matrix3 {
    Matrix3::from_row_slice(&IMAGE_TO_PROBE.concat())
}

/// One B-mode stand-in: the vessel cross-section in the probe's image plane.
///
/// Column `u` sits at image x = `(W/2 − u)·pitch` and row `v` at depth
/// `v·pitch` below the probe origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualFrame {
    pub probe_pose: RigidTransform,
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub mask: BinaryMask,
}

impl VirtualFrame {
    /// Image-plane coordinates (mm) of a fractional pixel position.
    pub fn image_coords(&self, u: f64, v: f64) -> Point3 {
        Point3::new((self.width as f64 / 2.0 - u) * self.pitch, v * self.pitch, 0.0)
    }

    pub fn pixel_world(&self, u: f64, v: f64) -> Point3 {
        let q = image_to_probe() * self.image_coords(u, v).coords;
        self.probe_pose.apply(&Point3::from(q))
    }

    /// Mask centroid `(column, row)`, or `None` for an empty mask.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let u = mask_centroid::<f64>(&self.mask).ok()?;
        let (n, rows) = self.mask.ones().fold((0usize, 0usize), |(n, s), (_, y)| (n + 1, s + y));
        Some((u, rows as f64 / n as f64))
    }

    /// Radius of the circle with the mask's area.
    pub fn equivalent_radius(&self) -> f64 {
        self.pitch * (self.mask.count() as f64 / std::f64::consts::PI).sqrt()
    }

    /// Signed lateral error `W/2 − v_x` in pixels.
    pub fn centering_offset(&self) -> Option<f64> {
        self.centroid().map(|(u, _)| self.width as f64 / 2.0 - u)
    }
}

fn segment_distance(q: &Point3, a: &Point3, b: &Point3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((q - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (q - (a + ab * t)).norm()
}

/// Images the vessel of `scene` with the probe at `probe_pose`: a pixel is
/// set when its world position lies within the vessel radius of the
/// centerline polyline.
pub fn image_slice(
    scene: &ArmTemplate,
    probe_pose: &RigidTransform,
    width: usize,
    height: usize,
    pitch: f64,
) -> Result<VirtualFrame, ScanError> {
    if !(pitch > 0.0) || !pitch.is_finite() {
        return Err(invalid("pitch", "must be positive"));
    }
    if width == 0 || height == 0 {
        return Err(invalid("width", "image needs at least one pixel"));
    }
    let mut frame = VirtualFrame {
        probe_pose: *probe_pose,
        width,
        height,
        pitch,
        mask: BinaryMask::new(width, height),
    };
    let world_to_image = RigidTransform {
        rotation: probe_pose.rotation * image_to_probe(),
        translation: probe_pose.translation,
    }
    .inverse();
    let pts: Vec<Point3> = scene.centerline.points.iter().map(|p| world_to_image.apply(p)).collect();
    let r = scene.vessel_radius;
    let half = width as f64 / 2.0;
    for seg in pts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if a.z.min(b.z) > r || a.z.max(b.z) < -r {
            continue;
        }
        let (x_lo, x_hi) = (a.x.min(b.x) - r, a.x.max(b.x) + r);
        let (y_lo, y_hi) = (a.y.min(b.y) - r, a.y.max(b.y) + r);
        let u_lo = (half - x_hi / pitch).floor().max(0.0);
        let u_hi = (half - x_lo / pitch).ceil().min(width as f64 - 1.0);
        let v_lo = (y_lo / pitch).floor().max(0.0);
        let v_hi = (y_hi / pitch).ceil().min(height as f64 - 1.0);
        if u_lo > u_hi || v_lo > v_hi {
            continue;
        }
        for v in v_lo as usize..=v_hi as usize {
            for u in u_lo as usize..=u_hi as usize {
                if frame.mask.get(u, v) {
                    continue;
                }
                let q = frame.image_coords(u as f64, v as f64);
                if segment_distance(&q, &a, &b) <= r {
                    frame.mask.set(u, v, true);
                }
            }
        }
    }
    Ok(frame)
}

/// Calibration between image and probe axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandEye {
    pub image_to_probe: Matrix3,
}

impl Default for HandEye {
    fn default() -> Self {
        Self {
            image_to_probe: image_to_probe(),
        }
    }
}

impl HandEye {
    /// Linear part of the image → base transform for a probe at `pose`, with
    /// the pixel pitch folded in so that pixel offsets map to millimetres.
    pub fn base_from_image(&self, pose: &RigidTransform, pitch: f64) -> Matrix3 {
        pose.rotation * self.image_to_probe * pitch
    }
}

/// Servo memory: the last compensation and the extrapolation weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringState {
    pub last: Option<usize>,
    pub delta_p: Vector3,
    pub sigma: f64,
}

impl CenteringState {
    pub fn new(sigma: f64) -> Result<Self, ScanError> {
        if !(sigma > 0.5 && sigma < 1.0) {
            return Err(invalid("sigma", format!("must lie in (0.5, 1), got {sigma}")));
        }
        Ok(Self {
            last: None,
            delta_p: Vector3::zeros(),
            sigma,
        })
    }
}

/// One compensation event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub index: usize,
    /// `W/2 − v_x` in pixels.
    pub offset_px: f64,
    pub delta_p: Vector3,
}

/// Servo update for the frame taken at trajectory point `index`.
///
/// Outside the deadband, `ΔP = ^bT_I·[(W/2 − v_x), 0, 0]` is computed and
/// `remaining[k − 1] += ΔP·σ^k` for every later point. Within the deadband
/// nothing changes and `None` is returned.
pub fn centering_step(
    frame: &VirtualFrame,
    index: usize,
    remaining: &mut [Point3],
    state: &mut CenteringState,
    hand_eye: &HandEye,
    deadband_px: f64,
) -> Result<Option<Correction>, ScanError> {
    let offset = frame.centering_offset().ok_or(ScanError::VesselLost { index })?;
    if offset.abs() <= deadband_px {
        return Ok(None);
    }
    let delta = hand_eye.base_from_image(&frame.probe_pose, frame.pitch) * Vector3::new(offset, 0.0, 0.0);
    let mut w = 1.0;
    for p in remaining.iter_mut() {
        w *= state.sigma;
        *p += delta * w;
    }
    state.last = Some(index);
    state.delta_p = delta;
    Ok(Some(Correction {
        index,
        offset_px: offset,
        delta_p: delta,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanParams {
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub sigma: f64,
    /// Corrections trigger only when `|W/2 − v_x|` exceeds this many pixels.
    pub deadband_px: f64,
    /// Constant lateral offset (mm along each probe's y axis) added to the plan.
    pub bias: f64,
    /// Stop at the first lost frame instead of continuing on the plan.
    pub abort_on_lost: bool,
    pub hand_eye: HandEye,
}

impl Default for ScanParams {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            pitch: 0.1,
            sigma: 0.8,
            deadband_px: 2.0,
            bias: 0.0,
            abort_on_lost: false,
            hand_eye: HandEye::default(),
        }
    }
}

impl ScanParams {
    pub fn validate(&self) -> Result<(), ScanError> {
        CenteringState::new(self.sigma)?;
        if self.width == 0 || self.height == 0 {
            return Err(invalid("width", "image needs at least one pixel"));
        }
        if !(self.pitch > 0.0) || !self.pitch.is_finite() {
            return Err(invalid("pitch", "must be positive"));
        }
        if !(self.deadband_px >= 0.0) {
            return Err(invalid("deadband_px", "must be non-negative"));
        }
        if !self.bias.is_finite() {
            return Err(invalid("bias", "must be finite"));
        }
        Ok(())
    }
}

/// Per-frame servo record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub index: usize,
    pub lost: bool,
    /// Offset `W/2 − v_x` (px) seen on arrival.
    pub arrival_offset_px: Option<f64>,
    /// Offset in the recorded frame, after any correction.
    pub recorded_offset_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRun {
    /// Recorded frames, one per trajectory point.
    pub frames: Vec<VirtualFrame>,
    /// Poses sent to the robot, bias included.
    pub planned: Vec<RigidTransform>,
    pub executed: Vec<RigidTransform>,
    pub log: Vec<FrameLog>,
    pub corrections: Vec<Correction>,
    /// Largest `|‖P' − P‖ − ‖ΔP‖σ^k|` over all events and later points.
    pub max_decay_residual: f64,
}

impl ScanRun {
    pub fn vessel_lost(&self) -> usize {
        self.log.iter().filter(|l| l.lost).count()
    }
}

/// Runs the servoed scan over every trajectory point.
///
/// At each point the probe images the vessel; outside the deadband it moves
/// by the full `ΔP`, images again (the recorded frame) and extrapolates the
/// correction to the later points.
pub fn run_scan(scene: &ArmTemplate, traj: &ScanTrajectory, params: &ScanParams) -> Result<ScanRun, ScanError> {
    params.validate()?;
    if traj.is_empty() {
        return Err(ScanError::EmptyTrajectory);
    }
    let poses = match &traj.poses {
        Some(p) => p.clone(),
        None => {
            let mut t = traj.clone();
            t.compute_poses(&Vector3::z());
            t.poses.expect("poses computed")
        }
    };
    let planned: Vec<RigidTransform> = poses
        .iter()
        .map(|p| RigidTransform {
            rotation: p.rotation,
            translation: p.translation + p.axis(1) * params.bias,
        })
        .collect();
    let mut positions: Vec<Point3> = planned.iter().map(|p| Point3::from(p.translation)).collect();
    let mut state = CenteringState::new(params.sigma)?;
    let (w, h, pitch) = (params.width, params.height, params.pitch);
    let mut run = ScanRun {
        frames: Vec::with_capacity(planned.len()),
        planned: planned.clone(),
        executed: Vec::with_capacity(planned.len()),
        log: Vec::with_capacity(planned.len()),
        corrections: Vec::new(),
        max_decay_residual: 0.0,
    };
    for i in 0..planned.len() {
        let mut pose = RigidTransform {
            rotation: planned[i].rotation,
            translation: positions[i].coords,
        };
        let mut frame = image_slice(scene, &pose, w, h, pitch)?;
        let arrival = frame.centering_offset();
        let before: Vec<Point3> = positions[i + 1..].to_vec();
        match centering_step(&frame, i, &mut positions[i + 1..], &mut state, &params.hand_eye, params.deadband_px) {
            Ok(Some(c)) => {
                let norm = c.delta_p.norm();
                let mut wk = 1.0;
                for (p, q) in positions[i + 1..].iter().zip(&before) {
                    wk *= params.sigma;
                    run.max_decay_residual = run.max_decay_residual.max(((p - q).norm() - norm * wk).abs());
                }
                positions[i] += c.delta_p;
                pose.translation = positions[i].coords;
                frame = image_slice(scene, &pose, w, h, pitch)?;
                run.corrections.push(c);
            }
            Ok(None) => {}
            Err(ScanError::VesselLost { index }) if !params.abort_on_lost => {
                debug_assert_eq!(index, i);
            }
            Err(e) => return Err(e),
        }
        run.log.push(FrameLog {
            index: i,
            lost: arrival.is_none(),
            arrival_offset_px: arrival,
            recorded_offset_px: frame.centering_offset(),
        });
        run.executed.push(pose);
        run.frames.push(frame);
    }
    Ok(run)
}
