use super::{ScanError, VirtualFrame};
use crate::arm_scene::ArmTemplate;
use crate::{Point3, PointCloud3};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SUB_SEGMENTS: usize = 14;

/// Equal arc-length span of the reconstructed centerline and its mean radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubSegment {
    pub start: f64,
    pub end: f64,
    pub mean_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedVessel {
    /// Frame centroids in scan order.
    pub centerline_points: PointCloud3,
    pub per_point_radius: Vec<f64>,
    pub sub_segments: Vec<SubSegment>,
}

impl ReconstructedVessel {
    /// Cumulative arc length at every centerline point.
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut s = vec![0.0];
        for w in self.centerline_points.points.windows(2) {
            s.push(s.last().unwrap() + (w[1] - w[0]).norm());
        }
        s
    }

    pub fn length(&self) -> f64 {
        *self.arc_lengths().last().unwrap_or(&0.0)
    }

    /// Arc-length weighted mean radius, with the radius interpolated
    /// linearly between centerline points.
    pub fn mean_radius(&self) -> Option<f64> {
        let s = self.arc_lengths();
        let len = *s.last()?;
        (len > 0.0).then(|| integrate(&s, &self.per_point_radius, 0.0, len) / len)
    }

    /// Splits the arc length into `n` equal spans.
    pub fn split(&self, n: usize) -> Result<Vec<SubSegment>, ScanError> {
        if n == 0 {
            return Err(ScanError::InvalidParams {
                field: "n_segments",
                reason: "must be positive".into(),
            });
        }
        let s = self.arc_lengths();
        let len = *s.last().unwrap_or(&0.0);
        if !(len > 0.0) {
            return Err(ScanError::ZeroLength);
        }
        Ok((0..n)
            .map(|k| {
                let (a, b) = (len * k as f64 / n as f64, len * (k + 1) as f64 / n as f64);
                SubSegment {
                    start: a,
                    end: b,
                    mean_radius: integrate(&s, &self.per_point_radius, a, b) / (b - a),
                }
            })
            .collect())
    }
}

/// `∫ r ds` over `[a, b]` for the piecewise-linear radius `r(s)`.
fn integrate(s: &[f64], r: &[f64], a: f64, b: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..s.len().saturating_sub(1) {
        let (s0, s1) = (s[i], s[i + 1]);
        let (lo, hi) = (s0.max(a), s1.min(b));
        if hi <= lo || s1 <= s0 {
            continue;
        }
        let at = |x: f64| r[i] + (r[i + 1] - r[i]) * (x - s0) / (s1 - s0);
        acc += 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    acc
}

/// Centroid and equivalent-circle radius of every frame that shows the
/// vessel, mapped to world coordinates.
pub fn reconstruct(frames: &[VirtualFrame]) -> Result<ReconstructedVessel, ScanError> {
    let mut pts: Vec<Point3> = Vec::new();
    let mut radii = Vec::new();
    for f in frames {
        if let Some((u, v)) = f.centroid() {
            pts.push(f.pixel_world(u, v));
            radii.push(f.equivalent_radius());
        }
    }
    if pts.len() < 2 {
        return Err(ScanError::TooFewFrames { got: pts.len() });
    }
    let mut vessel = ReconstructedVessel {
        centerline_points: PointCloud3::new(pts),
        per_point_radius: radii,
        sub_segments: Vec::new(),
    };
    vessel.sub_segments = vessel.split(DEFAULT_SUB_SEGMENTS)?;
    Ok(vessel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub truth: f64,
    pub segments: Vec<SubSegment>,
    /// Signed `mean − truth` per segment.
    pub errors: Vec<f64>,
    pub global_mean: f64,
    pub global_error: f64,
    pub max_abs_error: f64,
}

/// Per-span mean radii of `vessel` against the template's vessel radius.
pub fn radius_report(vessel: &ReconstructedVessel, n_segments: usize, truth: &ArmTemplate) -> Result<RadiusReport, ScanError> {
    let segments = vessel.split(n_segments)?;
    let r = truth.vessel_radius;
    let errors: Vec<f64> = segments.iter().map(|s| s.mean_radius - r).collect();
    let global_mean = vessel.mean_radius().ok_or(ScanError::ZeroLength)?;
    Ok(RadiusReport {
        truth: r,
        max_abs_error: errors.iter().fold(0.0, |m, e| m.max(e.abs())),
        segments,
        errors,
        global_mean,
        global_error: global_mean - r,
    })
}
