//! Scan-trajectory planning on the atlas: centerline smoothing and upward
//! projection of the vessel centerline onto the skin.

mod io;

pub use io::{correspondence_ply, read_trajectory_csv, write_trajectory_csv};

use crate::geom::{KdTree, PointCloud};
use crate::{Point3, PointCloud3, RigidTransform, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrajError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("no surface point above centerline point {0}")]
    NoSurfaceAbove(usize),
    #[error("up vector must be finite and non-zero")]
    InvalidUp,
    #[error("malformed trajectory: {0}")]
    Malformed(String),
}

/// Ordered skin points with their centerline correspondences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanTrajectory {
    pub surface_points: PointCloud3,
    /// Index of the centerline point each surface point was projected from.
    pub centerline_indices: Vec<usize>,
    /// Index of each point in the surface it was picked from, when known.
    pub surface_indices: Vec<usize>,
    /// Probe frames: x along the path, z into the skin.
    pub poses: Option<Vec<RigidTransform>>,
}

impl ScanTrajectory {
    pub fn len(&self) -> usize {
        self.surface_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surface_points.is_empty()
    }

    /// The points in `range`, with their indices and poses.
    pub fn section(&self, range: std::ops::Range<usize>) -> ScanTrajectory {
        let pts = &self.surface_points;
        ScanTrajectory {
            surface_points: PointCloud {
                points: pts.points[range.clone()].to_vec(),
                normals: pts.normals.as_ref().map(|n| n[range.clone()].to_vec()),
            },
            centerline_indices: self.centerline_indices[range.clone()].to_vec(),
            surface_indices: self.surface_indices.get(range.clone()).map(<[usize]>::to_vec).unwrap_or_default(),
            poses: self.poses.as_ref().map(|p| p[range].to_vec()),
        }
    }

    /// Largest gap between consecutive points.
    pub fn max_step(&self) -> f64 {
        self.surface_points
            .points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self, max_step: f64) -> Result<(), TrajError> {
        if self.centerline_indices.len() != self.len() {
            return Err(TrajError::Malformed("index count differs from point count".into()));
        }
        if self.centerline_indices.windows(2).any(|w| w[1] < w[0]) {
            return Err(TrajError::Malformed("centerline indices decrease".into()));
        }
        if self.max_step() > max_step {
            return Err(TrajError::Malformed(format!("step {} exceeds {max_step}", self.max_step())));
        }
        Ok(())
    }

    /// Probe frames along the path; `z` is the inward skin normal when the
    /// points carry normals and `−up` otherwise.
    pub fn compute_poses(&mut self, up: &Vector3) {
        let pts = &self.surface_points.points;
        let n = pts.len();
        let mut poses = Vec::with_capacity(n);
        for i in 0..n {
            let outward = self.surface_points.normal(i).unwrap_or(*up);
            let z = -outward.normalize();
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let mut t = pts[b] - pts[a];
            t -= z * t.dot(&z);
            let x = if t.norm() > 1e-9 {
                t.normalize()
            } else {
                any_perpendicular(&z)
            };
            poses.push(RigidTransform::from_axes(x, z.cross(&x), z, pts[i]));
        }
        self.poses = Some(poses);
    }
}

fn any_perpendicular(z: &Vector3) -> Vector3 {
    let seed = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    (seed - z * seed.dot(z)).normalize()
}

/// Moving average over `window` points; near the ends the window shrinks
/// symmetrically so the end points stay fixed.
pub fn smooth_centerline(raw: &PointCloud3, window: usize) -> Result<PointCloud3, TrajError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(TrajError::InvalidWindow(window));
    }
    if raw.len() < window {
        return Err(TrajError::TooFewPoints {
            need: window,
            got: raw.len(),
        });
    }
    let n = raw.len();
    let h = window / 2;
    let pts = &raw.points;
    let out = (0..n)
        .map(|i| {
            let r = h.min(i).min(n - 1 - i);
            let sum = pts[i - r..=i + r].iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
            Point3::from(sum / (2 * r + 1) as f64)
        })
        .collect();
    Ok(PointCloud::new(out))
}

/// Nearest surface point strictly in the up half-space of each centerline
/// point, ordered as the centerline with consecutive repeats collapsed.
pub fn project_trajectory(centerline: &PointCloud3, surface: &PointCloud3, up: &Vector3) -> Result<ScanTrajectory, TrajError> {
    if !(up.norm() > 0.0) || !up.iter().all(|v| v.is_finite()) {
        return Err(TrajError::InvalidUp);
    }
    if surface.is_empty() {
        return Err(TrajError::NoSurfaceAbove(0));
    }
    let up = up.normalize();
    let tree = KdTree::from_cloud(surface);
    let picks: Vec<Result<usize, TrajError>> = centerline
        .points
        .par_iter()
        .enumerate()
        .map(|(ci, c)| nearest_above(&tree, surface, c, &up).ok_or(TrajError::NoSurfaceAbove(ci)))
        .collect();
    let mut surface_indices = Vec::new();
    let mut centerline_indices = Vec::new();
    for (ci, pick) in picks.into_iter().enumerate() {
        let si = pick?;
        if surface_indices.last() != Some(&si) {
            surface_indices.push(si);
            centerline_indices.push(ci);
        }
    }
    Ok(ScanTrajectory {
        surface_points: surface.select(&surface_indices),
        centerline_indices,
        surface_indices,
        poses: None,
    })
}

fn nearest_above(tree: &KdTree<f64>, surface: &PointCloud3, c: &Point3, up: &Vector3) -> Option<usize> {
    let above = |i: usize| (surface.points[i] - c).dot(up) > 0.0;
    let n = surface.len();
    let mut k = 16.min(n);
    loop {
        let hits = tree.knn(c, k).ok()?;
        if let Some(h) = hits.iter().find(|h| above(h.index)) {
            return Some(h.index);
        }
        if k == n {
            return None;
        }
        k = (k * 8).min(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cylinder(radius: f64, len: f64, spacing: f64) -> PointCloud3 {
        let n_ring = (std::f64::consts::TAU * radius / spacing).ceil() as usize;
        let mut pts = Vec::new();
        let mut x = 0.0;
        while x <= len + 1e-9 {
            for j in 0..n_ring {
                let th = j as f64 / n_ring as f64 * std::f64::consts::TAU;
                pts.push(Point3::new(x, radius * th.cos(), radius * th.sin()));
            }
            x += spacing;
        }
        PointCloud::new(pts)
    }

    fn line(n: usize) -> PointCloud3 {
        (0..n).map(|i| Point3::new(i as f64 * 1.5, 2.0 - 0.5 * i as f64, 3.0)).collect()
    }

    #[test]
    fn smoothing_fixes_lines_and_window_one() {
        let l = line(30);
        let s = smooth_centerline(&l, 7).unwrap();
        for (a, b) in s.points.iter().zip(&l.points) {
            assert!((a - b).norm() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: PointCloud3 = (0..20).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        assert_eq!(smooth_centerline(&noisy, 1).unwrap(), noisy);
    }

    #[test]
    fn smoothing_reduces_zigzag() {
        let n = 41;
        let zig: PointCloud3 = (0..n)
            .map(|i| Point3::new(i as f64, if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
            .collect();
        let s = smooth_centerline(&zig, 5).unwrap();
        assert_eq!(s.len(), n);
        let dev = |c: &PointCloud3| c.points[2..n - 2].iter().map(|p| p.y.abs()).fold(0.0, f64::max);
        assert!(dev(&zig) >= 3.0 * dev(&s), "{} vs {}", dev(&zig), dev(&s));
        for w in s.points.windows(2) {
            assert!(w[1].x > w[0].x);
        }
    }

    #[test]
    fn smoothing_errors() {
        assert_eq!(smooth_centerline(&line(3), 5), Err(TrajError::TooFewPoints { need: 5, got: 3 }));
        assert_eq!(smooth_centerline(&line(9), 4), Err(TrajError::InvalidWindow(4)));
        assert_eq!(smooth_centerline(&line(9), 0), Err(TrajError::InvalidWindow(0)));
    }

    #[test]
    fn cylinder_axis_projects_to_the_top() {
        let spacing = 1.0;
        let surf = cylinder(15.0, 100.0, spacing);
        // Exactly on the axis every ring point ties; lift the line slightly.
        let cl: PointCloud3 = (0..=100).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect();
        let t = project_trajectory(&cl, &surf, &Vector3::z()).unwrap();
        assert_eq!(t.len(), 101);
        for (p, &ci) in t.surface_points.points.iter().zip(&t.centerline_indices) {
            let c = cl.points[ci];
            assert!((p - Point3::new(c.x, 0.0, 15.0)).norm() <= spacing, "{p:?}");
        }
        t.validate(2.0 * spacing).unwrap();
    }

    #[test]
    fn strictly_above_rule() {
        let surf = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(0.0, 0.0, 5.0), Point3::new(0.0, 0.0, -1.0)]);
        let cl = PointCloud::new(vec![Point3::origin()]);
        let t = project_trajectory(&cl, &surf, &Vector3::z()).unwrap();
        assert_eq!(t.surface_indices, vec![1]);
    }

    #[test]
    fn nothing_above_is_an_error() {
        let surf = PointCloud::new(vec![Point3::new(0.0, 0.0, -1.0), Point3::new(1.0, 0.0, -2.0)]);
        let cl = PointCloud::new(vec![Point3::origin()]);
        assert_eq!(project_trajectory(&cl, &surf, &Vector3::z()), Err(TrajError::NoSurfaceAbove(0)));
        assert_eq!(project_trajectory(&cl, &surf, &Vector3::zeros()), Err(TrajError::InvalidUp));
    }

    #[test]
    fn repeats_collapse_to_first() {
        let surf = PointCloud::new(vec![Point3::new(0.0, 0.0, 10.0), Point3::new(5.0, 0.0, 10.0)]);
        let cl: PointCloud3 = (0..6).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let t = project_trajectory(&cl, &surf, &Vector3::z()).unwrap();
        assert_eq!(t.surface_indices, vec![0, 1]);
        assert_eq!(t.centerline_indices, vec![0, 3]);
    }

    #[test]
    fn template_projection_stays_within_local_radius() {
        let tpl = crate::arm_scene::make_template(&Default::default()).unwrap();
        let t = project_trajectory(&tpl.centerline, &tpl.surface, &Vector3::z()).unwrap();
        for (p, &ci) in t.surface_points.points.iter().zip(&t.centerline_indices) {
            let x = tpl.centerline_axial[ci];
            let bound = tpl.vertical_radius(x).max(tpl.lateral_radius(x)) + tpl.params.sample_spacing;
            assert!((p - tpl.centerline.points[ci]).norm() <= bound);
        }
        t.validate(3.0).unwrap();
    }

    #[test]
    fn projection_is_rigidly_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let surf = cylinder(12.0, 60.0, 1.3);
        let cl: PointCloud3 = (0..40)
            .map(|i| Point3::new(i as f64 * 1.5, rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0)))
            .collect();
        let a = project_trajectory(&cl, &surf, &Vector3::z()).unwrap();
        for _ in 0..5 {
            let t = RigidTransform {
                rotation: random_rotation(&mut rng),
                translation: Vector3::new(rng.random_range(-50.0..50.0), 3.0, -7.0),
            };
            let b = project_trajectory(&cl.transformed(&t), &surf.transformed(&t), &t.apply_vector(&Vector3::z())).unwrap();
            assert_eq!(a.surface_indices, b.surface_indices);
        }
    }

    #[test]
    fn poses_are_orthonormal_frames() {
        let tpl = crate::arm_scene::make_template(&Default::default()).unwrap();
        let mut t = project_trajectory(&tpl.centerline, &tpl.surface, &Vector3::z()).unwrap();
        t.compute_poses(&Vector3::z());
        for (pose, i) in t.poses.as_ref().unwrap().iter().zip(0..) {
            pose.validate(1e-9).unwrap();
            assert!(pose.axis(2).dot(&Vector3::z()) < 0.0);
            assert_eq!(pose.translation, t.surface_points.points[i].coords);
        }
    }
}
