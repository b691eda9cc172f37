use super::graph::DeformationGraph;
use super::RegError;
use crate::atlas_traj::ScanTrajectory;
use crate::geom::{KdTree, PointCloud};
use crate::{Point3, PointCloud3, Vector3};

/// Deforms trajectory points through the graph. Poses take `z` against the
/// nearest scene normal (or `−up` without one) and `x` along the path.
pub fn transfer_trajectory(
    traj: &ScanTrajectory,
    graph: &DeformationGraph,
    scene: Option<&PointCloud3>,
    up: &Vector3,
) -> Result<ScanTrajectory, RegError> {
    let pos: Vec<Point3> = graph.nodes.iter().map(|n| n.position).collect();
    let tree = KdTree::new(&pos);
    let reach = 2.0 * graph.sampling_radius;
    let mut out = Vec::with_capacity(traj.len());
    for (i, p) in traj.surface_points.points.iter().enumerate() {
        let near = tree.nearest(p).map_err(|_| RegError::EmptySurface)?;
        if graph.len() > 1 && near.distance > reach {
            return Err(RegError::OutOfBindingReach { index: i, distance: near.distance });
        }
        out.push(graph.deform(p, &graph.bind(p)));
    }
    Ok(with_scene_frames(traj, out, scene, up))
}

pub(crate) fn with_scene_frames(traj: &ScanTrajectory, points: Vec<Point3>, scene: Option<&PointCloud3>, up: &Vector3) -> ScanTrajectory {
    let normals: Vec<Vector3> = match scene.filter(|s| s.normals.is_some() && !s.is_empty()) {
        Some(s) => {
            let tree = KdTree::from_cloud(s);
            points
                .iter()
                .map(|p| s.normal(tree.nearest(p).unwrap().index).unwrap())
                .collect()
        }
        None => vec![up.normalize(); points.len()],
    };
    let mut t = ScanTrajectory {
        surface_points: PointCloud::with_normals(points, normals).expect("equal lengths"),
        centerline_indices: traj.centerline_indices.clone(),
        surface_indices: Vec::new(),
        poses: None,
    };
    t.compute_poses(up);
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonrigid_reg::graph::build_graph;

    fn sheet() -> PointCloud3 {
        let mut pts = Vec::new();
        for i in 0..40 {
            for j in 0..10 {
                pts.push(Point3::new(i as f64 * 2.0, j as f64 * 2.0, 0.0));
            }
        }
        PointCloud3::new(pts)
    }

    fn traj() -> ScanTrajectory {
        ScanTrajectory {
            surface_points: (0..30).map(|i| Point3::new(5.0 + 2.0 * i as f64, 9.0, 0.0)).collect(),
            centerline_indices: (0..30).collect(),
            surface_indices: Vec::new(),
            poses: None,
        }
    }

    #[test]
    fn identity_graph_keeps_trajectory() {
        let g = build_graph(&sheet(), 10.0, 4).unwrap();
        let t = traj();
        let out = transfer_trajectory(&t, &g, None, &Vector3::z()).unwrap();
        for (a, b) in out.surface_points.points.iter().zip(&t.surface_points.points) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(out.centerline_indices, t.centerline_indices);
        for pose in out.poses.unwrap() {
            assert!(pose.axis(2).dot(&Vector3::z()) < 0.0);
            assert!((pose.axis(0) - Vector3::x()).norm() < 1e-9);
        }
    }

    #[test]
    fn far_points_are_out_of_reach() {
        let g = build_graph(&sheet(), 10.0, 4).unwrap();
        let mut t = traj();
        t.surface_points.points[7] = Point3::new(40.0, 200.0, 0.0);
        assert!(matches!(
            transfer_trajectory(&t, &g, None, &Vector3::z()),
            Err(RegError::OutOfBindingReach { index: 7, .. })
        ));
    }
}
