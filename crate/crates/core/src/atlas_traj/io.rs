use super::{ScanTrajectory, TrajError};
use crate::geom::io::PlyData;
use crate::geom::PointCloud;
use crate::{Point3, PointCloud3};
use std::path::Path;

fn csv_err(e: impl std::fmt::Display) -> TrajError {
    TrajError::Malformed(e.to_string())
}

/// Columns `index, centerline_index, x, y, z`.
pub fn write_trajectory_csv(path: &Path, traj: &ScanTrajectory) -> Result<(), TrajError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["index", "centerline_index", "x", "y", "z"]).map_err(csv_err)?;
    for (i, (p, ci)) in traj.surface_points.points.iter().zip(&traj.centerline_indices).enumerate() {
        w.write_record([
            i.to_string(),
            ci.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

pub fn read_trajectory_csv(path: &Path) -> Result<ScanTrajectory, TrajError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(csv_err)?;
    let mut pts = Vec::new();
    let mut cis = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 5 {
            return Err(TrajError::Malformed(format!("row {row} has {} columns", rec.len())));
        }
        let f = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| TrajError::Malformed(format!("row {row}: bad value {}", &rec[i])));
        let ci = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| TrajError::Malformed(format!("row {row}: bad centerline index")))?;
        cis.push(ci);
        pts.push(Point3::new(f(2)?, f(3)?, f(4)?));
    }
    Ok(ScanTrajectory {
        surface_points: PointCloud::new(pts),
        centerline_indices: cis,
        surface_indices: Vec::new(),
        poses: None,
    })
}

/// Centerline points followed by trajectory points, with an edge joining
/// each trajectory point to the centerline point it came from. The `role`
/// property is 0 for centerline and 1 for trajectory vertices.
pub fn correspondence_ply(centerline: &PointCloud3, traj: &ScanTrajectory) -> PlyData {
    let n = centerline.len();
    let mut pts = centerline.points.clone();
    pts.extend(&traj.surface_points.points);
    let mut data = PlyData::from_cloud(PointCloud::new(pts));
    data.extra.insert(
        "role".into(),
        std::iter::repeat_n(0.0, n)
            .chain(std::iter::repeat_n(1.0, traj.len()))
            .collect(),
    );
    data.edges = traj.centerline_indices.iter().enumerate().map(|(i, &ci)| (ci, n + i)).collect();
    data
}
