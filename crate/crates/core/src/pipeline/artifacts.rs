use crate::arm_scene::{ArmTemplate, Segment};
use crate::geom::io::{write_ply, write_points_csv, PlyData};
use crate::scan_sim::{RadiusReport, ReconstructedVessel};
use crate::surface_extract::SegmentedArm;
use crate::PointCloud3;
use serde::Serialize;
use std::path::Path;

type Res = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn segment_name(s: Segment) -> &'static str {
    match s {
        Segment::Forearm => "forearm",
        Segment::UpperArm => "upperarm",
    }
}

/// Surface samples with normals and their template axial coordinate.
pub fn template_ply(path: &Path, t: &ArmTemplate) -> Res {
    let mut data = PlyData::from_cloud(t.surface.clone());
    data.extra.insert("axial".into(), t.surface_axial.clone());
    write_ply(path, &data).map_err(err)
}

/// Extracted arm points with a `label` property (0 forearm, 1 upper arm).
pub fn arm_ply(path: &Path, arm: &SegmentedArm) -> Res {
    let (cloud, labels) = arm.union();
    let mut data = PlyData::from_cloud(cloud);
    data.extra.insert(
        "label".into(),
        labels.iter().map(|s| f64::from(u8::from(*s == Segment::UpperArm))).collect(),
    );
    write_ply(path, &data).map_err(err)
}

pub fn cloud_ply(path: &Path, cloud: &PointCloud3) -> Res {
    write_ply(path, &PlyData::from_cloud(cloud.clone())).map_err(err)
}

pub fn points_csv(path: &Path, cloud: &PointCloud3) -> Res {
    write_points_csv(path, cloud).map_err(err)
}

pub fn json<T: Serialize>(path: &Path, value: &T) -> Res {
    let text = serde_json::to_string_pretty(value).map_err(err)?;
    std::fs::write(path, text + "\n").map_err(err)
}

/// Columns `index, x, y, z, radius, arc_length`.
pub fn vessel_csv(path: &Path, v: &ReconstructedVessel) -> Res {
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["index", "x", "y", "z", "radius", "arc_length"]).map_err(err)?;
    let s = v.arc_lengths();
    for (i, (p, r)) in v.centerline_points.points.iter().zip(&v.per_point_radius).enumerate() {
        w.write_record([
            i.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            r.to_string(),
            s[i].to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(err)
}

/// Columns `segment, start, end, mean_radius, error`.
pub fn radius_csv(path: &Path, rep: &RadiusReport) -> Res {
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["segment", "start", "end", "mean_radius", "error"]).map_err(err)?;
    for (k, (s, e)) in rep.segments.iter().zip(&rep.errors).enumerate() {
        w.write_record([
            k.to_string(),
            s.start.to_string(),
            s.end.to_string(),
            s.mean_radius.to_string(),
            e.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(err)
}
