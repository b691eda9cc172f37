use super::{Correction, FrameLog, RadiusReport, ScanError, ScanRun, VirtualFrame};
use crate::flow_seg::write_mask_pgm;
use crate::{Matrix3, RigidTransform, Vector3};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn csv_err(e: impl std::fmt::Display) -> ScanError {
    ScanError::Io(e.to_string())
}

/// Writes every mask as `frame_NNNN.pgm` into `dir` and returns the paths.
pub fn write_frames(dir: &Path, frames: &[VirtualFrame]) -> Result<Vec<PathBuf>, ScanError> {
    std::fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(format!("frame_{i:04}.pgm"));
            write_mask_pgm(&f.mask, &path).map_err(|e| ScanError::Io(e.to_string()))?;
            Ok(path)
        })
        .collect()
}

const POSE_HEADER: [&str; 17] = [
    "index", "lost", "x", "y", "z", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "planned_x", "planned_y",
    "planned_z",
];

/// Executed probe poses (position and row-major rotation) with the planned
/// position alongside.
pub fn write_poses_csv(path: &Path, run: &ScanRun) -> Result<(), ScanError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(POSE_HEADER).map_err(csv_err)?;
    for ((e, p), log) in run.executed.iter().zip(&run.planned).zip(&run.log) {
        let mut rec = vec![log.index.to_string(), u8::from(log.lost).to_string()];
        rec.extend(e.translation.iter().map(f64::to_string));
        for r in 0..3 {
            rec.extend((0..3).map(|c| e.rotation[(r, c)].to_string()));
        }
        rec.extend(p.translation.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Reads the executed poses back from [`write_poses_csv`] output.
pub fn read_poses_csv(path: &Path) -> Result<Vec<RigidTransform>, ScanError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() < 14 {
            return Err(ScanError::Io(format!("row {row} has {} columns", rec.len())));
        }
        let vals: Vec<f64> = (2..14)
            .map(|i| rec[i].trim().parse::<f64>().map_err(|_| ScanError::Io(format!("row {row}: bad value {}", &rec[i]))))
            .collect::<Result<_, _>>()?;
        out.push(RigidTransform {
            rotation: Matrix3::from_row_slice(&vals[3..12]),
            translation: Vector3::new(vals[0], vals[1], vals[2]),
        });
    }
    Ok(out)
}

/// Machine-readable summary of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub frames: usize,
    pub vessel_lost: usize,
    pub corrections: Vec<Correction>,
    pub log: Vec<FrameLog>,
    /// Largest recorded-frame centering error in mm.
    pub max_recorded_offset_mm: f64,
    pub max_decay_residual: f64,
    pub radius: Option<RadiusReport>,
}

impl ScanReport {
    pub fn new(run: &ScanRun, pitch: f64, radius: Option<RadiusReport>) -> Self {
        Self {
            frames: run.frames.len(),
            vessel_lost: run.vessel_lost(),
            corrections: run.corrections.clone(),
            log: run.log.clone(),
            max_recorded_offset_mm: run
                .log
                .iter()
                .filter_map(|l| l.recorded_offset_px)
                .fold(0.0, |m, o| m.max(o.abs() * pitch)),
            max_decay_residual: run.max_decay_residual,
            radius,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
