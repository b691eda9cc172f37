use super::SceneError;
use crate::{Matrix3, Point3, RigidTransform, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};
use std::path::Path;

/// `(row, col)` pixel position.
pub type PixelIndex = (usize, usize);

/// Orthographic depth image; depth in mm, `0` marks invalid pixels.
///
/// Pixel `(r, c)` sits at camera-frame `(c·pitch, r·pitch)`; depth runs along
/// the camera z axis. `camera_pose` maps camera frame to world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub pitch: f64,
    pub camera_pose: RigidTransform,
}

impl DepthImage {
    pub const INVALID: f64 = 0.0;

    pub fn filled(width: usize, height: usize, value: f64, pitch: f64, camera_pose: RigidTransform) -> Self {
        Self {
            width,
            height,
            depth: vec![value; width * height],
            pitch,
            camera_pose,
        }
    }

    #[inline]
    pub fn in_bounds(&self, r: i64, c: i64) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.depth[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.depth[r * self.width + c] = v;
    }

    #[inline]
    pub fn is_valid(&self, r: usize, c: usize) -> bool {
        let d = self.get(r, c);
        d > 0.0 && d.is_finite()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.depth.len() != self.width * self.height {
            return Err(SceneError::Malformed("depth buffer size".into()));
        }
        if !(self.pitch > 0.0) {
            return Err(SceneError::Malformed("pitch must be positive".into()));
        }
        if self.depth.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(SceneError::Malformed("negative or non-finite depth".into()));
        }
        Ok(())
    }

    /// World point of pixel `(r, c)` at its stored depth.
    pub fn unproject(&self, r: usize, c: usize) -> Point3 {
        self.unproject_at(r as f64, c as f64, self.get(r, c))
    }

    pub fn unproject_at(&self, r: f64, c: f64, depth: f64) -> Point3 {
        self.camera_pose
            .apply(&Point3::new(c * self.pitch, r * self.pitch, depth))
    }

    /// Fractional `(row, col, depth)` of a world point.
    pub fn project(&self, p: &Point3) -> (f64, f64, f64) {
        let q = self.camera_pose.inverse().apply(p);
        (q.y / self.pitch, q.x / self.pitch, q.z)
    }

    /// Nearest pixel of a world point, if it lands inside the image.
    pub fn project_pixel(&self, p: &Point3) -> Option<PixelIndex> {
        let (r, c, _) = self.project(p);
        let (r, c) = (r.round() as i64, c.round() as i64);
        self.in_bounds(r, c).then_some((r as usize, c as usize))
    }

    /// Depth along the line of sight of `(r, c)` where it meets a plane.
    pub fn ray_plane_depth(&self, r: f64, c: f64, plane_point: &Point3, plane_normal: &Vector3) -> Option<f64> {
        let o = self.unproject_at(r, c, 0.0);
        let d = self.camera_pose.axis(2);
        let den = d.dot(plane_normal);
        if den.abs() < 1e-12 {
            return None;
        }
        let t = (plane_point - o).dot(plane_normal) / den;
        (t > 0.0).then_some(t)
    }

    /// 16-bit binary PGM with depth in 0.1 mm units. Pitch and camera pose
    /// travel in a header comment so the image can be unprojected again.
    pub fn write_pgm(&self, path: &Path) -> Result<(), SceneError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.pgm_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn pgm_bytes(&self) -> Vec<u8> {
        let r = &self.camera_pose.rotation;
        let t = &self.camera_pose.translation;
        let pose: Vec<String> = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| r[(i, j)].to_string())
            .chain(t.iter().map(|v| v.to_string()))
            .collect();
        let mut out = format!(
            "P5\n# limbscan pitch={} pose={}\n{} {}\n65535\n",
            self.pitch,
            pose.join(","),
            self.width,
            self.height
        )
        .into_bytes();
        for &d in &self.depth {
            let v = (d * 10.0).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
        out
    }

    pub fn read_pgm(path: &Path) -> Result<Self, SceneError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::parse_pgm(f)
    }

    pub fn parse_pgm<R: BufRead>(mut rd: R) -> Result<Self, SceneError> {
        let bad = |m: &str| SceneError::Malformed(m.to_string());
        let mut tokens: Vec<String> = Vec::new();
        let mut pitch = 1.0;
        let mut pose = RigidTransform::identity();
        while tokens.len() < 4 {
            let mut line = String::new();
            if rd.read_line(&mut line)? == 0 {
                return Err(bad("truncated PGM header"));
            }
            let line = line.trim();
            if let Some(comment) = line.strip_prefix('#') {
                for kv in comment.split_whitespace() {
                    if let Some(v) = kv.strip_prefix("pitch=") {
                        pitch = v.parse().map_err(|_| bad("pitch"))?;
                    } else if let Some(v) = kv.strip_prefix("pose=") {
                        let vals: Result<Vec<f64>, _> = v.split(',').map(str::parse).collect();
                        let vals = vals.map_err(|_| bad("pose"))?;
                        if vals.len() != 12 {
                            return Err(bad("pose needs 12 values"));
                        }
                        pose = RigidTransform {
                            rotation: Matrix3::from_row_slice(&vals[..9]),
                            translation: Vector3::new(vals[9], vals[10], vals[11]),
                        };
                    }
                }
                continue;
            }
            tokens.extend(line.split_whitespace().map(String::from));
        }
        if tokens[0] != "P5" {
            return Err(bad("only binary P5 PGM is supported"));
        }
        let width: usize = tokens[1].parse().map_err(|_| bad("width"))?;
        let height: usize = tokens[2].parse().map_err(|_| bad("height"))?;
        let maxval: u32 = tokens[3].parse().map_err(|_| bad("maxval"))?;
        let two = maxval > 255;
        let mut buf = vec![0u8; width * height * if two { 2 } else { 1 }];
        rd.read_exact(&mut buf).map_err(|_| bad("truncated PGM raster"))?;
        let depth = if two {
            buf.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 10.0)
                .collect()
        } else {
            buf.iter().map(|&b| b as f64 / 10.0).collect()
        };
        let img = Self {
            width,
            height,
            depth,
            pitch,
            camera_pose: pose,
        };
        img.validate()?;
        Ok(img)
    }

    /// One CSV row per image row, depth in mm.
    pub fn write_csv(&self, path: &Path) -> Result<(), SceneError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width).map(|c| self.get(r, c).to_string()).collect();
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, pitch: f64, camera_pose: RigidTransform) -> Result<Self, SceneError> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        let mut depth = Vec::new();
        let mut width = None;
        let mut height = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| SceneError::Malformed(e.to_string()))?;
            if *width.get_or_insert(row.len()) != row.len() {
                return Err(SceneError::Malformed("ragged depth CSV".into()));
            }
            depth.extend(row);
            height += 1;
        }
        let img = Self {
            width: width.unwrap_or(0),
            height,
            depth,
            pitch,
            camera_pose,
        };
        img.validate()?;
        Ok(img)
    }
}
