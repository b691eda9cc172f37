//! Forearm and upper-arm surface extraction from a depth image by
//! bidirectional depth-difference marching from seeds on the joint lines.

mod eval;

pub use eval::{label_accuracy, surface_distance, visible_ground_truth, GroundTruthSurface};

use crate::arm_scene::{DepthImage, PixelIndex, Segment};
use crate::geom::PointCloud;
use crate::PointCloud3;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DEPTH_THRESHOLD: f64 = 20_000.0;
pub const DEFAULT_CONTINUITY_TOLERANCE: f64 = 10.0;
pub const DEFAULT_SEED_SPACING: f64 = 4.0;
pub const DEFAULT_FEATURE_OFFSET: usize = 2;

/// A pixel is table when its depth is within this of the table depth.
const TABLE_MARGIN: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExtractError {
    #[error("depth feature index {i} is below the offset {k} (or beyond {len} samples)")]
    IndexOutOfRange { i: usize, k: usize, len: usize },
    #[error("seed pixel ({0}, {1}) is not on the arm")]
    SeedOffArm(usize, usize),
    #[error("march from seed ({0}, {1}) left the image without finding an edge")]
    NoEdgeFound(usize, usize),
    #[error("invalid joints: {0}")]
    InvalidJoints(String),
    #[error("invalid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
}

/// Which depth-difference feature drives edge detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// `I²(P_i) − I²(P_{i−k})`.
    #[default]
    SquaredDifference,
    /// Second difference of squared depth over consecutive samples.
    SecondDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractParams {
    /// Depth-feature threshold, mm².
    pub depth_threshold: f64,
    /// Allowed growth of the half-width between consecutive seeds, mm.
    pub continuity_tolerance: f64,
    /// Seed spacing along the joint line, pixels.
    pub seed_spacing: f64,
    pub feature_offset: usize,
    pub feature: FeatureKind,
    /// Table depth in mm; estimated from the image border when absent.
    pub table_depth: Option<f64>,
}

impl Default for ExtractParams {
    fn default() -> Self {
        Self {
            depth_threshold: DEFAULT_DEPTH_THRESHOLD,
            continuity_tolerance: DEFAULT_CONTINUITY_TOLERANCE,
            seed_spacing: DEFAULT_SEED_SPACING,
            feature_offset: DEFAULT_FEATURE_OFFSET,
            feature: FeatureKind::SquaredDifference,
            table_depth: None,
        }
    }
}

impl ExtractParams {
    pub fn validate(&self) -> Result<(), ExtractError> {
        let bad = |field, reason: &str| {
            Err(ExtractError::InvalidParams {
                field,
                reason: reason.into(),
            })
        };
        if !(self.depth_threshold > 0.0) {
            return bad("depth_threshold", "must be positive");
        }
        if !(self.continuity_tolerance >= 0.0) {
            return bad("continuity_tolerance", "must be non-negative");
        }
        if !(self.seed_spacing >= 1.0) {
            return bad("seed_spacing", "must be at least one pixel");
        }
        if self.feature_offset == 0 {
            return bad("feature_offset", "must be at least 1");
        }
        if let Some(t) = self.table_depth {
            if !(t > 0.0) {
                return bad("table_depth", "must be positive");
            }
        }
        Ok(())
    }
}

/// `I_d²(P_i) − I_d²(P_{i−k})` on raw depths in mm.
pub fn depth_feature(depths: &[f64], i: usize, k: usize) -> Result<f64, ExtractError> {
    if i < k || i >= depths.len() {
        return Err(ExtractError::IndexOutOfRange { i, k, len: depths.len() });
    }
    Ok(depths[i] * depths[i] - depths[i - k] * depths[i - k])
}

/// `I(P_i) − 2I(P_{i−1}) + I(P_{i−2})` with `I` the squared depth.
pub fn second_difference_feature(depths: &[f64], i: usize) -> Result<f64, ExtractError> {
    if i < 2 || i >= depths.len() {
        return Err(ExtractError::IndexOutOfRange { i, k: 2, len: depths.len() });
    }
    let sq = |j: usize| depths[j] * depths[j];
    Ok(sq(i) - 2.0 * sq(i - 1) + sq(i - 2))
}

/// Wrist, elbow and shoulder pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPixels {
    pub wrist: PixelIndex,
    pub elbow: PixelIndex,
    pub shoulder: PixelIndex,
}

impl JointPixels {
    pub fn new(wrist: PixelIndex, elbow: PixelIndex, shoulder: PixelIndex) -> Self {
        Self { wrist, elbow, shoulder }
    }

    pub fn validate(&self, img: &DepthImage) -> Result<(), ExtractError> {
        for (name, p) in [("wrist", self.wrist), ("elbow", self.elbow), ("shoulder", self.shoulder)] {
            if p.0 >= img.height || p.1 >= img.width {
                return Err(ExtractError::InvalidJoints(format!(
                    "{name} pixel {p:?} outside {}x{} image",
                    img.width, img.height
                )));
            }
        }
        if self.wrist == self.elbow || self.elbow == self.shoulder || self.wrist == self.shoulder {
            return Err(ExtractError::InvalidJoints("joint pixels must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeStop {
    DepthJump,
    Continuity,
}

/// One side of one seed's march.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideEdge {
    /// First pixel outside the arm on this side.
    pub edge: PixelIndex,
    /// Last arm pixel before the edge.
    pub inner: PixelIndex,
    /// Half-width in mm: seed to the last arm sample.
    pub half_width: f64,
    pub stop: EdgeStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEdges {
    pub seed: PixelIndex,
    /// Distance from the first joint along the joint line, pixels.
    pub offset: f64,
    pub left: SideEdge,
    pub right: SideEdge,
}

/// Seeds of one joint-to-joint search, in order from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEdges {
    pub from: PixelIndex,
    pub to: PixelIndex,
    pub seeds: Vec<SeedEdges>,
}

impl SegmentEdges {
    fn frame(&self) -> LineFrame {
        LineFrame::new(self.from, self.to)
    }

    /// Whether pixel `(r, c)` falls inside the region swept by the seeds.
    fn covers(&self, frame: &LineFrame, r: f64, c: f64, pitch: f64) -> bool {
        let (s, w) = frame.coords(r, c);
        let n = self.seeds.len();
        let first = self.seeds[0].offset;
        let last = self.seeds[n - 1].offset;
        if s < first - 0.5 || s > last + 0.5 {
            return false;
        }
        let s = s.clamp(first, last);
        let j = self.seeds.partition_point(|e| e.offset <= s).clamp(1, n.max(2) - 1);
        let (a, b) = if n == 1 { (&self.seeds[0], &self.seeds[0]) } else { (&self.seeds[j - 1], &self.seeds[j]) };
        let span = b.offset - a.offset;
        let t = if span > 0.0 { ((s - a.offset) / span).clamp(0.0, 1.0) } else { 0.0 };
        let left = (a.left.half_width + t * (b.left.half_width - a.left.half_width)) / pitch;
        let right = (a.right.half_width + t * (b.right.half_width - a.right.half_width)) / pitch;
        w <= left + 0.5 && w >= -right - 0.5
    }
}

/// Unit direction along a joint line plus its left normal, in (row, col).
#[derive(Debug, Clone, Copy)]
struct LineFrame {
    origin: (f64, f64),
    dir: (f64, f64),
    normal: (f64, f64),
    length: f64,
}

impl LineFrame {
    fn new(a: PixelIndex, b: PixelIndex) -> Self {
        let (dr, dc) = (b.0 as f64 - a.0 as f64, b.1 as f64 - a.1 as f64);
        let length = dr.hypot(dc);
        let dir = (dr / length, dc / length);
        Self {
            origin: (a.0 as f64, a.1 as f64),
            dir,
            normal: (-dir.1, dir.0),
            length,
        }
    }

    fn coords(&self, r: f64, c: f64) -> (f64, f64) {
        let (dr, dc) = (r - self.origin.0, c - self.origin.1);
        (dr * self.dir.0 + dc * self.dir.1, dr * self.normal.0 + dc * self.normal.1)
    }

    fn at(&self, s: f64) -> (f64, f64) {
        (self.origin.0 + s * self.dir.0, self.origin.1 + s * self.dir.1)
    }

    /// Distance from `(r, c)` to the closed segment.
    fn distance(&self, r: f64, c: f64) -> f64 {
        let (s, w) = self.coords(r, c);
        let ds = if s < 0.0 { -s } else if s > self.length { s - self.length } else { 0.0 };
        ds.hypot(w)
    }
}

/// Median depth of the image border, treating invalid pixels as absent.
pub fn estimate_table_depth(img: &DepthImage) -> Option<f64> {
    let mut d = Vec::new();
    for c in 0..img.width {
        d.push(img.get(0, c));
        d.push(img.get(img.height - 1, c));
    }
    for r in 0..img.height {
        d.push(img.get(r, 0));
        d.push(img.get(r, img.width - 1));
    }
    d.retain(|v| *v > 0.0 && v.is_finite());
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some(d[d.len() / 2])
}

struct Marcher<'a> {
    img: &'a DepthImage,
    params: &'a ExtractParams,
    table: f64,
}

impl Marcher<'_> {
    /// Depth with invalid pixels replaced by the table depth.
    fn depth(&self, r: usize, c: usize) -> f64 {
        if self.img.is_valid(r, c) {
            self.img.get(r, c)
        } else {
            self.table
        }
    }

    fn is_arm(&self, r: usize, c: usize) -> bool {
        self.img.is_valid(r, c) && self.img.get(r, c) < self.table - TABLE_MARGIN
    }

    fn pixel(&self, p: (f64, f64)) -> Option<PixelIndex> {
        let (r, c) = (p.0.round() as i64, p.1.round() as i64);
        self.img.in_bounds(r, c).then_some((r as usize, c as usize))
    }

    fn feature(&self, samples: &[f64], t: usize) -> Option<f64> {
        match self.params.feature {
            FeatureKind::SquaredDifference => depth_feature(samples, t, self.params.feature_offset).ok(),
            FeatureKind::SecondDifference => second_difference_feature(samples, t).ok(),
        }
    }

    /// Marches from `start` along `dir` until the depth feature fires or the
    /// half-width would pass `bound` (mm).
    fn march(&self, start: (f64, f64), dir: (f64, f64), bound: Option<f64>) -> Result<SideEdge, ExtractError> {
        let pitch = self.img.pitch;
        let seed = self.pixel(start).expect("seed inside image");
        let mut samples = vec![self.depth(seed.0, seed.1)];
        let mut prev = seed;
        for t in 1usize.. {
            let p = (start.0 + t as f64 * dir.0, start.1 + t as f64 * dir.1);
            let Some(px) = self.pixel(p) else {
                return Err(ExtractError::NoEdgeFound(seed.0, seed.1));
            };
            let stop = match bound {
                Some(b) if t as f64 * pitch > b => Some(EdgeStop::Continuity),
                _ => None,
            };
            samples.push(self.depth(px.0, px.1));
            let stop = stop.or_else(|| match self.feature(&samples, t) {
                Some(f) if f > self.params.depth_threshold => Some(EdgeStop::DepthJump),
                _ => None,
            });
            if let Some(stop) = stop {
                return Ok(SideEdge {
                    edge: px,
                    inner: prev,
                    half_width: (t - 1) as f64 * pitch,
                    stop,
                });
            }
            prev = px;
        }
        unreachable!()
    }
}

fn seed_offsets(length: f64, spacing: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut s = 0.0;
    while s < length - 1e-9 {
        out.push(s);
        s += spacing;
    }
    out.push(length);
    out
}

/// Per-seed left/right edges between two joints.
pub fn extract_segment(
    img: &DepthImage,
    joint_a: PixelIndex,
    joint_b: PixelIndex,
    params: &ExtractParams,
) -> Result<SegmentEdges, ExtractError> {
    params.validate()?;
    if joint_a == joint_b {
        return Err(ExtractError::InvalidJoints("segment joints coincide".into()));
    }
    for p in [joint_a, joint_b] {
        if p.0 >= img.height || p.1 >= img.width {
            return Err(ExtractError::InvalidJoints(format!("pixel {p:?} outside the image")));
        }
    }
    let table = params
        .table_depth
        .or_else(|| estimate_table_depth(img))
        .ok_or_else(|| ExtractError::InvalidParams {
            field: "table_depth",
            reason: "no valid border pixels to estimate it from".into(),
        })?;
    let m = Marcher { img, params, table };
    let frame = LineFrame::new(joint_a, joint_b);
    let tol = params.continuity_tolerance;
    let mut seeds = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for s in seed_offsets(frame.length, params.seed_spacing) {
        let start = frame.at(s);
        let seed = m.pixel(start).expect("joint line stays inside the image");
        if !m.is_arm(seed.0, seed.1) {
            return Err(ExtractError::SeedOffArm(seed.0, seed.1));
        }
        let n = frame.normal;
        let left = m.march(start, n, prev.map(|p| p.0 + tol))?;
        let right = m.march(start, (-n.0, -n.1), prev.map(|p| p.1 + tol))?;
        prev = Some((left.half_width, right.half_width));
        seeds.push(SeedEdges {
            seed,
            offset: s,
            left,
            right,
        });
    }
    Ok(SegmentEdges {
        from: joint_a,
        to: joint_b,
        seeds,
    })
}

/// Segmented forearm and upper-arm surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedArm {
    pub forearm: PointCloud3,
    pub upperarm: PointCloud3,
    pub forearm_pixels: Vec<PixelIndex>,
    pub upperarm_pixels: Vec<PixelIndex>,
    pub forearm_edges: SegmentEdges,
    pub upperarm_edges: SegmentEdges,
    pub table_depth: f64,
}

impl SegmentedArm {
    pub fn segment(&self, s: Segment) -> &PointCloud3 {
        match s {
            Segment::Forearm => &self.forearm,
            Segment::UpperArm => &self.upperarm,
        }
    }

    /// Every edge pixel, forearm seeds first, left before right.
    pub fn boundary_pixels(&self) -> Vec<PixelIndex> {
        self.forearm_edges
            .seeds
            .iter()
            .chain(&self.upperarm_edges.seeds)
            .flat_map(|s| [s.left.edge, s.right.edge])
            .collect()
    }

    /// Union of both segments with a per-point segment label.
    pub fn union(&self) -> (PointCloud3, Vec<Segment>) {
        let cloud = self.forearm.concat(&self.upperarm);
        let labels = std::iter::repeat_n(Segment::Forearm, self.forearm.len())
            .chain(std::iter::repeat_n(Segment::UpperArm, self.upperarm.len()))
            .collect();
        (cloud, labels)
    }

    pub fn report(&self) -> ExtractReport {
        let widths = |e: &SegmentEdges| {
            e.seeds
                .iter()
                .map(|s| SeedWidth {
                    seed: s.seed,
                    left: s.left.half_width,
                    right: s.right.half_width,
                    left_stop: s.left.stop,
                    right_stop: s.right.stop,
                })
                .collect::<Vec<_>>()
        };
        ExtractReport {
            seed_count: self.forearm_edges.seeds.len() + self.upperarm_edges.seeds.len(),
            table_depth: self.table_depth,
            forearm_points: self.forearm.len(),
            upperarm_points: self.upperarm.len(),
            forearm_widths: widths(&self.forearm_edges),
            upperarm_widths: widths(&self.upperarm_edges),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedWidth {
    pub seed: PixelIndex,
    pub left: f64,
    pub right: f64,
    pub left_stop: EdgeStop,
    pub right_stop: EdgeStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub seed_count: usize,
    pub table_depth: f64,
    pub forearm_points: usize,
    pub upperarm_points: usize,
    pub forearm_widths: Vec<SeedWidth>,
    pub upperarm_widths: Vec<SeedWidth>,
}

/// Extracts both segments and fills the regions between their edges.
pub fn extract_arm(img: &DepthImage, joints: &JointPixels, params: &ExtractParams) -> Result<SegmentedArm, ExtractError> {
    joints.validate(img)?;
    let mut params = params.clone();
    if params.table_depth.is_none() {
        params.table_depth = estimate_table_depth(img);
    }
    let fore = extract_segment(img, joints.wrist, joints.elbow, &params)?;
    let upper = extract_segment(img, joints.elbow, joints.shoulder, &params)?;
    let table = params.table_depth.expect("set by extract_segment success");
    let (ff, uf) = (fore.frame(), upper.frame());

    let mut lo = (usize::MAX, usize::MAX);
    let mut hi = (0usize, 0usize);
    for e in fore.seeds.iter().chain(&upper.seeds) {
        for p in [e.seed, e.left.edge, e.right.edge] {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
    }
    let (mut fpx, mut upx) = (Vec::new(), Vec::new());
    for r in lo.0..=hi.0 {
        for c in lo.1..=hi.1 {
            if !(img.is_valid(r, c) && img.get(r, c) < table - TABLE_MARGIN) {
                continue;
            }
            let (rf, cf) = (r as f64, c as f64);
            let in_f = fore.covers(&ff, rf, cf, img.pitch);
            let in_u = upper.covers(&uf, rf, cf, img.pitch);
            match (in_f, in_u) {
                (true, false) => fpx.push((r, c)),
                (false, true) => upx.push((r, c)),
                (true, true) => {
                    if ff.distance(rf, cf) <= uf.distance(rf, cf) {
                        fpx.push((r, c))
                    } else {
                        upx.push((r, c))
                    }
                }
                (false, false) => {}
            }
        }
    }
    let cloud = |px: &[PixelIndex]| PointCloud::new(px.iter().map(|&(r, c)| img.unproject(r, c)).collect());
    Ok(SegmentedArm {
        forearm: cloud(&fpx),
        upperarm: cloud(&upx),
        forearm_pixels: fpx,
        upperarm_pixels: upx,
        forearm_edges: fore,
        upperarm_edges: upper,
        table_depth: table,
    })
}
