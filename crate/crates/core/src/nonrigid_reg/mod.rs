//! Atlas-to-scene registration: piecewise-rigid initial alignment with PCA
//! scaling, an embedded deformation graph sampled geodesically, and a
//! robust Gauss-Newton solve, followed by trajectory transfer.

mod align;
mod energy;
mod graph;
mod solve;
mod transfer;

pub use align::{align_segment, initial_align, ArmSurface, InitialAlignment, SegmentAlignment};
pub use energy::{alignment, energy, regularization, rotation_penalty, welsch, welsch_weight, Correspondence, EnergyBreakdown, EnergyWeights};
pub use graph::{build_graph, build_graph_on, subsample, Binding, DeformationGraph, DeformationNode, ProximityGraph, PROXIMITY_K};
pub use solve::{orthogonality_defects, solve, solve_fixed, HistoryEntry, SolveParams, SolveReport};
pub use transfer::transfer_trajectory;

use crate::arm_scene::Segment;
use crate::atlas_traj::ScanTrajectory;
use crate::KdTree;
use crate::{Point3, PointCloud3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegError {
    #[error("segment {0:?} is degenerate (coincident joints or flat surface)")]
    DegenerateSegment(Segment),
    #[error("surface has {0} disconnected components")]
    DisconnectedSurface(usize),
    #[error("non-finite energy: {0}")]
    NonFiniteEnergy(String),
    #[error("trajectory point {index} is {distance:.2} mm from the nearest node")]
    OutOfBindingReach { index: usize, distance: f64 },
    #[error("surface is empty")]
    EmptySurface,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid parameter {field}: {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationMode {
    /// One graph over both aligned segments.
    #[default]
    Joint,
    /// A graph per segment, each matched to the same scene segment.
    PerSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterParams {
    /// Geodesic node spacing, mm.
    pub radius: f64,
    pub binding_k: usize,
    /// Voxel size used to thin the atlas before graph construction, mm.
    pub voxel: f64,
    pub mode: RegistrationMode,
    pub solve: SolveParams,
}

impl Default for RegisterParams {
    fn default() -> Self {
        Self {
            radius: 15.0,
            binding_k: 4,
            voxel: 3.0,
            mode: RegistrationMode::Joint,
            solve: SolveParams::default(),
        }
    }
}

/// One solved deformation graph and the aligned vertices it was built on.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredPart {
    pub segment: Option<Segment>,
    pub vertices: PointCloud3,
    pub labels: Vec<Segment>,
    pub graph: DeformationGraph,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub alignment: InitialAlignment,
    pub mode: RegistrationMode,
    pub parts: Vec<RegisteredPart>,
}

fn register_part(
    vertices: PointCloud3,
    labels: Vec<Segment>,
    segment: Option<Segment>,
    target: &PointCloud3,
    params: &RegisterParams,
) -> Result<RegisteredPart, RegError> {
    let graph = build_graph(&vertices, params.radius, params.binding_k)?;
    let (graph, report) = solve(&graph, &vertices, target, &params.solve)?;
    Ok(RegisteredPart {
        segment,
        vertices,
        labels,
        graph,
        report,
    })
}

/// Full registration of the atlas surface onto the scene surface.
pub fn register(atlas: &ArmSurface, scene: &ArmSurface, params: &RegisterParams) -> Result<Registration, RegError> {
    if !(params.voxel > 0.0) {
        return Err(RegError::InvalidParams {
            field: "voxel",
            reason: "must be positive".into(),
        });
    }
    let alignment = initial_align(atlas, scene)?;
    let aligned = alignment.apply(atlas);
    let parts = match params.mode {
        RegistrationMode::Joint => {
            let (cloud, labels) = aligned.union();
            let (verts, keep) = subsample(&cloud, params.voxel);
            let labels = keep.iter().map(|&i| labels[i]).collect();
            let (target, _) = scene.union();
            vec![register_part(verts, labels, None, &target, params)?]
        }
        RegistrationMode::PerSegment => [Segment::Forearm, Segment::UpperArm]
            .into_iter()
            .map(|s| {
                let (verts, _) = subsample(aligned.segment(s), params.voxel);
                let n = verts.len();
                register_part(verts, vec![s; n], Some(s), scene.segment(s), params)
            })
            .collect::<Result<_, _>>()?,
    };
    Ok(Registration {
        alignment,
        mode: params.mode,
        parts,
    })
}

impl Registration {
    fn part_for(&self, s: Segment) -> &RegisteredPart {
        self.parts.iter().find(|p| p.segment.is_none() || p.segment == Some(s)).expect("a part per segment")
    }

    /// Maps an atlas point of segment `s` into the scene.
    pub fn map_point(&self, p: &Point3, s: Segment) -> Point3 {
        let part = self.part_for(s);
        let q = self.alignment.segment(s).apply(p);
        part.graph.deform(&q, &part.graph.bind(&q))
    }

    /// Deforms a whole atlas surface.
    pub fn deform_atlas(&self, atlas: &ArmSurface) -> PointCloud3 {
        let (cloud, labels) = atlas.union();
        cloud.points.iter().zip(labels).map(|(p, s)| self.map_point(p, s)).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.parts.iter().all(|p| p.report.is_monotone())
    }

    pub fn history(&self) -> Vec<(Option<Segment>, HistoryEntry)> {
        self.parts
            .iter()
            .flat_map(|p| p.report.history.iter().map(move |h| (p.segment, *h)))
            .collect()
    }

    /// Transfers an atlas trajectory: each point takes the alignment of the
    /// nearest atlas surface point's segment, then the solved deformation.
    pub fn transfer(
        &self,
        traj: &ScanTrajectory,
        atlas: &ArmSurface,
        scene: Option<&PointCloud3>,
        up: &Vector3,
    ) -> Result<ScanTrajectory, RegError> {
        let (cloud, labels) = atlas.union();
        if cloud.is_empty() {
            return Err(RegError::EmptySurface);
        }
        let tree = KdTree::from_cloud(&cloud);
        let mut aligned = traj.clone();
        let mut segs = Vec::with_capacity(traj.len());
        for p in aligned.surface_points.points.iter_mut() {
            let s = labels[tree.nearest(p).unwrap().index];
            *p = self.alignment.segment(s).apply(p);
            segs.push(s);
        }
        aligned.surface_points.normals = None;
        if self.parts.len() == 1 {
            return transfer_trajectory(&aligned, &self.parts[0].graph, scene, up);
        }
        let mut pts = Vec::with_capacity(traj.len());
        for (i, (p, s)) in aligned.surface_points.points.iter().zip(&segs).enumerate() {
            let single = ScanTrajectory {
                surface_points: PointCloud3::new(vec![*p]),
                centerline_indices: vec![aligned.centerline_indices[i]],
                surface_indices: Vec::new(),
                poses: None,
            };
            let moved = transfer_trajectory(&single, &self.part_for(*s).graph, None, up).map_err(|e| match e {
                RegError::OutOfBindingReach { distance, .. } => RegError::OutOfBindingReach { index: i, distance },
                other => other,
            })?;
            pts.push(moved.surface_points.points[0]);
        }
        Ok(transfer::with_scene_frames(&aligned, pts, scene, up))
    }
}

#[derive(Serialize)]
struct GraphJson<'a> {
    sampling_radius: f64,
    binding_k: usize,
    nodes: Vec<NodeJson<'a>>,
    bindings: &'a [Binding],
}

#[derive(Serialize)]
struct NodeJson<'a> {
    position: [f64; 3],
    affine: [[f64; 3]; 3],
    translation: [f64; 3],
    neighbors: &'a [usize],
}

/// JSON with nodes (position, row-major affine, translation, neighbours)
/// and per-vertex bindings.
pub fn graph_json(graph: &DeformationGraph) -> String {
    let nodes = graph
        .nodes
        .iter()
        .map(|n| NodeJson {
            position: [n.position.x, n.position.y, n.position.z],
            affine: [0, 1, 2].map(|r| [0, 1, 2].map(|c| n.affine[(r, c)])),
            translation: [n.translation.x, n.translation.y, n.translation.z],
            neighbors: &n.neighbors,
        })
        .collect();
    serde_json::to_string_pretty(&GraphJson {
        sampling_radius: graph.sampling_radius,
        binding_k: graph.binding_k,
        nodes,
        bindings: &graph.vertex_bindings,
    })
    .expect("graph serializes")
}

/// Columns `part, outer, inner, l_ali, l_reg, l_rot, l_nr`.
pub fn write_history_csv(path: &Path, reg: &Registration) -> Result<(), RegError> {
    let io = |e: csv::Error| RegError::Io(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["part", "outer", "inner", "l_ali", "l_reg", "l_rot", "l_nr"]).map_err(io)?;
    for (seg, h) in reg.history() {
        let part = match seg {
            None => "joint",
            Some(Segment::Forearm) => "forearm",
            Some(Segment::UpperArm) => "upperarm",
        };
        let e = h.energy;
        w.write_record([
            part.to_string(),
            h.outer.to_string(),
            h.inner.to_string(),
            e.l_ali.to_string(),
            e.l_reg.to_string(),
            e.l_rot.to_string(),
            e.l_nr.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RegError::Io(e.to_string()))
}

#[cfg(test)]
mod tests;
