//! End-to-end run: scene synthesis, depth rendering, arm extraction, atlas
//! planning, registration, trajectory transfer, servoed scan and vessel
//! reconstruction. Every stage leaves its artifacts in the output directory.

pub mod artifacts;
mod sweep;

pub use sweep::{sweep, sweep_cells, write_sweep_csv, SweepConfig, SweepRow};

use crate::arm_scene::{make_template, BuiltScene, SceneConfig, SceneError};
use crate::atlas_traj::{project_trajectory, smooth_centerline, ScanTrajectory};
use crate::geom::estimate_normals;
use crate::nonrigid_reg::{register, ArmSurface, RegError, RegisterParams, Registration, RegistrationMode};
use crate::scan_sim::{radius_report, reconstruct, RadiusReport, ReconstructedVessel, ScanParams, ScanRun};
use crate::surface_extract::{extract_arm, label_accuracy, surface_distance, visible_ground_truth, ExtractParams, JointPixels, SegmentedArm};
use crate::{KdTree, PointCloud3, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Elbow angles the pipeline accepts, degrees.
pub const ELBOW_ANGLE_RANGE: (f64, f64) = (100.0, 180.0);

/// The annotated default configuration.
pub const EXAMPLE_CONFIG: &str = include_str!("../../../../configs/pipeline.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scene,
    Render,
    Extract,
    Plan,
    Register,
    Transfer,
    Scan,
    Reconstruct,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Scene => "scene",
            Stage::Render => "render",
            Stage::Extract => "extract",
            Stage::Plan => "plan",
            Stage::Register => "register",
            Stage::Transfer => "transfer",
            Stage::Scan => "scan",
            Stage::Reconstruct => "reconstruct",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("config error in `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("stage `{stage}` failed: {cause}")]
    Stage { stage: Stage, cause: String },
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for stage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 2,
            PipelineError::Stage { .. } => 3,
        }
    }

    fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        PipelineError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        cause: e.to_string(),
    }
}

macro_rules! at {
    ($stage:expr, $e:expr) => {
        $e.map_err(|e| stage_err($stage)(&e))
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanParams {
    /// Moving-average window applied to the atlas centerline (odd).
    pub smoothing_window: usize,
    /// Neighbours used for scene normals when framing the transferred path.
    pub normals_k: usize,
    /// Points dropped at each end of the transferred path before scanning.
    pub trim: usize,
}

impl Default for PlanParams {
    fn default() -> Self {
        Self {
            smoothing_window: 5,
            normals_k: 20,
            trim: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportParams {
    pub n_segments: usize,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            n_segments: crate::scan_sim::DEFAULT_SUB_SEGMENTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Overrides the template and render-noise seeds.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneConfig,
    pub extract: ExtractParams,
    pub plan: PlanParams,
    pub register: RegisterParams,
    pub scan: ScanParams,
    pub report: ReportParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("limbscan-out"),
            scene: SceneConfig {
                elbow_angle: 160.0,
                yaw_deg: 10.0,
                offset_x: 12.0,
                offset_y: -7.0,
                ..Default::default()
            },
            extract: ExtractParams::default(),
            plan: PlanParams::default(),
            register: RegisterParams::default(),
            scan: ScanParams::default(),
            report: ReportParams::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses and validates a TOML configuration.
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::config("toml", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::config("path", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Scene settings with the top-level seed applied.
    pub fn scene_config(&self) -> SceneConfig {
        let mut s = self.scene.clone();
        s.template.seed = self.seed;
        s.render.noise_seed = self.seed;
        s
    }

    /// The atlas is the same template lying straight, unrotated, at the origin.
    pub fn atlas_config(&self) -> SceneConfig {
        SceneConfig {
            elbow_angle: 180.0,
            yaw_deg: 0.0,
            offset_x: 0.0,
            offset_y: 0.0,
            ..self.scene_config()
        }
    }

    /// Checks every downstream parameter bound.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let s = &self.scene;
        let (lo, hi) = ELBOW_ANGLE_RANGE;
        if !(lo..=hi).contains(&s.elbow_angle) {
            return Err(PipelineError::config(
                "scene.elbow_angle",
                format!("{} outside the supported range [{lo}, {hi}] degrees", s.elbow_angle),
            ));
        }
        let scene_field = |e: SceneError| match e {
            SceneError::InvalidParams { field, reason } => PipelineError::config(format!("scene.{field}"), reason),
            other => PipelineError::config("scene", other.to_string()),
        };
        s.template.validate().map_err(|e| match e {
            SceneError::InvalidParams { field, reason } => PipelineError::config(format!("scene.template.{field}"), reason),
            other => scene_field(other),
        })?;
        s.pose().map_err(scene_field)?;
        for v in [s.yaw_deg, s.offset_x, s.offset_y] {
            if !v.is_finite() {
                return Err(PipelineError::config("scene", "pose values must be finite"));
            }
        }
        let r = &s.render;
        if !(r.pitch > 0.0 && r.pitch.is_finite()) {
            return Err(PipelineError::config("scene.render.pitch", "must be positive"));
        }
        if !(r.camera_height > 0.0) {
            return Err(PipelineError::config("scene.render.camera_height", "must be positive"));
        }
        if !(r.margin >= 0.0) {
            return Err(PipelineError::config("scene.render.margin", "must be non-negative"));
        }
        if !(r.noise_sigma >= 0.0) {
            return Err(PipelineError::config("scene.render.noise_sigma", "must be non-negative"));
        }
        if let Some(sr) = r.splat_radius {
            if !(sr > 0.0) {
                return Err(PipelineError::config("scene.render.splat_radius", "must be positive"));
            }
        }
        self.extract.validate().map_err(|e| match e {
            crate::surface_extract::ExtractError::InvalidParams { field, reason } => PipelineError::config(format!("extract.{field}"), reason),
            other => PipelineError::config("extract", other.to_string()),
        })?;
        let p = &self.plan;
        if p.smoothing_window == 0 || p.smoothing_window.is_multiple_of(2) {
            return Err(PipelineError::config("plan.smoothing_window", "must be odd and positive"));
        }
        if p.normals_k < 3 {
            return Err(PipelineError::config("plan.normals_k", "needs at least 3 neighbours"));
        }
        let g = &self.register;
        if !(g.radius > 0.0 && g.radius.is_finite()) {
            return Err(PipelineError::config("register.radius", "must be positive"));
        }
        if g.binding_k == 0 {
            return Err(PipelineError::config("register.binding_k", "must be positive"));
        }
        if !(g.voxel > 0.0 && g.voxel.is_finite()) {
            return Err(PipelineError::config("register.voxel", "must be positive"));
        }
        g.solve.validate().map_err(|e| match e {
            RegError::InvalidParams { field, reason } => PipelineError::config(format!("register.solve.{field}"), reason),
            other => PipelineError::config("register.solve", other.to_string()),
        })?;
        self.scan.validate().map_err(|e| match e {
            crate::scan_sim::ScanError::InvalidParams { field, reason } => PipelineError::config(format!("scan.{field}"), reason),
            other => PipelineError::config("scan", other.to_string()),
        })?;
        if self.report.n_segments == 0 {
            return Err(PipelineError::config("report.n_segments", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub seed_count: usize,
    pub table_depth: f64,
    pub forearm_points: usize,
    pub upperarm_points: usize,
    pub label_accuracy: f64,
    /// Average symmetric distance to the visible ground-truth surface, mm.
    pub surface_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub part: String,
    pub outer: usize,
    pub inner: usize,
    pub l_nr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    pub mode: RegistrationMode,
    pub nodes: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    /// Median closest-point distance from the atlas to the scene, mm.
    pub median_before: f64,
    pub median_after: f64,
    pub history: Vec<HistoryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub points: usize,
    pub rms_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub frames: usize,
    pub corrections: usize,
    pub vessel_lost: usize,
    pub max_recorded_offset_mm: f64,
}

/// Machine-readable run summary; sections appear once their stage completes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub elbow_angle: f64,
    pub completed: Vec<Stage>,
    pub failed_stage: Option<Stage>,
    pub error: Option<String>,
    pub extraction: Option<ExtractionSummary>,
    pub registration: Option<RegistrationSummary>,
    pub trajectory: Option<TrajectorySummary>,
    pub scan: Option<ScanSummary>,
    pub radius: Option<RadiusReport>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// In-memory products of a completed run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    /// Wall-clock seconds per stage. Kept out of the written report so that
    /// reports stay byte-identical between runs.
    pub timings: Vec<(Stage, f64)>,
    pub artifacts: Vec<PathBuf>,
    pub scene: BuiltScene,
    pub registration: Registration,
    pub trajectory: ScanTrajectory,
    pub scan: ScanRun,
    pub vessel: ReconstructedVessel,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    v[v.len() / 2]
}

/// Median closest-point distance from every point of `a` to `b`.
pub fn median_distance(a: &PointCloud3, b: &PointCloud3) -> f64 {
    let tree = KdTree::from_cloud(b);
    median(a.points.iter().filter_map(|p| tree.nearest(p).ok()).map(|n| n.distance).collect())
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    report: RunReport,
    timings: Vec<(Stage, f64)>,
    artifacts: Vec<PathBuf>,
    clock: Instant,
}

impl Runner<'_> {
    fn done(&mut self, stage: Stage) {
        self.report.completed.push(stage);
        self.timings.push((stage, self.clock.elapsed().as_secs_f64()));
        self.clock = Instant::now();
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.cfg.output_dir.join(name);
        self.artifacts.push(p.clone());
        p
    }
}

fn extract(scene: &BuiltScene, params: &ExtractParams) -> Result<(SegmentedArm, JointPixels), PipelineError> {
    let [w, e, s] = scene.joint_pixels().ok_or(PipelineError::Stage {
        stage: Stage::Extract,
        cause: "a joint projects outside the depth image".into(),
    })?;
    let joints = JointPixels::new(w, e, s);
    let arm = at!(Stage::Extract, extract_arm(scene.image(), &joints, params))?;
    Ok((arm, joints))
}

/// Runs every stage, writing artifacts and `report.json` under
/// `cfg.output_dir`. On failure the partial report is still written.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| stage_err(Stage::Scene)(&e))?;
    let mut r = Runner {
        cfg,
        report: RunReport {
            seed: cfg.seed,
            elbow_angle: cfg.scene.elbow_angle,
            ..Default::default()
        },
        timings: Vec::new(),
        artifacts: Vec::new(),
        clock: Instant::now(),
    };
    let out = run_stages(&mut r);
    if let Err(PipelineError::Stage { stage, cause }) = &out {
        r.report.failed_stage = Some(*stage);
        r.report.error = Some(cause.clone());
    }
    let path = r.path("report.json");
    let written = std::fs::write(&path, r.report.to_json() + "\n").map_err(|e| stage_err(Stage::Report)(&e));
    let mut run = out?;
    written?;
    run.report = r.report;
    run.timings = r.timings;
    run.artifacts = r.artifacts;
    Ok(run)
}

fn run_stages(r: &mut Runner<'_>) -> Result<PipelineRun, PipelineError> {
    let cfg = r.cfg;
    use artifacts as a;

    let atlas_tpl = at!(Stage::Scene, make_template(&cfg.scene_config().template))?;
    let atlas_scene = at!(Stage::Scene, cfg.atlas_config().build_from(atlas_tpl.clone()))?;
    let scene = at!(Stage::Scene, cfg.scene_config().build_from(atlas_tpl))?;
    at!(Stage::Scene, a::template_ply(&r.path("atlas_surface.ply"), &atlas_scene.posed))?;
    at!(Stage::Scene, a::template_ply(&r.path("scene_surface.ply"), &scene.posed))?;
    at!(Stage::Scene, a::points_csv(&r.path("scene_vessel_truth.csv"), &scene.posed.centerline))?;
    r.done(Stage::Scene);

    at!(Stage::Render, atlas_scene.image().write_pgm(&r.path("atlas_depth.pgm")))?;
    at!(Stage::Render, scene.image().write_pgm(&r.path("scene_depth.pgm")))?;
    r.done(Stage::Render);

    let (atlas_arm, atlas_joints) = extract(&atlas_scene, &cfg.extract)?;
    let (scene_arm, scene_joints) = extract(&scene, &cfg.extract)?;
    at!(Stage::Extract, a::arm_ply(&r.path("atlas_arm.ply"), &atlas_arm))?;
    at!(Stage::Extract, a::arm_ply(&r.path("scene_arm.ply"), &scene_arm))?;
    let er = scene_arm.report();
    at!(Stage::Extract, a::json(&r.path("scene_extraction.json"), &er))?;
    let truth = visible_ground_truth(&scene.rendered, &scene.posed);
    let (scene_cloud, _) = scene_arm.union();
    r.report.extraction = Some(ExtractionSummary {
        seed_count: er.seed_count,
        table_depth: er.table_depth,
        forearm_points: er.forearm_points,
        upperarm_points: er.upperarm_points,
        label_accuracy: label_accuracy(&scene_arm, &scene.rendered, &scene.posed),
        surface_distance: surface_distance(&scene_cloud, &truth.cloud),
    });
    r.done(Stage::Extract);

    let tpl = &atlas_scene.posed;
    let centerline = at!(Stage::Plan, smooth_centerline(&tpl.centerline, cfg.plan.smoothing_window))?;
    let mut plan = at!(Stage::Plan, project_trajectory(&centerline, &tpl.surface, &Vector3::z()))?;
    plan.compute_poses(&Vector3::z());
    at!(Stage::Plan, crate::atlas_traj::write_trajectory_csv(&r.path("atlas_trajectory.csv"), &plan))?;
    at!(
        Stage::Plan,
        crate::geom::io::write_ply(&r.path("atlas_correspondence.ply"), &crate::atlas_traj::correspondence_ply(&centerline, &plan))
    )?;
    r.done(Stage::Plan);

    let atlas_surface = ArmSurface::from_extraction(&atlas_arm, atlas_scene.image(), &atlas_joints);
    let scene_surface = ArmSurface::from_extraction(&scene_arm, scene.image(), &scene_joints);
    let reg = at!(Stage::Register, register(&atlas_surface, &scene_surface, &cfg.register))?;
    let (atlas_cloud, _) = atlas_surface.union();
    let (target_cloud, _) = scene_surface.union();
    let deformed = reg.deform_atlas(&atlas_surface);
    at!(Stage::Register, crate::nonrigid_reg::write_history_csv(&r.path("registration_history.csv"), &reg))?;
    for part in &reg.parts {
        let name = match part.segment {
            None => "deformation_graph.json".to_string(),
            Some(s) => format!("deformation_graph_{}.json", a::segment_name(s)),
        };
        at!(Stage::Register, std::fs::write(r.path(&name), crate::nonrigid_reg::graph_json(&part.graph) + "\n"))?;
    }
    at!(Stage::Register, a::cloud_ply(&r.path("deformed_atlas.ply"), &deformed))?;
    r.report.registration = Some(RegistrationSummary {
        mode: reg.mode,
        nodes: reg.parts.iter().map(|p| p.graph.len()).sum(),
        outer_iterations: reg.parts.iter().map(|p| p.report.outer_iterations).max().unwrap_or(0),
        converged: reg.parts.iter().all(|p| p.report.converged),
        monotone: reg.is_monotone(),
        median_before: median_distance(&atlas_cloud, &target_cloud),
        median_after: median_distance(&deformed, &target_cloud),
        history: reg
            .history()
            .into_iter()
            .map(|(s, h)| HistoryRow {
                part: s.map_or("joint", a::segment_name).to_string(),
                outer: h.outer,
                inner: h.inner,
                l_nr: h.energy.l_nr,
            })
            .collect(),
    });
    r.done(Stage::Register);

    let normals = at!(Stage::Transfer, estimate_normals(&target_cloud, cfg.plan.normals_k, &Vector3::z()))?;
    let moved = at!(Stage::Transfer, reg.transfer(&plan, &atlas_surface, Some(&normals), &Vector3::z()))?;
    let truth_traj: PointCloud3 = plan
        .surface_points
        .points
        .iter()
        .map(|p| scene.pose.map_point(tpl, p, p.x))
        .collect();
    let errs: Vec<f64> = moved
        .surface_points
        .points
        .iter()
        .zip(&truth_traj.points)
        .map(|(p, q)| (p - q).norm())
        .collect();
    at!(Stage::Transfer, crate::atlas_traj::write_trajectory_csv(&r.path("scene_trajectory.csv"), &moved))?;
    at!(Stage::Transfer, a::points_csv(&r.path("truth_trajectory.csv"), &truth_traj))?;
    r.report.trajectory = Some(TrajectorySummary {
        points: errs.len(),
        rms_error: (errs.iter().map(|e| e * e).sum::<f64>() / errs.len().max(1) as f64).sqrt(),
        max_error: errs.iter().copied().fold(0.0, f64::max),
    });
    r.done(Stage::Transfer);

    let trim = cfg.plan.trim;
    let section = if moved.len() > 2 * trim + 1 {
        moved.section(trim..moved.len() - trim)
    } else {
        moved.clone()
    };
    let run = at!(Stage::Scan, crate::scan_sim::run_scan(&scene.posed, &section, &cfg.scan))?;
    at!(Stage::Scan, crate::scan_sim::write_frames(&r.path("frames"), &run.frames))?;
    at!(Stage::Scan, crate::scan_sim::write_poses_csv(&r.path("scan_poses.csv"), &run))?;
    r.report.scan = Some(ScanSummary {
        frames: run.frames.len(),
        corrections: run.corrections.len(),
        vessel_lost: run.vessel_lost(),
        max_recorded_offset_mm: crate::scan_sim::ScanReport::new(&run, cfg.scan.pitch, None).max_recorded_offset_mm,
    });
    r.done(Stage::Scan);

    let vessel = at!(Stage::Reconstruct, reconstruct(&run.frames))?;
    let radius = at!(Stage::Reconstruct, radius_report(&vessel, cfg.report.n_segments, &scene.posed))?;
    at!(Stage::Reconstruct, a::vessel_csv(&r.path("vessel.csv"), &vessel))?;
    at!(Stage::Reconstruct, a::radius_csv(&r.path("radius.csv"), &radius))?;
    at!(
        Stage::Reconstruct,
        a::json(&r.path("scan.json"), &crate::scan_sim::ScanReport::new(&run, cfg.scan.pitch, Some(radius.clone())))
    )?;
    r.report.radius = Some(radius);
    r.done(Stage::Reconstruct);

    Ok(PipelineRun {
        report: RunReport::default(),
        timings: Vec::new(),
        artifacts: Vec::new(),
        scene,
        registration: reg,
        trajectory: moved,
        scan: run,
        vessel,
    })
}

#[cfg(test)]
mod tests;
