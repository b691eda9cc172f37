use crate::ConfigArgs;
use limbscan::arm_scene::{make_template, BuiltScene, DepthImage};
use limbscan::atlas_traj::{correspondence_ply, project_trajectory, read_trajectory_csv, smooth_centerline, write_trajectory_csv};
use limbscan::geom::estimate_normals;
use limbscan::geom::io::write_ply;
use limbscan::nonrigid_reg::{graph_json, register as register_surfaces, write_history_csv, ArmSurface};
use limbscan::pipeline::{artifacts, median_distance, run_pipeline, PipelineConfig, PipelineError, SweepConfig};
use limbscan::scan_sim::{radius_report, reconstruct, run_scan, write_frames, write_poses_csv, ScanReport};
use limbscan::surface_extract::{extract_arm, JointPixels};
use limbscan::{KdTree, Vector3};
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    msg: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            msg: e.to_string(),
        }
    }
}

fn config_err(e: impl fmt::Display) -> Failure {
    Failure { code: 2, msg: e.to_string() }
}

fn stage<E: fmt::Display>(name: &'static str) -> impl Fn(E) -> Failure {
    move |e| Failure {
        code: 3,
        msg: format!("stage `{name}` failed: {e}"),
    }
}

type Res = Result<(), Failure>;

fn load(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(a) = args.angle {
        cfg.scene.elbow_angle = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Res {
    artifacts::json(path, v).map_err(stage("report"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn scenes(cfg: &PipelineConfig) -> Result<(BuiltScene, BuiltScene), Failure> {
    let tpl = make_template(&cfg.scene_config().template).map_err(stage("scene"))?;
    let atlas = cfg.atlas_config().build_from(tpl.clone()).map_err(stage("scene"))?;
    let scene = cfg.scene_config().build_from(tpl).map_err(stage("scene"))?;
    Ok((atlas, scene))
}

fn joint_pixels(s: &BuiltScene) -> Result<JointPixels, Failure> {
    let [w, e, sh] = s
        .joint_pixels()
        .ok_or_else(|| stage::<&str>("render")("a joint projects outside the image"))?;
    Ok(JointPixels::new(w, e, sh))
}

pub fn scene(args: &ConfigArgs, out: &Path) -> Res {
    let cfg = load(args)?;
    let (atlas, scene) = scenes(&cfg)?;
    std::fs::create_dir_all(out).map_err(stage("scene"))?;
    artifacts::template_ply(&out.join("atlas_surface.ply"), &atlas.posed).map_err(stage("scene"))?;
    artifacts::template_ply(&out.join("scene_surface.ply"), &scene.posed).map_err(stage("scene"))?;
    artifacts::points_csv(&out.join("scene_vessel_truth.csv"), &scene.posed.centerline).map_err(stage("scene"))?;
    #[derive(Serialize)]
    struct SceneJson<'a> {
        elbow_angle: f64,
        vessel_radius: f64,
        atlas_joints: &'a limbscan::arm_scene::Joints,
        scene_joints: &'a limbscan::arm_scene::Joints,
        camera: &'a limbscan::arm_scene::Camera,
    }
    write_json(
        &out.join("scene.json"),
        &SceneJson {
            elbow_angle: scene.pose.elbow_angle(),
            vessel_radius: scene.posed.vessel_radius,
            atlas_joints: &atlas.posed.joints,
            scene_joints: &scene.posed.joints,
            camera: &scene.camera,
        },
    )?;
    println!("wrote scene to {}", out.display());
    Ok(())
}

pub fn render(args: &ConfigArgs, out: &Path, atlas: bool, joints: Option<PathBuf>) -> Res {
    let cfg = load(args)?;
    let (a, s) = scenes(&cfg)?;
    let built = if atlas { a } else { s };
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(stage("render"))?;
    }
    built.image().write_pgm(out).map_err(stage("render"))?;
    let jp = joints.unwrap_or_else(|| out.with_extension("joints.json"));
    write_json(&jp, &joint_pixels(&built)?)?;
    println!("wrote {} and {}", out.display(), jp.display());
    Ok(())
}

pub struct ExtractFiles {
    pub depth: PathBuf,
    pub joints: PathBuf,
    pub out: PathBuf,
    pub surface: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn extract(
    args: &ConfigArgs,
    files: &ExtractFiles,
    depth_threshold: Option<f64>,
    continuity_tolerance: Option<f64>,
    seed_spacing: Option<f64>,
) -> Res {
    let mut params = load(args)?.extract;
    if let Some(v) = depth_threshold {
        params.depth_threshold = v;
    }
    if let Some(v) = continuity_tolerance {
        params.continuity_tolerance = v;
    }
    if let Some(v) = seed_spacing {
        params.seed_spacing = v;
    }
    params.validate().map_err(config_err)?;
    let img = DepthImage::read_pgm(&files.depth).map_err(config_err)?;
    let joints: JointPixels = read_json(&files.joints)?;
    let arm = extract_arm(&img, &joints, &params).map_err(stage("extract"))?;
    artifacts::arm_ply(&files.out, &arm).map_err(stage("extract"))?;
    if let Some(p) = &files.surface {
        write_json(p, &ArmSurface::from_extraction(&arm, &img, &joints))?;
    }
    if let Some(p) = &files.report {
        write_json(p, &arm.report())?;
    }
    println!(
        "extracted {} forearm and {} upper-arm points",
        arm.forearm.len(),
        arm.upperarm.len()
    );
    Ok(())
}

pub fn plan(args: &ConfigArgs, out: &Path, ply: Option<PathBuf>) -> Res {
    let cfg = load(args)?;
    let tpl = make_template(&cfg.scene_config().template).map_err(stage("plan"))?;
    let centerline = smooth_centerline(&tpl.centerline, cfg.plan.smoothing_window).map_err(stage("plan"))?;
    let traj = project_trajectory(&centerline, &tpl.surface, &Vector3::z()).map_err(stage("plan"))?;
    write_trajectory_csv(out, &traj).map_err(stage("plan"))?;
    if let Some(p) = ply {
        write_ply(&p, &correspondence_ply(&centerline, &traj)).map_err(stage("plan"))?;
    }
    println!("planned {} trajectory points", traj.len());
    Ok(())
}

pub fn register(args: &ConfigArgs, atlas: &Path, scene: &Path, traj: Option<PathBuf>, out_dir: &Path) -> Res {
    let cfg = load(args)?;
    let a: ArmSurface = read_json(atlas)?;
    let s: ArmSurface = read_json(scene)?;
    let reg = register_surfaces(&a, &s, &cfg.register).map_err(stage("register"))?;
    std::fs::create_dir_all(out_dir).map_err(stage("register"))?;
    write_history_csv(&out_dir.join("registration_history.csv"), &reg).map_err(stage("register"))?;
    for part in &reg.parts {
        let name = match part.segment {
            None => "deformation_graph.json".to_string(),
            Some(seg) => format!("deformation_graph_{}.json", artifacts::segment_name(seg)),
        };
        std::fs::write(out_dir.join(name), graph_json(&part.graph) + "\n").map_err(stage("register"))?;
    }
    let deformed = reg.deform_atlas(&a);
    artifacts::cloud_ply(&out_dir.join("deformed_atlas.ply"), &deformed).map_err(stage("register"))?;
    let (ac, _) = a.union();
    let (sc, _) = s.union();
    let (before, after) = (median_distance(&ac, &sc), median_distance(&deformed, &sc));
    #[derive(Serialize)]
    struct RegJson {
        median_before: f64,
        median_after: f64,
        monotone: bool,
        outer_iterations: Vec<usize>,
    }
    write_json(
        &out_dir.join("registration.json"),
        &RegJson {
            median_before: before,
            median_after: after,
            monotone: reg.is_monotone(),
            outer_iterations: reg.parts.iter().map(|p| p.report.outer_iterations).collect(),
        },
    )?;
    println!("median distance {before:.3} mm -> {after:.3} mm");
    if let Some(t) = traj {
        let plan = read_trajectory_csv(&t).map_err(config_err)?;
        let normals = estimate_normals(&sc, cfg.plan.normals_k, &Vector3::z()).map_err(stage("transfer"))?;
        let moved = reg
            .transfer(&plan, &a, Some(&normals), &Vector3::z())
            .map_err(stage("transfer"))?;
        write_trajectory_csv(&out_dir.join("scene_trajectory.csv"), &moved).map_err(stage("transfer"))?;
        println!("transferred {} trajectory points", moved.len());
    }
    Ok(())
}

pub struct ScanOverrides {
    pub sigma: Option<f64>,
    pub bias: Option<f64>,
    pub deadband: Option<f64>,
}

pub fn scan(args: &ConfigArgs, traj: &Path, o: ScanOverrides, out_frames: &Path, report: &Path) -> Res {
    let mut cfg = load(args)?;
    if let Some(v) = o.sigma {
        cfg.scan.sigma = v;
    }
    if let Some(v) = o.bias {
        cfg.scan.bias = v;
    }
    if let Some(v) = o.deadband {
        cfg.scan.deadband_px = v;
    }
    cfg.validate()?;
    let (_, scene) = scenes(&cfg)?;
    let mut path = read_trajectory_csv(traj).map_err(config_err)?;
    if path.is_empty() {
        return Err(config_err(format!("{}: trajectory is empty", traj.display())));
    }
    // Orient the probe along the true skin normal under each point.
    let surface = &scene.posed.surface;
    let tree = KdTree::from_cloud(surface);
    let normals = path
        .surface_points
        .points
        .iter()
        .map(|p| surface.normal(tree.nearest(p).expect("non-empty surface").index).unwrap_or(Vector3::z()))
        .collect();
    path.surface_points.normals = Some(normals);
    path.compute_poses(&Vector3::z());
    let run = run_scan(&scene.posed, &path, &cfg.scan).map_err(stage("scan"))?;
    write_frames(out_frames, &run.frames).map_err(stage("scan"))?;
    write_poses_csv(&out_frames.join("poses.csv"), &run).map_err(stage("scan"))?;
    let radius = reconstruct(&run.frames)
        .ok()
        .and_then(|v| radius_report(&v, cfg.report.n_segments, &scene.posed).ok());
    let rep = ScanReport::new(&run, cfg.scan.pitch, radius);
    std::fs::write(report, rep.to_json() + "\n").map_err(stage("scan"))?;
    println!(
        "{} frames, {} corrections, {} vessel lost",
        rep.frames,
        rep.corrections.len(),
        rep.vessel_lost
    );
    Ok(())
}

pub fn pipeline(args: &ConfigArgs, out: Option<PathBuf>) -> Res {
    let mut cfg = load(args)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    let run = run_pipeline(&cfg)?;
    for (s, t) in &run.timings {
        eprintln!("{s:>12}: {t:.2} s");
    }
    let r = &run.report;
    if let Some(t) = &r.trajectory {
        println!("trajectory rms error {:.3} mm", t.rms_error);
    }
    if let Some(x) = &r.radius {
        println!(
            "vessel radius {:.3} mm (truth {:.3}), worst segment error {:.3} mm",
            x.global_mean, x.truth, x.max_abs_error
        );
    }
    println!("report: {}", cfg.output_dir.join("report.json").display());
    Ok(())
}

pub fn sweep(args: &ConfigArgs, angles: Vec<f64>, seeds: Vec<u64>, workers: usize, out: Option<PathBuf>) -> Res {
    let mut base = load(args)?;
    if let Some(o) = out {
        base.output_dir = o;
    }
    let sc = SweepConfig {
        angles,
        seeds,
        workers,
        base,
    };
    for c in sc.cells() {
        c.validate()?;
    }
    let rows = limbscan::pipeline::sweep(&sc)?;
    let failed = rows.iter().filter(|r| !r.ok).count();
    println!(
        "{} cells, {failed} failed: {}",
        rows.len(),
        sc.base.output_dir.join("sweep.csv").display()
    );
    if failed > 0 {
        return Err(Failure {
            code: 3,
            msg: format!("{failed} sweep cell(s) failed"),
        });
    }
    Ok(())
}
