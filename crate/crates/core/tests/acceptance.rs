//! Acceptance checks. Each test prints one PASS/FAIL line.

use limbscan::arm_scene::{make_template, BuiltScene, SceneConfig, TemplateParams};
use limbscan::atlas_traj::{project_trajectory, smooth_centerline, ScanTrajectory};
use limbscan::flow_seg::{attention_fuse, dice, predict_mask, BinaryMask, FeatureMap, FlowField};
use limbscan::geom::{estimate_normals, fit_rigid, knn, KdTree, PointCloud};
use limbscan::nonrigid_reg::{build_graph, energy, register, subsample, ArmSurface, Correspondence, EnergyWeights, RegisterParams};
use limbscan::pipeline::{median_distance, run_pipeline, PipelineConfig};
use limbscan::scan_sim::{radius_report, reconstruct, run_scan, ScanParams};
use limbscan::surface_extract::{extract_arm, label_accuracy, surface_distance, visible_ground_truth, ExtractParams, JointPixels};
use limbscan::{Point3, RigidTransform, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

fn report(id: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    println!(
        "criterion {id} [{}] {name}: {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    assert!(pass, "criterion {id} failed: {}", detail.as_ref());
}

fn scene(angle: f64, seed: u64) -> BuiltScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SceneConfig {
        elbow_angle: angle,
        yaw_deg: rng.random_range(-30.0..30.0),
        offset_x: rng.random_range(-50.0..50.0),
        offset_y: rng.random_range(-50.0..50.0),
        ..Default::default()
    }
    .build()
    .unwrap()
}

#[test]
fn criterion_4_segmentation_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut warp_ok = 0;
    for _ in 0..1000 {
        let m = BinaryMask::from_fn(32, 32, |_, _| rng.random_bool(0.3));
        let flow = FlowField::<f64>::from_fn(32, 32, |_, _| {
            (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0))
        });
        let mut expect = BinaryMask::new(32, 32);
        for y in 0..32i64 {
            for x in 0..32i64 {
                if m.get(x as usize, y as usize) {
                    let (u, v) = flow.at(x as usize, y as usize);
                    let (tx, ty) = (x + u.round() as i64, y + v.round() as i64);
                    if (0..32).contains(&tx) && (0..32).contains(&ty) {
                        expect.set(tx as usize, ty as usize, true);
                    }
                }
            }
        }
        if predict_mask(&m, &flow).unwrap() == expect {
            warp_ok += 1;
        }
    }

    let mut fuse_err = 0.0f64;
    for _ in 0..50 {
        let (c, w, h) = (rng.random_range(1..6), rng.random_range(1..20), rng.random_range(1..20));
        let fc = FeatureMap::new(c, w, h, (0..c * w * h).map(|_| rng.random_range(-10.0f64..10.0)).collect()).unwrap();
        let fa = FeatureMap::new(1, w, h, (0..w * h).map(|_| rng.random_range(-10.0f64..10.0)).collect()).unwrap();
        let out = attention_fuse(&fc, &fa).unwrap();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let f = fc.at(ch, x, y);
                    let r = f + f * (1.0 / (1.0 + (-fa.at(0, x, y)).exp()));
                    fuse_err = fuse_err.max((out.at(ch, x, y) - r).abs());
                }
            }
        }
    }

    let g = BinaryMask::from_fn(6, 6, |x, y| (1..3).contains(&x) && (1..3).contains(&y));
    let s = BinaryMask::from_fn(6, 6, |x, y| (2..4).contains(&x) && (1..3).contains(&y));
    let far = BinaryMask::from_fn(6, 6, |x, y| x == 5 && y == 5);
    let dice_ok = dice::<f64>(&g, &g).unwrap().coefficient == 1.0
        && dice::<f64>(&g, &far).unwrap().coefficient == 0.0
        && dice::<f64>(&g, &s).unwrap().coefficient == 0.5
        && dice::<f64>(&g, &s).unwrap().loss == 0.5;

    report(
        4,
        "mask warp, attention fusion and dice oracles",
        warp_ok == 1000 && fuse_err <= 1e-12 && dice_ok,
        format!("warp {warp_ok}/1000 exact, fusion max err {fuse_err:.1e}, dice examples exact: {dice_ok}"),
    );
}

#[test]
fn criterion_5_surface_extraction() {
    let mut worst_dist = 0.0f64;
    let mut worst_acc = 1.0f64;
    let mut bound_ok = true;
    let mut pitch = 0.0;
    for angle in [120.0, 140.0, 160.0] {
        let s = scene(angle, angle as u64);
        pitch = s.image().pitch;
        let [w, e, sh] = s.joint_pixels().unwrap();
        let p = ExtractParams::default();
        let arm = extract_arm(s.image(), &JointPixels::new(w, e, sh), &p).unwrap();
        let gt = visible_ground_truth(&s.rendered, &s.posed);
        let d = surface_distance(&arm.union().0, &gt.cloud).unwrap();
        let acc = label_accuracy(&arm, &s.rendered, &s.posed);
        println!("  angle {angle}: surface distance {d:.3} mm, labels {:.2}%", 100.0 * acc);
        worst_dist = worst_dist.max(d);
        worst_acc = worst_acc.min(acc);
        for edges in [&arm.forearm_edges, &arm.upperarm_edges] {
            for win in edges.seeds.windows(2) {
                bound_ok &= win[1].left.half_width <= win[0].left.half_width + p.continuity_tolerance;
                bound_ok &= win[1].right.half_width <= win[0].right.half_width + p.continuity_tolerance;
            }
        }
    }
    report(
        5,
        "surface extraction fidelity",
        worst_dist <= 2.0 * pitch && worst_acc >= 0.95 && bound_ok,
        format!(
            "worst distance {worst_dist:.3} mm (limit {:.1}), worst labelling {:.2}% (limit 95), continuity bound held: {bound_ok}",
            2.0 * pitch,
            100.0 * worst_acc
        ),
    );
}

#[test]
fn criterion_6_geometry_core() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut recovered = 0;
    for _ in 0..100 {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = nalgebra::Rotation3::from_scaled_axis(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI));
        let truth = RigidTransform {
            rotation: *rot.matrix(),
            translation: Vector3::new(rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)),
        };
        let src: Vec<Point3> = (0..20)
            .map(|_| Point3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)))
            .collect();
        let tgt: Vec<Point3> = src
            .iter()
            .map(|p| truth.apply(p) + Vector3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let fit = fit_rigid(&PointCloud::new(src), &PointCloud::new(tgt)).unwrap();
        if fit.rotation_angle_to(&truth) <= 0.01 && (fit.translation - truth.translation).norm() <= 0.05 {
            recovered += 1;
        }
    }

    let mut knn_ok = true;
    for inst in 0..3 {
        let cloud: PointCloud<f64> = (0..10_000)
            .map(|_| Point3::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0), rng.random_range(0.0..20.0)))
            .collect();
        let tree = KdTree::from_cloud(&cloud);
        for _ in 0..200 {
            let q = if rng.random_bool(0.2) {
                cloud.points[rng.random_range(0..cloud.len())]
            } else {
                Point3::new(rng.random_range(-10.0..110.0), rng.random_range(-10.0..110.0), rng.random_range(-5.0..25.0))
            };
            let k = rng.random_range(1..=16);
            let mut brute: Vec<(f64, usize)> = cloud.points.iter().enumerate().map(|(i, p)| ((p - q).norm(), i)).collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got = tree.knn(&q, k).unwrap();
            let free = knn(&q, &cloud, k).unwrap();
            knn_ok &= got.iter().map(|n| n.index).eq(brute[..k].iter().map(|b| b.1));
            knn_ok &= free == got;
        }
        let _ = inst;
    }

    let energy_zero = identity_energies().iter().all(|&e| e == 0.0);
    report(
        6,
        "geometry core",
        recovered == 100 && knn_ok && energy_zero,
        format!("rigid fits recovered {recovered}/100, knn exact on 10^4 points: {knn_ok}, identity energy exactly 0: {energy_zero}"),
    );
}


fn surface_of(s: &BuiltScene) -> ArmSurface {
    let [w, e, sh] = s.joint_pixels().unwrap();
    let j = JointPixels::new(w, e, sh);
    let arm = extract_arm(s.image(), &j, &ExtractParams::default()).unwrap();
    ArmSurface::from_extraction(&arm, s.image(), &j)
}

/// Total energy of an undeformed graph against its own vertices, for the
/// atlas surface of every acceptance angle.
fn identity_energies() -> Vec<f64> {
    [120.0, 140.0, 160.0]
        .iter()
        .map(|&a| {
            let (cloud, _) = surface_of(&scene(a, 60)).union();
            let (verts, _) = subsample(&cloud, 3.0);
            let g = build_graph(&verts, 15.0, 4).unwrap();
            let corr: Vec<_> = verts
                .points
                .iter()
                .enumerate()
                .map(|(vertex, &target)| Correspondence { vertex, target })
                .collect();
            energy(&g, &verts, &corr, &EnergyWeights::default()).l_nr
        })
        .collect()
}

fn atlas_trajectory(atlas: &BuiltScene) -> ScanTrajectory {
    let c = smooth_centerline(&atlas.posed.centerline, 5).unwrap();
    project_trajectory(&c, &atlas.posed.surface, &Vector3::z()).unwrap()
}

struct RegistrationRun {
    angle: f64,
    seed: u64,
    median_after: f64,
    rms: f64,
    seconds: f64,
    monotone: bool,
}

/// Five seeded scenes per angle, each registered from the straight atlas.
fn registration_runs() -> &'static [RegistrationRun] {
    static RUNS: OnceLock<Vec<RegistrationRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut out = Vec::new();
        for angle in [120.0, 140.0, 160.0] {
            for seed in 1..=5u64 {
                let t0 = Instant::now();
                let tpl = make_template(&TemplateParams {
                    seed,
                    ..Default::default()
                })
                .unwrap();
                let atlas_scene = SceneConfig::default().build_from(tpl.clone()).unwrap();
                let s = scene_from(angle, seed, tpl);
                let atlas = surface_of(&atlas_scene);
                let target = surface_of(&s);
                let reg = register(&atlas, &target, &RegisterParams::default()).unwrap();
                let (tc, _) = target.union();
                let median_after = median_distance(&reg.deform_atlas(&atlas), &tc);
                let plan = atlas_trajectory(&atlas_scene);
                let normals = estimate_normals(&tc, 20, &Vector3::z()).unwrap();
                let moved = reg.transfer(&plan, &atlas, Some(&normals), &Vector3::z()).unwrap();
                let se: f64 = plan
                    .surface_points
                    .points
                    .iter()
                    .zip(&moved.surface_points.points)
                    .map(|(p, q)| (s.pose.map_point(&atlas_scene.posed, p, p.x) - q).norm_squared())
                    .sum();
                let run = RegistrationRun {
                    angle,
                    seed,
                    median_after,
                    rms: (se / plan.len() as f64).sqrt(),
                    seconds: t0.elapsed().as_secs_f64(),
                    monotone: reg.is_monotone(),
                };
                println!(
                    "  angle {angle} seed {seed}: median {:.3} mm, trajectory rms {:.3} mm, {:.1} s",
                    run.median_after, run.rms, run.seconds
                );
                out.push(run);
            }
        }
        out
    })
}

fn scene_from(angle: f64, seed: u64, tpl: limbscan::arm_scene::ArmTemplate) -> BuiltScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + angle as u64);
    SceneConfig {
        elbow_angle: angle,
        yaw_deg: rng.random_range(-30.0..30.0),
        offset_x: rng.random_range(-50.0..50.0),
        offset_y: rng.random_range(-50.0..50.0),
        ..Default::default()
    }
    .build_from(tpl)
    .unwrap()
}

#[test]
fn criterion_1_registration_under_articulation() {
    let runs = registration_runs();
    let worst_median = runs.iter().map(|r| r.median_after).fold(0.0, f64::max);
    let worst_rms = runs.iter().map(|r| r.rms).fold(0.0, f64::max);
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let failing: Vec<String> = runs
        .iter()
        .filter(|r| !(r.median_after <= 1.0 && r.rms <= 2.0 && r.seconds <= 60.0))
        .map(|r| format!("{}/{}", r.angle, r.seed))
        .collect();
    report(
        1,
        "registration under articulation",
        runs.len() == 15 && failing.is_empty(),
        format!(
            "{} runs, worst median {worst_median:.3} mm (limit 1.0), worst trajectory rms {worst_rms:.3} mm (limit 2.0), slowest {slowest:.1} s (limit 60), failing {failing:?}",
            runs.len()
        ),
    );
}

/// Straight atlas, its planned path and a stretch of it on the forearm
/// covering `length` mm of vessel. The straight arm runs along x.
fn forearm_section(length: f64) -> (BuiltScene, ScanTrajectory) {
    let atlas = SceneConfig::default().build().unwrap();
    let mut traj = atlas_trajectory(&atlas);
    traj.compute_poses(&Vector3::z());
    let pts = &traj.surface_points.points;
    let start = pts.iter().position(|p| p.x <= atlas.posed.params.x_wrist() - 30.0).unwrap();
    let end = (start..pts.len())
        .find(|&i| (pts[start].x - pts[i].x).abs() >= length)
        .unwrap();
    let section = traj.section(start..end + 1);
    (atlas, section)
}

#[test]
fn criterion_2_radius_fidelity() {
    let t0 = Instant::now();
    let (atlas, section) = forearm_section(70.0);
    let run = run_scan(&atlas.posed, &section, &ScanParams::default()).unwrap();
    let vessel = reconstruct(&run.frames).unwrap();
    let rep = radius_report(&vessel, 14, &atlas.posed).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    report(
        2,
        "radius fidelity",
        rep.segments.len() == 14 && rep.max_abs_error <= 0.13 && rep.global_error.abs() <= 0.06 && secs <= 10.0,
        format!(
            "{:.1} mm vessel, {} frames, worst segment error {:.4} mm (limit 0.13), global mean {:.4} mm vs {:.2} (limit 0.06), {secs:.2} s (limit 10)",
            vessel.length(),
            run.frames.len(),
            rep.max_abs_error,
            rep.global_mean,
            rep.truth
        ),
    );
}

#[test]
fn criterion_3_centering_servo() {
    let atlas = SceneConfig::default().build().unwrap();
    let mut traj = atlas_trajectory(&atlas);
    traj.compute_poses(&Vector3::z());
    let traj = traj.section(5..traj.len() - 5);
    let mut worst_settled: f64 = 0.0;
    let mut worst_arrival: f64 = 0.0;
    let mut lost_after_warmup = 0;
    let mut worst_decay: f64 = 0.0;
    let mut events = 0;
    for b in [1.0, 3.0, 5.0] {
        for sigma in [0.6, 0.8, 0.95] {
            let params = ScanParams {
                bias: b,
                sigma,
                ..Default::default()
            };
            let run = run_scan(&atlas.posed, &traj, &params).unwrap();
            for l in &run.log[10..] {
                match l.recorded_offset_px {
                    Some(o) => worst_settled = worst_settled.max(o.abs() * params.pitch),
                    None => lost_after_warmup += 1,
                }
                if let Some(o) = l.arrival_offset_px {
                    worst_arrival = worst_arrival.max(o.abs() * params.pitch);
                }
            }
            worst_decay = worst_decay.max(run.max_decay_residual);
            events += run.corrections.len();
        }
    }
    report(
        3,
        "centering servo",
        worst_settled <= 0.5 && lost_after_warmup == 0 && worst_decay <= 1e-12 && events > 0,
        format!(
            "worst centering error after 10 frames {worst_settled:.3} mm (limit 0.5), worst pre-correction error {worst_arrival:.3} mm, lost frames {lost_after_warmup}, {events} corrections with decay residual {worst_decay:.1e} (limit 1e-12)"
        ),
    );
}

#[test]
fn criterion_7_solver_health() {
    let runs = registration_runs();
    let monotone = runs.iter().filter(|r| r.monotone).count();
    let mut self_ok = true;
    let mut detail = Vec::new();
    for angle in [120.0, 140.0, 160.0] {
        let surf = surface_of(&scene(angle, 7));
        let reg = register(&surf, &surf, &RegisterParams::default()).unwrap();
        let rep = &reg.parts[0].report;
        let e = rep.final_energy().unwrap().l_nr;
        self_ok &= rep.outer_iterations <= 2 && e <= 1e-8 && reg.is_monotone();
        detail.push(format!("{angle}: {} outer, L_nr {e:.1e}", rep.outer_iterations));
    }
    report(
        7,
        "solver health",
        monotone == runs.len() && self_ok,
        format!(
            "monotone histories {monotone}/{}; identical surfaces {}",
            runs.len(),
            detail.join(", ")
        ),
    );
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let cfg = PipelineConfig {
            seed: 3,
            output_dir: dir.path().join(name),
            ..Default::default()
        };
        run_pipeline(&cfg).unwrap();
        cfg.output_dir
    };
    let (a, b) = (run("a"), run("b"));
    let (fa, fb) = (files_under(&a), files_under(&b));
    let mut differing = Vec::new();
    for f in &fa {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).map_err(|_| ()).unwrap_or_default() {
            differing.push(f.display().to_string());
        }
    }
    report(
        8,
        "pipeline determinism",
        fa == fb && differing.is_empty() && !fa.is_empty(),
        format!("{} artifact files compared, {} differ {differing:?}", fa.len(), differing.len()),
    );
}
