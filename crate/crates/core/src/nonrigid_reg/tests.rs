use super::*;
use crate::arm_scene::{BuiltScene, SceneConfig};
use crate::atlas_traj::project_trajectory;
use crate::geom::estimate_normals;
use crate::surface_extract::{extract_arm, ExtractParams, JointPixels};
use crate::RigidTransform;

fn surface_of(s: &BuiltScene) -> ArmSurface {
    let [w, e, sh] = s.joint_pixels().unwrap();
    let j = JointPixels::new(w, e, sh);
    let arm = extract_arm(s.image(), &j, &ExtractParams::default()).unwrap();
    ArmSurface::from_extraction(&arm, s.image(), &j)
}

fn build(angle: f64, yaw: f64) -> BuiltScene {
    SceneConfig {
        elbow_angle: angle,
        yaw_deg: yaw,
        offset_x: 12.0,
        offset_y: -7.0,
        ..Default::default()
    }
    .build()
    .unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn median_distance(a: &PointCloud3, b: &PointCloud3) -> f64 {
    let tree = KdTree::from_cloud(b);
    median(a.points.iter().map(|p| tree.nearest(p).unwrap().distance).collect())
}

#[test]
fn articulated_scene_registration() {
    let atlas_scene = build(180.0, 0.0);
    let atlas_scene = SceneConfig::default().build_from(atlas_scene.atlas).unwrap();
    let scene = SceneConfig {
        elbow_angle: 160.0,
        yaw_deg: 10.0,
        offset_x: 12.0,
        offset_y: -7.0,
        ..Default::default()
    }
    .build_from(atlas_scene.atlas.clone())
    .unwrap();
    let atlas = surface_of(&atlas_scene);
    let target = surface_of(&scene);
    let (ac, _) = atlas.union();
    let (tc, _) = target.union();
    let before = median_distance(&ac, &tc);
    assert!(before >= 10.0, "pre-registration median {before}");

    let t0 = std::time::Instant::now();
    let reg = register(&atlas, &target, &RegisterParams::default()).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    assert!(reg.is_monotone());
    let after = median_distance(&reg.deform_atlas(&atlas), &tc);
    assert!(after <= 1.0, "post-registration median {after}");

    let tpl = &atlas_scene.atlas;
    let traj = project_trajectory(&tpl.centerline, &tpl.surface, &Vector3::z()).unwrap();
    let normals = estimate_normals(&tc, 20, &Vector3::z()).unwrap();
    let moved = reg.transfer(&traj, &atlas, Some(&normals), &Vector3::z()).unwrap();
    let mut se = 0.0;
    for (p, q) in traj.surface_points.points.iter().zip(&moved.surface_points.points) {
        let truth = scene.pose.map_point(tpl, p, p.x);
        se += (truth - q).norm_squared();
    }
    let rms = (se / traj.len() as f64).sqrt();
    let poses = moved.poses.as_ref().unwrap();
    assert!(poses.iter().all(|p| p.axis(2).dot(&Vector3::z()) < 0.0));
    eprintln!(
        "before {before:.2} after {after:.3} rms {rms:.3} nodes {} outer {} time {secs:.1}s",
        reg.parts[0].graph.len(),
        reg.parts[0].report.outer_iterations
    );
    assert!(rms <= 2.0, "trajectory rms {rms}");
}

#[test]
fn identity_registration_of_identical_surfaces() {
    let s = build(150.0, 0.0);
    let surf = surface_of(&s);
    let reg = register(&surf, &surf, &RegisterParams::default()).unwrap();
    let rep = &reg.parts[0].report;
    assert!(rep.outer_iterations <= 2);
    assert!(rep.final_energy().unwrap().l_nr <= 1e-8);
}

#[test]
fn per_segment_mode_runs() {
    let a = build(180.0, 0.0);
    let b = SceneConfig {
        elbow_angle: 140.0,
        ..Default::default()
    }
    .build_from(a.atlas.clone())
    .unwrap();
    let (sa, sb) = (surface_of(&a), surface_of(&b));
    let params = RegisterParams {
        mode: RegistrationMode::PerSegment,
        ..Default::default()
    };
    let reg = register(&sa, &sb, &params).unwrap();
    assert_eq!(reg.parts.len(), 2);
    assert!(reg.is_monotone());
    let after = median_distance(&reg.deform_atlas(&sa), &sb.union().0);
    assert!(after <= 1.0, "{after}");
}

#[test]
fn transfer_commutes_with_rigid_motion() {
    let s = build(170.0, 0.0);
    let atlas = surface_of(&s);
    let m = RigidTransform::about_axis(&Vector3::z(), 0.05, &Point3::new(300.0, 0.0, 0.0))
        .compose(&RigidTransform::from_translation(Vector3::new(1.5, -1.0, 0.0)));
    let params = RegisterParams {
        solve: SolveParams {
            max_outer: 30,
            ..Default::default()
        },
        ..Default::default()
    };
    let tpl = &s.atlas;
    let traj = project_trajectory(&tpl.centerline, &tpl.surface, &Vector3::z()).unwrap();
    let direct = register(&atlas, &atlas, &params).unwrap().transfer(&traj, &atlas, None, &Vector3::z()).unwrap();
    let moved_scene = atlas.transformed(&m);
    let moved = register(&atlas, &moved_scene, &params).unwrap().transfer(&traj, &atlas, None, &Vector3::z()).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in direct.surface_points.points.iter().zip(&moved.surface_points.points) {
        worst = worst.max((m.apply(a) - b).norm());
    }
    assert!(worst < 0.5, "worst {worst}");
}

#[test]
fn graph_json_round_trips_through_serde_value() {
    let s = build(180.0, 0.0);
    let surf = surface_of(&s);
    let (verts, _) = subsample(&surf.union().0, 3.0);
    let g = build_graph(&verts, 15.0, 4).unwrap();
    let v: serde_json::Value = serde_json::from_str(&graph_json(&g)).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), g.len());
    assert_eq!(v["bindings"].as_array().unwrap().len(), verts.len());
    g.validate().unwrap();
}
