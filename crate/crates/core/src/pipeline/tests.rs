use super::*;

fn in_dir(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

#[test]
fn annotated_example_is_the_default() {
    let cfg = PipelineConfig::from_toml(EXAMPLE_CONFIG).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn out_of_range_angle_names_the_field() {
    let err = PipelineConfig::from_toml("[scene]\nelbow_angle = 90.0\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    match err {
        PipelineError::Config { field, .. } => assert_eq!(field, "scene.elbow_angle"),
        other => panic!("{other}"),
    }
}

#[test]
fn nested_bounds_are_checked_at_parse_time() {
    for (text, field) in [
        ("[scan]\nsigma = 0.4\n", "scan.sigma"),
        ("[register]\nradius = -1.0\n", "register.radius"),
        ("[register.solve]\nalpha1 = -1.0\n", "register.solve.alpha1"),
        ("[plan]\nsmoothing_window = 4\n", "plan.smoothing_window"),
        ("[report]\nn_segments = 0\n", "report.n_segments"),
        ("[scene.template]\nvessel_radius = 0.0\n", "scene.template.vessel_radius"),
        ("[scene.render]\npitch = 0.0\n", "scene.render.pitch"),
    ] {
        match PipelineConfig::from_toml(text) {
            Err(PipelineError::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn overrides_and_unknown_keys() {
    let cfg = PipelineConfig::from_toml("seed = 4\n[register.solve]\nalpha2 = 50.0\nmax_outer = 7\n").unwrap();
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.register.solve.weights.alpha2, 50.0);
    assert_eq!(cfg.register.solve.max_outer, 7);
    assert_eq!(cfg.scene_config().template.seed, 4);
    assert!(matches!(
        PipelineConfig::from_toml("[scan]\nwidht = 3\n"),
        Err(PipelineError::Config { .. })
    ));
    assert!(matches!(
        PipelineConfig::from_toml("[register.solve]\nalpha3 = 3.0\n"),
        Err(PipelineError::Config { .. })
    ));
}

#[test]
fn default_pipeline_at_160_degrees() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_pipeline(&in_dir(dir.path())).unwrap();
    let r = &run.report;
    assert_eq!(r.completed.len(), 8);
    let traj = r.trajectory.as_ref().unwrap();
    assert!(traj.rms_error <= 2.0, "rms {}", traj.rms_error);
    let radius = r.radius.as_ref().unwrap();
    assert_eq!(radius.segments.len(), 14);
    assert!(radius.max_abs_error <= 0.13, "{:?}", radius.errors);
    assert!(r.registration.as_ref().unwrap().monotone);
    assert_eq!(r.scan.as_ref().unwrap().vessel_lost, 0);
    let written: PipelineConfig = PipelineConfig::default();
    assert_eq!(written.scene.elbow_angle, 160.0);
    for name in [
        "report.json",
        "scene_depth.pgm",
        "scene_arm.ply",
        "atlas_trajectory.csv",
        "registration_history.csv",
        "deformation_graph.json",
        "scene_trajectory.csv",
        "scan_poses.csv",
        "frames/frame_0000.pgm",
        "vessel.csv",
        "radius.csv",
        "scan.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let back: RunReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(&back, r);
}

#[test]
fn grid_size_is_angles_times_seeds() {
    let sweep = SweepConfig {
        seeds: vec![1, 2],
        ..Default::default()
    };
    let cells = sweep.cells();
    assert_eq!(cells.len(), 6);
    let mut dirs: Vec<_> = cells.iter().map(|c| c.output_dir.clone()).collect();
    dirs.dedup();
    assert_eq!(dirs.len(), 6);
}

#[test]
fn impossible_cell_fails_alone() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = SweepConfig {
        angles: vec![150.0],
        seeds: vec![0],
        workers: 2,
        base: in_dir(dir.path()),
    };
    let mut cells = sweep.cells();
    let mut bad = cells[0].clone();
    bad.extract.depth_threshold = 1e12;
    bad.output_dir = dir.path().join("bad");
    cells.push(bad);
    let rows = sweep_cells(&cells, 2);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].ok, "{:?}", rows[0].error);
    assert!(rows[0].trajectory_rms.unwrap() <= 2.0);
    assert!(!rows[1].ok);
    assert_eq!(rows[1].failed_stage.as_deref(), Some("extract"));
    // The failed cell keeps its partial artifacts and report.
    let partial: RunReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("bad/report.json")).unwrap()).unwrap();
    assert_eq!(partial.failed_stage, Some(Stage::Extract));
    assert!(dir.path().join("bad/scene_depth.pgm").exists());
    let csv_path = dir.path().join("sweep.csv");
    write_sweep_csv(&csv_path, &rows).unwrap();
    let text = std::fs::read_to_string(csv_path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(2).unwrap().contains("failed"));
}
