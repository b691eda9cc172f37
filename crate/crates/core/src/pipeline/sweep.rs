use super::{run_pipeline, PipelineConfig, PipelineError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Grid of pipeline runs over elbow angles and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub angles: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Parallel cells; 0 uses one per core.
    pub workers: usize,
    pub base: PipelineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            angles: vec![120.0, 140.0, 160.0],
            seeds: vec![0],
            workers: 0,
            base: PipelineConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::config("toml", e.to_string().trim_end()))?;
        cfg.base.validate()?;
        Ok(cfg)
    }

    /// One configuration per grid point, each writing to its own
    /// subdirectory of the base output directory.
    pub fn cells(&self) -> Vec<PipelineConfig> {
        let mut out = Vec::new();
        for &angle in &self.angles {
            for &seed in &self.seeds {
                let mut c = self.base.clone();
                c.scene.elbow_angle = angle;
                c.seed = seed;
                c.output_dir = self.base.output_dir.join(format!("angle{angle}_seed{seed}"));
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub angle: f64,
    pub seed: u64,
    pub ok: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub median_after: Option<f64>,
    pub trajectory_rms: Option<f64>,
    pub radius_max_error: Option<f64>,
    pub radius_global_error: Option<f64>,
    pub corrections: Option<usize>,
    pub vessel_lost: Option<usize>,
    pub seconds: f64,
}

fn run_cell(cfg: &PipelineConfig) -> SweepRow {
    let t0 = std::time::Instant::now();
    let mut row = SweepRow {
        angle: cfg.scene.elbow_angle,
        seed: cfg.seed,
        ok: false,
        failed_stage: None,
        error: None,
        median_after: None,
        trajectory_rms: None,
        radius_max_error: None,
        radius_global_error: None,
        corrections: None,
        vessel_lost: None,
        seconds: 0.0,
    };
    match run_pipeline(cfg) {
        Ok(run) => {
            let r = &run.report;
            row.ok = true;
            row.median_after = r.registration.as_ref().map(|g| g.median_after);
            row.trajectory_rms = r.trajectory.as_ref().map(|t| t.rms_error);
            row.radius_max_error = r.radius.as_ref().map(|x| x.max_abs_error);
            row.radius_global_error = r.radius.as_ref().map(|x| x.global_error);
            row.corrections = r.scan.as_ref().map(|s| s.corrections);
            row.vessel_lost = r.scan.as_ref().map(|s| s.vessel_lost);
        }
        Err(e) => {
            row.failed_stage = Some(match &e {
                PipelineError::Config { .. } => "config".to_string(),
                PipelineError::Stage { stage, .. } => stage.name().to_string(),
            });
            row.error = Some(e.to_string());
        }
    }
    row.seconds = t0.elapsed().as_secs_f64();
    row
}

/// Runs every cell, `workers` at a time. Failed cells become failed rows.
pub fn sweep_cells(cells: &[PipelineConfig], workers: usize) -> Vec<SweepRow> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    pool.install(|| cells.par_iter().map(run_cell).collect())
}

/// Runs the grid and writes `sweep.csv` into the base output directory.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, PipelineError> {
    cfg.base.validate()?;
    let rows = sweep_cells(&cfg.cells(), cfg.workers);
    let stage = |e: &dyn std::fmt::Display| PipelineError::Stage {
        stage: super::Stage::Report,
        cause: e.to_string(),
    };
    std::fs::create_dir_all(&cfg.base.output_dir).map_err(|e| stage(&e))?;
    write_sweep_csv(&cfg.base.output_dir.join("sweep.csv"), &rows).map_err(|e| stage(&e))?;
    Ok(rows)
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

/// One row per cell; wall-clock seconds go last.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "angle",
        "seed",
        "status",
        "failed_stage",
        "error",
        "median_after",
        "trajectory_rms",
        "radius_max_error",
        "radius_global_error",
        "corrections",
        "vessel_lost",
        "seconds",
    ])?;
    for r in rows {
        w.write_record([
            r.angle.to_string(),
            r.seed.to_string(),
            if r.ok { "ok" } else { "failed" }.to_string(),
            opt(&r.failed_stage),
            opt(&r.error),
            opt(&r.median_after),
            opt(&r.trajectory_rms),
            opt(&r.radius_max_error),
            opt(&r.radius_global_error),
            opt(&r.corrections),
            opt(&r.vessel_lost),
            format!("{:.2}", r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}
