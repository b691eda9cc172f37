mod commands;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "limbscan", version, about = "Atlas-based scan planning and simulated vessel scanning on articulated arms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that reads a pipeline configuration.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `scene.elbow_angle`.
    #[arg(long)]
    pub angle: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the atlas and posed arm; writes surfaces, vessel truth and scene.json.
    Scene {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a depth image (16-bit PGM) and the joint pixels beside it.
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Render the straight atlas instead of the posed scene.
        #[arg(long)]
        atlas: bool,
        /// Joint pixel JSON; defaults to `<out>.joints.json`.
        #[arg(long)]
        joints: Option<PathBuf>,
    },
    /// Extract the labelled arm surface from a depth image.
    Extract {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        joints: PathBuf,
        /// Labelled point cloud (PLY).
        #[arg(long)]
        out: PathBuf,
        /// Surface with 3D joints (JSON) for `register`.
        #[arg(long)]
        surface: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        depth_threshold: Option<f64>,
        #[arg(long)]
        continuity_tolerance: Option<f64>,
        #[arg(long)]
        seed_spacing: Option<f64>,
    },
    /// Plan the scan trajectory on the atlas.
    Plan {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Trajectory CSV.
        #[arg(long)]
        out: PathBuf,
        /// Centerline-to-trajectory correspondence PLY.
        #[arg(long)]
        ply: Option<PathBuf>,
    },
    /// Register an atlas surface to a scene surface and transfer a trajectory.
    Register {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Atlas trajectory CSV to transfer.
        #[arg(long)]
        traj: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Simulate the servoed scan along a trajectory.
    Scan {
        /// Pipeline configuration providing the scene and scan settings.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        angle: Option<f64>,
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        sigma: Option<f64>,
        /// Constant lateral bias added to every planned pose, mm.
        #[arg(long, allow_negative_numbers = true)]
        bias_inject: Option<f64>,
        #[arg(long)]
        deadband: Option<f64>,
        /// Directory for frame masks and poses.csv.
        #[arg(long)]
        out_frames: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run every stage and write all artifacts plus report.json.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pipeline over a grid of angles and seeds; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "120,140,160")]
        angles: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Parallel cells; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the annotated default configuration.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scene { cfg, out } => commands::scene(&cfg, &out),
        Command::Render { cfg, out, atlas, joints } => commands::render(&cfg, &out, atlas, joints),
        Command::Extract {
            cfg,
            depth,
            joints,
            out,
            surface,
            report,
            depth_threshold,
            continuity_tolerance,
            seed_spacing,
        } => commands::extract(
            &cfg,
            &commands::ExtractFiles {
                depth,
                joints,
                out,
                surface,
                report,
            },
            depth_threshold,
            continuity_tolerance,
            seed_spacing,
        ),
        Command::Plan { cfg, out, ply } => commands::plan(&cfg, &out, ply),
        Command::Register {
            cfg,
            atlas,
            scene,
            traj,
            out_dir,
        } => commands::register(&cfg, &atlas, &scene, traj, &out_dir),
        Command::Scan {
            scene,
            seed,
            angle,
            traj,
            sigma,
            bias_inject,
            deadband,
            out_frames,
            report,
        } => commands::scan(
            &ConfigArgs {
                config: scene,
                seed,
                angle,
            },
            &traj,
            commands::ScanOverrides {
                sigma,
                bias: bias_inject,
                deadband,
            },
            &out_frames,
            &report,
        ),
        Command::Pipeline { cfg, out } => commands::pipeline(&cfg, out),
        Command::Sweep {
            cfg,
            angles,
            seeds,
            workers,
            out,
        } => commands::sweep(&cfg, angles, seeds, workers, out),
        Command::Config => {
            print!("{}", limbscan::pipeline::EXAMPLE_CONFIG);
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
