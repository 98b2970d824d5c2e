use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semvox_cli::commands::{report_json, report_key_values};
use semvox_cli::{
    cmd_build_map, cmd_eval_traj, cmd_export, cmd_synth, BuildOverrides, CliError, ConfigFile,
    EvalConfig, EvalOverrides, ExportFormat, RunConfig,
};

/// Semantic voxel mapping from posed RGB-D frames, plus trajectory
/// evaluation.
#[derive(Parser)]
#[command(name = "semvox", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream a dataset into a semantic voxel map.
    BuildMap(BuildMapArgs),
    /// Evaluate an estimated trajectory against a reference.
    EvalTraj(EvalTrajArgs),
    /// Generate a synthetic dataset with analytic ground truth.
    Synth(SynthArgs),
    /// Convert a voxel map to another format.
    Export(ExportArgs),
}

#[derive(Args)]
struct BuildMapArgs {
    /// Config file with the same keys as the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (depth/, labels/, trajectory.txt, intrinsics.txt, remap.txt).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Trajectory file override.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Intrinsics file override.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Label remap file override.
    #[arg(long)]
    remap: Option<PathBuf>,
    /// Output voxel map path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-frame PLY clouds (optional).
    #[arg(long)]
    ply_dir: Option<PathBuf>,
    /// Voxel edge length in meters.
    #[arg(long)]
    voxel_res: Option<f64>,
    /// Grid origin as "x y z".
    #[arg(long)]
    origin: Option<String>,
    /// Kernel length scale in meters.
    #[arg(long)]
    kernel_l: Option<f64>,
    /// Kernel signal magnitude.
    #[arg(long)]
    kernel_sigma0: Option<f64>,
    /// Load kernel weights from a file instead of the sparse kernel.
    #[arg(long)]
    kernel_file: Option<PathBuf>,
    /// Dirichlet prior per class.
    #[arg(long)]
    prior_alpha: Option<f64>,
    /// Take every n-th pixel in both axes.
    #[arg(long)]
    stride: Option<usize>,
    /// Depth cutoff in meters (overrides the intrinsics file).
    #[arg(long)]
    max_range: Option<f64>,
    /// Treat stored depth values as inverse depth (1/z).
    #[arg(long)]
    inverse_depth: bool,
    /// Only export voxels with confidence above this.
    #[arg(long)]
    min_confidence: Option<f64>,
}

#[derive(Args)]
struct EvalTrajArgs {
    /// Estimated trajectory (TUM format).
    est: PathBuf,
    /// Reference trajectory (TUM format).
    reference: PathBuf,
    /// Config file with the same keys as the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RPE frame interval.
    #[arg(long)]
    rpe_delta: Option<usize>,
    /// Comma-separated KITTI sub-path lengths in meters.
    #[arg(long)]
    kitti_lengths: Option<String>,
    /// Also estimate a scale during alignment (monocular gauge freedom).
    #[arg(long)]
    scale_align: bool,
    /// Timestamp association tolerance in seconds.
    #[arg(long)]
    max_dt: Option<f64>,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec file.
    scene: PathBuf,
    /// Output dataset directory.
    out_dir: PathBuf,
    /// Number of frames to render.
    #[arg(long, default_value_t = 20)]
    frames: usize,
}

#[derive(Args)]
struct ExportArgs {
    /// Input voxel map.
    map: PathBuf,
    /// Output format: ply or voxel-text.
    #[arg(long, default_value = "ply")]
    format: String,
    /// Output path.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildMap(args) => {
            let file = match &args.config {
                Some(path) => ConfigFile::load(path)?,
                None => ConfigFile::default(),
            };
            let flags = BuildOverrides {
                dataset: args.dataset,
                trajectory: args.trajectory,
                intrinsics: args.intrinsics,
                remap: args.remap,
                out: args.out,
                ply_dir: args.ply_dir,
                voxel_res: args.voxel_res,
                origin: args.origin,
                kernel_l: args.kernel_l,
                kernel_sigma0: args.kernel_sigma0,
                kernel_file: args.kernel_file,
                prior_alpha: args.prior_alpha,
                stride: args.stride,
                max_range: args.max_range,
                inverse_depth: args.inverse_depth.then_some(true),
                min_confidence: args.min_confidence,
            };
            let config = RunConfig::resolve(&file, flags)?;
            let report = cmd_build_map(&config)?;
            print!("{}", report.to_key_values());
            Ok(())
        }
        Command::EvalTraj(args) => {
            let file = match &args.config {
                Some(path) => ConfigFile::load(path)?,
                None => ConfigFile::default(),
            };
            let flags = EvalOverrides {
                rpe_delta: args.rpe_delta,
                kitti_lengths: args.kitti_lengths,
                scale_align: args.scale_align.then_some(true),
                max_dt: args.max_dt,
            };
            let options = EvalConfig::resolve(&file, flags)?;
            let report = cmd_eval_traj(&args.est, &args.reference, &options)?;
            print!("{}", report_key_values(&report));
            if let Some(path) = &args.report_out {
                std::fs::write(path, report_json(&report)).map_err(|e| {
                    CliError::Config(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            Ok(())
        }
        Command::Synth(args) => {
            let report = cmd_synth(&args.scene, &args.out_dir, args.frames)?;
            println!(
                "frames={}\nclasses={}\ngt_voxels={}\nout={}",
                report.frames,
                report.classes,
                report.gt_voxels,
                report.out_dir.display()
            );
            Ok(())
        }
        Command::Export(args) => {
            let format = match args.format.as_str() {
                "ply" => ExportFormat::Ply,
                "voxel-text" => ExportFormat::VoxelText,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown format `{other}` (expected ply or voxel-text)"
                    )))
                }
            };
            let records = cmd_export(&args.map, format, &args.out)?;
            println!("records={records}\nout={}", args.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
