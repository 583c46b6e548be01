//! Command-line front end: full runs, checkpoint rendering, metric
//! recomputation, and the finite-difference gradient audit.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure
//! (collapse, I/O, bad checkpoint), 4 gradient verification failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ar4d_core::gradcheck::standard_audits;
use ar4d_core::oracle::SyntheticScene;
use ar4d_core::pipeline::{
    config_path, eval_png_path, evaluate_model, load_refined_model, load_run_config, metrics_csv,
    run_full, StageCursor,
};
use ar4d_core::rasterizer::render;
use ar4d_core::{Error, OrbitCamera};

/// Reconstruct a time sequence of 3D Gaussian clouds from a fixed-viewpoint
/// monocular video.
#[derive(Parser)]
#[command(name = "ar4d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a full run: initialize, generate, refine, evaluate.
    Run {
        /// Path to a JSON run config.
        #[arg(long)]
        config: PathBuf,
        /// Continue an interrupted run directory from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop once this frame's generation checkpoint is written
        /// (resume-harness hook).
        #[arg(long, hide = true)]
        halt_after_frame: Option<usize>,
    },
    /// Render the stored result at chosen azimuths, every frame.
    Render {
        /// Run directory holding the checkpoints.
        #[arg(long)]
        checkpoint_dir: PathBuf,
        /// Comma-separated azimuths in degrees, e.g. 0,-45,45,180.
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        azimuths: Vec<f64>,
        /// Output directory for the PNGs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute PSNR/SSIM for a finished run against its synthetic scene.
    Eval {
        /// Run directory holding the checkpoints.
        #[arg(long)]
        run: PathBuf,
        /// Run config describing the ground-truth scene.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Audit every analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Render probe resolution.
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Corrupt the analytic gradients first (detector self-test).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for mistakes the operator fixes in the config file, 3 for everything
/// that goes wrong at runtime.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Resume(_) => 2,
        _ => 3,
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, Error> {
    match cmd {
        Command::Run { config, resume, halt_after_frame } => {
            cmd_run(&config, resume, halt_after_frame)
        }
        Command::Render { checkpoint_dir, azimuths, out } => {
            cmd_render(&checkpoint_dir, &azimuths, &out)
        }
        Command::Eval { run, scene } => cmd_eval(&run, &scene),
        Command::Gradcheck { seed, size, corrupt } => Ok(cmd_gradcheck(seed, size, corrupt)),
    }
}

fn cmd_run(config_path: &Path, resume: bool, halt: Option<usize>) -> Result<ExitCode, Error> {
    let config = load_run_config(config_path)?;
    let state = run_full(&config, resume, halt)?;
    match state.cursor {
        StageCursor::Generated(k) => {
            println!("halted after frame {k}; pass --resume to continue");
        }
        _ => {
            println!(
                "run complete: {} frames, mean psnr {:.2} dB",
                state.frames(),
                state.mean_psnr_db()
            );
            println!("artifacts in {}", config.out_dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_render(dir: &Path, azimuths: &[f64], out: &Path) -> Result<ExitCode, Error> {
    let config = load_run_config(&config_path(dir))?;
    let (model, frames) = load_refined_model(dir, &config)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let base = OrbitCamera::default().with_size(config.eval_size, config.eval_size);
    let mut count = 0usize;
    for k in 1..=frames {
        let cloud = model.frame(k, frames)?;
        for &az in azimuths {
            let img = render(&cloud, &base.with_azimuth(az), config.background).color;
            img.save_png(&eval_png_path(out, k, az))?;
            count += 1;
        }
    }
    println!("wrote {count} png(s) to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(run: &Path, scene_path: &Path) -> Result<ExitCode, Error> {
    let config = load_run_config(scene_path)?;
    let (model, frames) = load_refined_model(run, &config)?;
    let scene = SyntheticScene::build(&config.scene, config.seed)?;
    let (rows, _) = evaluate_model(&model, frames, &scene, config.eval_size, config.background)?;
    print!("{}", metrics_csv(&rows));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64, size: usize, corrupt: bool) -> ExitCode {
    let reports = standard_audits(seed, 100, 20, size, corrupt);
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.passes();
    }
    if ok {
        println!("gradcheck: all audits passed");
        ExitCode::SUCCESS
    } else {
        eprintln!("gradcheck: audit failure");
        ExitCode::from(4)
    }
}
