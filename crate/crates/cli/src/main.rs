//! `atlasforge`: joint segmentation/registration atlas construction and
//! deformation-mode analysis for grayscale image sets.

mod config;
mod error;
mod io;
mod pipeline;

use clap::{Parser, Subcommand};
use config::RunConfig;
use error::{CliError, Result};
use pipeline::{ensure_out_dir, Manifest};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "atlasforge",
    about = "Joint segmentation, registration, and atlas generation with deformation-mode PCA",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Flat `key = value` configuration file (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input directory.
    #[arg(long)]
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Potts segmentation of every input image.
    Segment(CommonArgs),
    /// Joint atlas construction (segmentations, atlas, fields, energy trace).
    Atlas(CommonArgs),
    /// Smoothing-spline fit of displacement fields (`field_*.f32` inputs).
    Spline(CommonArgs),
    /// PCA over smoothed fields (`spline_*.f32` or `field_*.f32` inputs).
    Pca(CommonArgs),
    /// Mode-of-variation image sweep (`atlas.f32` + `mode_*.f32` inputs).
    Modes(CommonArgs),
    /// Full chain: atlas -> spline -> pca -> modes.
    Pipeline(CommonArgs),
    /// Sequential comparison arm: segment first, register with frozen
    /// segmentations, then a Potts atlas of the mean warped image.
    Baseline(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    match &args.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

/// Collect `prefix_<i>.f32` files with contiguous 1-based indices.
fn collect_indexed(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    for i in 1.. {
        let p = dir.join(format!("{prefix}_{i}.f32"));
        if p.is_file() {
            found.push(p);
        } else {
            break;
        }
    }
    found
}

fn cmd_segment(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let mut manifest = Manifest::new("segment", &cfg);
    let outcome = (|m: &mut Manifest| -> Result<()> {
        let (images, paths) = io::ingest(&args.input)?;
        m.inputs = paths;
        pipeline::stage_segment(&images, &cfg, &args.out, m)?;
        Ok(())
    })(&mut manifest);
    if outcome.is_err() {
        manifest.failed_stage = Some("segment".to_string());
    }
    manifest.write(&args.out)?;
    outcome
}

fn cmd_atlas(args: &CommonArgs, sequential: bool) -> Result<()> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let command = if sequential { "baseline" } else { "atlas" };
    let mut manifest = Manifest::new(command, &cfg);
    let outcome = (|m: &mut Manifest| -> Result<()> {
        let (images, paths) = io::ingest(&args.input)?;
        m.inputs = paths;
        pipeline::stage_atlas(&images, &cfg, &args.out, sequential, m)?;
        Ok(())
    })(&mut manifest);
    if outcome.is_err() && manifest.failed_stage.is_none() {
        manifest.failed_stage = Some("atlas".to_string());
    }
    manifest.write(&args.out)?;
    outcome
}

fn cmd_spline(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let mut manifest = Manifest::new("spline", &cfg);
    let outcome = (|m: &mut Manifest| -> Result<()> {
        let paths = collect_indexed(&args.input, "field");
        if paths.is_empty() {
            return Err(CliError::Data(format!(
                "no field_<i>.f32 files in {}",
                args.input.display()
            )));
        }
        let fields: Vec<_> = paths
            .iter()
            .map(|p| io::read_field_raw(p))
            .collect::<Result<_>>()?;
        m.inputs = paths;
        pipeline::stage_spline(&fields, &cfg, &args.out, m)?;
        Ok(())
    })(&mut manifest);
    if outcome.is_err() {
        manifest.failed_stage = Some("spline".to_string());
    }
    manifest.write(&args.out)?;
    outcome
}

fn cmd_pca(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let mut manifest = Manifest::new("pca", &cfg);
    let outcome = (|m: &mut Manifest| -> Result<()> {
        let mut paths = collect_indexed(&args.input, "spline");
        if paths.is_empty() {
            paths = collect_indexed(&args.input, "field");
        }
        if paths.len() < 2 {
            return Err(CliError::Data(format!(
                "need at least 2 spline_<i>.f32 or field_<i>.f32 files in {}",
                args.input.display()
            )));
        }
        let fields: Vec<_> = paths
            .iter()
            .map(|p| io::read_field_raw(p))
            .collect::<Result<_>>()?;
        m.inputs = paths;
        pipeline::stage_pca(&fields, &cfg, &args.out, m)?;
        Ok(())
    })(&mut manifest);
    if outcome.is_err() {
        manifest.failed_stage = Some("pca".to_string());
    }
    manifest.write(&args.out)?;
    outcome
}

fn cmd_modes(args: &CommonArgs) -> Result<()> {
    let cfg = load_config(args)?;
    ensure_out_dir(&args.out)?;
    let mut manifest = Manifest::new("modes", &cfg);
    let outcome = (|m: &mut Manifest| -> Result<()> {
        let atlas_path = args.input.join("atlas.f32");
        let theta_r = io::read_scalar_raw(&atlas_path)?;
        let mode_paths = collect_indexed(&args.input, "mode");
        if mode_paths.is_empty() {
            return Err(CliError::Data(format!(
                "no mode_<j>.f32 files in {}",
                args.input.display()
            )));
        }
        let modes: Vec<_> = mode_paths
            .iter()
            .map(|p| io::read_field_raw(p))
            .collect::<Result<_>>()?;
        m.inputs = mode_paths;
        m.inputs.insert(0, atlas_path);
        pipeline::stage_modes(&theta_r, &modes, &cfg, &args.out, m)?;
        Ok(())
    })(&mut manifest);
    if outcome.is_err() {
        manifest.failed_stage = Some("modes".to_string());
    }
    manifest.write(&args.out)?;
    outcome
}

fn run() -> Result<()> {
    if let Ok(threads) = std::env::var("ATLASFORGE_THREADS") {
        let n: usize = threads
            .parse()
            .map_err(|_| CliError::Config(format!("ATLASFORGE_THREADS=`{threads}` is not a number")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    }

    let cli = Cli::parse();
    match &cli.command {
        Command::Segment(args) => cmd_segment(args),
        Command::Atlas(args) => cmd_atlas(args, false),
        Command::Baseline(args) => cmd_atlas(args, true),
        Command::Spline(args) => cmd_spline(args),
        Command::Pca(args) => cmd_pca(args),
        Command::Modes(args) => cmd_modes(args),
        Command::Pipeline(args) => {
            let cfg = load_config(args)?;
            pipeline::run_pipeline(&args.input, &args.out, &cfg, false, "pipeline")
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
