//! Pipeline stages and the run manifest.

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;
use atlasforge_core::atlas::{run_atlas, run_sequential, AtlasResult};
use atlasforge_core::dmspline::solve_spline;
use atlasforge_core::potts::potts_2d;
use atlasforge_core::shapestats::{covariance, principal_modes, synthesize_mode, PcaResult};
use atlasforge_core::{grid, ScalarGrid, VectorGrid};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Accumulates everything the manifest records; written atomically at the
/// end of a run (successful or not).
pub struct Manifest {
    pub command: String,
    pub mode: String,
    pub inputs: Vec<PathBuf>,
    pub config_snapshot: String,
    pub timings: Vec<(String, f64)>,
    pub outputs: Vec<String>,
    pub failed_stage: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            mode: "joint".to_string(),
            inputs: Vec::new(),
            config_snapshot: cfg.to_string(),
            timings: Vec::new(),
            outputs: Vec::new(),
            failed_stage: None,
        }
    }

    /// Write `manifest.txt` via a temp file + rename.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "command = {}", self.command);
        let _ = writeln!(text, "mode = {}", self.mode);
        for p in &self.inputs {
            let _ = writeln!(text, "input = {}", p.display());
        }
        text.push_str(&self.config_snapshot);
        for (stage, secs) in &self.timings {
            let _ = writeln!(text, "timing.{stage} = {secs:.3}s");
        }
        for o in &self.outputs {
            let _ = writeln!(text, "output = {o}");
        }
        match &self.failed_stage {
            Some(stage) => {
                let _ = writeln!(text, "status = failed");
                let _ = writeln!(text, "failed_stage = {stage}");
            }
            None => {
                let _ = writeln!(text, "status = ok");
            }
        }
        let tmp = out_dir.join("manifest.txt.tmp");
        let path = out_dir.join("manifest.txt");
        fs::write(&tmp, text)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
        fs::rename(&tmp, &path)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))
}

fn emit_png(out: &Path, name: &str, grid: &ScalarGrid, manifest: &mut Manifest) -> Result<()> {
    io::write_png(&out.join(name), grid)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn emit_scalar_raw(out: &Path, name: &str, grid: &ScalarGrid, manifest: &mut Manifest) -> Result<()> {
    io::write_scalar_raw(&out.join(name), grid)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

fn emit_field_raw(out: &Path, name: &str, field: &VectorGrid, manifest: &mut Manifest) -> Result<()> {
    io::write_field_raw(&out.join(name), field)?;
    manifest.outputs.push(name.to_string());
    Ok(())
}

/// Potts segmentation of each input image.
pub fn stage_segment(
    images: &[ScalarGrid],
    cfg: &RunConfig,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<Vec<ScalarGrid>> {
    let c = &cfg.solver.coupling;
    let mut segs = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let weights = ScalarGrid::constant(img.width(), img.height(), c.lambda_t);
        let seg = potts_2d(img, &weights, c.gamma_t, &cfg.solver.admm)
            .map_err(CliError::from)?
            .grid;
        emit_png(out, &format!("seg_{}.png", i + 1), &seg, manifest)?;
        emit_scalar_raw(out, &format!("seg_{}.f32", i + 1), &seg, manifest)?;
        segs.push(seg);
    }
    Ok(segs)
}

/// Joint (or sequential) atlas stage with all raster/trace artifacts.
pub fn stage_atlas(
    images: &[ScalarGrid],
    cfg: &RunConfig,
    out: &Path,
    sequential: bool,
    manifest: &mut Manifest,
) -> Result<AtlasResult> {
    let result = if sequential {
        manifest.mode = "sequential".to_string();
        run_sequential(images, &cfg.solver)
    } else {
        run_atlas(images, &cfg.solver)
    }
    .map_err(|f| CliError::Numerical(f.to_string()))?;

    if result.potts_warnings > 0 {
        eprintln!(
            "warning: {} Potts solve(s) stopped at the sweep budget",
            result.potts_warnings
        );
    }

    let state = &result.state;
    emit_png(out, "atlas.png", &state.theta_r, manifest)?;
    emit_scalar_raw(out, "atlas.f32", &state.theta_r, manifest)?;

    let (w, h) = (state.theta_r.width(), state.theta_r.height());
    let mut diffmap = ScalarGrid::zeros(w, h);
    for i in 0..images.len() {
        let seg = &state.theta_t[i];
        emit_png(out, &format!("seg_{}.png", i + 1), seg, manifest)?;
        emit_scalar_raw(out, &format!("seg_{}.f32", i + 1), seg, manifest)?;

        let warped = grid::warp(&images[i], &state.disp[i]).map_err(CliError::from)?;
        emit_png(out, &format!("warped_{}.png", i + 1), &warped, manifest)?;

        let warped_seg = grid::warp(seg, &state.disp[i]).map_err(CliError::from)?;
        for (d, (a, b)) in diffmap
            .data_mut()
            .iter_mut()
            .zip(warped_seg.data().iter().zip(state.theta_r.data()))
        {
            *d += (a - b).abs();
        }

        emit_field_raw(out, &format!("field_{}.f32", i + 1), &result.inverse[i], manifest)?;
    }
    emit_png(out, "diffmap.png", &diffmap, manifest)?;

    // Energy trace.
    let mut csv = String::from("iter,total,potts_T,potts_R,potts_Tt,coupling,ogden,v_fit,w_fit\n");
    for rec in &state.trace {
        let e = &rec.energy;
        let _ = writeln!(
            csv,
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            rec.iter,
            e.total(),
            e.potts_t,
            e.potts_r,
            e.potts_tt,
            e.coupling,
            e.ogden,
            e.v_fit,
            e.w_fit
        );
    }
    fs::write(out.join("energy.csv"), csv)
        .map_err(|e| CliError::Data(format!("cannot write energy.csv: {e}")))?;
    manifest.outputs.push("energy.csv".to_string());

    Ok(result)
}

/// Smoothing-spline fit of each displacement field.
pub fn stage_spline(
    fields: &[VectorGrid],
    cfg: &RunConfig,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<Vec<VectorGrid>> {
    let mut smooth = Vec::with_capacity(fields.len());
    for (i, f) in fields.iter().enumerate() {
        let sol = solve_spline(f, &cfg.spline).map_err(CliError::from)?;
        emit_field_raw(out, &format!("spline_{}.f32", i + 1), &sol.smooth, manifest)?;
        smooth.push(sol.smooth);
    }
    Ok(smooth)
}

/// PCA over the smoothed fields.
pub fn stage_pca(
    fields: &[VectorGrid],
    cfg: &RunConfig,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<PcaResult> {
    let cov = covariance(fields).map_err(CliError::from)?;
    let pca = principal_modes(&cov);

    let mut csv = String::from("mode,eigenvalue,explained_ratio\n");
    for (j, (lam, ex)) in pca.eigenvalues.iter().zip(&pca.explained).enumerate() {
        let _ = writeln!(csv, "{},{:.10e},{:.10e}", j + 1, lam, ex);
    }
    fs::write(out.join("eigenvalues.csv"), csv)
        .map_err(|e| CliError::Data(format!("cannot write eigenvalues.csv: {e}")))?;
    manifest.outputs.push("eigenvalues.csv".to_string());

    for (j, mode) in pca.modes.iter().take(cfg.num_modes).enumerate() {
        emit_field_raw(out, &format!("mode_{}.f32", j + 1), mode, manifest)?;
    }
    Ok(pca)
}

/// Mode-of-variation sweep: 11 frames per mode, c in -5..=5.
pub fn stage_modes(
    theta_r: &ScalarGrid,
    modes: &[VectorGrid],
    cfg: &RunConfig,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<()> {
    for (j, mode) in modes.iter().take(cfg.num_modes).enumerate() {
        for c in -5i32..=5 {
            let frame = synthesize_mode(theta_r, mode, c as f64, cfg.mode_scale)
                .map_err(CliError::from)?;
            emit_png(out, &format!("mode_{}_c{}.png", j + 1, c), &frame, manifest)?;
        }
    }
    Ok(())
}

fn timed<T>(
    manifest: &mut Manifest,
    stage: &str,
    f: impl FnOnce(&mut Manifest) -> Result<T>,
) -> Result<T> {
    let t0 = Instant::now();
    let r = f(manifest);
    manifest
        .timings
        .push((stage.to_string(), t0.elapsed().as_secs_f64()));
    if r.is_err() {
        manifest.failed_stage = Some(stage.to_string());
    }
    r
}

/// The full chain: atlas, spline on the inverse displacements, PCA, mode
/// sweep. The manifest is written even when a stage fails.
pub fn run_pipeline(
    input: &Path,
    out: &Path,
    cfg: &RunConfig,
    sequential: bool,
    command: &str,
) -> Result<()> {
    ensure_out_dir(out)?;
    let mut manifest = Manifest::new(command, cfg);

    let outcome = (|manifest: &mut Manifest| -> Result<()> {
        let (images, paths) = timed(manifest, "ingest", |_| io::ingest(input))?;
        manifest.inputs = paths;

        let result = timed(manifest, "atlas", |m| {
            stage_atlas(&images, cfg, out, sequential, m)
        })?;

        let smooth = timed(manifest, "spline", |m| {
            stage_spline(&result.inverse, cfg, out, m)
        })?;

        let pca = timed(manifest, "pca", |m| stage_pca(&smooth, cfg, out, m))?;

        timed(manifest, "modes", |m| {
            stage_modes(&result.state.theta_r, &pca.modes, cfg, out, m)
        })?;
        Ok(())
    })(&mut manifest);

    manifest.write(out)?;
    outcome
}
