//! Orchestration of the alternating scheme: gated segmentation updates, the
//! per-pixel V/W updates, the implicit displacement step, and the energy
//! trace.
//!
//! One outer iteration runs, for every image i: the V update, the W update,
//! and the displacement step. Every `seg_cadence` iterations (and once at
//! k = 1 so the loop never works from a stale initialization) the gated
//! block recomputes the inverse deformations and re-solves the three Potts
//! sub-problems (template segmentations, difference fields, atlas). All
//! per-image work runs in parallel; the atlas update is the only barrier.

use crate::config::SolverConfig;
use crate::error::{CoreError, Result};
use crate::grid::{
    compose, invert_deformation, jacobian, warp, MatrixGrid, ScalarGrid, VectorGrid,
};
use crate::ogden::{total_energy, v_update, w_update, EnergyBreakdown};
use crate::flow::{el_residual, phi_step};
use crate::potts::potts_2d;
use rayon::prelude::*;

/// Lower clamp on det(grad phi) when the gated segmentation block divides
/// by it; the discrete flow can transiently produce tiny determinants.
const DET_CLAMP: f64 = 0.05;

/// All unknowns of the alternating scheme plus the running energy trace.
#[derive(Debug, Clone)]
pub struct AtlasState {
    /// Input templates T_i, normalized to [0, 1].
    pub templates: Vec<ScalarGrid>,
    /// Piecewise-constant segmentations of the templates.
    pub theta_t: Vec<ScalarGrid>,
    /// Piecewise-constant difference fields.
    pub theta_tt: Vec<ScalarGrid>,
    /// The atlas segmentation.
    pub theta_r: ScalarGrid,
    /// Displacements U_i with phi_i = Id + U_i.
    pub disp: Vec<VectorGrid>,
    /// Inverse displacements, refreshed by the gated block.
    pub inv_disp: Vec<VectorGrid>,
    /// Decoupled deformation gradients V_i.
    pub v: Vec<MatrixGrid>,
    /// Decoupled inverse gradients W_i.
    pub w: Vec<MatrixGrid>,
    /// Outer iterations completed.
    pub iteration: usize,
    /// One record per completed outer iteration.
    pub trace: Vec<EnergyRecord>,
}

/// Per-iteration energy and feasibility diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRecord {
    pub iter: usize,
    pub energy: EnergyBreakdown,
    pub min_det_v: f64,
    pub max_abs_v: f64,
    pub max_abs_w: f64,
}

/// Final state, fresh inverse displacements, and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct AtlasResult {
    pub state: AtlasState,
    /// Inverse displacements recomputed from the final forward fields.
    pub inverse: Vec<VectorGrid>,
    /// True when the optional energy tolerance triggered an early exit.
    pub converged_early: bool,
    /// Number of Potts solves that hit their sweep budget.
    pub potts_warnings: usize,
}

/// A failed run carrying the partial state and trace accumulated so far.
#[derive(Debug)]
pub struct AtlasFailure {
    pub error: CoreError,
    pub partial: Box<AtlasState>,
}

impl std::fmt::Display for AtlasFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "atlas run aborted at iteration {}: {}",
            self.partial.iteration, self.error
        )
    }
}

impl std::error::Error for AtlasFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn mean_image(images: &[ScalarGrid]) -> ScalarGrid {
    let (w, h) = (images[0].width(), images[0].height());
    let mut out = ScalarGrid::zeros(w, h);
    let inv_m = 1.0 / images.len() as f64;
    for img in images {
        for (o, v) in out.data_mut().iter_mut().zip(img.data()) {
            *o += inv_m * v;
        }
    }
    out
}

/// Initialize the state: Potts segmentations of the templates and of the
/// mean image, difference fields as plain differences, identity V/W, zero
/// displacements.
pub fn init_state(images: &[ScalarGrid], cfg: &SolverConfig) -> Result<AtlasState> {
    if images.len() < 2 {
        return Err(CoreError::Config(format!(
            "need at least 2 images, got {}",
            images.len()
        )));
    }
    let (w, h) = (images[0].width(), images[0].height());
    for img in images.iter().skip(1) {
        if img.width() != w || img.height() != h {
            return Err(CoreError::DimensionMismatch {
                expected_w: w,
                expected_h: h,
                got_w: img.width(),
                got_h: img.height(),
            });
        }
    }
    cfg.validate()?;
    let c = &cfg.coupling;

    let lambda_t_w = ScalarGrid::constant(w, h, c.lambda_t);
    let theta_t: Vec<ScalarGrid> = images
        .par_iter()
        .map(|img| potts_2d(img, &lambda_t_w, c.gamma_t, &cfg.admm).map(|o| o.grid))
        .collect::<Result<_>>()?;

    let mean = mean_image(images);
    let lambda_r_w = ScalarGrid::constant(w, h, c.lambda_r);
    let theta_r = potts_2d(&mean, &lambda_r_w, c.gamma_r, &cfg.admm)?.grid;

    let theta_tt: Vec<ScalarGrid> = theta_t
        .iter()
        .map(|t| {
            let mut d = t.clone();
            for (a, b) in d.data_mut().iter_mut().zip(theta_r.data()) {
                *a -= b;
            }
            d
        })
        .collect();

    let m = images.len();
    Ok(AtlasState {
        templates: images.to_vec(),
        theta_t,
        theta_tt,
        theta_r,
        disp: vec![VectorGrid::zeros(w, h); m],
        inv_disp: vec![VectorGrid::zeros(w, h); m],
        v: vec![MatrixGrid::identity(w, h); m],
        w: vec![MatrixGrid::identity(w, h); m],
        iteration: 0,
        trace: Vec::new(),
    })
}

/// Weighted Potts update of the i-th template segmentation. Uses the
/// current inverse displacement of image i and the clamped Jacobian
/// determinant of the forward deformation.
pub fn update_template_segmentation(
    state: &AtlasState,
    i: usize,
    cfg: &SolverConfig,
) -> Result<(ScalarGrid, bool)> {
    let c = &cfg.coupling;
    let (w, h) = (state.theta_r.width(), state.theta_r.height());
    let jac = jacobian(&state.disp[i]);
    let tt_back = warp(&state.theta_tt[i], &state.inv_disp[i])?;
    let r_back = warp(&state.theta_r, &state.inv_disp[i])?;

    let mut data = ScalarGrid::zeros(w, h);
    let mut weights = ScalarGrid::zeros(w, h);
    for idx in 0..w * h {
        let det = jac.at(idx).det().max(DET_CLAMP);
        let winv = 0.5 * c.gamma1 / det;
        let wt = c.lambda_t + winv;
        weights.data_mut()[idx] = wt;
        data.data_mut()[idx] = (c.lambda_t * state.templates[i].data()[idx]
            + winv * (tt_back.data()[idx] + r_back.data()[idx]))
            / wt;
    }
    let out = potts_2d(&data, &weights, c.gamma_t, &cfg.admm)?;
    Ok((out.grid, out.converged))
}

/// Potts update of the i-th difference field on the assembled residual
/// `theta_T o phi - theta_R`. A vanishing gamma1 decouples the field; the
/// jump-penalty-only optimum is the zero field.
pub fn update_difference(
    state: &AtlasState,
    i: usize,
    cfg: &SolverConfig,
) -> Result<(ScalarGrid, bool)> {
    let c = &cfg.coupling;
    let (w, h) = (state.theta_r.width(), state.theta_r.height());
    if c.gamma1 == 0.0 {
        return Ok((ScalarGrid::zeros(w, h), true));
    }
    let warped = warp(&state.theta_t[i], &state.disp[i])?;
    let mut diff = warped;
    for (a, b) in diff.data_mut().iter_mut().zip(state.theta_r.data()) {
        *a -= b;
    }
    let weights = ScalarGrid::constant(w, h, 0.5 * c.gamma1);
    let out = potts_2d(&diff, &weights, c.gamma_t_tilde, &cfg.admm)?;
    Ok((out.grid, out.converged))
}

/// Potts update of the atlas on the weighted average of the warped
/// templates and warped segmentations.
pub fn update_atlas_segmentation(
    state: &AtlasState,
    cfg: &SolverConfig,
) -> Result<(ScalarGrid, bool)> {
    let c = &cfg.coupling;
    let (w, h) = (state.theta_r.width(), state.theta_r.height());
    let m = state.templates.len();
    let total_w = c.lambda_r + 0.5 * c.gamma1;
    if total_w == 0.0 {
        return Ok((state.theta_r.clone(), true));
    }

    let parts: Vec<(ScalarGrid, ScalarGrid)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let wt = warp(&state.templates[i], &state.disp[i])?;
            let wtheta = warp(&state.theta_t[i], &state.disp[i])?;
            Ok((wt, wtheta))
        })
        .collect::<Result<_>>()?;

    let mut data = ScalarGrid::zeros(w, h);
    let inv_m = 1.0 / m as f64;
    for (i, (wt, wtheta)) in parts.iter().enumerate() {
        for idx in 0..w * h {
            data.data_mut()[idx] += inv_m
                * (c.lambda_r * wt.data()[idx]
                    + 0.5 * c.gamma1 * (wtheta.data()[idx] - state.theta_tt[i].data()[idx]));
        }
    }
    for v in data.data_mut() {
        *v /= total_w;
    }
    let weights = ScalarGrid::constant(w, h, total_w);
    let out = potts_2d(&data, &weights, c.gamma_r, &cfg.admm)?;
    Ok((out.grid, out.converged))
}

fn record_energy(state: &mut AtlasState, cfg: &SolverConfig) -> Result<()> {
    let energy = total_energy(state, cfg)?;
    let min_det_v = state.v.iter().map(MatrixGrid::min_det).fold(f64::INFINITY, f64::min);
    let max_abs_v = state.v.iter().map(MatrixGrid::max_abs).fold(0.0, f64::max);
    let max_abs_w = state.w.iter().map(MatrixGrid::max_abs).fold(0.0, f64::max);
    state.trace.push(EnergyRecord {
        iter: state.iteration,
        energy,
        min_det_v,
        max_abs_v,
        max_abs_w,
    });
    Ok(())
}

struct LoopOptions {
    /// Run the gated segmentation block (steps 2.1-2.4).
    segmentation_updates: bool,
}

fn run_loop(
    mut state: AtlasState,
    cfg: &SolverConfig,
    opts: LoopOptions,
) -> std::result::Result<(AtlasState, bool, usize), AtlasFailure> {
    let c = cfg.coupling.clone();
    let mut potts_warnings = 0usize;
    let mut converged_early = false;

    macro_rules! try_or_abort {
        ($state:expr, $expr:expr) => {
            match $expr {
                Ok(v) => v,
                Err(e) => {
                    return Err(AtlasFailure {
                        error: e,
                        partial: Box::new($state),
                    })
                }
            }
        };
    }

    for k in 1..=c.nb_iter {
        state.iteration = k;

        if opts.segmentation_updates && (k == 1 || k % c.seg_cadence == 0) {
            // Step 2.1: inverse deformations.
            let inv: Vec<VectorGrid> = match state
                .disp
                .par_iter()
                .map(invert_deformation)
                .collect::<Result<_>>()
            {
                Ok(v) => v,
                Err(e) => {
                    return Err(AtlasFailure {
                        error: e,
                        partial: Box::new(state),
                    })
                }
            };
            state.inv_disp = inv;

            // Step 2.2 for all images, then 2.3 with the refreshed
            // segmentations.
            let m = state.templates.len();
            let seg: Vec<(ScalarGrid, bool)> = match (0..m)
                .into_par_iter()
                .map(|i| update_template_segmentation(&state, i, cfg))
                .collect::<Result<Vec<_>>>()
            {
                Ok(v) => v,
                Err(e) => {
                    return Err(AtlasFailure {
                        error: e,
                        partial: Box::new(state),
                    })
                }
            };
            for (i, (theta, ok)) in seg.into_iter().enumerate() {
                if !ok {
                    potts_warnings += 1;
                }
                state.theta_t[i] = theta;
            }

            let diffs: Vec<(ScalarGrid, bool)> = match (0..m)
                .into_par_iter()
                .map(|i| update_difference(&state, i, cfg))
                .collect::<Result<Vec<_>>>()
            {
                Ok(v) => v,
                Err(e) => {
                    return Err(AtlasFailure {
                        error: e,
                        partial: Box::new(state),
                    })
                }
            };
            for (i, (theta, ok)) in diffs.into_iter().enumerate() {
                if !ok {
                    potts_warnings += 1;
                }
                state.theta_tt[i] = theta;
            }

            // Step 2.4: atlas update (barrier over all images).
            let (theta_r, ok) = try_or_abort!(state, update_atlas_segmentation(&state, cfg));
            if !ok {
                potts_warnings += 1;
            }
            state.theta_r = theta_r;
        }

        // Steps 2.5-2.7 per image.
        let m = state.templates.len();
        let per_image: Vec<(MatrixGrid, MatrixGrid, VectorGrid)> = match (0..m)
            .into_par_iter()
            .map(|i| {
                let grad_phi = jacobian(&state.disp[i]);
                let v_new = v_update(&state.v[i], &state.w[i], &grad_phi, &cfg.ogden, &c)?;
                let w_new = w_update(&v_new, c.beta)?;
                let mut u = state.disp[i].clone();
                for _ in 0..cfg.flow_steps.max(1) {
                    let forcing = el_residual(
                        &u,
                        &v_new,
                        &state.theta_t[i],
                        &state.theta_r,
                        &state.theta_tt[i],
                        &state.templates[i],
                        &c,
                    )?;
                    u = phi_step(&u, &forcing, &c)?;
                }
                Ok((v_new, w_new, u))
            })
            .collect::<Result<Vec<_>>>()
        {
            Ok(v) => v,
            Err(e) => {
                return Err(AtlasFailure {
                    error: e,
                    partial: Box::new(state),
                })
            }
        };
        for (i, (v_new, w_new, u_new)) in per_image.into_iter().enumerate() {
            state.v[i] = v_new;
            state.w[i] = w_new;
            state.disp[i] = u_new;
        }

        try_or_abort!(state, record_energy(&mut state, cfg));

        if let Some(tol) = cfg.energy_tol {
            let n = state.trace.len();
            if n >= 2 {
                let prev = state.trace[n - 2].energy.total();
                let cur = state.trace[n - 1].energy.total();
                if (prev - cur).abs() <= tol * prev.abs().max(1.0) {
                    converged_early = true;
                    break;
                }
            }
        }
    }

    Ok((state, converged_early, potts_warnings))
}

/// Run the full alternating scheme.
pub fn run_atlas(
    images: &[ScalarGrid],
    cfg: &SolverConfig,
) -> std::result::Result<AtlasResult, AtlasFailure> {
    let state = init_state(images, cfg).map_err(|error| AtlasFailure {
        error,
        partial: Box::new(AtlasState {
            templates: images.to_vec(),
            theta_t: Vec::new(),
            theta_tt: Vec::new(),
            theta_r: ScalarGrid::zeros(2, 2),
            disp: Vec::new(),
            inv_disp: Vec::new(),
            v: Vec::new(),
            w: Vec::new(),
            iteration: 0,
            trace: Vec::new(),
        }),
    })?;

    let (mut state, converged_early, potts_warnings) = run_loop(
        state,
        cfg,
        LoopOptions {
            segmentation_updates: true,
        },
    )?;

    let inverse: Vec<VectorGrid> = match state
        .disp
        .par_iter()
        .map(invert_deformation)
        .collect::<Result<_>>()
    {
        Ok(v) => v,
        Err(e) => {
            return Err(AtlasFailure {
                error: e,
                partial: Box::new(state),
            })
        }
    };
    state.inv_disp = inverse.clone();

    Ok(AtlasResult {
        state,
        inverse,
        converged_early,
        potts_warnings,
    })
}

/// Sequential comparison arm: segmentation first (the initialization), then
/// registration with all segmentations frozen, then the atlas as a Potts
/// solve on the mean of the warped templates.
pub fn run_sequential(
    images: &[ScalarGrid],
    cfg: &SolverConfig,
) -> std::result::Result<AtlasResult, AtlasFailure> {
    let state = init_state(images, cfg).map_err(|error| AtlasFailure {
        error,
        partial: Box::new(AtlasState {
            templates: images.to_vec(),
            theta_t: Vec::new(),
            theta_tt: Vec::new(),
            theta_r: ScalarGrid::zeros(2, 2),
            disp: Vec::new(),
            inv_disp: Vec::new(),
            v: Vec::new(),
            w: Vec::new(),
            iteration: 0,
            trace: Vec::new(),
        }),
    })?;

    let (mut state, converged_early, mut potts_warnings) = run_loop(
        state,
        cfg,
        LoopOptions {
            segmentation_updates: false,
        },
    )?;

    // Final atlas from the registered templates.
    let warped: Vec<ScalarGrid> = match state
        .templates
        .par_iter()
        .zip(state.disp.par_iter())
        .map(|(t, u)| warp(t, u))
        .collect::<Result<_>>()
    {
        Ok(v) => v,
        Err(e) => {
            return Err(AtlasFailure {
                error: e,
                partial: Box::new(state),
            })
        }
    };
    let mean = mean_image(&warped);
    let weights = ScalarGrid::constant(mean.width(), mean.height(), cfg.coupling.lambda_r);
    let outcome = match potts_2d(&mean, &weights, cfg.coupling.gamma_r, &cfg.admm) {
        Ok(o) => o,
        Err(e) => {
            return Err(AtlasFailure {
                error: e,
                partial: Box::new(state),
            })
        }
    };
    if !outcome.converged {
        potts_warnings += 1;
    }
    state.theta_r = outcome.grid;

    let inverse: Vec<VectorGrid> = match state
        .disp
        .par_iter()
        .map(invert_deformation)
        .collect::<Result<_>>()
    {
        Ok(v) => v,
        Err(e) => {
            return Err(AtlasFailure {
                error: e,
                partial: Box::new(state),
            })
        }
    };
    state.inv_disp = inverse.clone();

    Ok(AtlasResult {
        state,
        inverse,
        converged_early,
        potts_warnings,
    })
}

/// Max Euclidean composition residual `||phi(phi^{-1}(x)) - x||` over pixels
/// at least `margin` away from the boundary.
pub fn composition_residual(
    forward: &VectorGrid,
    inverse: &VectorGrid,
    margin: usize,
) -> Result<f64> {
    let comp = compose(forward, inverse)?;
    let (w, h) = (comp.width(), comp.height());
    let mut worst = 0.0f64;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let (a, b) = comp.get(x, y);
            worst = worst.max((a * a + b * b).sqrt());
        }
    }
    Ok(worst)
}
