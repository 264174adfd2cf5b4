//! The displacement sub-problem: one implicit-Euler step of the L2 gradient
//! flow on the registration energy
//!
//!   lambda_R ||theta_R - T o phi||^2 + (gamma1/2) ||theta~ - theta_T o phi + theta_R||^2
//!     + (gamma2/2) ||V - grad(phi)||^2,  phi = Id + U.
//!
//! The explicit forcing collects the pointwise terms
//!
//!   gamma1 (grad theta_T o phi)(theta_T o phi - theta_R - theta~)
//!     + lambda_R (T o phi - theta_R)(grad T o phi) + gamma2 (div V_1; div V_2),
//!
//! with image gradients computed on the undeformed grids and sampled at the
//! warped positions. The diffusion part -gamma2 * Lap(U) contributed by the
//! coupling term is treated implicitly: each component solves
//!
//!   (I - dt gamma2 Lap) U_new = U_old - dt * forcing
//!
//! with the 5-point Laplacian under zero Dirichlet conditions, by conjugate
//! gradients. Without the implicit part the printed stationarity equation
//! has no operator to invert; with it, the step is unconditionally stable.

use crate::error::{CoreError, Result};
use crate::grid::{bilinear_sample, divergence, gradient_centered, MatrixGrid, ScalarGrid, VectorGrid};
use crate::ogden::CouplingParams;

/// Per-pixel force of the stationarity equation; zero on the boundary ring.
pub type FlowForcing = VectorGrid;

/// Evaluate the explicit forcing terms at every pixel.
pub fn el_residual(
    u: &VectorGrid,
    v: &MatrixGrid,
    theta_t: &ScalarGrid,
    theta_r: &ScalarGrid,
    theta_tt: &ScalarGrid,
    template: &ScalarGrid,
    c: &CouplingParams,
) -> Result<FlowForcing> {
    let (w, h) = (u.width(), u.height());
    if theta_t.width() != w || theta_t.height() != h {
        return Err(CoreError::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            got_w: theta_t.width(),
            got_h: theta_t.height(),
        });
    }

    // Pre-computed gradient fields (centered differences, symmetric),
    // sampled later at warped positions.
    let grad_theta_t = gradient_centered(theta_t);
    let grad_template = gradient_centered(template);
    let gt1 = ScalarGrid::from_vec(w, h, grad_theta_t.u1.clone());
    let gt2 = ScalarGrid::from_vec(w, h, grad_theta_t.u2.clone());
    let gi1 = ScalarGrid::from_vec(w, h, grad_template.u1.clone());
    let gi2 = ScalarGrid::from_vec(w, h, grad_template.u2.clone());
    let div_v = divergence(v);

    let mut out = VectorGrid::zeros(w, h);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let (d1, d2) = u.get(x, y);
            let p = [x as f64 + d1, y as f64 + d2];

            let theta_t_warp = bilinear_sample(theta_t, p);
            let t_warp = bilinear_sample(template, p);
            let mismatch = theta_t_warp - theta_r.get(x, y) - theta_tt.get(x, y);
            let resid = t_warp - theta_r.get(x, y);

            let f1 = c.gamma1 * bilinear_sample(&gt1, p) * mismatch
                + c.lambda_r * resid * bilinear_sample(&gi1, p)
                + c.gamma2 * div_v.get(x, y).0;
            let f2 = c.gamma1 * bilinear_sample(&gt2, p) * mismatch
                + c.lambda_r * resid * bilinear_sample(&gi2, p)
                + c.gamma2 * div_v.get(x, y).1;
            out.set(x, y, (f1, f2));
        }
    }
    Ok(out)
}

/// One implicit-Euler step: solves `(I - dt gamma2 Lap) U_new = U_old - dt F`
/// per component with conjugate gradients to relative residual 1e-8.
pub fn phi_step(u: &VectorGrid, forcing: &FlowForcing, c: &CouplingParams) -> Result<VectorGrid> {
    debug_assert!(c.dt > 0.0);
    let (w, h) = (u.width(), u.height());
    let kappa = c.dt * c.gamma2;

    let mut out = VectorGrid::zeros(w, h);
    out.u1 = solve_component(&u.u1, &forcing.u1, w, h, c.dt, kappa)?;
    out.u2 = solve_component(&u.u2, &forcing.u2, w, h, c.dt, kappa)?;
    out.zero_boundary();
    Ok(out)
}

/// Apply `(I + kappa * (-Lap))` on the interior; boundary entries are kept
/// zero (Dirichlet).
fn apply_operator(src: &[f64], dst: &mut [f64], w: usize, h: usize, kappa: f64) {
    dst.fill(0.0);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let lap = src[i - 1] + src[i + 1] + src[i - w] + src[i + w] - 4.0 * src[i];
            dst[i] = src[i] - kappa * lap;
        }
    }
}

fn solve_component(
    u_old: &[f64],
    forcing: &[f64],
    w: usize,
    h: usize,
    dt: f64,
    kappa: f64,
) -> Result<Vec<f64>> {
    let n = w * h;
    let mut rhs = vec![0.0; n];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            rhs[i] = u_old[i] - dt * forcing[i];
        }
    }

    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(rhs);
    }
    let tol = 1e-8 * rhs_norm.max(1.0);

    // CG from the previous displacement; the operator is SPD on the
    // interior.
    let mut x = u_old.to_vec();
    for (i, v) in x.iter_mut().enumerate() {
        let (px, py) = (i % w, i / w);
        if px == 0 || py == 0 || px == w - 1 || py == h - 1 {
            *v = 0.0;
        }
    }
    let mut ax = vec![0.0; n];
    apply_operator(&x, &mut ax, w, h, kappa);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);

    let max_iter = 10 * (w + h).max(200);
    for _ in 0..max_iter {
        if rs.sqrt() <= tol {
            return Ok(x);
        }
        apply_operator(&p, &mut ax, w, h, kappa);
        let pap = dot(&p, &ax);
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ax[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    if rs.sqrt() <= tol {
        Ok(x)
    } else {
        Err(CoreError::SolverDiverged {
            solver: "cg",
            iterations: max_iter,
            residual: rs.sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{jacobian, warp, Mat2};
    use crate::grid::gradient_centered;

    #[test]
    fn zero_forcing_zero_displacement_is_fixed_point() {
        let c = CouplingParams::default();
        let u = VectorGrid::zeros(8, 8);
        let f = VectorGrid::zeros(8, 8);
        let next = phi_step(&u, &f, &c).unwrap();
        assert_eq!(next.max_abs(), 0.0);
    }

    #[test]
    fn implicit_heat_step_is_a_contraction() {
        let c = CouplingParams::default();
        let n = 16;
        let u = VectorGrid::from_fn(n, n, |x, y| {
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                (0.0, 0.0)
            } else {
                (((x * 3 + y) % 5) as f64 - 2.0, ((x + 2 * y) % 7) as f64 - 3.0)
            }
        });
        let f = VectorGrid::zeros(n, n);
        let next = phi_step(&u, &f, &c).unwrap();
        assert!(next.max_abs() <= u.max_abs() + 1e-12);
        assert!(next.boundary_is_zero());
    }

    #[test]
    fn residual_vanishes_on_consistent_configuration() {
        // U = 0, V = I (div V = 0), theta_T = theta_R + theta~, T = theta_R.
        let c = CouplingParams::default();
        let n = 10;
        let theta_r = ScalarGrid::from_fn(n, n, |x, _| if x < 5 { 0.2 } else { 0.8 });
        let theta_tt = ScalarGrid::constant(n, n, 0.1);
        let theta_t = ScalarGrid::from_fn(n, n, |x, y| theta_r.get(x, y) + theta_tt.get(x, y));
        let u = VectorGrid::zeros(n, n);
        let v = MatrixGrid::identity(n, n);
        let f = el_residual(&u, &v, &theta_t, &theta_r, &theta_tt, &theta_r, &c).unwrap();
        assert!(f.max_abs() < 1e-12);
    }

    #[test]
    fn residual_vanishes_when_weights_vanish() {
        let mut c = CouplingParams::default();
        c.gamma1 = 0.0;
        c.lambda_r = 0.0;
        let n = 8;
        let theta = ScalarGrid::from_fn(n, n, |x, y| ((x + y) % 3) as f64);
        let u = VectorGrid::zeros(n, n);
        let v = MatrixGrid::identity(n, n);
        let f = el_residual(&u, &v, &theta, &theta, &theta, &theta, &c).unwrap();
        assert!(f.max_abs() == 0.0, "div of identity vanishes in the interior");
    }

    #[test]
    fn residual_matches_term_by_term_evaluation() {
        let c = CouplingParams {
            gamma1: 2.0,
            lambda_r: 3.0,
            gamma2: 0.5,
            ..CouplingParams::default()
        };
        let n = 12;
        let template = ScalarGrid::from_fn(n, n, |x, y| ((x as f64 * 0.4).sin() + (y as f64 * 0.3).cos()) * 0.5);
        let theta_t = ScalarGrid::from_fn(n, n, |x, _| (x as f64 * 0.25).sin());
        let theta_r = ScalarGrid::from_fn(n, n, |_, y| (y as f64 * 0.2).cos());
        let theta_tt = ScalarGrid::from_fn(n, n, |x, y| 0.1 * (x as f64 - y as f64));
        let u = VectorGrid::from_fn(n, n, |x, y| {
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                (0.0, 0.0)
            } else {
                (0.3 * (y as f64 * 0.5).sin(), -0.2 * (x as f64 * 0.4).cos())
            }
        });
        let v = MatrixGrid::from_fn(n, n, |x, y| {
            Mat2::new(1.0 + 0.01 * x as f64, 0.02 * y as f64, -0.01, 0.98)
        });

        let f = el_residual(&u, &v, &theta_t, &theta_r, &theta_tt, &template, &c).unwrap();

        // Independent evaluation at a few interior probes.
        let gt = gradient_centered(&theta_t);
        let gi = gradient_centered(&template);
        let gt1 = ScalarGrid::from_vec(n, n, gt.u1.clone());
        let gt2 = ScalarGrid::from_vec(n, n, gt.u2.clone());
        let gi1 = ScalarGrid::from_vec(n, n, gi.u1.clone());
        let gi2 = ScalarGrid::from_vec(n, n, gi.u2.clone());
        let dv = divergence(&v);
        for (x, y) in [(3, 4), (7, 2), (5, 9)] {
            let (d1, d2) = u.get(x, y);
            let p = [x as f64 + d1, y as f64 + d2];
            let mism = bilinear_sample(&theta_t, p) - theta_r.get(x, y) - theta_tt.get(x, y);
            let res = bilinear_sample(&template, p) - theta_r.get(x, y);
            let e1 = c.gamma1 * bilinear_sample(&gt1, p) * mism
                + c.lambda_r * res * bilinear_sample(&gi1, p)
                + c.gamma2 * dv.get(x, y).0;
            let e2 = c.gamma1 * bilinear_sample(&gt2, p) * mism
                + c.lambda_r * res * bilinear_sample(&gi2, p)
                + c.gamma2 * dv.get(x, y).1;
            let got = f.get(x, y);
            assert!((got.0 - e1).abs() < 1e-12 && (got.1 - e2).abs() < 1e-12);
        }
    }

    /// Objective of the displacement sub-problem, evaluated directly.
    fn sub_objective(
        u: &VectorGrid,
        v: &MatrixGrid,
        theta_t: &ScalarGrid,
        theta_r: &ScalarGrid,
        theta_tt: &ScalarGrid,
        template: &ScalarGrid,
        c: &CouplingParams,
    ) -> f64 {
        let warped_t = warp(template, u).unwrap();
        let warped_theta = warp(theta_t, u).unwrap();
        let mut e = c.lambda_r * theta_r.ssd(&warped_t);
        let mut mism = 0.0;
        for i in 0..theta_tt.data().len() {
            let d = theta_tt.data()[i] - warped_theta.data()[i] + theta_r.data()[i];
            mism += d * d;
        }
        e += 0.5 * c.gamma1 * mism;
        e += 0.5 * c.gamma2 * v.frobenius_distance_sq(&jacobian(u));
        e
    }

    #[test]
    fn step_decreases_sub_objective_on_translation_instance() {
        // Template shifted against the atlas; the step must reduce the
        // combined objective.
        let n = 32;
        let disk = |cx: f64, cy: f64| {
            ScalarGrid::from_fn(n, n, move |x, y| {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= 36.0 {
                    1.0
                } else {
                    0.0
                }
            })
        };
        let template = disk(13.0, 16.0);
        let theta_r = disk(17.0, 16.0);
        let theta_t = template.clone();
        let theta_tt = ScalarGrid::zeros(n, n);
        let u = VectorGrid::zeros(n, n);
        let v = MatrixGrid::identity(n, n);
        let c = CouplingParams {
            gamma1: 50.0,
            lambda_r: 50.0,
            gamma2: 10.0,
            dt: 1e-2,
            ..CouplingParams::default()
        };
        let before = sub_objective(&u, &v, &theta_t, &theta_r, &theta_tt, &template, &c);
        let f = el_residual(&u, &v, &theta_t, &theta_r, &theta_tt, &template, &c).unwrap();
        let next = phi_step(&u, &f, &c).unwrap();
        let after = sub_objective(&next, &v, &theta_t, &theta_r, &theta_tt, &template, &c);
        assert!(
            after < before,
            "objective must decrease: before {before}, after {after}"
        );
        assert!(next.boundary_is_zero());
    }

    #[test]
    fn step_is_first_order_in_dt() {
        let n = 16;
        let u = VectorGrid::from_fn(n, n, |x, y| {
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                (0.0, 0.0)
            } else {
                (0.5, -0.25)
            }
        });
        let f = VectorGrid::from_fn(n, n, |x, y| {
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                (0.0, 0.0)
            } else {
                (1.0, 2.0)
            }
        });
        let mut c = CouplingParams::default();
        c.gamma2 = 1.0;
        let mut prev_delta = f64::INFINITY;
        for dt in [1e-2, 1e-3, 1e-4] {
            c.dt = dt;
            let next = phi_step(&u, &f, &c).unwrap();
            let delta = next.axpy(-1.0, &u).max_abs();
            assert!(delta < prev_delta);
            assert!(delta <= 10.0 * dt * f.max_abs() + 1e-12);
            prev_delta = delta;
        }
    }
}
