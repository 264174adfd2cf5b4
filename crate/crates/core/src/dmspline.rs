//! Linear-space representation of deformations by smoothing-spline
//! approximation with Bogner-Fox-Schmit rectangles.
//!
//! Given the displacement field u of an inverse deformation, the fit
//! minimizes over v in the bicubic Hermite space
//!
//!   epsilon |v|_3^2
//!     + (gamma/2) sum_i || (grad v + grad v^T)(a_i) - w_i ||_F^2
//!     + sum_i || v(a_i) - u(a_i) ||^2,
//!
//! where w_i = G + G^T + G^T G is the nonlinear (Green-Saint Venant) strain
//! sample at pixel a_i with G = grad u(a_i), and |.|_3 is the third-order
//! Sobolev seminorm with multinomial weights (1, 3, 3, 1) over the
//! multi-indices (3,0), (2,1), (1,2), (0,3), integrated cell-wise by Gauss
//! quadrature (exact for the bicubic products). Stationarity in the basis
//! coefficients gives the symmetric block system
//!
//!   [ 2g A^T A + g B^T B + C^T C + eps R        g B^T A                  ] [a1]
//!   [ g A^T B           g A^T A + 2g B^T B + C^T C + eps R               ] [a2]
//!     = [ g A^T w11 + g B^T w12 + C^T x1 ;  g A^T w12 + g B^T w22 + C^T x2 ],
//!
//! with A, B, C the x-derivative, y-derivative, and value evaluation
//! matrices of the basis at the data points, and R the seminorm Gram
//! matrix. The element is C1 across edges with four Hermite degrees of
//! freedom per node (value, d/dx, d/dy, d2/dxdy); 16 per cell.

use crate::error::{CoreError, Result};
use crate::grid::{jacobian, Mat2, VectorGrid};
use nalgebra::{Cholesky, DMatrix, DVector};

/// Spline fit configuration.
#[derive(Debug, Clone)]
pub struct SplineConfig {
    /// Seminorm weight (> 0).
    pub epsilon: f64,
    /// Strain-fit weight (>= 0).
    pub gamma_fit: f64,
    /// Mesh resolution.
    pub cells_x: usize,
    pub cells_y: usize,
    /// Gauss points per axis per cell; 4 integrates the degree-6 seminorm
    /// integrands exactly.
    pub quadrature: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig {
            epsilon: 1e-6,
            gamma_fit: 1.0,
            cells_x: 16,
            cells_y: 16,
            quadrature: 4,
        }
    }
}

/// One displacement/strain observation at a pixel.
#[derive(Debug, Clone, Copy)]
pub struct StrainSample {
    pub point: [f64; 2],
    pub disp: [f64; 2],
    pub w11: f64,
    pub w12: f64,
    pub w22: f64,
}

/// All observations extracted from a displacement field.
#[derive(Debug, Clone)]
pub struct StrainSamples {
    pub samples: Vec<StrainSample>,
}

/// Green-Saint Venant strain of a displacement gradient:
/// `G + G^T + G^T G`, returned as (w11, w12, w22); symmetric by
/// construction. Equals `F^T F - I` with `F = I + G`, so rigid rotations
/// map to zero.
pub fn green_strain(g: &Mat2) -> (f64, f64, f64) {
    let gtg = g.transpose().mul(g);
    (
        2.0 * g.m11 + gtg.m11,
        g.m12 + g.m21 + gtg.m12,
        2.0 * g.m22 + gtg.m22,
    )
}

/// Displacement values and strain samples at every pixel of `u`.
///
/// `u` is expected to be the displacement of the inverse deformation from
/// the atlas stage; the gradient is taken by the shared forward-difference
/// scheme.
pub fn strain_samples(u: &VectorGrid) -> StrainSamples {
    let jac = jacobian(u);
    let (w, h) = (u.width(), u.height());
    let mut samples = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let f = jac.get(x, y);
            // jacobian returns I + G; the strain wants G.
            let g = Mat2::new(f.m11 - 1.0, f.m12, f.m21, f.m22 - 1.0);
            let (w11, w12, w22) = green_strain(&g);
            let (u1, u2) = u.get(x, y);
            samples.push(StrainSample {
                point: [x as f64, y as f64],
                disp: [u1, u2],
                w11,
                w12,
                w22,
            });
        }
    }
    StrainSamples { samples }
}

/// Geometry of one mesh cell.
#[derive(Debug, Clone, Copy)]
pub struct BfsCell {
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
}

/// Rectangular mesh of Bogner-Fox-Schmit cells covering a rectangle.
#[derive(Debug, Clone)]
pub struct BfsMesh {
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
    pub cells_x: usize,
    pub cells_y: usize,
}

impl BfsMesh {
    /// Mesh covering `[0, width-1] x [0, height-1]`.
    pub fn covering(width: usize, height: usize, cells_x: usize, cells_y: usize) -> Self {
        assert!(cells_x >= 1 && cells_y >= 1);
        BfsMesh {
            x0: 0.0,
            y0: 0.0,
            hx: (width - 1) as f64 / cells_x as f64,
            hy: (height - 1) as f64 / cells_y as f64,
            cells_x,
            cells_y,
        }
    }

    pub fn nodes_x(&self) -> usize {
        self.cells_x + 1
    }

    pub fn nodes_y(&self) -> usize {
        self.cells_y + 1
    }

    /// Scalar degrees of freedom (4 per node).
    pub fn dof_count(&self) -> usize {
        4 * self.nodes_x() * self.nodes_y()
    }

    pub fn cell(&self, cx: usize, cy: usize) -> BfsCell {
        BfsCell {
            x0: self.x0 + cx as f64 * self.hx,
            y0: self.y0 + cy as f64 * self.hy,
            hx: self.hx,
            hy: self.hy,
        }
    }

    /// Cell containing a point; points on upper edges belong to the last
    /// cell. Errors when the point lies outside the mesh.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, usize)> {
        let tol = 1e-9 * (self.hx + self.hy);
        let sx = (p[0] - self.x0) / self.hx;
        let sy = (p[1] - self.y0) / self.hy;
        if sx < -tol || sy < -tol || sx > self.cells_x as f64 + tol || sy > self.cells_y as f64 + tol
        {
            return Err(CoreError::PointOutsideMesh { x: p[0], y: p[1] });
        }
        let cx = (sx.floor().max(0.0) as usize).min(self.cells_x - 1);
        let cy = (sy.floor().max(0.0) as usize).min(self.cells_y - 1);
        Ok((cx, cy))
    }

    /// Global scalar DOF index of a local cell DOF (corner 0..3 in the
    /// order (0,0), (1,0), (0,1), (1,1); type 0..3 = value, d/dx, d/dy,
    /// d2/dxdy).
    pub fn global_dof(&self, cx: usize, cy: usize, local: usize) -> usize {
        let corner = local / 4;
        let ty = local % 4;
        let nx = self.nodes_x();
        let node = (cy + corner / 2) * nx + (cx + corner % 2);
        node * 4 + ty
    }
}

/// Cubic Hermite polynomials on [0, 1] and their derivatives.
/// Row selects the function (value-at-0, slope-at-0, value-at-1,
/// slope-at-1), `d` the derivative order.
fn hermite(kind: usize, d: usize, t: f64) -> f64 {
    match (kind, d) {
        (0, 0) => 2.0 * t * t * t - 3.0 * t * t + 1.0,
        (0, 1) => 6.0 * t * t - 6.0 * t,
        (0, 2) => 12.0 * t - 6.0,
        (0, 3) => 12.0,
        (1, 0) => t * t * t - 2.0 * t * t + t,
        (1, 1) => 3.0 * t * t - 4.0 * t + 1.0,
        (1, 2) => 6.0 * t - 4.0,
        (1, 3) => 6.0,
        (2, 0) => -2.0 * t * t * t + 3.0 * t * t,
        (2, 1) => -6.0 * t * t + 6.0 * t,
        (2, 2) => -12.0 * t + 6.0,
        (2, 3) => -12.0,
        (3, 0) => t * t * t - t * t,
        (3, 1) => 3.0 * t * t - 2.0 * t,
        (3, 2) => 6.0 * t - 2.0,
        (3, 3) => 6.0,
        _ => 0.0,
    }
}

/// Evaluate one of the 16 shape functions of a cell (or a derivative up to
/// order 3 per variable) at a point inside the cell. The shape functions
/// are tensor products of cubic Hermite polynomials, scaled so each DOF is
/// the value/derivative in global coordinates.
pub fn bfs_basis_eval(cell: &BfsCell, dof_index: usize, point: [f64; 2], deriv: (usize, usize)) -> f64 {
    debug_assert!(dof_index < 16);
    let (dx, dy) = deriv;
    if dx > 3 || dy > 3 {
        return 0.0;
    }
    let corner = dof_index / 4;
    let ty = dof_index % 4;
    let (corner_x, corner_y) = (corner % 2, corner / 2);
    // Type bits: bit 0 = x-derivative DOF, bit 1 = y-derivative DOF.
    let (slope_x, slope_y) = (ty & 1 == 1, ty & 2 == 2);

    let s = (point[0] - cell.x0) / cell.hx;
    let t = (point[1] - cell.y0) / cell.hy;
    let kind_x = 2 * corner_x + usize::from(slope_x);
    let kind_y = 2 * corner_y + usize::from(slope_y);

    let mut fx = hermite(kind_x, dx, s) / cell.hx.powi(dx as i32);
    let mut fy = hermite(kind_y, dy, t) / cell.hy.powi(dy as i32);
    if slope_x {
        fx *= cell.hx;
    }
    if slope_y {
        fy *= cell.hy;
    }
    fx * fy
}

/// Assembled block system (dense; the meshes in play are small).
#[derive(Debug, Clone)]
pub struct SplineSystem {
    /// Symmetric positive definite 2*M_h x 2*M_h matrix.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Seminorm Gram matrix R (M_h x M_h), kept for diagnostics.
    pub seminorm: DMatrix<f64>,
    /// Scalar DOFs per component (M_h).
    pub dof_count: usize,
}

const GAUSS4_NODES: [f64; 4] = [
    -0.861136311594052575,
    -0.339981043584856265,
    0.339981043584856265,
    0.861136311594052575,
];
const GAUSS4_WEIGHTS: [f64; 4] = [
    0.347854845137453857,
    0.652145154862546143,
    0.652145154862546143,
    0.347854845137453857,
];

/// Third-derivative multi-indices of the seminorm with their multinomial
/// weights.
const SEMINORM_TERMS: [(usize, usize, f64); 4] =
    [(3, 0, 1.0), (2, 1, 3.0), (1, 2, 3.0), (0, 3, 1.0)];

/// Seminorm Gram matrix by per-cell Gauss quadrature.
fn assemble_seminorm(mesh: &BfsMesh, order: usize) -> Result<DMatrix<f64>> {
    if order < 4 {
        return Err(CoreError::Config(format!(
            "quadrature order {order} cannot integrate the degree-6 seminorm integrands; need >= 4"
        )));
    }
    // Gauss order is fixed at 4 points per axis: exact for the bicubic
    // products (degree <= 7 per axis).
    let m = mesh.dof_count();
    let mut r = DMatrix::zeros(m, m);
    let mut dvals = [[0.0f64; 16]; 4];

    for cy in 0..mesh.cells_y {
        for cx in 0..mesh.cells_x {
            let cell = mesh.cell(cx, cy);
            let mut local = [[0.0f64; 16]; 16];
            for (gi, &gx) in GAUSS4_NODES.iter().enumerate() {
                let px = cell.x0 + 0.5 * cell.hx * (gx + 1.0);
                for (gj, &gy) in GAUSS4_NODES.iter().enumerate() {
                    let py = cell.y0 + 0.5 * cell.hy * (gy + 1.0);
                    let wq = GAUSS4_WEIGHTS[gi] * GAUSS4_WEIGHTS[gj] * 0.25 * cell.hx * cell.hy;
                    for (k, &(dx, dy, _)) in SEMINORM_TERMS.iter().enumerate() {
                        for j in 0..16 {
                            dvals[k][j] = bfs_basis_eval(&cell, j, [px, py], (dx, dy));
                        }
                    }
                    for (k, &(_, _, mult)) in SEMINORM_TERMS.iter().enumerate() {
                        let wk = wq * mult;
                        for a in 0..16 {
                            let da = dvals[k][a];
                            if da == 0.0 {
                                continue;
                            }
                            // Product grouped (da * db) first so the
                            // accumulation is exactly symmetric.
                            for b in 0..16 {
                                local[a][b] += (da * dvals[k][b]) * wk;
                            }
                        }
                    }
                }
            }
            for a in 0..16 {
                let ga = mesh.global_dof(cx, cy, a);
                for b in 0..16 {
                    let gb = mesh.global_dof(cx, cy, b);
                    r[(ga, gb)] += local[a][b];
                }
            }
        }
    }
    Ok(r)
}

/// Assemble the block system for the given samples.
pub fn assemble_system(
    samples: &StrainSamples,
    mesh: &BfsMesh,
    cfg: &SplineConfig,
) -> Result<SplineSystem> {
    if cfg.epsilon <= 0.0 {
        return Err(CoreError::Config("epsilon must be > 0".into()));
    }
    let m = mesh.dof_count();
    let g = cfg.gamma_fit;
    let mut k = DMatrix::zeros(2 * m, 2 * m);
    let mut rhs = DVector::zeros(2 * m);

    let mut ca = [0.0f64; 16];
    let mut cb = [0.0f64; 16];
    let mut cc = [0.0f64; 16];
    let mut dofs = [0usize; 16];

    for s in &samples.samples {
        let (cx, cy) = mesh.locate(s.point)?;
        let cell = mesh.cell(cx, cy);
        for j in 0..16 {
            ca[j] = bfs_basis_eval(&cell, j, s.point, (1, 0));
            cb[j] = bfs_basis_eval(&cell, j, s.point, (0, 1));
            cc[j] = bfs_basis_eval(&cell, j, s.point, (0, 0));
            dofs[j] = mesh.global_dof(cx, cy, j);
        }
        for j in 0..16 {
            let (aj, bj, cj) = (ca[j], cb[j], cc[j]);
            let dj = dofs[j];
            // Products grouped pairwise so the assembled matrix equals its
            // transpose bit for bit.
            for l in 0..16 {
                let (al, bl, cl) = (ca[l], cb[l], cc[l]);
                let dl = dofs[l];
                k[(dj, dl)] += 2.0 * g * (aj * al) + g * (bj * bl) + (cj * cl);
                k[(m + dj, m + dl)] += g * (aj * al) + 2.0 * g * (bj * bl) + (cj * cl);
                k[(dj, m + dl)] += g * (bj * al);
                k[(m + dj, dl)] += g * (aj * bl);
            }
            rhs[dj] += g * aj * s.w11 + g * bj * s.w12 + cj * s.disp[0];
            rhs[m + dj] += g * aj * s.w12 + g * bj * s.w22 + cj * s.disp[1];
        }
    }

    let r = assemble_seminorm(mesh, cfg.quadrature)?;
    for j in 0..m {
        for l in 0..m {
            let v = cfg.epsilon * r[(j, l)];
            k[(j, l)] += v;
            k[(m + j, m + l)] += v;
        }
    }

    Ok(SplineSystem {
        matrix: k,
        rhs,
        seminorm: r,
        dof_count: m,
    })
}

/// Coefficients of a solved fit with the mesh they live on.
#[derive(Debug, Clone)]
pub struct SplineFit {
    pub mesh: BfsMesh,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

/// Solved fit plus the smooth field sampled on the pixel lattice and the
/// diagnostics used by the trade-off checks.
#[derive(Debug, Clone)]
pub struct SplineSolution {
    pub fit: SplineFit,
    pub smooth: VectorGrid,
    /// alpha^T R alpha summed over both components.
    pub seminorm_sq: f64,
    /// Sum over pixels of ||v(a_i) - u(a_i)||^2.
    pub value_misfit: f64,
}

fn solve_spd(system: &SplineSystem) -> Result<DVector<f64>> {
    if let Some(chol) = Cholesky::new(system.matrix.clone()) {
        return Ok(chol.solve(&system.rhs));
    }
    // Jacobi-preconditioned CG fallback for near-singular assemblies.
    let n = system.rhs.len();
    let a = &system.matrix;
    let inv_diag: DVector<f64> = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let d = a[(i, i)];
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        }),
    );
    let mut x = DVector::zeros(n);
    let mut r = system.rhs.clone();
    let mut z = r.component_mul(&inv_diag);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let tol = 1e-10 * system.rhs.norm().max(1.0);
    let max_iter = 20 * n;
    for it in 0..max_iter {
        if r.norm() <= tol {
            return Ok(x);
        }
        let ap = a * &p;
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(CoreError::SolverDiverged {
                solver: "spline-cg",
                iterations: it,
                residual: r.norm(),
            });
        }
        let alpha = rz / pap;
        x += alpha * &p;
        r -= alpha * ap;
        z = r.component_mul(&inv_diag);
        let rz_new = r.dot(&z);
        p = &z + (rz_new / rz) * p;
        rz = rz_new;
    }
    if r.norm() <= tol {
        Ok(x)
    } else {
        Err(CoreError::SolverDiverged {
            solver: "spline-cg",
            iterations: max_iter,
            residual: r.norm(),
        })
    }
}

/// Fit the smoothing spline to a displacement field and sample it back on
/// the pixel lattice.
pub fn solve_spline(u: &VectorGrid, cfg: &SplineConfig) -> Result<SplineSolution> {
    let mesh = BfsMesh::covering(u.width(), u.height(), cfg.cells_x, cfg.cells_y);
    let samples = strain_samples(u);
    let system = assemble_system(&samples, &mesh, cfg)?;
    let sol = solve_spd(&system)?;
    let m = system.dof_count;
    let alpha1: Vec<f64> = sol.rows(0, m).iter().copied().collect();
    let alpha2: Vec<f64> = sol.rows(m, m).iter().copied().collect();
    let fit = SplineFit {
        mesh,
        alpha1,
        alpha2,
    };

    let mut smooth = VectorGrid::zeros(u.width(), u.height());
    for y in 0..u.height() {
        for x in 0..u.width() {
            let v = eval_spline(&fit, [x as f64, y as f64])?;
            smooth.set(x, y, (v[0], v[1]));
        }
    }

    let a1 = DVector::from_vec(fit.alpha1.clone());
    let a2 = DVector::from_vec(fit.alpha2.clone());
    let seminorm_sq = (&system.seminorm * &a1).dot(&a1) + (&system.seminorm * &a2).dot(&a2);

    let mut value_misfit = 0.0;
    for y in 0..u.height() {
        for x in 0..u.width() {
            let (u1, u2) = u.get(x, y);
            let (v1, v2) = smooth.get(x, y);
            value_misfit += (v1 - u1) * (v1 - u1) + (v2 - u2) * (v2 - u2);
        }
    }

    Ok(SplineSolution {
        fit,
        smooth,
        seminorm_sq,
        value_misfit,
    })
}

/// Evaluate a fit at a point inside the mesh.
pub fn eval_spline(fit: &SplineFit, point: [f64; 2]) -> Result<[f64; 2]> {
    let (cx, cy) = fit.mesh.locate(point)?;
    let cell = fit.mesh.cell(cx, cy);
    let mut v = [0.0f64; 2];
    for j in 0..16 {
        let b = bfs_basis_eval(&cell, j, point, (0, 0));
        if b == 0.0 {
            continue;
        }
        let g = fit.mesh.global_dof(cx, cy, j);
        v[0] += fit.alpha1[g] * b;
        v[1] += fit.alpha2[g] * b;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VectorGrid;

    fn unit_cell() -> BfsCell {
        BfsCell {
            x0: 0.0,
            y0: 0.0,
            hx: 1.0,
            hy: 1.0,
        }
    }

    #[test]
    fn strain_of_zero_field_is_zero() {
        let u = VectorGrid::zeros(6, 6);
        let s = strain_samples(&u);
        assert_eq!(s.samples.len(), 36);
        for smp in &s.samples {
            assert_eq!((smp.w11, smp.w12, smp.w22), (0.0, 0.0, 0.0));
            assert_eq!(smp.disp, [0.0, 0.0]);
        }
    }

    #[test]
    fn rotation_strain_vanishes() {
        // G = R - I for a rotation R: the strain is R^T R - I = 0.
        let th = 0.37f64;
        let r = Mat2::new(th.cos(), -th.sin(), th.sin(), th.cos());
        let g = Mat2::new(r.m11 - 1.0, r.m12, r.m21, r.m22 - 1.0);
        let (w11, w12, w22) = green_strain(&g);
        assert!(w11.abs() <= 1e-15 && w12.abs() <= 1e-15 && w22.abs() <= 1e-15);
    }

    #[test]
    fn uniaxial_stretch_strain() {
        // G = diag(s, 0): w = diag(2s + s^2, 0).
        let s = 0.25;
        let g = Mat2::new(s, 0.0, 0.0, 0.0);
        let (w11, w12, w22) = green_strain(&g);
        assert!((w11 - (2.0 * s + s * s)).abs() < 1e-15);
        assert_eq!(w12, 0.0);
        assert_eq!(w22, 0.0);
    }

    #[test]
    fn hermite_interpolation_property() {
        let cell = unit_cell();
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        for corner in 0..4 {
            let dof = corner * 4; // value DOF
            for (other, p) in corners.iter().enumerate() {
                let v = bfs_basis_eval(&cell, dof, *p, (0, 0));
                if other == corner {
                    assert!((v - 1.0).abs() < 1e-14);
                } else {
                    assert!(v.abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn hermite_slope_dof_property() {
        let cell = unit_cell();
        // d/dx DOF at corner 0: unit x-derivative, zero value, at its node.
        let dof = 1;
        assert!((bfs_basis_eval(&cell, dof, [0.0, 0.0], (1, 0)) - 1.0).abs() < 1e-14);
        assert!(bfs_basis_eval(&cell, dof, [0.0, 0.0], (0, 0)).abs() < 1e-14);
        // And zero x-derivative at the other corners.
        for p in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            assert!(bfs_basis_eval(&cell, dof, p, (1, 0)).abs() < 1e-14);
        }
    }

    #[test]
    fn value_dofs_partition_unity() {
        let cell = BfsCell {
            x0: 2.0,
            y0: -1.0,
            hx: 3.0,
            hy: 2.0,
        };
        for p in [[2.5, -0.5], [3.1, 0.4], [4.9, 0.9], [2.0, -1.0]] {
            let sum: f64 = (0..4).map(|c| bfs_basis_eval(&cell, c * 4, p, (0, 0))).sum();
            assert!((sum - 1.0).abs() < 1e-13, "partition of unity at {p:?}");
        }
    }

    #[test]
    fn derivative_beyond_cubic_degree_is_zero() {
        let cell = unit_cell();
        assert_eq!(bfs_basis_eval(&cell, 5, [0.3, 0.4], (4, 0)), 0.0);
        assert_eq!(bfs_basis_eval(&cell, 5, [0.3, 0.4], (0, 4)), 0.0);
    }

    #[test]
    fn quadrature_order_too_low_is_a_config_error() {
        let mesh = BfsMesh::covering(8, 8, 2, 2);
        let cfg = SplineConfig {
            quadrature: 2,
            ..SplineConfig::default()
        };
        let samples = strain_samples(&VectorGrid::zeros(8, 8));
        assert!(matches!(
            assemble_system(&samples, &mesh, &cfg),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn point_outside_mesh_errors() {
        let mesh = BfsMesh::covering(8, 8, 2, 2);
        assert!(matches!(
            mesh.locate([9.0, 3.0]),
            Err(CoreError::PointOutsideMesh { .. })
        ));
    }

    #[test]
    fn seminorm_matrix_is_symmetric_psd() {
        let mesh = BfsMesh::covering(9, 9, 2, 2);
        let r = assemble_seminorm(&mesh, 4).unwrap();
        let rt = r.transpose();
        assert_eq!(r, rt);
        let eig = nalgebra::SymmetricEigen::new(r);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        assert!(min > -1e-10 * max.max(1.0), "min eigenvalue {min}");
    }

    #[test]
    fn block_matrix_is_exactly_symmetric_and_pd() {
        let u = VectorGrid::from_fn(9, 9, |x, y| {
            (0.01 * (x * y) as f64, 0.02 * (x + y) as f64)
        });
        let mesh = BfsMesh::covering(9, 9, 4, 4);
        let cfg = SplineConfig {
            cells_x: 4,
            cells_y: 4,
            epsilon: 1e-4,
            ..SplineConfig::default()
        };
        let system = assemble_system(&strain_samples(&u), &mesh, &cfg).unwrap();
        assert_eq!(system.matrix, system.matrix.transpose());
        let eig = nalgebra::SymmetricEigen::new(system.matrix.clone());
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "block matrix must be PD, min eigenvalue {min}");
    }

    #[test]
    fn value_row_at_mesh_node_hits_single_dof() {
        // A data point at a mesh node evaluates to 1 on exactly its value
        // DOF and 0 on every other basis function (value row of C).
        let mesh = BfsMesh::covering(9, 9, 2, 2);
        let (cx, cy) = mesh.locate([4.0, 4.0]).unwrap();
        let cell = mesh.cell(cx, cy);
        let mut hits = Vec::new();
        for j in 0..16 {
            let v = bfs_basis_eval(&cell, j, [4.0, 4.0], (0, 0));
            if v.abs() > 1e-14 {
                hits.push((mesh.global_dof(cx, cy, j), v));
            }
        }
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-14);
        assert_eq!(hits[0].0 % 4, 0, "must be a value DOF");
    }

    #[test]
    fn zero_input_gives_zero_solution() {
        let u = VectorGrid::zeros(9, 9);
        let cfg = SplineConfig {
            cells_x: 3,
            cells_y: 3,
            ..SplineConfig::default()
        };
        let sol = solve_spline(&u, &cfg).unwrap();
        assert!(sol.fit.alpha1.iter().all(|&a| a == 0.0));
        assert!(sol.fit.alpha2.iter().all(|&a| a == 0.0));
        assert_eq!(sol.smooth.max_abs(), 0.0);
    }

    #[test]
    fn misfit_grows_with_epsilon() {
        let u = VectorGrid::from_fn(17, 17, |x, y| {
            let (xf, yf) = (x as f64 / 16.0, y as f64 / 16.0);
            ((xf * 3.1).sin() * 0.8, (yf * 2.7).cos() * 0.5)
        });
        let mut lo = SplineConfig {
            cells_x: 4,
            cells_y: 4,
            epsilon: 1e-6,
            ..SplineConfig::default()
        };
        let sol_lo = solve_spline(&u, &lo).unwrap();
        lo.epsilon = 1e2;
        let sol_hi = solve_spline(&u, &lo).unwrap();
        assert!(
            sol_lo.value_misfit < sol_hi.value_misfit,
            "misfit must grow with epsilon: {} vs {}",
            sol_lo.value_misfit,
            sol_hi.value_misfit
        );
        assert!(
            sol_lo.seminorm_sq >= sol_hi.seminorm_sq,
            "seminorm must shrink with epsilon"
        );
    }

    #[test]
    fn reproduces_cubic_fields_at_data_points() {
        // Components that are global cubics are representable in the
        // element space; with values-only fitting and tiny epsilon the fit
        // passes through the data.
        let n = 13;
        let f1 = |x: f64, y: f64| 1e-4 * (x * x * x - 2.0 * x * x * y) + 0.01 * y;
        let f2 = |x: f64, y: f64| 5e-5 * (y * y * y + x * y * y) - 0.02 * x;
        let u = VectorGrid::from_fn(n, n, |x, y| (f1(x as f64, y as f64), f2(x as f64, y as f64)));
        let cfg = SplineConfig {
            cells_x: 3,
            cells_y: 3,
            epsilon: 1e-10,
            gamma_fit: 0.0,
            ..SplineConfig::default()
        };
        let sol = solve_spline(&u, &cfg).unwrap();
        let mut worst = 0.0f64;
        for y in 0..n {
            for x in 0..n {
                let (a, b) = sol.smooth.get(x, y);
                let (ua, ub) = u.get(x, y);
                worst = worst.max((a - ua).abs().max((b - ub).abs()));
            }
        }
        assert!(worst <= 1e-8, "cubic reproduction error {worst}");
    }

    #[test]
    fn solution_is_linear_in_data_without_strain_fitting() {
        let n = 11;
        let ua = VectorGrid::from_fn(n, n, |x, y| {
            ((x as f64 * 0.4).sin() * 0.1, (y as f64 * 0.3).cos() * 0.1)
        });
        let ub = VectorGrid::from_fn(n, n, |x, y| {
            (0.05 * (x as f64 - 5.0), -0.03 * (y as f64 - 5.0))
        });
        let sum = ua.axpy(1.0, &ub);
        let cfg = SplineConfig {
            cells_x: 3,
            cells_y: 3,
            epsilon: 1e-4,
            gamma_fit: 0.0,
            ..SplineConfig::default()
        };
        let sa = solve_spline(&ua, &cfg).unwrap();
        let sb = solve_spline(&ub, &cfg).unwrap();
        let ss = solve_spline(&sum, &cfg).unwrap();
        let combined = sa.smooth.axpy(1.0, &sb.smooth);
        let diff = combined.axpy(-1.0, &ss.smooth).max_abs();
        assert!(diff <= 1e-8, "linearity violation {diff}");
    }

    #[test]
    fn eval_matches_dense_sampling() {
        let u = VectorGrid::from_fn(9, 9, |x, y| {
            (0.1 * (x as f64).sin(), 0.1 * (y as f64).cos())
        });
        let cfg = SplineConfig {
            cells_x: 2,
            cells_y: 2,
            ..SplineConfig::default()
        };
        let sol = solve_spline(&u, &cfg).unwrap();
        for (x, y) in [(0usize, 0usize), (3, 5), (8, 8)] {
            let v = eval_spline(&sol.fit, [x as f64, y as f64]).unwrap();
            let (a, b) = sol.smooth.get(x, y);
            assert_eq!(v, [a, b]);
        }
    }

    #[test]
    fn eval_with_unit_coefficient_at_node() {
        let mesh = BfsMesh::covering(9, 9, 2, 2);
        let m = mesh.dof_count();
        // Node (1,1) of the 3x3 node lattice, value DOF.
        let node = 1 * mesh.nodes_x() + 1;
        let mut alpha1 = vec![0.0; m];
        alpha1[node * 4] = 1.0;
        let fit = SplineFit {
            mesh,
            alpha1,
            alpha2: vec![0.0; m],
        };
        let v = eval_spline(&fit, [4.0, 4.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-13 && v[1] == 0.0);
        assert_eq!(eval_spline(&fit, [0.0, 0.0]).unwrap(), [0.0, 0.0]);
    }
}
