//! Pixel-lattice containers and the discrete differential/warping toolbox.
//!
//! Grids live on a unit-spaced lattice with row-major storage; pixel (x, y)
//! maps to index `y * width + x`. Displacements are measured in pixels and a
//! deformation is always `phi = Id + U`. Out-of-lattice samples clamp to the
//! boundary pixel.
//!
//! The difference operators are paired so that `gradient` (forward) and
//! `divergence` (backward) are exact negative adjoints:
//! `<gradient(u), P> + <u, divergence(P)> = 0`. This makes the composition
//! `divergence(jacobian(u))` the standard 5-point Laplacian on the interior,
//! which the implicit registration step relies on.

use crate::error::{CoreError, Result};

/// W x H scalar field (image, piecewise-constant segmentation, weights).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// W x H field of 2-vectors. Used both for displacement fields (zero on the
/// boundary ring) and for per-pixel gradients/forcings, which need not be.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    width: usize,
    height: usize,
    /// First component plane.
    pub u1: Vec<f64>,
    /// Second component plane.
    pub u2: Vec<f64>,
}

/// W x H field of 2x2 matrices stored as four planes.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGrid {
    width: usize,
    height: usize,
    pub m11: Vec<f64>,
    pub m12: Vec<f64>,
    pub m21: Vec<f64>,
    pub m22: Vec<f64>,
}

/// A single 2x2 matrix; the per-pixel value of a [`MatrixGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m11: 1.0,
        m12: 0.0,
        m21: 0.0,
        m22: 1.0,
    };

    pub fn new(m11: f64, m12: f64, m21: f64, m22: f64) -> Self {
        Mat2 { m11, m12, m21, m22 }
    }

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    /// Squared Frobenius norm.
    pub fn norm_sq(&self) -> f64 {
        self.m11 * self.m11 + self.m12 * self.m12 + self.m21 * self.m21 + self.m22 * self.m22
    }

    /// Gradient of the determinant with respect to the entries,
    /// d(det M)/dM = [[m22, -m21], [-m12, m11]].
    pub fn det_gradient(&self) -> Mat2 {
        Mat2::new(self.m22, -self.m21, -self.m12, self.m11)
    }

    /// Exact inverse via the cofactor formula. `None` when det == 0.
    pub fn inverse(&self) -> Option<Mat2> {
        let d = self.det();
        if d == 0.0 {
            return None;
        }
        Some(Mat2::new(
            self.m22 / d,
            -self.m12 / d,
            -self.m21 / d,
            self.m11 / d,
        ))
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m11, self.m21, self.m12, self.m22)
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m11 * o.m11 + self.m12 * o.m21,
            self.m11 * o.m12 + self.m12 * o.m22,
            self.m21 * o.m11 + self.m22 * o.m21,
            self.m21 * o.m12 + self.m22 * o.m22,
        )
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m11 - o.m11,
            self.m12 - o.m12,
            self.m21 - o.m21,
            self.m22 - o.m22,
        )
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(self.m11 * s, self.m12 * s, self.m21 * s, self.m22 * s)
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m11 + o.m11,
            self.m12 + o.m12,
            self.m21 + o.m21,
            self.m22 + o.m22,
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.m11
            .abs()
            .max(self.m12.abs())
            .max(self.m21.abs())
            .max(self.m22.abs())
    }
}

impl ScalarGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        ScalarGrid {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        let mut g = Self::zeros(width, height);
        g.data.fill(value);
        g
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        assert_eq!(data.len(), width * height, "data length mismatch");
        ScalarGrid {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                g.data[y * width + x] = f(x, y);
            }
        }
        g
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &ScalarGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Sum of squared differences against `other` (unit pixel area).
    pub fn ssd(&self, other: &ScalarGrid) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

impl VectorGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        VectorGrid {
            width,
            height,
            u1: vec![0.0; width * height],
            u2: vec![0.0; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut g = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                g.u1[y * width + x] = a;
                g.u2[y * width + x] = b;
            }
        }
        g
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u1[i], self.u2[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: (f64, f64)) {
        let i = y * self.width + x;
        self.u1[i] = v.0;
        self.u2[i] = v.1;
    }

    pub fn same_shape(&self, other: &VectorGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Largest absolute component over all pixels.
    pub fn max_abs(&self) -> f64 {
        self.u1
            .iter()
            .chain(self.u2.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// L2 inner product (sum over pixels of both component products).
    pub fn dot(&self, other: &VectorGrid) -> f64 {
        debug_assert!(self.same_shape(other));
        let a: f64 = self.u1.iter().zip(&other.u1).map(|(x, y)| x * y).sum();
        let b: f64 = self.u2.iter().zip(&other.u2).map(|(x, y)| x * y).sum();
        a + b
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> VectorGrid {
        let mut out = self.clone();
        out.u1.iter_mut().for_each(|v| *v *= s);
        out.u2.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &VectorGrid) -> VectorGrid {
        debug_assert!(self.same_shape(other));
        let mut out = self.clone();
        for i in 0..out.u1.len() {
            out.u1[i] += s * other.u1[i];
            out.u2[i] += s * other.u2[i];
        }
        out
    }

    /// True when both components vanish on the boundary ring.
    pub fn boundary_is_zero(&self) -> bool {
        let (w, h) = (self.width, self.height);
        for x in 0..w {
            if self.get(x, 0) != (0.0, 0.0) || self.get(x, h - 1) != (0.0, 0.0) {
                return false;
            }
        }
        for y in 0..h {
            if self.get(0, y) != (0.0, 0.0) || self.get(w - 1, y) != (0.0, 0.0) {
                return false;
            }
        }
        true
    }

    /// Force both components to exactly zero on the boundary ring.
    pub fn zero_boundary(&mut self) {
        let (w, h) = (self.width, self.height);
        for x in 0..w {
            self.set(x, 0, (0.0, 0.0));
            self.set(x, h - 1, (0.0, 0.0));
        }
        for y in 0..h {
            self.set(0, y, (0.0, 0.0));
            self.set(w - 1, y, (0.0, 0.0));
        }
    }
}

impl MatrixGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        assert!(width >= 2 && height >= 2, "grid must be at least 2x2");
        let n = width * height;
        MatrixGrid {
            width,
            height,
            m11: vec![0.0; n],
            m12: vec![0.0; n],
            m21: vec![0.0; n],
            m22: vec![0.0; n],
        }
    }

    /// Identity matrix at every pixel.
    pub fn identity(width: usize, height: usize) -> Self {
        let mut g = Self::zeros(width, height);
        g.m11.fill(1.0);
        g.m22.fill(1.0);
        g
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Mat2) -> Self {
        let mut g = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                g.set(x, y, f(x, y));
            }
        }
        g
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Mat2 {
        let i = y * self.width + x;
        Mat2::new(self.m11[i], self.m12[i], self.m21[i], self.m22[i])
    }

    #[inline]
    pub fn at(&self, i: usize) -> Mat2 {
        Mat2::new(self.m11[i], self.m12[i], self.m21[i], self.m22[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, m: Mat2) {
        let i = y * self.width + x;
        self.set_at(i, m);
    }

    #[inline]
    pub fn set_at(&mut self, i: usize, m: Mat2) {
        self.m11[i] = m.m11;
        self.m12[i] = m.m12;
        self.m21[i] = m.m21;
        self.m22[i] = m.m22;
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn same_shape(&self, other: &MatrixGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Sum over pixels of the squared Frobenius norm of `self - other`.
    pub fn frobenius_distance_sq(&self, other: &MatrixGrid) -> f64 {
        debug_assert!(self.same_shape(other));
        let mut acc = 0.0;
        for i in 0..self.len() {
            acc += self.at(i).sub(&other.at(i)).norm_sq();
        }
        acc
    }

    pub fn min_det(&self) -> f64 {
        (0..self.len()).fold(f64::INFINITY, |m, i| m.min(self.at(i).det()))
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.len()).fold(0.0f64, |m, i| m.max(self.at(i).max_abs()))
    }
}

/// Bilinear interpolation of `grid` at an arbitrary point, clamping the
/// sample position to the lattice. Exact at lattice points and on affine
/// images.
pub fn bilinear_sample(grid: &ScalarGrid, point: [f64; 2]) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    let x = point[0].clamp(0.0, (w - 1) as f64);
    let y = point[1].clamp(0.0, (h - 1) as f64);
    let x0 = (x.floor() as usize).min(w - 2);
    let y0 = (y.floor() as usize).min(h - 2);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let i = y0 * w + x0;
    let v00 = grid.data[i];
    let v10 = grid.data[i + 1];
    let v01 = grid.data[i + w];
    let v11 = grid.data[i + w + 1];
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Backward-warp composition `output(x) = grid(x + disp(x))`.
pub fn warp(grid: &ScalarGrid, disp: &VectorGrid) -> Result<ScalarGrid> {
    if grid.width() != disp.width() || grid.height() != disp.height() {
        return Err(CoreError::DimensionMismatch {
            expected_w: grid.width(),
            expected_h: grid.height(),
            got_w: disp.width(),
            got_h: disp.height(),
        });
    }
    let mut out = ScalarGrid::zeros(grid.width(), grid.height());
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            let (u, v) = disp.get(x, y);
            out.set(
                x,
                y,
                bilinear_sample(grid, [x as f64 + u, y as f64 + v]),
            );
        }
    }
    Ok(out)
}

/// Forward-difference gradient with replicated (Neumann) boundary: the last
/// row/column difference is zero. Component 1 holds d/dx, component 2 d/dy.
pub fn gradient(grid: &ScalarGrid) -> VectorGrid {
    let (w, h) = (grid.width(), grid.height());
    let mut out = VectorGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let gx = if x + 1 < w {
                grid.get(x + 1, y) - grid.get(x, y)
            } else {
                0.0
            };
            let gy = if y + 1 < h {
                grid.get(x, y + 1) - grid.get(x, y)
            } else {
                0.0
            };
            out.set(x, y, (gx, gy));
        }
    }
    out
}

/// Centered-difference gradient (one-sided at the boundary). Symmetric
/// stencil for the data-term forcings; the forward [`gradient`] stays paired
/// with [`divergence`] for the discrete integration-by-parts identity.
pub fn gradient_centered(grid: &ScalarGrid) -> VectorGrid {
    let (w, h) = (grid.width(), grid.height());
    let mut out = VectorGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let gx = match x {
                0 => grid.get(1, y) - grid.get(0, y),
                _ if x == w - 1 => grid.get(w - 1, y) - grid.get(w - 2, y),
                _ => 0.5 * (grid.get(x + 1, y) - grid.get(x - 1, y)),
            };
            let gy = match y {
                0 => grid.get(x, 1) - grid.get(x, 0),
                _ if y == h - 1 => grid.get(x, h - 1) - grid.get(x, h - 2),
                _ => 0.5 * (grid.get(x, y + 1) - grid.get(x, y - 1)),
            };
            out.set(x, y, (gx, gy));
        }
    }
    out
}

/// Deformation gradient `I + grad(U)` per pixel; row i of the matrix is the
/// forward-difference gradient of component i.
pub fn jacobian(disp: &VectorGrid) -> MatrixGrid {
    let (w, h) = (disp.width(), disp.height());
    let mut out = MatrixGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (u1, u2) = disp.get(x, y);
            let (du1dx, du2dx) = if x + 1 < w {
                let (a, b) = disp.get(x + 1, y);
                (a - u1, b - u2)
            } else {
                (0.0, 0.0)
            };
            let (du1dy, du2dy) = if y + 1 < h {
                let (a, b) = disp.get(x, y + 1);
                (a - u1, b - u2)
            } else {
                (0.0, 0.0)
            };
            out.set(
                x,
                y,
                Mat2::new(1.0 + du1dx, du1dy, du2dx, 1.0 + du2dy),
            );
        }
    }
    out
}

#[inline]
fn backward_div_1d(p: &[f64], n: usize, stride: usize, base: usize, i: usize) -> f64 {
    // Exact negative adjoint of the forward difference used in `gradient`.
    let at = |k: usize| p[base + k * stride];
    if i == 0 {
        at(0)
    } else if i + 1 < n {
        at(i) - at(i - 1)
    } else {
        -at(n - 2)
    }
}

/// Row-wise divergence: component j is `div (m_j1, m_j2)` with the backward
/// differences adjoint to [`gradient`].
pub fn divergence(field: &MatrixGrid) -> VectorGrid {
    let (w, h) = (field.width(), field.height());
    let mut out = VectorGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let d1 = backward_div_1d(&field.m11, w, 1, y * w, x)
                + backward_div_1d(&field.m12, h, w, x, y);
            let d2 = backward_div_1d(&field.m21, w, 1, y * w, x)
                + backward_div_1d(&field.m22, h, w, x, y);
            out.set(x, y, (d1, d2));
        }
    }
    out
}

/// Displacement of the composition `(Id + outer) o (Id + inner)`, i.e.
/// `inner(x) + outer(x + inner(x))` with bilinear sampling of `outer`.
pub fn compose(outer: &VectorGrid, inner: &VectorGrid) -> Result<VectorGrid> {
    if !outer.same_shape(inner) {
        return Err(CoreError::DimensionMismatch {
            expected_w: outer.width(),
            expected_h: outer.height(),
            got_w: inner.width(),
            got_h: inner.height(),
        });
    }
    let (w, h) = (outer.width(), outer.height());
    // Sample each component plane of `outer` as a scalar grid.
    let o1 = ScalarGrid::from_vec(w, h, outer.u1.clone());
    let o2 = ScalarGrid::from_vec(w, h, outer.u2.clone());
    let mut out = VectorGrid::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (i1, i2) = inner.get(x, y);
            let p = [x as f64 + i1, y as f64 + i2];
            out.set(
                x,
                y,
                (i1 + bilinear_sample(&o1, p), i2 + bilinear_sample(&o2, p)),
            );
        }
    }
    Ok(out)
}

/// Approximate inverse of `Id + U`: the pairs `(x + U(x) -> -U(x))` are
/// scattered through the two-triangle split of every forward-mapped pixel
/// quad and linearly interpolated back onto the lattice. Pixels not covered
/// by any triangle inherit the nearest covered value (breadth-first in
/// row-major order); the boundary ring is pinned to zero, matching the
/// Dirichlet condition on the forward field.
pub fn invert_deformation(disp: &VectorGrid) -> Result<VectorGrid> {
    let (w, h) = (disp.width(), disp.height());
    let n = w * h;
    let mut val1 = vec![0.0f64; n];
    let mut val2 = vec![0.0f64; n];
    let mut covered = vec![false; n];

    // Forward-mapped corner positions.
    let pos = |x: usize, y: usize| -> [f64; 2] {
        let (u, v) = disp.get(x, y);
        [x as f64 + u, y as f64 + v]
    };

    let mut any = false;
    for cy in 0..h - 1 {
        for cx in 0..w - 1 {
            let corners = [
                (cx, cy),
                (cx + 1, cy),
                (cx, cy + 1),
                (cx + 1, cy + 1),
            ];
            // Two triangles per quad: (a, b, c) and (b, d, c).
            for tri in [[0usize, 1, 2], [1, 3, 2]] {
                let p: Vec<[f64; 2]> = tri.iter().map(|&k| pos(corners[k].0, corners[k].1)).collect();
                let vals: Vec<(f64, f64)> = tri
                    .iter()
                    .map(|&k| {
                        let (u, v) = disp.get(corners[k].0, corners[k].1);
                        (-u, -v)
                    })
                    .collect();
                let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                if area2.abs() < 1e-12 {
                    continue;
                }
                let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
                let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
                let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
                let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
                let x_lo = min_x.ceil().max(0.0) as usize;
                let x_hi = (max_x.floor() as isize).min(w as isize - 1);
                let y_lo = min_y.ceil().max(0.0) as usize;
                let y_hi = (max_y.floor() as isize).min(h as isize - 1);
                if x_hi < 0 || y_hi < 0 {
                    continue;
                }
                for qy in y_lo..=y_hi as usize {
                    for qx in x_lo..=x_hi as usize {
                        let rx = qx as f64 - p[0][0];
                        let ry = qy as f64 - p[0][1];
                        let b1 = ((p[2][1] - p[0][1]) * rx - (p[2][0] - p[0][0]) * ry) / area2;
                        let b2 = (-(p[1][1] - p[0][1]) * rx + (p[1][0] - p[0][0]) * ry) / area2;
                        let b0 = 1.0 - b1 - b2;
                        let eps = -1e-9;
                        if b0 >= eps && b1 >= eps && b2 >= eps {
                            let i = qy * w + qx;
                            val1[i] = b0 * vals[0].0 + b1 * vals[1].0 + b2 * vals[2].0;
                            val2[i] = b0 * vals[0].1 + b1 * vals[1].1 + b2 * vals[2].1;
                            covered[i] = true;
                            any = true;
                        }
                    }
                }
            }
        }
    }

    if !any {
        return Err(CoreError::DegenerateTriangulation);
    }

    // Nearest-covered fill for holes: multi-source BFS over the 4-neighborhood,
    // seeded in row-major order for determinism.
    let mut queue: std::collections::VecDeque<usize> =
        (0..n).filter(|&i| covered[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let push = |j: usize, q: &mut std::collections::VecDeque<usize>,
                        covered: &mut [bool], val1: &mut [f64], val2: &mut [f64]| {
            if !covered[j] {
                val1[j] = val1[i];
                val2[j] = val2[i];
                covered[j] = true;
                q.push_back(j);
            }
        };
        if x > 0 {
            push(i - 1, &mut queue, &mut covered, &mut val1, &mut val2);
        }
        if x + 1 < w {
            push(i + 1, &mut queue, &mut covered, &mut val1, &mut val2);
        }
        if y > 0 {
            push(i - w, &mut queue, &mut covered, &mut val1, &mut val2);
        }
        if y + 1 < h {
            push(i + w, &mut queue, &mut covered, &mut val1, &mut val2);
        }
    }

    let mut out = VectorGrid {
        width: w,
        height: h,
        u1: val1,
        u2: val2,
    };
    out.zero_boundary();
    Ok(out)
}
