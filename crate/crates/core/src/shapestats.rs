//! Geometry-driven PCA on displacement fields.
//!
//! The covariance is the Gram matrix of the mean-centered fields under the
//! L2 inner product (sum over pixels of both component products, unit pixel
//! area). Its symmetric eigendecomposition is computed with cyclic Jacobi
//! rotations; the modes are the corresponding combinations of the centered
//! fields, normalized to unit L2 norm. Modes of variation are visualized by
//! warping the atlas along `scale * c * mode`.

use crate::error::{CoreError, Result};
use crate::grid::{warp, ScalarGrid, VectorGrid};

/// Centered fields with their Gram matrix.
#[derive(Debug, Clone)]
pub struct Covariance {
    /// M x M symmetric Gram matrix, row-major.
    pub matrix: Vec<f64>,
    pub size: usize,
    pub centered: Vec<VectorGrid>,
    pub mean: VectorGrid,
}

/// Eigendecomposition of the covariance plus the unit-norm modes.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// All M eigenvalues, descending, tiny negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
    /// Explained-variance ratios (sum to 1 when any eigenvalue > 0).
    pub explained: Vec<f64>,
    /// Unit-L2-norm modes for the strictly positive eigenvalues.
    pub modes: Vec<VectorGrid>,
    pub mean: VectorGrid,
}

/// L2 Gram matrix of the mean-centered fields.
pub fn covariance(fields: &[VectorGrid]) -> Result<Covariance> {
    let m = fields.len();
    if m < 2 {
        return Err(CoreError::Config(format!(
            "PCA needs at least 2 fields, got {m}"
        )));
    }
    let (w, h) = (fields[0].width(), fields[0].height());
    for f in fields.iter().skip(1) {
        if f.width() != w || f.height() != h {
            return Err(CoreError::DimensionMismatch {
                expected_w: w,
                expected_h: h,
                got_w: f.width(),
                got_h: f.height(),
            });
        }
    }

    let mut mean = VectorGrid::zeros(w, h);
    for f in fields {
        mean = mean.axpy(1.0, f);
    }
    mean = mean.scale(1.0 / m as f64);

    let centered: Vec<VectorGrid> = fields.iter().map(|f| f.axpy(-1.0, &mean)).collect();

    let mut matrix = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let v = centered[i].dot(&centered[j]);
            matrix[i * m + j] = v;
            matrix[j * m + i] = v;
        }
    }
    Ok(Covariance {
        matrix,
        size: m,
        centered,
        mean,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * frob.max(1.0);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if (2.0 * off).sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

/// PCA on the centered fields: symmetric eigendecomposition of the Gram
/// matrix, eigenvalues descending, eigenvector signs fixed by making the
/// first non-negligible component positive.
pub fn principal_modes(cov: &Covariance) -> PcaResult {
    let m = cov.size;
    let (eig, vecs) = jacobi_eigen(cov.matrix.clone(), m);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());

    let trace: f64 = eig.iter().sum();
    let pos_tol = 1e-12 * trace.abs().max(1.0);

    let mut eigenvalues = Vec::with_capacity(m);
    let mut modes = Vec::new();
    for &idx in &order {
        let lam = if eig[idx] < 0.0 && eig[idx] > -pos_tol {
            0.0
        } else {
            eig[idx].max(0.0)
        };
        eigenvalues.push(lam);

        if lam > pos_tol {
            // Deterministic sign: first non-negligible eigenvector entry
            // positive.
            let mut col: Vec<f64> = (0..m).map(|k| vecs[k * m + idx]).collect();
            if let Some(first) = col.iter().find(|e| e.abs() > 1e-12) {
                if *first < 0.0 {
                    col.iter_mut().for_each(|e| *e = -*e);
                }
            }
            let mut mode = VectorGrid::zeros(cov.mean.width(), cov.mean.height());
            for (k, field) in cov.centered.iter().enumerate() {
                mode = mode.axpy(col[k], field);
            }
            let norm = mode.norm_l2();
            if norm > 0.0 {
                modes.push(mode.scale(1.0 / norm));
            }
        }
    }

    let total: f64 = eigenvalues.iter().sum();
    let explained = if total > 0.0 {
        eigenvalues.iter().map(|l| l / total).collect()
    } else {
        vec![0.0; m]
    };

    PcaResult {
        eigenvalues,
        explained,
        modes,
        mean: cov.mean.clone(),
    }
}

/// Warp the atlas along `scale * c * mode`.
pub fn synthesize_mode(
    theta_r: &ScalarGrid,
    mode: &VectorGrid,
    c: f64,
    scale: f64,
) -> Result<ScalarGrid> {
    warp(theta_r, &mode.scale(scale * c))
}
