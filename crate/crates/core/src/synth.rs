//! Synthetic desk-scale datasets: disks, T glyphs, and smoothly warped
//! variants. Shared by the tests, the benchmarks, and the demo-data
//! generator.

use crate::grid::{warp, ScalarGrid, VectorGrid};

/// Binary disk with soft (anti-aliased) 1-pixel rim.
pub fn disk_image(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> ScalarGrid {
    ScalarGrid::from_fn(w, h, |x, y| {
        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
        (r - d + 0.5).clamp(0.0, 1.0)
    })
}

/// Hard-thresholded disk mask (no rim), for Dice-style comparisons.
pub fn disk_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> ScalarGrid {
    ScalarGrid::from_fn(w, h, |x, y| {
        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
        if d2 <= r * r {
            1.0
        } else {
            0.0
        }
    })
}

/// A T glyph: a horizontal bar across the top third and a vertical stem.
pub fn t_glyph(w: usize, h: usize) -> ScalarGrid {
    let bar_y0 = h as f64 * 0.2;
    let bar_y1 = h as f64 * 0.35;
    let bar_x0 = w as f64 * 0.2;
    let bar_x1 = w as f64 * 0.8;
    let stem_x0 = w as f64 * 0.42;
    let stem_x1 = w as f64 * 0.58;
    let stem_y1 = h as f64 * 0.8;
    ScalarGrid::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let in_bar = xf >= bar_x0 && xf <= bar_x1 && yf >= bar_y0 && yf <= bar_y1;
        let in_stem = xf >= stem_x0 && xf <= stem_x1 && yf >= bar_y0 && yf <= stem_y1;
        if in_bar || in_stem {
            1.0
        } else {
            0.0
        }
    })
}

/// Smooth displacement field, zero on the boundary: a superposition of two
/// sinusoidal bumps with the given amplitudes and phases.
pub fn smooth_field(
    w: usize,
    h: usize,
    amp: (f64, f64),
    freq: (f64, f64),
    phase: (f64, f64),
) -> VectorGrid {
    let taper = |t: f64, n: usize| {
        if t <= 0.0 || t >= n as f64 - 1.0 {
            0.0
        } else {
            ((std::f64::consts::PI * t / (n as f64 - 1.0)).sin()).powi(2)
        }
    };
    VectorGrid::from_fn(w, h, |x, y| {
        let a = taper(x as f64, w) * taper(y as f64, h);
        let u1 = amp.0 * a * (freq.0 * y as f64 / h as f64 * std::f64::consts::TAU + phase.0).sin();
        let u2 = amp.1 * a * (freq.1 * x as f64 / w as f64 * std::f64::consts::TAU + phase.1).cos();
        (u1, u2)
    })
}

/// Deterministic family of warped variants of a base image. Variant k warps
/// the base by a smooth field whose amplitude/frequency/phase are derived
/// from k; variant 0 is close to the base itself.
pub fn warped_variants(base: &ScalarGrid, count: usize, max_amp: f64) -> Vec<ScalarGrid> {
    let (w, h) = (base.width(), base.height());
    (0..count)
        .map(|k| {
            let kf = k as f64;
            let amp = max_amp * (0.3 + 0.7 * (kf * 0.37).fract());
            let field = smooth_field(
                w,
                h,
                (amp * (1.0 - 0.4 * (kf * 0.61).fract()), amp * (0.5 + 0.5 * (kf * 0.23).fract())),
                (1.0 + (k % 3) as f64 * 0.5, 1.0 + (k % 2) as f64),
                (kf * 1.7, kf * 0.9),
            );
            warp(base, &field).expect("same lattice")
        })
        .collect()
}

/// Dice overlap of two binary masks (values thresholded at 0.5).
pub fn dice(a: &ScalarGrid, b: &ScalarGrid) -> f64 {
    let mut inter = 0usize;
    let mut total = 0usize;
    for (x, y) in a.data().iter().zip(b.data()) {
        let ax = *x > 0.5;
        let by = *y > 0.5;
        if ax && by {
            inter += 1;
        }
        if ax {
            total += 1;
        }
        if by {
            total += 1;
        }
    }
    if total == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / total as f64
}
