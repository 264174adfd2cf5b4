//! Shared fixtures for the solver benchmarks.

use atlasforge_core::grid::{MatrixGrid, ScalarGrid, VectorGrid};
use atlasforge_core::Mat2;

/// Deterministic pseudo-random scalar grid in [0, 1).
pub fn noise_image(w: usize, h: usize, seed: u64) -> ScalarGrid {
    let mut state = seed | 1;
    ScalarGrid::from_fn(w, h, |_, _| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    })
}

/// Smooth displacement field with the given amplitude, zero boundary.
pub fn bench_field(n: usize, amp: f64) -> VectorGrid {
    atlasforge_core::synth::smooth_field(n, n, (amp, 0.7 * amp), (1.0, 2.0), (0.4, 1.1))
}

/// Near-identity matrix field with positive determinants.
pub fn bench_matrix_field(n: usize) -> MatrixGrid {
    MatrixGrid::from_fn(n, n, |x, y| {
        let s = ((x * 31 + y * 17) % 13) as f64 / 13.0 - 0.5;
        Mat2::new(1.0 + 0.2 * s, 0.1 * s, -0.08 * s, 1.0 - 0.15 * s)
    })
}
