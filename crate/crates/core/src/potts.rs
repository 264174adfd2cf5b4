//! Potts (piecewise-constant Mumford-Shah) solvers with per-pixel weights.
//!
//! The 1D problem
//!
//!   min_u  gamma * #jumps(u) + sum_i w_i (u_i - f_i)^2
//!
//! is solved exactly by the classical jump-point dynamic program with
//! prefix-sum segment costs (O(n^2) per line). Segment values are the
//! weighted means of their data, and ties between equal-energy partitions
//! break toward fewer jumps.
//!
//! The 2D problem with an anisotropic (4-connected) L0 gradient is handled
//! by an ADMM splitting into one horizontal and one vertical copy of the
//! field. Each half-sweep solves independent 1D lines; the quadratic
//! coupling between the copies grows geometrically until they agree in
//! max-norm. The agreed partition is then re-labelled with exact weighted
//! means so the output is genuinely piecewise constant.

use crate::error::{CoreError, Result};
use crate::grid::ScalarGrid;
use rayon::prelude::*;

/// Schedule for the 2D ADMM splitting.
#[derive(Debug, Clone)]
pub struct AdmmSchedule {
    /// Initial coupling as a fraction of gamma (mu_0 = mu_init_factor * gamma).
    pub mu_init_factor: f64,
    /// Geometric growth of the coupling per sweep.
    pub growth: f64,
    /// Sweep budget before giving up.
    pub max_sweeps: usize,
    /// Max-norm agreement tolerance between the two split copies.
    pub tol: f64,
}

impl Default for AdmmSchedule {
    fn default() -> Self {
        AdmmSchedule {
            mu_init_factor: 1e-3,
            growth: 2.0,
            max_sweeps: 50,
            tol: 1e-6,
        }
    }
}

/// Jump penalty plus the splitting schedule; the bundle the atlas stage
/// carries around for its three segmentation sub-problems.
#[derive(Debug, Clone)]
pub struct PottsParams {
    pub gamma: f64,
    pub schedule: AdmmSchedule,
}

impl PottsParams {
    pub fn new(gamma: f64) -> Self {
        PottsParams {
            gamma,
            schedule: AdmmSchedule::default(),
        }
    }
}

/// Output of [`potts_2d`]; `converged` is false when the sweep budget ran
/// out before the split copies agreed, in which case `grid` is the best
/// (final) iterate.
#[derive(Debug, Clone)]
pub struct PottsOutcome {
    pub grid: ScalarGrid,
    pub converged: bool,
    pub sweeps: usize,
}

/// Exact weighted 1D Potts by dynamic programming.
///
/// Returns the minimizer of `gamma * #jumps + sum w_i (u_i - f_i)^2`; each
/// output segment carries the weighted mean of its data (0 for segments of
/// zero total weight). Errors when every weight is zero.
pub fn potts_1d(data: &[f64], weights: &[f64], gamma: f64) -> Result<Vec<f64>> {
    assert_eq!(data.len(), weights.len(), "data/weights length mismatch");
    let n = data.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(CoreError::AllZeroWeights);
    }
    debug_assert!(weights.iter().all(|&w| w >= 0.0), "negative weight");

    // Prefix sums of w, w*f, w*f^2 for O(1) segment costs.
    let mut sw = vec![0.0; n + 1];
    let mut swf = vec![0.0; n + 1];
    let mut swf2 = vec![0.0; n + 1];
    for i in 0..n {
        sw[i + 1] = sw[i] + weights[i];
        swf[i + 1] = swf[i] + weights[i] * data[i];
        swf2[i + 1] = swf2[i] + weights[i] * data[i] * data[i];
    }
    // Weighted SSD of segment [l, r] about its weighted mean.
    let seg_cost = |l: usize, r: usize| -> f64 {
        let w = sw[r + 1] - sw[l];
        if w <= 0.0 {
            return 0.0;
        }
        let s = swf[r + 1] - swf[l];
        let q = swf2[r + 1] - swf2[l];
        (q - s * s / w).max(0.0)
    };
    // Segment values are summed directly (not by prefix differences) so
    // the weighted means carry no cancellation dust.
    let seg_mean = |l: usize, r: usize| -> f64 {
        let mut w = 0.0;
        let mut s = 0.0;
        for i in l..=r {
            w += weights[i];
            s += weights[i] * data[i];
        }
        if w <= 0.0 {
            0.0
        } else {
            s / w
        }
    };

    // best[r]: optimal energy for the prefix ending at r (inclusive);
    // jumps[r]: jump count of that optimum; last[r]: start of its last segment.
    let mut best = vec![0.0f64; n];
    let mut jumps = vec![0usize; n];
    let mut last = vec![0usize; n];
    for r in 0..n {
        let mut b = seg_cost(0, r);
        let mut j = 0usize;
        let mut l_star = 0usize;
        for l in 1..=r {
            let cand = best[l - 1] + gamma + seg_cost(l, r);
            let cand_jumps = jumps[l - 1] + 1;
            if cand < b || (cand == b && cand_jumps < j) {
                b = cand;
                j = cand_jumps;
                l_star = l;
            }
        }
        best[r] = b;
        jumps[r] = j;
        last[r] = l_star;
    }

    // Backtrack segment boundaries and fill in the weighted means.
    let mut out = vec![0.0; n];
    let mut r = n - 1;
    loop {
        let l = last[r];
        let m = seg_mean(l, r);
        out[l..=r].fill(m);
        if l == 0 {
            break;
        }
        r = l - 1;
    }
    Ok(out)
}

/// Potts energy of `u` against data `f` with weights `w`: jumps are counted
/// over horizontal and vertical neighbor pairs, with equality tested at
/// tolerance 1e-9.
pub fn potts_energy(u: &ScalarGrid, f: &ScalarGrid, w: &ScalarGrid, gamma: f64) -> f64 {
    debug_assert!(u.same_shape(f) && u.same_shape(w));
    gamma * jump_count(u) as f64 + weighted_ssd(u, f, w)
}

/// Number of 4-neighbor pairs whose values differ by more than 1e-9.
pub fn jump_count(u: &ScalarGrid) -> usize {
    let (wd, ht) = (u.width(), u.height());
    let mut count = 0usize;
    for y in 0..ht {
        for x in 0..wd {
            let v = u.get(x, y);
            if x + 1 < wd && (v - u.get(x + 1, y)).abs() > 1e-9 {
                count += 1;
            }
            if y + 1 < ht && (v - u.get(x, y + 1)).abs() > 1e-9 {
                count += 1;
            }
        }
    }
    count
}

fn weighted_ssd(u: &ScalarGrid, f: &ScalarGrid, w: &ScalarGrid) -> f64 {
    u.data()
        .iter()
        .zip(f.data())
        .zip(w.data())
        .map(|((u, f), w)| w * (u - f) * (u - f))
        .sum()
}

/// Approximate 2D Potts solver.
///
/// Minimizes `gamma * ||grad u||_L0 + sum w(x) (u(x) - f(x))^2` over the
/// 4-connected lattice by the two-direction ADMM splitting described in the
/// module docs. Weights must be nonnegative and not all zero.
pub fn potts_2d(
    image: &ScalarGrid,
    weights: &ScalarGrid,
    gamma: f64,
    schedule: &AdmmSchedule,
) -> Result<PottsOutcome> {
    if !image.same_shape(weights) {
        return Err(CoreError::DimensionMismatch {
            expected_w: image.width(),
            expected_h: image.height(),
            got_w: weights.width(),
            got_h: weights.height(),
        });
    }
    if weights.data().iter().all(|&w| w == 0.0) {
        return Err(CoreError::AllZeroWeights);
    }
    if gamma == 0.0 {
        // No jump penalty: the data term alone is minimized by the data.
        return Ok(PottsOutcome {
            grid: image.clone(),
            converged: true,
            sweeps: 0,
        });
    }

    let (wd, ht) = (image.width(), image.height());
    let n = wd * ht;
    let mut x = image.data().to_vec();
    let mut y = image.data().to_vec();
    let mut dual = vec![0.0f64; n];
    let f = image.data();
    let w = weights.data();

    let mut mu = schedule.mu_init_factor * gamma;
    let mut converged = false;
    let mut sweeps = 0usize;

    while sweeps < schedule.max_sweeps {
        sweeps += 1;

        // Horizontal half-sweep: rows of x, pulled toward y - dual/mu.
        let rows: Vec<Vec<f64>> = (0..ht)
            .into_par_iter()
            .map(|r| {
                let base = r * wd;
                let mut line_f = vec![0.0; wd];
                let mut line_w = vec![0.0; wd];
                for i in 0..wd {
                    let wi = 0.5 * w[base + i];
                    let ci = 0.5 * mu;
                    let target = y[base + i] - dual[base + i] / mu;
                    line_w[i] = wi + ci;
                    line_f[i] = if line_w[i] > 0.0 {
                        (wi * f[base + i] + ci * target) / line_w[i]
                    } else {
                        0.0
                    };
                }
                potts_1d(&line_f, &line_w, gamma).expect("row weights include the ADMM coupling")
            })
            .collect();
        for (r, row) in rows.into_iter().enumerate() {
            x[r * wd..(r + 1) * wd].copy_from_slice(&row);
        }

        // Vertical half-sweep: columns of y, pulled toward x + dual/mu.
        let cols: Vec<Vec<f64>> = (0..wd)
            .into_par_iter()
            .map(|c| {
                let mut line_f = vec![0.0; ht];
                let mut line_w = vec![0.0; ht];
                for i in 0..ht {
                    let idx = i * wd + c;
                    let wi = 0.5 * w[idx];
                    let ci = 0.5 * mu;
                    let target = x[idx] + dual[idx] / mu;
                    line_w[i] = wi + ci;
                    line_f[i] = if line_w[i] > 0.0 {
                        (wi * f[idx] + ci * target) / line_w[i]
                    } else {
                        0.0
                    };
                }
                potts_1d(&line_f, &line_w, gamma).expect("column weights include the ADMM coupling")
            })
            .collect();
        for (c, col) in cols.into_iter().enumerate() {
            for i in 0..ht {
                y[i * wd + c] = col[i];
            }
        }

        let mut gap = 0.0f64;
        for i in 0..n {
            dual[i] += mu * (x[i] - y[i]);
            gap = gap.max((x[i] - y[i]).abs());
        }
        if gap <= schedule.tol {
            converged = true;
            break;
        }
        mu *= schedule.growth;
    }

    let grid = consensus_relabel(&ScalarGrid::from_vec(wd, ht, y), image, weights, schedule.tol);
    Ok(PottsOutcome {
        grid,
        converged,
        sweeps,
    })
}

/// Snap a nearly piecewise-constant field to an exactly piecewise-constant
/// one: connected components of near-equal values (4-connected, tolerance
/// `tol`) are re-labelled with the weighted mean of the original data, the
/// optimal value for the induced partition.
fn consensus_relabel(u: &ScalarGrid, f: &ScalarGrid, w: &ScalarGrid, tol: f64) -> ScalarGrid {
    let (wd, ht) = (u.width(), u.height());
    let n = wd * ht;
    let mut label = vec![usize::MAX; n];
    let mut mean_num: Vec<f64> = Vec::new();
    let mut mean_den: Vec<f64> = Vec::new();
    let mut stack = Vec::new();

    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = mean_num.len();
        mean_num.push(0.0);
        mean_den.push(0.0);
        stack.push(start);
        label[start] = id;
        while let Some(i) = stack.pop() {
            mean_num[id] += w.data()[i] * f.data()[i];
            mean_den[id] += w.data()[i];
            let (x, y) = (i % wd, i / wd);
            let visit = |j: usize, label: &mut [usize], stack: &mut Vec<usize>| {
                if label[j] == usize::MAX && (u.data()[i] - u.data()[j]).abs() <= tol {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1, &mut label, &mut stack);
            }
            if x + 1 < wd {
                visit(i + 1, &mut label, &mut stack);
            }
            if y > 0 {
                visit(i - wd, &mut label, &mut stack);
            }
            if y + 1 < ht {
                visit(i + wd, &mut label, &mut stack);
            }
        }
    }

    let values: Vec<f64> = mean_num
        .iter()
        .zip(&mean_den)
        .map(|(&s, &d)| if d > 0.0 { s / d } else { 0.0 })
        .collect();
    ScalarGrid::from_vec(wd, ht, label.into_iter().map(|l| values[l]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Energy of a 1D labelling, evaluated directly (independent of the
    /// prefix-sum arithmetic inside the solver).
    pub(crate) fn energy_1d(u: &[f64], f: &[f64], w: &[f64], gamma: f64) -> f64 {
        let jumps = u.windows(2).filter(|p| (p[0] - p[1]).abs() > 1e-9).count();
        let ssd: f64 = u
            .iter()
            .zip(f)
            .zip(w)
            .map(|((u, f), w)| w * (u - f) * (u - f))
            .sum();
        gamma * jumps as f64 + ssd
    }

    /// Exhaustive optimum over all 2^(n-1) partitions; segment values are
    /// computed as direct weighted means.
    pub(crate) fn brute_force_1d(f: &[f64], w: &[f64], gamma: f64) -> (f64, Vec<f64>) {
        let n = f.len();
        let mut best = f64::INFINITY;
        let mut best_u = vec![0.0; n];
        for mask in 0u32..(1 << (n - 1)) {
            let mut u = vec![0.0; n];
            let mut l = 0;
            for r in 0..n {
                let boundary = r + 1 == n || (mask >> r) & 1 == 1;
                if boundary {
                    let ws: f64 = w[l..=r].iter().sum();
                    let mean = if ws > 0.0 {
                        w[l..=r]
                            .iter()
                            .zip(&f[l..=r])
                            .map(|(w, f)| w * f)
                            .sum::<f64>()
                            / ws
                    } else {
                        0.0
                    };
                    u[l..=r].fill(mean);
                    l = r + 1;
                }
            }
            let e = energy_1d(&u, f, w, gamma);
            if e < best {
                best = e;
                best_u = u;
            }
        }
        (best, best_u)
    }

    #[test]
    fn zero_gamma_returns_data() {
        let f = [0.3, 0.9, 0.1, 0.5];
        let w = [1.0, 1.0, 1.0, 1.0];
        let u = potts_1d(&f, &w, 0.0).unwrap();
        assert_eq!(u, f);
        assert_eq!(energy_1d(&u, &f, &w, 0.0), 0.0);
    }

    #[test]
    fn huge_gamma_collapses_to_weighted_mean() {
        let f = [0.0, 1.0, 2.0, 7.0];
        let w = [1.0, 2.0, 1.0, 4.0];
        let u = potts_1d(&f, &w, 1e9).unwrap();
        let mean = (0.0 + 2.0 + 2.0 + 28.0) / 8.0;
        for v in u {
            assert!((v - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn two_step_signal() {
        // [0,0,1,1], unit weights, gamma = 0.3 -> two segments, energy 0.3.
        let f = [0.0, 0.0, 1.0, 1.0];
        let w = [1.0; 4];
        let u = potts_1d(&f, &w, 0.3).unwrap();
        assert_eq!(u, f);
        assert!((energy_1d(&u, &f, &w, 0.3) - 0.3).abs() < 1e-15);
        let (brute, _) = brute_force_1d(&f, &w, 0.3);
        assert!((brute - 0.3).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..300 {
            let n = 2 + (trial % 7);
            let f: Vec<f64> = (0..n).map(|_| rnd()).collect();
            let w: Vec<f64> = (0..n).map(|_| if rnd() < 0.15 { 0.0 } else { rnd() }).collect();
            if w.iter().all(|&x| x == 0.0) {
                continue;
            }
            let gamma = 0.02 + rnd() * 0.5;
            let u = potts_1d(&f, &w, gamma).unwrap();
            let e = energy_1d(&u, &f, &w, gamma);
            let (brute, _) = brute_force_1d(&f, &w, gamma);
            assert!(
                e <= brute + 1e-12,
                "DP energy {e} worse than brute force {brute} on {f:?} w={w:?} gamma={gamma}"
            );
        }
    }

    #[test]
    fn segment_values_are_weighted_means() {
        let f = [0.1, 0.2, 0.9, 1.1, 1.0];
        let w = [2.0, 1.0, 1.0, 3.0, 1.0];
        let u = potts_1d(&f, &w, 0.25).unwrap();
        // Recover the segmentation and re-check every plateau value.
        let mut l = 0;
        for r in 0..=u.len() {
            if r == u.len() || (u[r] - u[l]).abs() > 1e-9 {
                let ws: f64 = w[l..r].iter().sum();
                let mean: f64 = w[l..r].iter().zip(&f[l..r]).map(|(w, f)| w * f).sum::<f64>() / ws;
                assert!((u[l] - mean).abs() < 1e-12);
                l = r;
            }
        }
    }

    #[test]
    fn all_zero_weights_errors() {
        assert!(matches!(
            potts_1d(&[1.0, 2.0], &[0.0, 0.0], 0.5),
            Err(CoreError::AllZeroWeights)
        ));
    }

    #[test]
    fn ties_break_toward_fewer_jumps() {
        // Both "no jump at mean" and "two exact segments" cost exactly
        // gamma = the SSD of the merged segment; prefer the single segment.
        let f = [0.0, 1.0];
        let w = [1.0, 1.0];
        let u = potts_1d(&f, &w, 0.5).unwrap();
        assert_eq!(u, [0.5, 0.5], "tie must collapse to one segment");
    }

    #[test]
    fn potts_2d_constant_image_is_fixed_point() {
        let img = ScalarGrid::constant(8, 8, 0.4);
        let w = ScalarGrid::constant(8, 8, 1.0);
        let out = potts_2d(&img, &w, 0.7, &AdmmSchedule::default()).unwrap();
        assert!(out.converged);
        for (a, b) in out.grid.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(jump_count(&out.grid), 0);
    }

    #[test]
    fn potts_2d_zero_gamma_returns_input() {
        let img = ScalarGrid::from_fn(6, 6, |x, y| ((x * y) as f64).sin());
        let w = ScalarGrid::constant(6, 6, 1.0);
        let out = potts_2d(&img, &w, 0.0, &AdmmSchedule::default()).unwrap();
        assert_eq!(out.grid, img);
    }

    #[test]
    fn potts_2d_two_block_image() {
        let img = ScalarGrid::from_fn(8, 8, |x, _| if x < 4 { 0.0 } else { 1.0 });
        let w = ScalarGrid::constant(8, 8, 1.0);
        let gamma = 0.05;
        let out = potts_2d(&img, &w, gamma, &AdmmSchedule::default()).unwrap();
        let e_out = potts_energy(&out.grid, &img, &w, gamma);
        // Three explicit candidates: the input itself, the best constant,
        // and the two-region partition (which equals the input here).
        let e_input = potts_energy(&img, &img, &w, gamma);
        let best_const = ScalarGrid::constant(8, 8, 0.5);
        let e_const = potts_energy(&best_const, &img, &w, gamma);
        assert!(e_out <= e_input.min(e_const) + 1e-12);
        assert!((e_out - 8.0 * gamma).abs() < 1e-12, "two-region energy");
        assert_eq!(out.grid, img);
    }

    #[test]
    fn potts_2d_energy_no_worse_than_data() {
        let mut state = 0x2545f4914f6cdd1du64;
        let mut rnd = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let img = ScalarGrid::from_fn(4, 4, |_, _| rnd());
            let w = ScalarGrid::from_fn(4, 4, |_, _| 0.2 + rnd());
            let gamma = 0.05 + 0.3 * rnd();
            let out = potts_2d(&img, &w, gamma, &AdmmSchedule::default()).unwrap();
            let e_out = potts_energy(&out.grid, &img, &w, gamma);
            let e_in = potts_energy(&img, &img, &w, gamma);
            assert!(
                e_out <= e_in + 1e-12,
                "output energy {e_out} exceeds data energy {e_in}"
            );
        }
    }

    #[test]
    fn potts_2d_output_is_piecewise_constant() {
        let img = ScalarGrid::from_fn(12, 12, |x, y| {
            if (x as i32 - 6).pow(2) + (y as i32 - 6).pow(2) < 12 {
                0.9
            } else {
                0.1
            }
        });
        let w = ScalarGrid::constant(12, 12, 1.0);
        let out = potts_2d(&img, &w, 0.02, &AdmmSchedule::default()).unwrap();
        let jumps = jump_count(&out.grid);
        let total_pairs = 2 * 12 * 11;
        assert!(jumps < total_pairs, "output must have plateaus");
        assert!(jumps <= jump_count(&img));
    }

    #[test]
    fn potts_energy_examples() {
        let u = ScalarGrid::constant(3, 3, 0.5);
        assert_eq!(potts_energy(&u, &u, &ScalarGrid::constant(3, 3, 1.0), 2.0), 0.0);

        // One jump per row of a two-column step image, gamma = 2.
        let v = ScalarGrid::from_fn(2, 2, |x, _| x as f64);
        let f = v.clone();
        let w = ScalarGrid::constant(2, 2, 1.0);
        assert_eq!(potts_energy(&v, &f, &w, 2.0), 4.0);
    }
}
