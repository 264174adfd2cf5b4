// Scratch tuning probe (not part of the deliverable).
use atlasforge_core::atlas::{composition_residual, run_atlas};
use atlasforge_core::synth::{dice, disk_image, disk_mask};
use atlasforge_core::{ScalarGrid, SolverConfig};

fn centroid(g: &ScalarGrid) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut n = 0.0f64;
    for y in 0..g.height() {
        for x in 0..g.width() {
            if g.get(x, y) > 0.5 {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    (sx / n.max(1.0), sy / n.max(1.0))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let data_scale: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e3);
    let nb_iter: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(150);
    let dt: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let gamma2: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8e4);
    let gamma_scale: f64 = args.get(13).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let step_scale: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.4);

    let n = 64;
    let r: f64 = std::env::args().nth(12).map(|s| s.parse().unwrap()).unwrap_or(10.0);
    let shift = 6.0;
    let images = vec![
        disk_image(n, n, 32.0 - shift, 32.0, r),
        disk_image(n, n, 32.0 + shift, 32.0, r),
    ];

    let mut cfg = SolverConfig::default();
    cfg.ogden.a1 = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    cfg.ogden.a2 = args.get(10).map(|s| s.parse().unwrap()).unwrap_or(5e3);
    cfg.ogden.a3 = args.get(11).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    cfg.coupling.lambda_t = data_scale;
    cfg.coupling.lambda_r = data_scale;
    cfg.coupling.gamma1 = data_scale;
    cfg.coupling.gamma1 *= gamma_scale;
    cfg.coupling.gamma2 = gamma2 * gamma_scale;
    cfg.coupling.gamma3 *= gamma_scale;
    cfg.coupling.dt = dt;
    cfg.coupling.nb_iter = nb_iter;
    cfg.coupling.step_c = step_scale / (gamma2 * gamma_scale);
    // Potts jump penalties live on the data-term scale.
    cfg.coupling.beta = args.get(14).map(|s| s.parse().unwrap()).unwrap_or(100.0);
    cfg.coupling.gamma_t = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.5 * data_scale / 65.0);
    cfg.coupling.gamma_r = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(3.0 * data_scale / 65.0);
    cfg.coupling.gamma_t_tilde = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0.5 * data_scale / 65.0);

    let t0 = std::time::Instant::now();
    let result = run_atlas(&images, &cfg).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    let state = &result.state;
    let first = state.trace.first().unwrap().energy.total();
    let last = state.trace.last().unwrap().energy.total();
    let mid = disk_mask(n, n, 32.0, 32.0, r);
    let thresh = ScalarGrid::from_fn(n, n, |x, y| {
        if state.theta_r.get(x, y) > 0.5 {
            1.0
        } else {
            0.0
        }
    });
    let d = dice(&thresh, &mid);
    let (cx, cy) = centroid(&state.theta_r);

    println!("time {elapsed:.1}s  energy {first:.3e} -> {last:.3e}");
    println!("dice {d:.4}  atlas centroid ({cx:.2}, {cy:.2})");
    for th in [0.25, 0.35, 0.5, 0.65] {
        let tg = ScalarGrid::from_fn(n, n, |x, y| if state.theta_r.get(x, y) > th { 1.0 } else { 0.0 });
        print!("  thr {th}: dice {:.4}", dice(&tg, &mid));
    }
    println!();
    let mut vals: Vec<f64> = state.theta_r.data().to_vec();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    println!("  plateaus: {:?}", vals.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
    for (i, u) in state.disp.iter().enumerate() {
        let res = composition_residual(u, &result.inverse[i], 2).unwrap();
        let warped = atlasforge_core::grid::warp(&images[i], u).unwrap();
        let wt = ScalarGrid::from_fn(n, n, |x, y| if warped.get(x, y) > 0.5 { 1.0 } else { 0.0 });
        println!(
            "  img {i}: max|U| {:.3}  comp residual {:.3}  warped-dice {:.4}",
            u.max_abs(),
            res,
            dice(&wt, &mid)
        );
    }
    let rec = state.trace.last().unwrap();
    println!(
        "min det V {:.4}  max|V| {:.3}  max|W| {:.3}  potts warnings {}",
        rec.min_det_v, rec.max_abs_v, rec.max_abs_w, result.potts_warnings
    );
    // Coupling residuals for the trend check.
    use atlasforge_core::grid::jacobian;
    let mut v_res = 0.0;
    let mut w_res = 0.0;
    for i in 0..2 {
        v_res += state.v[i].frobenius_distance_sq(&jacobian(&state.disp[i]));
        let mut acc = 0.0;
        for j in 0..state.v[i].len() {
            let inv = state.v[i].at(j).inverse().unwrap();
            acc += state.w[i].at(j).sub(&inv).norm_sq();
        }
        w_res += acc;
    }
    let mut t_res = 0.0;
    for i in 0..2 {
        let warped = atlasforge_core::grid::warp(&state.theta_t[i], &state.disp[i]).unwrap();
        for j in 0..warped.data().len() {
            let d = state.theta_tt[i].data()[j] - (warped.data()[j] - state.theta_r.data()[j]);
            t_res += d * d;
        }
    }
    println!(
        "residual ||V-grad phi|| {:.4e}  ||W-V^-1|| {:.4e}  ||tt-mismatch|| {:.4e}",
        v_res.sqrt(), w_res.sqrt(), t_res.sqrt()
    );
    // ASCII view: atlas plateaus (left), thresholded vs midpoint overlay (right).
    for y in (0..n).step_by(2) {
        let mut row1 = String::new();
        let mut row2 = String::new();
        for x in (0..n).step_by(1) {
            let v = state.theta_r.get(x, y);
            row1.push(if v > 0.75 { '#' } else if v > 0.5 { '+' } else if v > 0.25 { '.' } else { ' ' });
            let t = v > 0.5;
            let m = mid.get(x, y) > 0.5;
            row2.push(match (t, m) { (true, true) => '#', (true, false) => 'o', (false, true) => 'x', _ => ' ' });
        }
        println!("{row1} | {row2}");
    }

}
