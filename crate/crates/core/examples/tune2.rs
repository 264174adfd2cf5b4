// Scratch probe for the glyph run and the sequential comparison.
use atlasforge_core::atlas::{composition_residual, run_atlas, run_sequential};
use atlasforge_core::ogden::total_energy;
use atlasforge_core::synth::{disk_image, t_glyph, warped_variants};
use atlasforge_core::SolverConfig;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "glyph".into());

    if which == "glyph" {
        // Printed parameter row, verbatim, on 10 warped T glyphs.
        let base = t_glyph(64, 64);
        let images = warped_variants(&base, 10, 2.5);
        let cfg = SolverConfig::default();
        let t0 = std::time::Instant::now();
        let result = run_atlas(&images, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let state = &result.state;
        let first = state.trace.first().unwrap().energy.total();
        let last = state.trace.last().unwrap().energy.total();
        println!("time {dt:.1}s  energy {first:.6e} -> {last:.6e}  (decrease: {})", last < first);
        let mut worst_det = f64::INFINITY;
        let mut worst_v = 0.0f64;
        let mut worst_w = 0.0f64;
        for rec in &state.trace {
            worst_det = worst_det.min(rec.min_det_v);
            worst_v = worst_v.max(rec.max_abs_v);
            worst_w = worst_w.max(rec.max_abs_w);
        }
        println!("min det V {worst_det:.4}  max|V| {worst_v:.3} (alpha 10)  max|W| {worst_w:.3} (beta 100)");
        let mut worst_res = 0.0f64;
        for (u, inv) in state.disp.iter().zip(&result.inverse) {
            worst_res = worst_res.max(composition_residual(u, inv, 2).unwrap());
        }
        println!("worst composition residual {worst_res:.4} px  max|U| {:.3}", state.disp.iter().map(|u| u.max_abs()).fold(0.0f64, f64::max));
    } else if which == "pca" {
        use atlasforge_core::dmspline::{solve_spline, SplineConfig};
        use atlasforge_core::shapestats::{covariance, principal_modes};
        let mut images = Vec::new();
        for k in 0..5 {
            images.push(disk_image(64, 64, 26.0, 32.0 + (k as f64 - 2.0) * 0.5, 18.0));
        }
        for k in 0..5 {
            images.push(disk_image(64, 64, 38.0, 32.0 + (k as f64 - 2.0) * 0.5, 18.0));
        }
        let mut cfg = SolverConfig::default();
        cfg.ogden.a2 = 100.0;
        cfg.coupling.lambda_t = 65025.0;
        cfg.coupling.lambda_r = 65025.0;
        cfg.coupling.gamma1 = 65025.0;
        cfg.coupling.gamma2 = 2e4;
        cfg.coupling.step_c = 0.4 / 2e4;
        cfg.coupling.gamma_t = 500.0;
        cfg.coupling.gamma_r = 3000.0;
        cfg.coupling.gamma_t_tilde = 1e6;
        cfg.coupling.nb_iter = 250;
        let t0 = std::time::Instant::now();
        let result = run_atlas(&images, &cfg).unwrap();
        println!("atlas {:.1}s", t0.elapsed().as_secs_f64());
        let t0 = std::time::Instant::now();
        let scfg = SplineConfig::default();
        let smooth: Vec<_> = result
            .inverse
            .iter()
            .map(|u| solve_spline(u, &scfg).unwrap().smooth)
            .collect();
        println!("spline {:.1}s", t0.elapsed().as_secs_f64());
        let cov = covariance(&smooth).unwrap();
        let pca = principal_modes(&cov);
        println!("explained: {:?}", pca.explained.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        println!("first mode explains {:.3}", pca.explained[0]);
    } else {
        // Sequential vs joint, disk config.
        let images = vec![
            disk_image(64, 64, 26.0, 32.0, 18.0),
            disk_image(64, 64, 38.0, 32.0, 18.0),
        ];
        let mut cfg = SolverConfig::default();
        cfg.ogden.a2 = 100.0;
        cfg.coupling.lambda_t = 65025.0;
        cfg.coupling.lambda_r = 65025.0;
        cfg.coupling.gamma1 = 65025.0;
        cfg.coupling.gamma2 = 2e4;
        cfg.coupling.step_c = 0.4 / 2e4;
        cfg.coupling.gamma_t = 500.0;
        cfg.coupling.gamma_r = 3000.0;
        cfg.coupling.gamma_t_tilde = 1e6;
        cfg.coupling.nb_iter = 250;
        let joint = run_atlas(&images, &cfg).unwrap();
        let seq = run_sequential(&images, &cfg).unwrap();
        let e_joint = total_energy(&joint.state, &cfg).unwrap().total();
        let e_seq = total_energy(&seq.state, &cfg).unwrap().total();
        println!("joint {e_joint:.6e}  sequential {e_seq:.6e}  joint<=seq: {}", e_joint <= e_seq);

        // Same comparison on the glyph dataset with the printed row.
        let base = t_glyph(64, 64);
        let images = warped_variants(&base, 10, 2.5);
        let cfg = SolverConfig::default();
        let joint = run_atlas(&images, &cfg).unwrap();
        let seq = run_sequential(&images, &cfg).unwrap();
        let e_joint = total_energy(&joint.state, &cfg).unwrap().total();
        let e_seq = total_energy(&seq.state, &cfg).unwrap().total();
        println!("glyph: joint {e_joint:.6e}  sequential {e_seq:.6e}  joint<=seq: {}", e_joint <= e_seq);
    }
}
