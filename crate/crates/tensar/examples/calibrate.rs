use std::time::Instant;
use rand::SeedableRng;
use tensar::als::{als_fit, AlsConfig, EstimVariant};
use tensar::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("q8");
    match mode {
        "q8" => {
            // q=8 fit quality vs restarts/tol
            let spec = DgpSpec {
                dims: vec![8, 8, 8], p: 2, r_y: 3, r_x: 2,
                error_kind: ErrorKind::StdNormal, target_coef_norm: 0.9,
                sparse_support: None, alpha_l: None, rng_seed: 1, burn_in: 200,
            };
            for rep in 0..3u64 {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
                rng.set_stream(rep);
                let (truth, _) = gen_stationary_dgp(&spec, &mut rng).unwrap();
                let series = simulate_series(&spec, &truth, None, 1000, &mut rng).unwrap();
                for (restarts, tol, iters) in [(2, 1e-6, 100), (2, 1e-8, 300), (5, 1e-8, 300)] {
                    let als = AlsConfig { num_restarts: restarts, max_iters: iters, rel_tol: tol, rng_seed: 3 };
                    let t0 = Instant::now();
                    let (fit, rep_r) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
                    let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
                    println!("rep={rep} restarts={restarts} tol={tol:.0e}: err={err:.4} cycles={} conv={} time={:?}",
                        rep_r.iterations, rep_r.converged, t0.elapsed());
                }
            }
        }
        "q5check" => {
            // same diagnostics at q=5 for reference
            let spec = DgpSpec {
                dims: vec![5, 5, 5], p: 2, r_y: 3, r_x: 2,
                error_kind: ErrorKind::StdNormal, target_coef_norm: 0.9,
                sparse_support: None, alpha_l: None, rng_seed: 1, burn_in: 200,
            };
            for t_len in [300usize, 1200] {
                for rep in 0..4u64 {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
                    rng.set_stream(rep);
                    let (truth, _) = gen_stationary_dgp(&spec, &mut rng).unwrap();
                    let series = simulate_series(&spec, &truth, None, t_len, &mut rng).unwrap();
                    let als = AlsConfig { num_restarts: 2, max_iters: 200, rel_tol: 1e-7, rng_seed: 3 };
                    let (fit, _) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
                    let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
                    print!(" {err:.3}");
                }
                println!("  <- T={t_len}");
            }
        }
        _ => eprintln!("unknown mode"),
    }
}
