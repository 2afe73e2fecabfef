use rand::SeedableRng;
use std::time::Instant;
use tensar::als::AlsConfig;
use tensar::lrs::{default_alpha_l, lrs_fit, LrsConfig};
use tensar::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let reps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let t0 = Instant::now();
    for mult in [0.125f64, 1.0, 8.0] {
        let q: usize = 64;
        let spec = DgpSpec {
            dims: vec![4, 4, 4], p: 2, r_y: 3, r_x: 2,
            error_kind: ErrorKind::StdNormal, target_coef_norm: 0.6,
            sparse_support: Some(40), alpha_l: Some(mult * default_alpha_l(2, q)),
            rng_seed: 92, burn_in: 200,
        };
        let lrs = LrsConfig {
            lambda,
            alpha_l: spec.alpha_l,
            outer_iters: 20,
            outer_tol: 1e-5,
            lasso_tol: 1e-8,
            lasso_max_sweeps: 200,
            als: AlsConfig { num_restarts: 2, max_iters: 80, rel_tol: 1e-6, rng_seed: 7 },
        };
        let mut tprs = Vec::new();
        let mut fprs = Vec::new();
        for rep in 0..reps {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
            rng.set_stream(rep);
            let (tl, ts) = gen_stationary_dgp(&spec, &mut rng).unwrap();
            let series = simulate_series(&spec, &tl, ts.as_ref(), 800, &mut rng).unwrap();
            let (_, fs, _) = lrs_fit(&series, 2, 3, 2, &lrs).unwrap();
            let r = tpr_fpr(&fs, ts.as_ref().unwrap()).unwrap();
            tprs.push(r.tpr);
            fprs.push(r.fpr);
        }
        println!(
            "alpha={mult}x lambda={lambda}: TPR={:.3} FPR={:.4}",
            tprs.iter().sum::<f64>() / reps as f64,
            fprs.iter().sum::<f64>() / reps as f64
        );
    }
    println!("elapsed={:?}", t0.elapsed());
}
