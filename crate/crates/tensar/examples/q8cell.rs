use rand::SeedableRng;
use std::time::Instant;
use tensar::als::{als_fit, AlsConfig, EstimVariant};
use tensar::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let restarts: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let tol: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-7);
    let reps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let spec = DgpSpec {
        dims: vec![8, 8, 8], p: 2, r_y: 3, r_x: 2,
        error_kind: ErrorKind::StdNormal, target_coef_norm: 0.9,
        sparse_support: None, alpha_l: None, rng_seed: 2024, burn_in: 200,
    };
    let als = AlsConfig { num_restarts: restarts, max_iters: 300, rel_tol: tol, rng_seed: 7 };
    let t0 = Instant::now();
    let mut errs = Vec::new();
    for rep in 0..reps {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(rep);
        let (truth, _) = gen_stationary_dgp(&spec, &mut rng).unwrap();
        let series = simulate_series(&spec, &truth, None, 1000, &mut rng).unwrap();
        let (fit, _) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
        let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
        errs.push(err);
        print!("{err:.3} ");
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    println!("\nmean={mean:.4} elapsed={:?}", t0.elapsed());
}
