use rand::SeedableRng;
use tensar::als::{als_fit, AlsConfig, EstimVariant};
use tensar::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let q: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let slots: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(12);
    let reps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(6);
    let spec = DgpSpec {
        dims: vec![q, q, q], p: 2, r_y: 3, r_x: 2,
        error_kind: ErrorKind::Uniform, target_coef_norm: 0.9,
        sparse_support: None, alpha_l: None, rng_seed: 2024, burn_in: 200,
    };
    // "good" threshold: half way between basins
    for rep in 0..reps {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
        rng.set_stream(rep);
        let (truth, _) = gen_stationary_dgp(&spec, &mut rng).unwrap();
        let series = simulate_series(&spec, &truth, None, 1000, &mut rng).unwrap();
        let mut good = 0;
        let mut best = f64::INFINITY;
        for slot in 0..slots {
            let als = AlsConfig { num_restarts: 1, max_iters: 300, rel_tol: 1e-7, rng_seed: 900 + slot };
            let (fit, _) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
            let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
            if err < 0.8 { good += 1; }
            if err < best { best = err; }
        }
        println!("q={q} rep={rep}: good {good}/{slots} best={best:.3}");
    }
}
