use rand::SeedableRng;
use std::time::Instant;
use tensar::als::{als_fit, AlsConfig, EstimVariant};
use tensar::sim::*;

fn main() {
    let spec = DgpSpec {
        dims: vec![8, 8, 8], p: 2, r_y: 3, r_x: 2,
        error_kind: ErrorKind::StdNormal, target_coef_norm: 0.9,
        sparse_support: None, alpha_l: None, rng_seed: 2024, burn_in: 200,
    };
    let rep = 4u64;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(rep);
    let (truth, _) = gen_stationary_dgp(&spec, &mut rng).unwrap();
    let series = simulate_series(&spec, &truth, None, 1000, &mut rng).unwrap();
    for slot in [0u64, 2, 3] {
        let t0 = Instant::now();
        let als = AlsConfig { num_restarts: 1, max_iters: 1500, rel_tol: 1e-11, rng_seed: 7 + slot * 1000 };
        let (fit, rep_r) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
        let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
        println!("slot={slot} loss={:.6} err={err:.4} cycles={} conv={} time={:?}",
            rep_r.final_loss, rep_r.iterations, rep_r.converged, t0.elapsed());
    }
}
