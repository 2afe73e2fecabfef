use rand::SeedableRng;
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
    for cycles in [5usize, 10, 20] {
        print!("probe@{cycles:2}: ");
        for slot in [0u64, 1, 5, 21, 22, 2, 3] {
            let als = AlsConfig { num_restarts: 1, max_iters: cycles, rel_tol: 0.0, rng_seed: 7 + slot * 1000 };
            let (fit, rep_r) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
            let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
            print!("s{slot}:{:.3}/{err:.2} ", rep_r.final_loss);
        }
        println!();
    }
}
