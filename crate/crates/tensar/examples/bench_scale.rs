use std::time::Instant;
use tensar::als::{als_fit, AlsConfig, EstimVariant};
use tensar::lrs::{lrs_fit, LrsConfig};
use tensar::selection::EstimatorKind;
use tensar::sim::*;

fn main() {
    // criterion-4 scale: q=5^3, P=2, Ry=3, Rx=2, T=1200
    let spec = DgpSpec {
        dims: vec![5, 5, 5], p: 2, r_y: 3, r_x: 2,
        error_kind: ErrorKind::StdNormal, target_coef_norm: 0.9,
        sparse_support: None, alpha_l: None, rng_seed: 1, burn_in: 200,
    };
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let t0 = Instant::now();
    let (truth, _) = gen_stationary_dgp(&spec, &mut rng).unwrap();
    println!("gen: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let series = simulate_series(&spec, &truth, None, 1200, &mut rng).unwrap();
    println!("simulate T=1200: {:?}", t0.elapsed());
    let als = AlsConfig { num_restarts: 2, max_iters: 100, rel_tol: 1e-6, rng_seed: 3 };
    let t0 = Instant::now();
    let (fit, rep) = als_fit(&series, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
    let err = fit.assemble().sub(&truth.assemble()).frobenius_norm();
    println!("als_fit T=1200 2 restarts: {:?} cycles={} err={:.4} loss={:.4}", t0.elapsed(), rep.iterations, err, rep.final_loss);

    // q=8^3 scale (criterion 5 dims sweep)
    let spec8 = DgpSpec { dims: vec![8,8,8], ..spec.clone() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let (truth8, _) = gen_stationary_dgp(&spec8, &mut rng).unwrap();
    let series8 = simulate_series(&spec8, &truth8, None, 1000, &mut rng).unwrap();
    let t0 = Instant::now();
    let (fit8, rep8) = als_fit(&series8, 2, 3, 2, &als, EstimVariant::SharedLags).unwrap();
    let err8 = fit8.assemble().sub(&truth8.assemble()).frobenius_norm();
    println!("als_fit q=8 T=1000: {:?} cycles={} err={:.4}", t0.elapsed(), rep8.iterations, err8);

    // LRS at criterion-6 scale: q=5^3, s=30, T=800
    let spec_l = DgpSpec { sparse_support: Some(30), target_coef_norm: 0.6, ..spec.clone() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let (tl, ts) = gen_stationary_dgp(&spec_l, &mut rng).unwrap();
    let series_l = simulate_series(&spec_l, &tl, ts.as_ref(), 800, &mut rng).unwrap();
    let lrs = LrsConfig { lambda: 0.05, als: AlsConfig { num_restarts: 2, max_iters: 50, rel_tol: 1e-5, rng_seed: 3 }, outer_iters: 20, ..LrsConfig::default() };
    let t0 = Instant::now();
    let (fl, fs, rp) = lrs_fit(&series_l, 2, 3, 2, &lrs).unwrap();
    let el = fl.assemble().sub(&tl.assemble()).frobenius_norm();
    let es = fs.to_matrix().sub(&ts.as_ref().unwrap().to_matrix()).frobenius_norm();
    let rates = tpr_fpr(&fs, ts.as_ref().unwrap()).unwrap();
    println!("lrs_fit T=800: {:?} outer={} errsq={:.4} tpr={:.2} fpr={:.3} support={}", t0.elapsed(), rp.iterations, el*el+es*es, rates.tpr, rates.fpr, fs.support_size());
    let _ = EstimatorKind::LowRank;
}
