use rand::SeedableRng;
use std::time::Instant;
use tensar::als::AlsConfig;
use tensar::lrs::{lrs_fit, LrsConfig};
use tensar::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let reps: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let spec = DgpSpec {
        dims: vec![5, 5, 5], p: 2, r_y: 3, r_x: 2,
        error_kind: ErrorKind::StdNormal, target_coef_norm: 0.6,
        sparse_support: Some(30), alpha_l: None, rng_seed: 91, burn_in: 200,
    };
    let lrs = LrsConfig {
        lambda,
        alpha_l: None,
        outer_iters: 20,
        outer_tol: 1e-5,
        lasso_tol: 1e-8,
        lasso_max_sweeps: 200,
        als: AlsConfig { num_restarts: 2, max_iters: 80, rel_tol: 1e-6, rng_seed: 7 },
    };
    let t0 = Instant::now();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t_len in [400usize, 500, 600, 700, 800] {
        let mut errs = Vec::new();
        let mut tprs = Vec::new();
        let mut fprs = Vec::new();
        for rep in 0..reps {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.rng_seed);
            rng.set_stream(rep);
            let (tl, ts) = gen_stationary_dgp(&spec, &mut rng).unwrap();
            let series = simulate_series(&spec, &tl, ts.as_ref(), t_len, &mut rng).unwrap();
            let (fl, fs, _) = lrs_fit(&series, 2, 3, 2, &lrs).unwrap();
            let el = fl.assemble().sub(&tl.assemble()).frobenius_norm();
            let es = fs.to_matrix().sub(&ts.as_ref().unwrap().to_matrix()).frobenius_norm();
            errs.push(el * el + es * es);
            let r = tpr_fpr(&fs, ts.as_ref().unwrap()).unwrap();
            tprs.push(r.tpr);
            fprs.push(r.fpr);
        }
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let q = 125.0f64;
        let d_ar = 87.0;
        let d_c = (3.0f64 * 2.0f64.sqrt() * 3.0 * 2.0f64.sqrt()).ln();
        let abscissa = (d_c * d_ar + 30.0 * (2.0 * q * q).ln()) / (t_len as f64 - 2.0);
        println!(
            "T={t_len} mean_errsq={mean:.4} tpr={:.2} fpr={:.4} abscissa={abscissa:.4}",
            tprs.iter().sum::<f64>() / reps as f64,
            fprs.iter().sum::<f64>() / reps as f64
        );
        xs.push(abscissa);
        ys.push(mean);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    println!("lambda={lambda} correlation={:.4} elapsed={:?}", sxy / (sxx * syy).sqrt(), t0.elapsed());
}
