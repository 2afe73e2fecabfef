use std::time::Instant;
use tensar::als::AlsConfig;
use tensar::lrs::LrsConfig;
use tensar::selection::EstimatorKind;
use tensar::sim::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("varyt");
    let reps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let base = DgpSpec {
        dims: vec![5, 5, 5], p: 2, r_y: 3, r_x: 2,
        error_kind: ErrorKind::StdNormal, target_coef_norm: 0.9,
        sparse_support: None, alpha_l: None, rng_seed: 2024, burn_in: 200,
    };
    let als = AlsConfig { num_restarts: 8, max_iters: 250, rel_tol: 1e-7, rng_seed: 7 };
    let t0 = Instant::now();
    let exp = match mode {
        "varyt" => RateExperiment {
            design: RateDesign::VaryT(vec![300, 400, 500, 800, 1000, 1200]),
            base, t_len: 0, replications: reps,
            estimator: EstimatorKind::LowRank, als, lrs: LrsConfig::default(),
        },
        "ranks" => RateExperiment {
            design: RateDesign::VaryRanks(vec![1, 2, 3, 4]),
            base, t_len: 1000, replications: reps,
            estimator: EstimatorKind::LowRank, als, lrs: LrsConfig::default(),
        },
        "dims" => RateExperiment {
            design: RateDesign::VaryDims(vec![4, 6, 8]),
            base: DgpSpec { dims: vec![4, 4, 4], ..base }, t_len: 1000, replications: reps,
            estimator: EstimatorKind::LowRank,
            als: AlsConfig { num_restarts: 5, max_iters: 300, rel_tol: 1e-7, rng_seed: 7 },
            lrs: LrsConfig::default(),
        },
        _ => { eprintln!("unknown mode"); return; }
    };
    let diag = run_rate_experiment(&exp).unwrap();
    for c in &diag.cells {
        println!("{:8} abscissa={:.4} mean_err={:.4} ok={} fail={}", c.label, c.abscissa, c.mean_error, c.replications_ok, c.failures);
    }
    for c in &diag.cells {
        let mut es = c.errors.clone();
        es.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let strs: Vec<String> = es.iter().map(|e| format!("{e:.3}")).collect();
        println!("{:8} sorted: {}", c.label, strs.join(" "));
    }
    println!("correlation = {:?}  elapsed {:?}", diag.correlation, t0.elapsed());
}
