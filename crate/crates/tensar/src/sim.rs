//! Data-generating processes, stationarity screening, and the Monte-Carlo
//! experiments that probe the estimators' convergence-rate behavior.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::als::{als_fit, AlsConfig, EstimVariant, FitError};
use crate::linalg::{cholesky_factor, spectral_radius_dense};
use crate::lrs::{default_alpha_l, lrs_fit, trim_bound, LrsConfig};
use crate::model::{
    complexity_d_ar, CpLoadings, LowRankCoef, ModelError, SparseCoef, TensorSeries, Variant,
};
use crate::selection::EstimatorKind;
use crate::tensor::{col_norm, DenseTensor, Matrix, TensorError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no stationary coefficient draw found in {attempts} attempts")]
    NonStationary { attempts: usize },
    #[error("low-rank norm {low:.4} leaves no room for a sparse part at target {target:.4}")]
    InfeasibleScale { low: f64, target: f64 },
    #[error("sparse support {s} exceeds the {max} coefficient entries")]
    SupportTooLarge { s: usize, max: usize },
    #[error("sparse shapes do not match")]
    ShapeMismatch,
    #[error("invalid simulation spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Error-term distributions of the simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Entries i.i.d. uniform on (-0.5, 0.5).
    Uniform,
    /// Entries i.i.d. standard normal.
    StdNormal,
    /// `vec(E_t) ~ N(0, Σ_e)` with `Σ_e = (0.5^{|i-j|})`.
    ArCorrelated,
}

/// A data-generating process for the autoregression experiments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dims: Vec<usize>,
    pub p: usize,
    pub r_y: usize,
    pub r_x: usize,
    #[serde(default = "default_error_kind")]
    pub error_kind: ErrorKind,
    /// Frobenius norm of the full coefficient after rescaling: `||A||_F`
    /// for the pure low-rank process, `||A_L + A_S||_F` when a sparse part
    /// is present.
    #[serde(default = "default_target_norm")]
    pub target_coef_norm: f64,
    /// Number of nonzero sparse entries; `None` generates the pure
    /// low-rank process.
    #[serde(default)]
    pub sparse_support: Option<usize>,
    /// Radius of non-identifiability; `None` selects `P^{1/2} Q`.
    #[serde(default)]
    pub alpha_l: Option<f64>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
}

fn default_error_kind() -> ErrorKind {
    ErrorKind::StdNormal
}

fn default_target_norm() -> f64 {
    0.9
}

fn default_burn_in() -> usize {
    200
}

impl DgpSpec {
    pub fn q_total(&self) -> usize {
        self.dims.iter().product()
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.dims.is_empty() || self.dims.iter().any(|&d| d == 0) {
            return Err(SimError::BadSpec("dims must be nonempty positives".into()));
        }
        if self.p == 0 || self.r_y == 0 || self.r_x == 0 {
            return Err(SimError::BadSpec("p and ranks must be positive".into()));
        }
        if self.target_coef_norm <= 0.0 {
            return Err(SimError::BadSpec("target_coef_norm must be positive".into()));
        }
        if let Some(s) = self.sparse_support {
            let max = self.p * self.q_total() * self.q_total();
            if s > max {
                return Err(SimError::SupportTooLarge { s, max });
            }
        }
        Ok(())
    }
}

fn random_loadings(
    dims: &[usize],
    rank: usize,
    rng: &mut ChaCha8Rng,
) -> Result<CpLoadings, SimError> {
    let mut factors = Vec::with_capacity(dims.len());
    for &d in dims {
        let data: Vec<f64> = (0..d * rank).map(|_| StandardNormal.sample(rng)).collect();
        factors.push(col_norm(&Matrix::new(d, rank, data)?)?);
    }
    Ok(CpLoadings::new(factors)?)
}

/// Draws a low-rank coefficient: loadings standard normal with normalized
/// columns, core standard normal, then globally rescaled. Without a sparse
/// part the assembled Frobenius norm is set to `target_coef_norm`; with
/// one, the infinity norm is set exactly to the trim bound
/// `alpha_l / (P Q^2)` so that the identifiability constraint is tight.
pub fn gen_lowrank_coef(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> Result<LowRankCoef, SimError> {
    spec.validate()?;
    let response = random_loadings(&spec.dims, spec.r_y, rng)?;
    let covariate = random_loadings(&spec.dims, spec.r_x, rng)?;
    let g_data: Vec<f64> = (0..spec.r_y * spec.p * spec.r_x)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let core = Matrix::new(spec.r_y, spec.p * spec.r_x, g_data)?;
    let coef = LowRankCoef::new(response, covariate, core, spec.p, Variant::ArSharedLags)?;
    let assembled = coef.assemble();
    let scale = match spec.sparse_support {
        None => {
            let norm = assembled.frobenius_norm();
            if norm == 0.0 {
                return Err(SimError::BadSpec("degenerate zero coefficient draw".into()));
            }
            spec.target_coef_norm / norm
        }
        Some(_) => {
            let q = spec.q_total();
            let alpha = spec.alpha_l.unwrap_or_else(|| default_alpha_l(spec.p, q));
            let bound = trim_bound(alpha, spec.p, q);
            let max = assembled.max_abs();
            if max == 0.0 {
                return Err(SimError::BadSpec("degenerate zero coefficient draw".into()));
            }
            bound / max
        }
    };
    let core = coef.core().scaled(scale);
    Ok(LowRankCoef::new(
        coef.response_loadings().clone(),
        coef.covariate_loadings().clone(),
        core,
        spec.p,
        Variant::ArSharedLags,
    )?)
}

/// Draws the sparse component: `s` distinct positions chosen uniformly,
/// values standard normal, then the sparse tensor alone is rescaled so the
/// joint Frobenius norm `||A_L + A_S||_F` hits `target_coef_norm`. The
/// low-rank part keeps its infinity norm at the identifiability cap, which
/// is what makes the cap an active constraint in the recovery experiments.
/// Fails when the low-rank part alone already exceeds the target.
pub fn gen_sparse_coef(
    spec: &DgpSpec,
    lowrank: &LowRankCoef,
    rng: &mut ChaCha8Rng,
) -> Result<(LowRankCoef, SparseCoef), SimError> {
    let s = spec
        .sparse_support
        .ok_or_else(|| SimError::BadSpec("sparse_support not set".into()))?;
    let q = spec.q_total();
    let total = spec.p * q * q;
    if s > total {
        return Err(SimError::SupportTooLarge { s, max: total });
    }
    let mut sparse = SparseCoef::empty(&spec.dims, spec.p);
    if s > 0 {
        let positions = rand::seq::index::sample(rng, total, s);
        for pos in positions.iter() {
            let row = pos % q;
            let col = pos / q;
            let v: f64 = StandardNormal.sample(rng);
            sparse.set_flat(row, col, v);
        }
    }
    if s == 0 {
        return Ok((lowrank.clone(), sparse));
    }
    let assembled = lowrank.assemble();
    // ||A_L + c A_S||^2 = ||A_L||^2 + 2c <A_L, A_S> + c^2 ||A_S||^2
    let low_sq = assembled.frobenius_norm().powi(2);
    let target_sq = spec.target_coef_norm * spec.target_coef_norm;
    let mut cross = 0.0;
    let mut sparse_sq = 0.0;
    for ((row, col), v) in sparse.iter_flat() {
        cross += assembled.get(row, col) * v;
        sparse_sq += v * v;
    }
    let disc = cross * cross - sparse_sq * (low_sq - target_sq);
    if low_sq >= target_sq || disc <= 0.0 {
        return Err(SimError::BadSpec(format!(
            "low-rank norm {:.4} leaves no room for a sparse part at target {:.4}",
            low_sq.sqrt(),
            spec.target_coef_norm
        )));
    }
    let c = (-cross + disc.sqrt()) / sparse_sq;
    let mut scaled_sparse = SparseCoef::empty(&spec.dims, spec.p);
    for ((row, col), v) in sparse.iter_flat() {
        scaled_sparse.set_flat(row, col, v * c);
    }
    Ok((lowrank.clone(), scaled_sparse))
}

/// Error-term generator; the correlated scenario factors its Toeplitz
/// covariance once and caches the triangular factor.
pub struct ErrorGen {
    kind: ErrorKind,
    dims: Vec<usize>,
    chol: Option<Matrix>,
}

impl ErrorGen {
    pub fn new(kind: ErrorKind, dims: &[usize]) -> Result<Self, SimError> {
        let q: usize = dims.iter().product();
        let chol = match kind {
            ErrorKind::ArCorrelated => {
                let mut sigma = Matrix::zeros(q, q);
                for i in 0..q {
                    for j in 0..q {
                        sigma.set(i, j, 0.5f64.powi((i as i32 - j as i32).abs()));
                    }
                }
                Some(cholesky_factor(&sigma).ok_or_else(|| {
                    SimError::BadSpec("toeplitz covariance is not positive definite".into())
                })?)
            }
            _ => None,
        };
        Ok(Self {
            kind,
            dims: dims.to_vec(),
            chol,
        })
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> DenseTensor {
        let q: usize = self.dims.iter().product();
        let data = match self.kind {
            ErrorKind::Uniform => (0..q).map(|_| rng.random::<f64>() - 0.5).collect(),
            ErrorKind::StdNormal => (0..q).map(|_| StandardNormal.sample(rng)).collect(),
            ErrorKind::ArCorrelated => {
                let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(rng)).collect();
                self.chol.as_ref().expect("factor cached").mul_vec(&z)
            }
        };
        DenseTensor::new(self.dims.clone(), data).expect("shape fixed")
    }
}

/// Draws `count` error tensors for the spec's scenario.
pub fn gen_errors(
    spec: &DgpSpec,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Result<Vec<DenseTensor>, SimError> {
    let gen = ErrorGen::new(spec.error_kind, &spec.dims)?;
    Ok((0..count).map(|_| gen.draw(rng)).collect())
}

/// Multiplies the companion matrix of the AR(P) system into a `PQ` vector
/// without materializing it: the top block applies the coefficient, the
/// rest shifts.
fn companion_matvec(coef: &Matrix, p: usize, x: &[f64], out: &mut [f64]) {
    let q = coef.rows();
    debug_assert_eq!(x.len(), p * q);
    out[..q].fill(0.0);
    for (j, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        let col = coef.col(j);
        for (o, &c) in out[..q].iter_mut().zip(col) {
            *o += c * xv;
        }
    }
    if p > 1 {
        out[q..].copy_from_slice(&x[..(p - 1) * q]);
    }
}

/// Spectral radius of the companion matrix and the stationarity flag
/// `ρ < 1 - 1e-8`. Power iteration with a two-step geometric growth
/// estimate handles complex dominant pairs; a dense eigensolver takes over
/// for systems up to 512 when the iteration stalls.
pub fn check_stationarity(coef: &Matrix, p: usize) -> (bool, f64) {
    let q = coef.rows();
    let pq = p * q;
    debug_assert_eq!(coef.cols(), pq);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut x: Vec<f64> = (0..pq).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm0 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut x {
        *v /= norm0;
    }
    let mut buf = vec![0.0; pq];
    let mut prev_growth = f64::NAN;
    let mut prev_two_step = f64::NAN;
    let mut estimate = 0.0;
    let mut converged = false;
    for _ in 0..2000 {
        companion_matvec(coef, p, &x, &mut buf);
        let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            estimate = 0.0;
            converged = true;
            break;
        }
        for (xv, &bv) in x.iter_mut().zip(&buf) {
            *xv = bv / norm;
        }
        let growth = norm;
        let two_step = if prev_growth.is_nan() {
            f64::NAN
        } else {
            (growth * prev_growth).sqrt()
        };
        if !prev_growth.is_nan() && (growth - prev_growth).abs() < 1e-10 * growth.max(1e-30) {
            estimate = growth;
            converged = true;
            break;
        }
        if !prev_two_step.is_nan()
            && !two_step.is_nan()
            && (two_step - prev_two_step).abs() < 1e-10 * two_step.max(1e-30)
        {
            estimate = two_step;
            converged = true;
            break;
        }
        prev_growth = growth;
        prev_two_step = two_step;
        estimate = if two_step.is_nan() { growth } else { two_step };
    }
    if !converged && pq <= 512 {
        let mut b = Matrix::zeros(pq, pq);
        for c in 0..pq {
            for r in 0..q {
                b.set(r, c, coef.get(r, c));
            }
        }
        for k in 1..p {
            for r in 0..q {
                b.set(k * q + r, (k - 1) * q + r, 1.0);
            }
        }
        estimate = spectral_radius_dense(&b);
    }
    (estimate < 1.0 - 1e-8, estimate)
}

/// Draws coefficients until the companion spectral radius is below one,
/// resampling at most 100 times.
pub fn gen_stationary_dgp(
    spec: &DgpSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(LowRankCoef, Option<SparseCoef>), SimError> {
    const MAX_ATTEMPTS: usize = 100;
    for _ in 0..MAX_ATTEMPTS {
        let lowrank = gen_lowrank_coef(spec, rng)?;
        let (lowrank, sparse) = match spec.sparse_support {
            Some(_) => {
                let (l, s) = gen_sparse_coef(spec, &lowrank, rng)?;
                (l, Some(s))
            }
            None => (lowrank, None),
        };
        let mut total = lowrank.assemble();
        if let Some(s) = &sparse {
            for ((row, col), v) in s.iter_flat() {
                let cur = total.get(row, col);
                total.set(row, col, cur + v);
            }
        }
        let (ok, _) = check_stationarity(&total, spec.p);
        if ok {
            return Ok((lowrank, sparse));
        }
    }
    Err(SimError::NonStationary {
        attempts: MAX_ATTEMPTS,
    })
}

/// Runs the AR recursion `y_t = Σ_k A_k y_{t-k} + e_t` from the given
/// initial lag window (most recent first), consuming one error per step.
pub fn simulate_core(
    lowrank: &LowRankCoef,
    sparse: Option<&SparseCoef>,
    init: &[DenseTensor],
    errors: &[DenseTensor],
) -> Result<Vec<DenseTensor>, SimError> {
    let p = lowrank.lag_order();
    if init.len() != p {
        return Err(SimError::BadSpec(format!(
            "need {p} initial tensors, got {}",
            init.len()
        )));
    }
    let mut window: Vec<DenseTensor> = init.to_vec();
    let mut out = Vec::with_capacity(errors.len());
    for err in errors {
        let lags: Vec<&DenseTensor> = window.iter().collect();
        let mut next = lowrank.predict_one_step(&lags, sparse)?;
        for (o, &e) in next.data_mut().iter_mut().zip(err.data()) {
            *o += e;
        }
        window.rotate_right(1);
        window[0] = next.clone();
        out.push(next);
    }
    Ok(out)
}

/// Simulates a stationary series of length `t_len`: zero initial state,
/// `spec.burn_in` leading steps discarded.
pub fn simulate_series(
    spec: &DgpSpec,
    lowrank: &LowRankCoef,
    sparse: Option<&SparseCoef>,
    t_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TensorSeries, SimError> {
    if t_len == 0 {
        return Err(SimError::BadSpec("series length must be positive".into()));
    }
    let gen = ErrorGen::new(spec.error_kind, &spec.dims)?;
    let total = spec.burn_in + t_len;
    let errors: Vec<DenseTensor> = (0..total).map(|_| gen.draw(rng)).collect();
    let init: Vec<DenseTensor> = (0..spec.p)
        .map(|_| DenseTensor::zeros(&spec.dims).expect("valid dims"))
        .collect();
    let all = simulate_core(lowrank, sparse, &init, &errors)?;
    Ok(TensorSeries::new(all[spec.burn_in..].to_vec())?)
}

/// Support-recovery rates of an estimated sparse component. When the true
/// support is empty the TPR is 1 by convention and flagged.
#[derive(Debug, Clone, Copy)]
pub struct TprFpr {
    pub tpr: f64,
    pub fpr: f64,
    pub empty_truth: bool,
}

pub fn tpr_fpr(estimated: &SparseCoef, truth: &SparseCoef) -> Result<TprFpr, SimError> {
    if estimated.dims() != truth.dims() || estimated.lag_order() != truth.lag_order() {
        return Err(SimError::ShapeMismatch);
    }
    let total = truth.lag_order() * truth.q_total() * truth.q_total();
    let true_support = truth.support_size();
    let mut hits = 0usize;
    let mut false_pos = 0usize;
    for ((row, col), _) in estimated.iter_flat() {
        if truth.get_flat(row, col) != 0.0 {
            hits += 1;
        } else {
            false_pos += 1;
        }
    }
    let true_zeros = total - true_support;
    let tpr = if true_support == 0 {
        1.0
    } else {
        hits as f64 / true_support as f64
    };
    let fpr = if true_zeros == 0 {
        0.0
    } else {
        false_pos as f64 / true_zeros as f64
    };
    Ok(TprFpr {
        tpr,
        fpr,
        empty_truth: true_support == 0,
    })
}

/// Log-factor of the Theorem-2 rate, `log(n P^{1/2} R_y R_x^{1/2})`.
pub fn complexity_d_c(n: usize, p: usize, r_y: usize, r_x: usize) -> f64 {
    ((n as f64) * (p as f64).sqrt() * (r_y as f64) * (r_x as f64).sqrt()).ln()
}

/// Which quantity a rate experiment sweeps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum RateDesign {
    /// Sample sizes, with dims and ranks fixed.
    VaryT(Vec<usize>),
    /// Covariate ranks `R_x`, with `R_y = R_x + 1` and `T` fixed.
    VaryRanks(Vec<usize>),
    /// A common dimension applied to all modes, with ranks and `T` fixed.
    VaryDims(Vec<usize>),
    /// Multipliers `m` of the default radius `m·P^{1/2}Q` (sparse model).
    VaryAlpha(Vec<f64>),
}

impl RateDesign {
    pub fn name(&self) -> &'static str {
        match self {
            RateDesign::VaryT(_) => "vary_t",
            RateDesign::VaryRanks(_) => "vary_ranks",
            RateDesign::VaryDims(_) => "vary_dims",
            RateDesign::VaryAlpha(_) => "vary_alpha",
        }
    }
}

/// Full description of one Monte-Carlo rate experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateExperiment {
    pub design: RateDesign,
    pub base: DgpSpec,
    /// Series length for designs that do not sweep it.
    pub t_len: usize,
    pub replications: usize,
    pub estimator: EstimatorKind,
    pub als: AlsConfig,
    pub lrs: LrsConfig,
}

/// Aggregates for one grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateCell {
    pub label: String,
    /// Theoretical abscissa: `1/sqrt(T-P)` or `sqrt(d_AR d_c)` for the
    /// low-rank model, `(d_c d_AR + s log(PQ^2))/(T-P)` for the sparse
    /// model, or the alpha multiplier for the identifiability sweep.
    pub abscissa: f64,
    pub mean_error: f64,
    pub errors: Vec<f64>,
    pub replications_ok: usize,
    pub failures: usize,
    pub mean_tpr: Option<f64>,
    pub mean_fpr: Option<f64>,
    pub d_ar: usize,
    pub d_c: f64,
}

/// Outcome of a rate experiment: per-cell summaries plus the Pearson
/// correlation between mean errors and the theoretical abscissa.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateDiagnostics {
    pub design: String,
    pub cells: Vec<RateCell>,
    /// `None` when fewer than two cells or degenerate variance.
    pub correlation: Option<f64>,
    pub seed: u64,
    pub replications: usize,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx < 1e-24 || syy < 1e-24 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

struct CellSetup {
    label: String,
    spec: DgpSpec,
    t_len: usize,
    alpha_multiplier: Option<f64>,
}

fn cell_setups(exp: &RateExperiment) -> Vec<CellSetup> {
    match &exp.design {
        RateDesign::VaryT(ts) => ts
            .iter()
            .map(|&t| CellSetup {
                label: format!("T={t}"),
                spec: exp.base.clone(),
                t_len: t,
                alpha_multiplier: None,
            })
            .collect(),
        RateDesign::VaryRanks(rxs) => rxs
            .iter()
            .map(|&rx| {
                let mut spec = exp.base.clone();
                spec.r_x = rx;
                spec.r_y = rx + 1;
                CellSetup {
                    label: format!("Rx={rx}"),
                    spec,
                    t_len: exp.t_len,
                    alpha_multiplier: None,
                }
            })
            .collect(),
        RateDesign::VaryDims(qs) => qs
            .iter()
            .map(|&qd| {
                let mut spec = exp.base.clone();
                spec.dims = vec![qd; exp.base.dims.len()];
                CellSetup {
                    label: format!("q={qd}"),
                    spec,
                    t_len: exp.t_len,
                    alpha_multiplier: None,
                }
            })
            .collect(),
        RateDesign::VaryAlpha(mults) => mults
            .iter()
            .map(|&m| {
                let mut spec = exp.base.clone();
                let q = spec.q_total();
                spec.alpha_l = Some(m * default_alpha_l(spec.p, q));
                CellSetup {
                    label: format!("alpha={m}x"),
                    spec,
                    t_len: exp.t_len,
                    alpha_multiplier: Some(m),
                }
            })
            .collect(),
    }
}

/// Per-cell replications of simulate / fit / error, with the theoretical
/// abscissa and the Pearson correlation of cell means against it.
/// Replication `r` of every cell draws from RNG stream `r` of the master
/// seed; estimator failures are excluded and counted.
pub fn run_rate_experiment(exp: &RateExperiment) -> Result<RateDiagnostics, SimError> {
    exp.base.validate()?;
    if exp.replications == 0 {
        return Err(SimError::BadSpec("replications must be positive".into()));
    }
    let setups = cell_setups(exp);
    let mut cells = Vec::with_capacity(setups.len());
    for setup in &setups {
        let spec = &setup.spec;
        let n = spec.dims.len();
        let d_ar = complexity_d_ar(spec.p, spec.r_y, spec.r_x, &spec.dims);
        let d_c = complexity_d_c(n, spec.p, spec.r_y, spec.r_x);
        let results: Vec<Result<(f64, Option<TprFpr>), SimError>> = (0..exp.replications)
            .into_par_iter()
            .map(|rep| run_replication(exp, spec, setup.t_len, rep as u64))
            .collect();
        let mut errors = Vec::new();
        let mut tprs = Vec::new();
        let mut fprs = Vec::new();
        let mut failures = 0usize;
        for r in results {
            match r {
                Ok((err, rates)) => {
                    errors.push(err);
                    if let Some(tf) = rates {
                        tprs.push(tf.tpr);
                        fprs.push(tf.fpr);
                    }
                }
                Err(SimError::Fit(_)) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        let mean_error = if errors.is_empty() {
            f64::NAN
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        let abscissa = match (&exp.design, exp.estimator) {
            (RateDesign::VaryAlpha(_), _) => setup.alpha_multiplier.unwrap_or(f64::NAN),
            (RateDesign::VaryT(_), EstimatorKind::LowRank) => {
                1.0 / ((setup.t_len - spec.p) as f64).sqrt()
            }
            (_, EstimatorKind::LowRank) => (d_ar as f64 * d_c).sqrt(),
            (_, EstimatorKind::LowRankPlusSparse) => {
                let q = spec.q_total() as f64;
                let s = spec.sparse_support.unwrap_or(0) as f64;
                (d_c * d_ar as f64 + s * (spec.p as f64 * q * q).ln())
                    / (setup.t_len - spec.p) as f64
            }
        };
        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        cells.push(RateCell {
            label: setup.label.clone(),
            abscissa,
            mean_error,
            errors,
            replications_ok: exp.replications - failures,
            failures,
            mean_tpr: mean(&tprs),
            mean_fpr: mean(&fprs),
            d_ar,
            d_c,
        });
    }
    let xs: Vec<f64> = cells.iter().map(|c| c.abscissa).collect();
    let ys: Vec<f64> = cells.iter().map(|c| c.mean_error).collect();
    let correlation = pearson(&xs, &ys);
    Ok(RateDiagnostics {
        design: exp.design.name().to_string(),
        cells,
        correlation,
        seed: exp.base.rng_seed,
        replications: exp.replications,
    })
}

fn run_replication(
    exp: &RateExperiment,
    spec: &DgpSpec,
    t_len: usize,
    rep: u64,
) -> Result<(f64, Option<TprFpr>), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(rep);
    let (truth_l, truth_s) = gen_stationary_dgp(spec, &mut rng)?;
    let series = simulate_series(spec, &truth_l, truth_s.as_ref(), t_len, &mut rng)?;
    match exp.estimator {
        EstimatorKind::LowRank => {
            let (fit, _) = als_fit(
                &series,
                spec.p,
                spec.r_y,
                spec.r_x,
                &exp.als,
                EstimVariant::SharedLags,
            )?;
            let err = fit.assemble().sub(&truth_l.assemble()).frobenius_norm();
            Ok((err, None))
        }
        EstimatorKind::LowRankPlusSparse => {
            let mut config = exp.lrs.clone();
            config.als = exp.als.clone();
            config.alpha_l = spec.alpha_l;
            let (fit_l, fit_s, _) = lrs_fit(&series, spec.p, spec.r_y, spec.r_x, &config)?;
            let e_l = fit_l.assemble().sub(&truth_l.assemble()).frobenius_norm();
            let truth_sparse = truth_s.unwrap_or_else(|| SparseCoef::empty(&spec.dims, spec.p));
            let e_s = fit_s.to_matrix().sub(&truth_sparse.to_matrix()).frobenius_norm();
            let err = e_l * e_l + e_s * e_s;
            let rates = tpr_fpr(&fit_s, &truth_sparse)?;
            Ok((err, Some(rates)))
        }
    }
}
