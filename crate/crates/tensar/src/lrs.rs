//! Low-rank plus sparse estimation: an outer loop of entrywise trimming,
//! l1-penalized coordinate descent for the sparse component, and an ALS
//! refit of the low-rank component on the sparse-adjusted residuals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::als::{
    fit_residual_problem, AlsConfig, AlsState, EstimVariant, FitError, FitReport, Problem,
};
use crate::model::{LowRankCoef, SparseCoef, TensorSeries};
use crate::tensor::{dot, vectorize, DenseTensor, Matrix};

/// The paper's candidate set for the penalty strength.
pub const LAMBDA_GRID: [f64; 13] = [
    0.001, 0.003, 0.005, 0.008, 0.01, 0.03, 0.05, 0.08, 0.1, 0.3, 0.5, 0.8, 1.0,
];

/// Default radius of non-identifiability, `P^{1/2} Q`.
pub fn default_alpha_l(p: usize, q: usize) -> f64 {
    (p as f64).sqrt() * q as f64
}

/// Entrywise trimming bound `alpha_l / (P Q^2)` for the low-rank part.
pub fn trim_bound(alpha_l: f64, p: usize, q: usize) -> f64 {
    alpha_l / (p as f64 * (q * q) as f64)
}

/// Configuration of the outer trim / lasso / ALS loop.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LrsConfig {
    /// Penalty strength on the sum of absolute sparse entries.
    pub lambda: f64,
    /// Radius of non-identifiability; `None` selects `P^{1/2} Q`.
    pub alpha_l: Option<f64>,
    pub outer_iters: usize,
    /// Relative change of the penalized objective that stops the outer loop.
    pub outer_tol: f64,
    /// Coordinate-descent stopping threshold (max coordinate change over a
    /// full sweep).
    pub lasso_tol: f64,
    pub lasso_max_sweeps: usize,
    pub als: AlsConfig,
}

impl Default for LrsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            alpha_l: None,
            outer_iters: 50,
            outer_tol: 1e-5,
            lasso_tol: 1e-8,
            lasso_max_sweeps: 500,
            als: AlsConfig::default(),
        }
    }
}

/// Clips every entry of a tensor to magnitude `zeta`, preserving signs.
pub fn trim(t: &DenseTensor, zeta: f64) -> DenseTensor {
    let data = t.data().iter().map(|&v| clip(v, zeta)).collect();
    DenseTensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Entrywise trimming of a matrix (the assembled coefficient).
pub fn trim_matrix(m: &Matrix, zeta: f64) -> Matrix {
    let data = m.data().iter().map(|&v| clip(v, zeta)).collect();
    Matrix::new(m.rows(), m.cols(), data).expect("same shape")
}

#[inline]
fn clip(v: f64, zeta: f64) -> f64 {
    if v.abs() > zeta {
        zeta * v.signum()
    } else {
        v
    }
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Row-contiguous matrix used by the coordinate descent (rows are time
/// series, so the per-coordinate inner products run over contiguous
/// memory).
struct RowMajor {
    cols: usize,
    data: Vec<f64>,
}

impl RowMajor {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Shared precomputation for the lasso step: the `PQ x T0` covariate rows
/// (lag blocks, most recent first), their squared norms, and the `Q x T0`
/// response rows.
pub(crate) struct LassoWorkspace {
    q: usize,
    pq: usize,
    t0: usize,
    x: RowMajor,
    norms2: Vec<f64>,
    y: RowMajor,
    dims: Vec<usize>,
    p: usize,
}

impl LassoWorkspace {
    pub(crate) fn new(series: &TensorSeries, p: usize) -> Result<Self, FitError> {
        let t = series.len();
        if p == 0 {
            return Err(FitError::ZeroRankOrOrder);
        }
        if t <= p {
            return Err(FitError::SeriesTooShort { t, p });
        }
        let t0 = t - p;
        let q: usize = series.shape().iter().product();
        let pq = p * q;
        let mut x = RowMajor::zeros(pq, t0);
        for k in 0..p {
            for j in 0..q {
                let row = x.row_mut(k * q + j);
                for (t_step, slot) in row.iter_mut().enumerate() {
                    *slot = vectorize(series.get(p + t_step - 1 - k))[j];
                }
            }
        }
        let norms2 = (0..pq).map(|b| dot(x.row(b), x.row(b))).collect();
        let mut y = RowMajor::zeros(q, t0);
        for a in 0..q {
            let row = y.row_mut(a);
            for (t_step, slot) in row.iter_mut().enumerate() {
                *slot = vectorize(series.get(p + t_step))[a];
            }
        }
        Ok(Self {
            q,
            pq,
            t0,
            x,
            norms2,
            y,
            dims: series.shape().to_vec(),
            p,
        })
    }

    /// Residual rows `Y - (L + S) X`.
    fn residual(&self, lowrank: &Matrix, sparse: &Matrix) -> RowMajor {
        let mut resid = RowMajor::zeros(self.q, self.t0);
        for a in 0..self.q {
            let row = resid.row_mut(a);
            row.copy_from_slice(self.y.row(a));
            for b in 0..self.pq {
                let c = lowrank.get(a, b) + sparse.get(a, b);
                if c == 0.0 {
                    continue;
                }
                let xb = self.x.row(b);
                for (o, &x) in row.iter_mut().zip(xb) {
                    *o -= c * x;
                }
            }
        }
        resid
    }

    /// Cyclic coordinate descent over the sparse entries (row-major sweep
    /// order, fixed for determinism) with an active-set acceleration.
    /// `work` holds the dense working coefficients and is updated in place.
    fn descend(
        &self,
        resid: &mut RowMajor,
        work: &mut [f64],
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
    ) {
        let gamma = lambda * self.t0 as f64 / 2.0;
        for _ in 0..max_sweeps {
            let full_change = self.sweep_all(resid, work, gamma);
            if full_change < tol {
                return;
            }
            let mut active: Vec<(usize, usize)> = Vec::new();
            for a in 0..self.q {
                for b in 0..self.pq {
                    if work[a * self.pq + b] != 0.0 {
                        active.push((a, b));
                    }
                }
            }
            for _ in 0..100 {
                let change = self.sweep_set(resid, work, gamma, &active);
                if change < tol {
                    break;
                }
            }
        }
    }

    fn sweep_all(&self, resid: &mut RowMajor, work: &mut [f64], gamma: f64) -> f64 {
        let mut max_change = 0.0f64;
        for a in 0..self.q {
            let row = resid.row_mut(a);
            for b in 0..self.pq {
                let n2 = self.norms2[b];
                if n2 == 0.0 {
                    continue;
                }
                let xb = self.x.row(b);
                let c_old = work[a * self.pq + b];
                let z = dot(row, xb) + c_old * n2;
                let c_new = soft_threshold(z, gamma) / n2;
                if c_new != c_old {
                    let delta = c_new - c_old;
                    for (o, &x) in row.iter_mut().zip(xb) {
                        *o -= delta * x;
                    }
                    work[a * self.pq + b] = c_new;
                    max_change = max_change.max(delta.abs());
                }
            }
        }
        max_change
    }

    fn sweep_set(
        &self,
        resid: &mut RowMajor,
        work: &mut [f64],
        gamma: f64,
        coords: &[(usize, usize)],
    ) -> f64 {
        let mut max_change = 0.0f64;
        for &(a, b) in coords {
            let n2 = self.norms2[b];
            if n2 == 0.0 {
                continue;
            }
            let row = resid.row_mut(a);
            let xb = self.x.row(b);
            let c_old = work[a * self.pq + b];
            let z = dot(row, xb) + c_old * n2;
            let c_new = soft_threshold(z, gamma) / n2;
            if c_new != c_old {
                let delta = c_new - c_old;
                for (o, &x) in row.iter_mut().zip(xb) {
                    *o -= delta * x;
                }
                work[a * self.pq + b] = c_new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    fn solve(
        &self,
        fixed_lowrank: &Matrix,
        warm: &SparseCoef,
        lambda: f64,
        tol: f64,
        max_sweeps: usize,
    ) -> SparseCoef {
        let mut work = vec![0.0; self.q * self.pq];
        for ((row, col), v) in warm.iter_flat() {
            work[row * self.pq + col] = v;
        }
        let mut resid = self.residual(fixed_lowrank, &warm.to_matrix());
        self.descend(&mut resid, &mut work, lambda, tol, max_sweeps);
        let mut out = SparseCoef::empty(&self.dims, self.p);
        for a in 0..self.q {
            for b in 0..self.pq {
                let v = work[a * self.pq + b];
                if v != 0.0 {
                    out.set_flat(a, b, v);
                }
            }
        }
        out
    }

    /// Maximum absolute loss gradient at the zero sparse tensor; penalties
    /// at or above this value produce an empty sparse part.
    fn lambda_max(&self, fixed_lowrank: &Matrix) -> f64 {
        let zero = SparseCoef::empty(&self.dims, self.p);
        let resid = self.residual(fixed_lowrank, &zero.to_matrix());
        let mut max_g = 0.0f64;
        for a in 0..self.q {
            for b in 0..self.pq {
                let g = 2.0 * dot(resid.row(a), self.x.row(b)) / self.t0 as f64;
                max_g = max_g.max(g.abs());
            }
        }
        max_g
    }

    /// Largest violation of the lasso stationarity conditions: active
    /// entries must have loss gradient `-λ sign`, inactive entries must
    /// have gradient magnitude at most `λ`.
    fn kkt_violation(&self, fixed_lowrank: &Matrix, sparse: &SparseCoef, lambda: f64) -> f64 {
        let resid = self.residual(fixed_lowrank, &sparse.to_matrix());
        let mut worst = 0.0f64;
        for a in 0..self.q {
            for b in 0..self.pq {
                let g = -2.0 * dot(resid.row(a), self.x.row(b)) / self.t0 as f64;
                let c = sparse.get_flat(a, b);
                let v = if c != 0.0 {
                    (g + lambda * c.signum()).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                };
                worst = worst.max(v);
            }
        }
        worst
    }

    fn loss_of(&self, lowrank: &Matrix, sparse: &SparseCoef) -> f64 {
        let resid = self.residual(lowrank, &sparse.to_matrix());
        resid.data.iter().map(|v| v * v).sum::<f64>() / self.t0 as f64
    }
}

/// Solves the sparse subproblem: cyclic coordinate descent on the entries
/// of the sparse coefficient with the low-rank part held fixed.
pub fn lasso_step(
    series: &TensorSeries,
    p: usize,
    fixed_lowrank: &Matrix,
    lambda: f64,
    config: &LrsConfig,
) -> Result<SparseCoef, FitError> {
    let ws = LassoWorkspace::new(series, p)?;
    check_coef_shape(fixed_lowrank, ws.q, ws.pq)?;
    let warm = SparseCoef::empty(series.shape(), p);
    Ok(ws.solve(
        fixed_lowrank,
        &warm,
        lambda,
        config.lasso_tol,
        config.lasso_max_sweeps,
    ))
}

/// Smallest penalty that zeroes out the entire sparse part, given the
/// fixed low-rank component.
pub fn lambda_max(
    series: &TensorSeries,
    p: usize,
    fixed_lowrank: &Matrix,
) -> Result<f64, FitError> {
    let ws = LassoWorkspace::new(series, p)?;
    check_coef_shape(fixed_lowrank, ws.q, ws.pq)?;
    Ok(ws.lambda_max(fixed_lowrank))
}

/// Largest per-coordinate violation of the lasso optimality conditions.
pub fn lasso_kkt_violation(
    series: &TensorSeries,
    p: usize,
    fixed_lowrank: &Matrix,
    sparse: &SparseCoef,
    lambda: f64,
) -> Result<f64, FitError> {
    let ws = LassoWorkspace::new(series, p)?;
    check_coef_shape(fixed_lowrank, ws.q, ws.pq)?;
    Ok(ws.kkt_violation(fixed_lowrank, sparse, lambda))
}

fn check_coef_shape(coef: &Matrix, q: usize, pq: usize) -> Result<(), FitError> {
    if coef.rows() != q || coef.cols() != pq {
        return Err(FitError::BadInit(format!(
            "coefficient must be {q}x{pq}, got {}x{}",
            coef.rows(),
            coef.cols()
        )));
    }
    Ok(())
}

/// Value of the penalized objective together with the infinity-norm status
/// of the low-rank component.
#[derive(Debug, Clone, Copy)]
pub struct PenalizedObjective {
    pub loss: f64,
    pub penalty: f64,
    pub value: f64,
    pub lowrank_max_abs: f64,
    /// `Some(true)` when a bound was supplied and `||A_L||_inf` honors it.
    pub constraint_ok: Option<bool>,
}

/// Evaluates `L_T(A_L + A_S) + λ ||A_S||_1` and checks the identifiability
/// constraint against `zeta` when given.
pub fn penalized_objective(
    lowrank: &Matrix,
    sparse: &SparseCoef,
    series: &TensorSeries,
    p: usize,
    lambda: f64,
    zeta: Option<f64>,
) -> Result<PenalizedObjective, FitError> {
    let ws = LassoWorkspace::new(series, p)?;
    check_coef_shape(lowrank, ws.q, ws.pq)?;
    let loss = ws.loss_of(lowrank, sparse);
    let penalty = lambda * sparse.l1_norm();
    let lowrank_max_abs = lowrank.max_abs();
    Ok(PenalizedObjective {
        loss,
        penalty,
        value: loss + penalty,
        lowrank_max_abs,
        constraint_ok: zeta.map(|z| lowrank_max_abs <= z * (1.0 + 1e-12) + 1e-15),
    })
}

/// Fits the low-rank plus sparse autoregression: alternating trimming of
/// the low-rank part, an l1 step for the sparse part, and an ALS refit on
/// the sparse-adjusted residuals, until the penalized objective settles.
///
/// The reported low-rank component is the final ALS iterate (not its
/// trimmed version); `FitReport::constraint_ok` records whether it honors
/// the infinity-norm bound.
pub fn lrs_fit(
    series: &TensorSeries,
    p: usize,
    r_y: usize,
    r_x: usize,
    config: &LrsConfig,
) -> Result<(LowRankCoef, SparseCoef, FitReport), FitError> {
    if r_y == 0 || r_x == 0 || p == 0 {
        return Err(FitError::ZeroRankOrOrder);
    }
    let ws = LassoWorkspace::new(series, p)?;
    let q = ws.q;
    let alpha_l = config.alpha_l.unwrap_or_else(|| default_alpha_l(p, q));
    let zeta = trim_bound(alpha_l, p, q);

    // initial low-rank state: one random draw on its own RNG stream
    let prob = Problem::from_series(series, p, EstimVariant::SharedLags)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.als.rng_seed);
    rng.set_stream(1 << 32);
    let mut state = crate::als::random_state_for(&prob, r_y, r_x, &mut rng)?;
    let mut sparse = SparseCoef::empty(series.shape(), p);
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut restart_index = 0;
    let mut min_norm_fallbacks = 0;
    let mut iterations = 0;

    for outer in 0..config.outer_iters {
        iterations = outer + 1;
        // trim
        let assembled = assemble_state(&state);
        let trimmed = trim_matrix(&assembled, zeta);
        // sparse step (warm-started from the previous sparse iterate)
        sparse = ws.solve(
            &trimmed,
            &sparse,
            config.lambda,
            config.lasso_tol,
            config.lasso_max_sweeps,
        );
        // low-rank step on sparse-adjusted responses
        let responses = sparse_adjusted_responses(series, p, &sparse, &ws);
        let warm = if outer == 0 { None } else { Some(&state) };
        let (new_state, report) =
            fit_residual_problem(series, p, responses, r_y, r_x, &config.als, warm)?;
        state = new_state;
        if outer == 0 {
            restart_index = report.restart_index;
        }
        min_norm_fallbacks += report.min_norm_fallbacks;

        let value = ws.loss_of(&assemble_state(&state), &sparse)
            + config.lambda * sparse.l1_norm();
        let prev = trace.last().copied();
        trace.push(value);
        if let Some(prev) = prev {
            if (prev - value).abs() / prev.max(1e-12) < config.outer_tol {
                converged = true;
                break;
            }
        }
    }

    let final_lowrank = assemble_state(&state);
    let constraint_ok = final_lowrank.max_abs() <= zeta * (1.0 + 1e-12) + 1e-15;
    let report = FitReport {
        final_loss: *trace.last().expect("at least one outer iteration"),
        loss_trace: trace,
        iterations,
        converged,
        restart_index,
        min_norm_fallbacks,
        constraint_ok: Some(constraint_ok),
    };
    let coef = state.into_coef(p, crate::model::Variant::ArSharedLags)?;
    Ok((coef, sparse, report))
}

fn assemble_state(state: &AlsState) -> Matrix {
    let lambda_y = crate::model::khatri_rao_chain(&state.u, None);
    let lambda_x = crate::model::khatri_rao_chain(&state.v, None);
    let left = lambda_y.matmul(&state.g);
    let q = lambda_y.rows();
    let px = lambda_x.rows();
    let r_x = lambda_x.cols();
    let blocks = state.g.cols() / r_x;
    let mut out = Matrix::zeros(q, blocks * px);
    for k in 0..blocks {
        for j in 0..px {
            let out_col = out.col_mut(k * px + j);
            for r in 0..r_x {
                let w = lambda_x.get(j, r);
                if w == 0.0 {
                    continue;
                }
                for (o, &v) in out_col.iter_mut().zip(left.col(k * r_x + r)) {
                    *o += v * w;
                }
            }
        }
    }
    out
}

/// Response tensors with the sparse contribution removed:
/// `Y_t - A_S x_t`.
fn sparse_adjusted_responses(
    series: &TensorSeries,
    p: usize,
    sparse: &SparseCoef,
    ws: &LassoWorkspace,
) -> Vec<DenseTensor> {
    let shape = series.shape().to_vec();
    (0..ws.t0)
        .map(|t_step| {
            let mut data = vectorize(series.get(p + t_step)).to_vec();
            for ((row, col), v) in sparse.iter_flat() {
                data[row] -= v * ws.x.row(col)[t_step];
            }
            DenseTensor::new(shape.clone(), data).expect("shape preserved")
        })
        .collect()
}
