//! CP-based low-rank coefficient structures and their feature-extraction
//! view.
//!
//! A coefficient is assembled from two loading sets and a core matrix. The
//! response loadings map an observed tensor to a short feature vector, the
//! covariate loadings do the same for the lagged tensors, and the core
//! regresses response features on covariate features. The stored core is
//! always the reparameterized one, i.e. the Gram-inverse factor of the
//! response loadings has been absorbed into it.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::linalg::smallest_singular_value;
use crate::tensor::{
    dot, kron_vec, vectorize, DenseTensor, Matrix, TensorError,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("factor {index} has {got} columns, expected {want}")]
    RankMismatch { index: usize, want: usize, got: usize },
    #[error("factor {index} column {col} has 2-norm {norm}, not unit")]
    NotUnitNorm { index: usize, col: usize, norm: f64 },
    #[error("loading set needs at least one factor")]
    NoFactors,
    #[error("core must be {want_rows}x{want_cols}, got {got_rows}x{got_cols}")]
    CoreShape {
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("covariate dims {got:?} incompatible with variant (expected {expected:?})")]
    CovariateDims { expected: Vec<usize>, got: Vec<usize> },
    #[error("lag order must be at least 1")]
    ZeroLagOrder,
    #[error("expected {want} lagged tensors, got {got}")]
    LagCount { want: usize, got: usize },
    #[error("tensor shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("series must hold at least one observation")]
    EmptySeries,
    #[error("coefficient contains non-finite values")]
    NonFinite,
    #[error("sparse index {index:?} out of range for shape {shape:?}")]
    SparseIndex { index: Vec<usize>, shape: Vec<usize> },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Tolerance on the unit-norm column invariant of loading factors.
pub const UNIT_NORM_TOL: f64 = 1e-8;

/// Threshold below which an assembled loading matrix is flagged as nearly
/// degenerate (smallest singular value).
pub const DEGENERACY_TOL: f64 = 1e-10;

/// A list of factor matrices with unit-norm columns sharing a common rank.
/// The assembled loading matrix is their Khatri-Rao chain, folded from the
/// last factor down to the first.
#[derive(Debug, Clone)]
pub struct CpLoadings {
    factors: Vec<Matrix>,
}

impl CpLoadings {
    pub fn new(factors: Vec<Matrix>) -> Result<Self, ModelError> {
        if factors.is_empty() {
            return Err(ModelError::NoFactors);
        }
        let rank = factors[0].cols();
        for (index, f) in factors.iter().enumerate() {
            if f.cols() != rank {
                return Err(ModelError::RankMismatch {
                    index,
                    want: rank,
                    got: f.cols(),
                });
            }
            for col in 0..rank {
                let norm = dot(f.col(col), f.col(col)).sqrt();
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(ModelError::NotUnitNorm { index, col, norm });
                }
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.rows()).collect()
    }

    pub fn rank(&self) -> usize {
        self.factors[0].cols()
    }

    /// Product of the mode dimensions.
    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|f| f.rows()).product()
    }

    /// Assembles the full loading matrix `F_n ⊙ ... ⊙ F_1`.
    pub fn assemble(&self) -> Matrix {
        khatri_rao_chain(&self.factors, None)
    }

    /// Feature vector `Λ^T vec(y)`; entry `r` is the inner product of `y`
    /// with the rank-1 tensor built from the r-th factor columns.
    pub fn features(&self, y: &DenseTensor) -> Result<Vec<f64>, ModelError> {
        if y.shape() != self.dims().as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected: self.dims(),
                got: y.shape().to_vec(),
            });
        }
        Ok(self.assemble().tr_mul_vec(vectorize(y)))
    }

    /// Smallest singular value of the assembled loading matrix. Values at
    /// or below [`DEGENERACY_TOL`] indicate an (almost) degenerate set of
    /// rank-1 loading tensors; ALS may pass through such iterates, so this
    /// is a diagnostic rather than an error.
    pub fn min_singular_value(&self) -> f64 {
        smallest_singular_value(&self.assemble())
    }
}

/// Khatri-Rao chain of `factors` in decreasing mode order, optionally
/// skipping one mode: `F_{n-1} ⊙ ... ⊙ F_0` (0-based).
pub(crate) fn khatri_rao_chain(factors: &[Matrix], skip: Option<usize>) -> Matrix {
    let rank = factors[0].cols();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0]; rank];
    for (l, f) in factors.iter().enumerate() {
        if skip == Some(l) {
            continue;
        }
        for (r, acc) in cols.iter_mut().enumerate() {
            *acc = kron_vec(f.col(r), acc);
        }
    }
    Matrix::from_cols(&cols).expect("chain columns are nonempty")
}

/// Which coefficient structure a [`LowRankCoef`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// AR(P) with loadings shared across lags and a lag-partitioned core:
    /// `[A]_n = Λ_y G (I_P ⊗ Λ_x^T)`.
    ArSharedLags,
    /// The lag index treated as an extra covariate mode of size P:
    /// `[A]_n = Λ_y G Λ_x^T` with covariate dims `(P, q_1..q_n)`.
    StackedLagMode,
    /// Tensor-on-tensor regression: `[A]_n = Λ_y G Λ_x^T` with free
    /// covariate dims.
    Regression,
}

/// Low-rank coefficient: response loadings, reparameterized core `G`, and
/// covariate loadings, plus the autoregressive lag order.
#[derive(Debug, Clone)]
pub struct LowRankCoef {
    response: CpLoadings,
    covariate: CpLoadings,
    core: Matrix,
    lag_order: usize,
    variant: Variant,
}

impl LowRankCoef {
    pub fn new(
        response: CpLoadings,
        covariate: CpLoadings,
        core: Matrix,
        lag_order: usize,
        variant: Variant,
    ) -> Result<Self, ModelError> {
        if lag_order == 0 {
            return Err(ModelError::ZeroLagOrder);
        }
        let r_y = response.rank();
        let r_x = covariate.rank();
        let want_cols = match variant {
            Variant::ArSharedLags => lag_order * r_x,
            Variant::StackedLagMode | Variant::Regression => r_x,
        };
        if core.rows() != r_y || core.cols() != want_cols {
            return Err(ModelError::CoreShape {
                want_rows: r_y,
                want_cols,
                got_rows: core.rows(),
                got_cols: core.cols(),
            });
        }
        match variant {
            Variant::ArSharedLags => {
                if covariate.dims() != response.dims() {
                    return Err(ModelError::CovariateDims {
                        expected: response.dims(),
                        got: covariate.dims(),
                    });
                }
            }
            Variant::StackedLagMode => {
                let mut expected = vec![lag_order];
                expected.extend(response.dims());
                if covariate.dims() != expected {
                    return Err(ModelError::CovariateDims {
                        expected,
                        got: covariate.dims(),
                    });
                }
            }
            Variant::Regression => {}
        }
        if core.data().iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self {
            response,
            covariate,
            core,
            lag_order,
            variant,
        })
    }

    pub fn response_loadings(&self) -> &CpLoadings {
        &self.response
    }

    pub fn covariate_loadings(&self) -> &CpLoadings {
        &self.covariate
    }

    /// The reparameterized core (Gram-inverse absorbed).
    pub fn core(&self) -> &Matrix {
        &self.core
    }

    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.response.rank(), self.covariate.rank())
    }

    pub fn response_dims(&self) -> Vec<usize> {
        self.response.dims()
    }

    /// Number of rows of the assembled coefficient matrix.
    pub fn out_dim(&self) -> usize {
        self.response.total_dim()
    }

    /// Number of columns of the assembled coefficient matrix.
    pub fn in_dim(&self) -> usize {
        match self.variant {
            Variant::ArSharedLags => self.lag_order * self.covariate.total_dim(),
            Variant::StackedLagMode | Variant::Regression => self.covariate.total_dim(),
        }
    }

    /// Assembles the dense coefficient matrix: `Λ_y G (I_P ⊗ Λ_x^T)` for
    /// the shared-lag AR form, `Λ_y G Λ_x^T` otherwise.
    pub fn assemble(&self) -> Matrix {
        let lambda_y = self.response.assemble();
        let lambda_x = self.covariate.assemble();
        let left = lambda_y.matmul(&self.core); // Q x (P'·R_x)
        let q = lambda_y.rows();
        let r_x = lambda_x.cols();
        let px = lambda_x.rows();
        let blocks = match self.variant {
            Variant::ArSharedLags => self.lag_order,
            _ => 1,
        };
        let mut out = Matrix::zeros(q, blocks * px);
        for k in 0..blocks {
            // columns of block k: left[:, k*R_x..] * Λ_x^T
            for j in 0..px {
                let out_col = out.col_mut(k * px + j);
                for r in 0..r_x {
                    let w = lambda_x.get(j, r);
                    if w == 0.0 {
                        continue;
                    }
                    let l_col = left.col(k * r_x + r);
                    for (o, &v) in out_col.iter_mut().zip(l_col) {
                        *o += v * w;
                    }
                }
            }
        }
        out
    }

    /// `Λ_y^T vec(y)`.
    pub fn response_features(&self, y: &DenseTensor) -> Result<Vec<f64>, ModelError> {
        self.response.features(y)
    }

    /// Covariate feature vector for one prediction step. For the shared-lag
    /// form this is the concatenation over lags of `Λ_x^T vec(Y_{t-k})`
    /// with the most recent lag first; for the stacked form the lags are
    /// first merged into a single tensor with the lag index as mode 0.
    pub fn covariate_features(&self, lags: &[&DenseTensor]) -> Result<Vec<f64>, ModelError> {
        self.check_lags(lags)?;
        match self.variant {
            Variant::ArSharedLags => {
                let lambda_x = self.covariate.assemble();
                let mut out = Vec::with_capacity(self.lag_order * self.covariate.rank());
                for lag in lags {
                    out.extend(lambda_x.tr_mul_vec(vectorize(lag)));
                }
                Ok(out)
            }
            Variant::StackedLagMode => {
                let stacked = stack_lags(lags)?;
                self.covariate.features(&stacked)
            }
            Variant::Regression => self.covariate.features(lags[0]),
        }
    }

    /// One-step-ahead prediction from the `P` most recent observations
    /// (`lags[0]` is the most recent). The optional sparse part acts on the
    /// lag-blocked stacked vector.
    pub fn predict_one_step(
        &self,
        lags: &[&DenseTensor],
        sparse: Option<&SparseCoef>,
    ) -> Result<DenseTensor, ModelError> {
        let features = self.covariate_features(lags)?;
        let reduced = self.core.mul_vec(&features);
        let mut pred = self.response.assemble().mul_vec(&reduced);
        if let Some(s) = sparse {
            let stacked = concat_lag_vecs(lags);
            s.accumulate_apply(&stacked, &mut pred);
        }
        Ok(DenseTensor::new(self.response_dims(), pred)?)
    }

    /// The core in the paper's original parameterization, `(Λ_y^T Λ_y) G`.
    /// Provided for interpretation output; requires the response loading
    /// Gram matrix to be invertible in exact arithmetic.
    pub fn original_core(&self) -> Matrix {
        let lambda_y = self.response.assemble();
        lambda_y.tr_matmul(&lambda_y).matmul(&self.core)
    }

    /// Smallest singular values of the assembled loading matrices together
    /// with near-degeneracy flags.
    pub fn degeneracy_report(&self) -> DegeneracyReport {
        let response_min_sv = self.response.min_singular_value();
        let covariate_min_sv = self.covariate.min_singular_value();
        DegeneracyReport {
            response_min_sv,
            covariate_min_sv,
            response_degenerate: response_min_sv <= DEGENERACY_TOL,
            covariate_degenerate: covariate_min_sv <= DEGENERACY_TOL,
        }
    }

    fn check_lags(&self, lags: &[&DenseTensor]) -> Result<(), ModelError> {
        let want = match self.variant {
            Variant::Regression => 1,
            _ => self.lag_order,
        };
        if lags.len() != want {
            return Err(ModelError::LagCount {
                want,
                got: lags.len(),
            });
        }
        let expected = match self.variant {
            Variant::Regression => self.covariate.dims(),
            _ => self.response_dims(),
        };
        for lag in lags {
            if lag.shape() != expected.as_slice() {
                return Err(ModelError::ShapeMismatch {
                    expected,
                    got: lag.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Parameter count of the shared-lag AR model,
/// `P·R_y·R_x + (R_y + R_x)·Σ q_i`.
pub fn complexity_d_ar(p: usize, r_y: usize, r_x: usize, dims: &[usize]) -> usize {
    p * r_y * r_x + (r_y + r_x) * dims.iter().sum::<usize>()
}

/// Near-degeneracy diagnostics for the two loading sets.
#[derive(Debug, Clone, Copy)]
pub struct DegeneracyReport {
    pub response_min_sv: f64,
    pub covariate_min_sv: f64,
    pub response_degenerate: bool,
    pub covariate_degenerate: bool,
}

/// Stacks lagged tensors into one tensor with the lag index as mode 0:
/// entry `(k, i_1..i_n)` equals `lags[k][i_1..i_n]`.
pub fn stack_lags(lags: &[&DenseTensor]) -> Result<DenseTensor, ModelError> {
    if lags.is_empty() {
        return Err(ModelError::LagCount { want: 1, got: 0 });
    }
    let p = lags.len();
    let base = lags[0].shape().to_vec();
    let mut shape = vec![p];
    shape.extend(&base);
    let mut data = vec![0.0; p * lags[0].len()];
    for (k, lag) in lags.iter().enumerate() {
        if lag.shape() != base.as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected: base,
                got: lag.shape().to_vec(),
            });
        }
        for (j, &v) in lag.data().iter().enumerate() {
            data[k + p * j] = v;
        }
    }
    Ok(DenseTensor::new(shape, data)?)
}

/// Lag-blocked stacked vector: `[vec(lags[0]); vec(lags[1]); ...]`.
pub(crate) fn concat_lag_vecs(lags: &[&DenseTensor]) -> Vec<f64> {
    let mut out = Vec::with_capacity(lags.iter().map(|l| l.len()).sum());
    for lag in lags {
        out.extend_from_slice(lag.data());
    }
    out
}

/// Coordinate-indexed sparse coefficient with shape `(q_1..q_n, P, q_1..q_n)`.
/// Entries are stored against their position in the `Q x PQ` lag-blocked
/// coefficient matrix; zeros are absent by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoef {
    dims: Vec<usize>,
    lag_order: usize,
    entries: BTreeMap<(usize, usize), f64>,
}

impl SparseCoef {
    pub fn empty(dims: &[usize], lag_order: usize) -> Self {
        Self {
            dims: dims.to_vec(),
            lag_order,
            entries: BTreeMap::new(),
        }
    }

    /// Builds from multi-indexed entries `(i_1..i_n, k, j_1..j_n) -> value`
    /// (all 0-based). Zero values are dropped.
    pub fn from_multi_entries(
        dims: &[usize],
        lag_order: usize,
        entries: impl IntoIterator<Item = (Vec<usize>, f64)>,
    ) -> Result<Self, ModelError> {
        let mut out = Self::empty(dims, lag_order);
        for (idx, value) in entries {
            let (row, col) = out.multi_to_flat(&idx)?;
            out.set_flat(row, col, value);
        }
        Ok(out)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn lag_order(&self) -> usize {
        self.lag_order
    }

    pub fn q_total(&self) -> usize {
        self.dims.iter().product()
    }

    /// Number of stored (nonzero) entries; the paper's support count.
    pub fn support_size(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get_flat(&self, row: usize, col: usize) -> f64 {
        self.entries.get(&(row, col)).copied().unwrap_or(0.0)
    }

    pub fn set_flat(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.q_total() && col < self.lag_order * self.q_total());
        if value == 0.0 {
            self.entries.remove(&(row, col));
        } else {
            self.entries.insert((row, col), value);
        }
    }

    /// Iterates stored entries as `((row, col), value)` in deterministic
    /// (row-major within the map's key order) order.
    pub fn iter_flat(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    /// Iterates stored entries with full multi-indices `(i.., k, j..)`.
    pub fn iter_multi(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.entries
            .iter()
            .map(|(&(row, col), &v)| (self.flat_to_multi(row, col), v))
    }

    /// Converts a multi-index `(i_1..i_n, k, j_1..j_n)` to matrix position.
    pub fn multi_to_flat(&self, idx: &[usize]) -> Result<(usize, usize), ModelError> {
        let n = self.dims.len();
        if idx.len() != 2 * n + 1 {
            return Err(ModelError::SparseIndex {
                index: idx.to_vec(),
                shape: self.full_shape(),
            });
        }
        let mut row = 0;
        let mut stride = 1;
        for (d, &i) in self.dims.iter().zip(&idx[..n]) {
            if i >= *d {
                return Err(ModelError::SparseIndex {
                    index: idx.to_vec(),
                    shape: self.full_shape(),
                });
            }
            row += i * stride;
            stride *= d;
        }
        let k = idx[n];
        if k >= self.lag_order {
            return Err(ModelError::SparseIndex {
                index: idx.to_vec(),
                shape: self.full_shape(),
            });
        }
        let mut j_flat = 0;
        stride = 1;
        for (d, &j) in self.dims.iter().zip(&idx[n + 1..]) {
            if j >= *d {
                return Err(ModelError::SparseIndex {
                    index: idx.to_vec(),
                    shape: self.full_shape(),
                });
            }
            j_flat += j * stride;
            stride *= d;
        }
        Ok((row, k * self.q_total() + j_flat))
    }

    pub fn flat_to_multi(&self, row: usize, col: usize) -> Vec<usize> {
        let q = self.q_total();
        let n = self.dims.len();
        let mut idx = Vec::with_capacity(2 * n + 1);
        let mut rem = row;
        for d in &self.dims {
            idx.push(rem % d);
            rem /= d;
        }
        idx.push(col / q);
        let mut rem = col % q;
        for d in &self.dims {
            idx.push(rem % d);
            rem /= d;
        }
        idx
    }

    fn full_shape(&self) -> Vec<usize> {
        let mut s = self.dims.clone();
        s.push(self.lag_order);
        s.extend(&self.dims);
        s
    }

    /// Dense `Q x PQ` matrix with the stored entries placed.
    pub fn to_matrix(&self) -> Matrix {
        let q = self.q_total();
        let mut m = Matrix::zeros(q, self.lag_order * q);
        for (&(row, col), &v) in &self.entries {
            m.set(row, col, v);
        }
        m
    }

    /// Adds `A_S * stacked` into `out`.
    pub(crate) fn accumulate_apply(&self, stacked: &[f64], out: &mut [f64]) {
        for (&(row, col), &v) in &self.entries {
            out[row] += v * stacked[col];
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sum of absolute values of the stored entries (the penalty term).
    pub fn l1_norm(&self) -> f64 {
        self.entries.values().map(|v| v.abs()).sum()
    }
}

/// A time-ordered sequence of same-shape dense tensors.
#[derive(Debug, Clone)]
pub struct TensorSeries {
    obs: Vec<DenseTensor>,
}

impl TensorSeries {
    pub fn new(obs: Vec<DenseTensor>) -> Result<Self, ModelError> {
        if obs.is_empty() {
            return Err(ModelError::EmptySeries);
        }
        let shape = obs[0].shape().to_vec();
        for o in &obs[1..] {
            if o.shape() != shape.as_slice() {
                return Err(ModelError::ShapeMismatch {
                    expected: shape,
                    got: o.shape().to_vec(),
                });
            }
        }
        Ok(Self { obs })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.obs[0].shape()
    }

    pub fn observations(&self) -> &[DenseTensor] {
        &self.obs
    }

    pub fn get(&self, t: usize) -> &DenseTensor {
        &self.obs[t]
    }

    /// The first `len` observations as a new series.
    pub fn prefix(&self, len: usize) -> Result<TensorSeries, ModelError> {
        if len == 0 || len > self.obs.len() {
            return Err(ModelError::EmptySeries);
        }
        Ok(TensorSeries {
            obs: self.obs[..len].to_vec(),
        })
    }

    /// The `P` most recent observations before `t`, most recent first:
    /// `[Y_{t-1}, Y_{t-2}, ..., Y_{t-P}]`.
    pub fn lag_window(&self, t: usize, p: usize) -> Option<Vec<&DenseTensor>> {
        if t < p || t > self.obs.len() {
            return None;
        }
        Some((1..=p).map(|k| &self.obs[t - k]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{khatri_rao, outer_rank1};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_unit_factor(rows: usize, rank: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let raw = Matrix::new(
            rows,
            rank,
            (0..rows * rank)
                .map(|_| rng.random::<f64>() - 0.5)
                .collect(),
        )
        .unwrap();
        crate::tensor::col_norm(&raw).unwrap()
    }

    fn random_loadings(dims: &[usize], rank: usize, rng: &mut ChaCha8Rng) -> CpLoadings {
        CpLoadings::new(
            dims.iter()
                .map(|&d| random_unit_factor(d, rank, rng))
                .collect(),
        )
        .unwrap()
    }

    fn random_coef(
        dims: &[usize],
        p: usize,
        r_y: usize,
        r_x: usize,
        rng: &mut ChaCha8Rng,
    ) -> LowRankCoef {
        let response = random_loadings(dims, r_y, rng);
        let covariate = random_loadings(dims, r_x, rng);
        let core = Matrix::new(
            r_y,
            p * r_x,
            (0..r_y * p * r_x)
                .map(|_| rng.random::<f64>() - 0.5)
                .collect(),
        )
        .unwrap();
        LowRankCoef::new(response, covariate, core, p, Variant::ArSharedLags).unwrap()
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let len = shape.iter().product();
        DenseTensor::new(
            shape.to_vec(),
            (0..len).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn loadings_validation() {
        let good = Matrix::new(2, 1, vec![0.6, 0.8]).unwrap();
        assert!(CpLoadings::new(vec![good.clone()]).is_ok());
        let bad = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            CpLoadings::new(vec![bad]),
            Err(ModelError::NotUnitNorm { .. })
        ));
        let mismatched = Matrix::new(3, 2, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            CpLoadings::new(vec![good, mismatched]),
            Err(ModelError::RankMismatch { .. })
        ));
        assert!(matches!(CpLoadings::new(vec![]), Err(ModelError::NoFactors)));
    }

    #[test]
    fn assemble_lambda_single_factor_is_identity() {
        let f = Matrix::new(3, 2, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8]).unwrap();
        let l = CpLoadings::new(vec![f.clone()]).unwrap().assemble();
        assert_eq!(l.data(), f.data());
    }

    #[test]
    fn assemble_lambda_basis_example() {
        // F_1 = [1,0]^T, F_2 = [0,1]^T: column is e_3 of length 4
        let f1 = Matrix::new(2, 1, vec![1.0, 0.0]).unwrap();
        let f2 = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let l = CpLoadings::new(vec![f1, f2]).unwrap().assemble();
        assert_eq!(l.data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn assemble_lambda_matches_outer_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let loadings = random_loadings(&[3, 2, 4], 2, &mut rng);
        let lambda = loadings.assemble();
        for r in 0..2 {
            let cols: Vec<&[f64]> = loadings.factors().iter().map(|f| f.col(r)).collect();
            let rank1 = outer_rank1(&cols).unwrap();
            for (a, b) in lambda.col(r).iter().zip(rank1.data()) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
        // chain equals pairwise khatri_rao fold
        let f = loadings.factors();
        let manual = khatri_rao(&khatri_rao(&f[2], &f[1]).unwrap(), &f[0]).unwrap();
        for (a, b) in lambda.data().iter().zip(manual.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn assemble_coef_rank1_placement() {
        let response =
            CpLoadings::new(vec![Matrix::new(2, 1, vec![1.0, 0.0]).unwrap()]).unwrap();
        let covariate =
            CpLoadings::new(vec![Matrix::new(2, 1, vec![0.0, 1.0]).unwrap()]).unwrap();
        let core = Matrix::new(1, 1, vec![2.0]).unwrap();
        let coef =
            LowRankCoef::new(response, covariate, core, 1, Variant::ArSharedLags).unwrap();
        let a = coef.assemble();
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(1, 0), 0.0);
        assert_eq!(a.get(1, 1), 0.0);
    }

    #[test]
    fn assemble_coef_zero_core_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut coef = random_coef(&[2, 3], 2, 2, 1, &mut rng);
        coef.core = Matrix::zeros(2, 2);
        assert_eq!(coef.assemble().frobenius_norm(), 0.0);
    }

    #[test]
    fn assemble_coef_matches_bruteforce_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dims = [2, 3];
        let (p, r_y, r_x) = (2, 2, 2);
        let coef = random_coef(&dims, p, r_y, r_x, &mut rng);
        let a = coef.assemble();
        let q: usize = dims.iter().product();
        // brute force: entry (i, (k,j)) = sum_{ry,rx} Λy[i,ry] G[ry,k*Rx+rx] Λx[j,rx]
        let ly_cols: Vec<DenseTensor> = (0..r_y)
            .map(|r| {
                let cols: Vec<&[f64]> = coef
                    .response_loadings()
                    .factors()
                    .iter()
                    .map(|f| f.col(r))
                    .collect();
                outer_rank1(&cols).unwrap()
            })
            .collect();
        let lx_cols: Vec<DenseTensor> = (0..r_x)
            .map(|r| {
                let cols: Vec<&[f64]> = coef
                    .covariate_loadings()
                    .factors()
                    .iter()
                    .map(|f| f.col(r))
                    .collect();
                outer_rank1(&cols).unwrap()
            })
            .collect();
        for i in 0..q {
            for k in 0..p {
                for j in 0..q {
                    let mut want = 0.0;
                    for ry in 0..r_y {
                        for rx in 0..r_x {
                            want += ly_cols[ry].data()[i]
                                * coef.core().get(ry, k * r_x + rx)
                                * lx_cols[rx].data()[j];
                        }
                    }
                    assert_relative_eq!(
                        a.get(i, k * q + j),
                        want,
                        max_relative = 1e-10,
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn response_features_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let loadings = random_loadings(&[2, 2], 1, &mut rng);
        let cols: Vec<&[f64]> = loadings.factors().iter().map(|f| f.col(0)).collect();
        let y = outer_rank1(&cols).unwrap();
        // y equals its own (unit-norm) loading tensor: feature = ||vec(y)||^2 = 1
        let f = loadings.features(&y).unwrap();
        assert_relative_eq!(f[0], 1.0, max_relative = 1e-10);

        let zero = DenseTensor::zeros(&[2, 2]).unwrap();
        assert_eq!(loadings.features(&zero).unwrap(), vec![0.0]);

        // random y: entry r equals inner product with assembled rank-1 tensor
        let loadings = random_loadings(&[3, 2], 2, &mut rng);
        let y = random_tensor(&[3, 2], &mut rng);
        let f = loadings.features(&y).unwrap();
        for r in 0..2 {
            let cols: Vec<&[f64]> = loadings.factors().iter().map(|m| m.col(r)).collect();
            let rank1 = outer_rank1(&cols).unwrap();
            let want = dot(rank1.data(), y.data());
            assert_relative_eq!(f[r], want, max_relative = 1e-10);
        }
    }

    #[test]
    fn response_features_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let loadings = random_loadings(&[3, 2], 2, &mut rng);
        let y1 = random_tensor(&[3, 2], &mut rng);
        let y2 = random_tensor(&[3, 2], &mut rng);
        let (a, b) = (1.7, -0.4);
        let combo = DenseTensor::new(
            vec![3, 2],
            y1.data()
                .iter()
                .zip(y2.data())
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
        .unwrap();
        let f1 = loadings.features(&y1).unwrap();
        let f2 = loadings.features(&y2).unwrap();
        let fc = loadings.features(&combo).unwrap();
        for r in 0..2 {
            assert_relative_eq!(fc[r], a * f1[r] + b * f2[r], max_relative = 1e-12);
        }
    }

    #[test]
    fn covariate_features_zero_and_single_lag() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let coef = random_coef(&[2, 2], 2, 1, 2, &mut rng);
        let z = DenseTensor::zeros(&[2, 2]).unwrap();
        let f = coef.covariate_features(&[&z, &z]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
        assert_eq!(f.len(), 2 * 2);

        // P=1 reduces to feature extraction with covariate loadings
        let coef1 = random_coef(&[2, 2], 1, 1, 2, &mut rng);
        let y = random_tensor(&[2, 2], &mut rng);
        let f = coef1.covariate_features(&[&y]).unwrap();
        let direct = coef1.covariate_loadings().features(&y).unwrap();
        assert_eq!(f, direct);

        assert!(coef1.covariate_features(&[&y, &y]).is_err());
    }

    #[test]
    fn predict_zero_coef_and_identity_sparse() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mut coef = random_coef(&[2, 2], 1, 2, 2, &mut rng);
        coef.core = Matrix::zeros(2, 2);
        let y = random_tensor(&[2, 2], &mut rng);
        let pred = coef.predict_one_step(&[&y], None).unwrap();
        assert_eq!(pred.frobenius_norm(), 0.0);

        // identity coefficient via the sparse part returns the lag itself
        let mut sparse = SparseCoef::empty(&[2, 2], 1);
        for i in 0..4 {
            sparse.set_flat(i, i, 1.0);
        }
        let pred = coef.predict_one_step(&[&y], Some(&sparse)).unwrap();
        for (a, b) in pred.data().iter().zip(y.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn predict_matches_dense_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for variant in [Variant::ArSharedLags, Variant::StackedLagMode] {
            let dims = [2, 3];
            let p = 2;
            let coef = match variant {
                Variant::ArSharedLags => random_coef(&dims, p, 2, 2, &mut rng),
                _ => {
                    let response = random_loadings(&dims, 2, &mut rng);
                    let mut cov_dims = vec![p];
                    cov_dims.extend(dims);
                    let covariate = random_loadings(&cov_dims, 2, &mut rng);
                    let core = Matrix::new(
                        2,
                        2,
                        (0..4).map(|_| rng.random::<f64>() - 0.5).collect(),
                    )
                    .unwrap();
                    LowRankCoef::new(response, covariate, core, p, variant).unwrap()
                }
            };
            let lag1 = random_tensor(&dims, &mut rng);
            let lag2 = random_tensor(&dims, &mut rng);
            let pred = coef.predict_one_step(&[&lag1, &lag2], None).unwrap();

            let a = coef.assemble();
            let stacked = match variant {
                Variant::ArSharedLags => concat_lag_vecs(&[&lag1, &lag2]),
                _ => stack_lags(&[&lag1, &lag2]).unwrap().into_data(),
            };
            let dense = a.mul_vec(&stacked);
            for (x, y) in pred.data().iter().zip(&dense) {
                assert_relative_eq!(x, y, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn scale_absorption_leaves_coefficient_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let dims = [2, 3];
        let (p, r_y, r_x) = (2, 2, 2);
        let coef = random_coef(&dims, p, r_y, r_x, &mut rng);
        let base = coef.assemble();

        // scale column r of one response factor by c, divide row r of G by c
        let c = 2.5;
        let r = 1;
        let mut factors: Vec<Matrix> = coef.response_loadings().factors().to_vec();
        for x in factors[0].col_mut(r) {
            *x *= c;
        }
        let mut core = coef.core().clone();
        for col in 0..core.cols() {
            let v = core.get(r, col) / c;
            core.set(r, col, v);
        }
        // bypass the unit-norm check: assemble the scaled version manually
        let lambda_y = khatri_rao_chain(&factors, None);
        let lambda_x = coef.covariate_loadings().assemble();
        let mut scaled = Matrix::zeros(base.rows(), base.cols());
        let q = lambda_x.rows();
        let left = lambda_y.matmul(&core);
        for k in 0..p {
            for j in 0..q {
                for row in 0..base.rows() {
                    let mut acc = 0.0;
                    for rx in 0..r_x {
                        acc += left.get(row, k * r_x + rx) * lambda_x.get(j, rx);
                    }
                    scaled.set(row, k * q + j, acc);
                }
            }
        }
        assert!(base.sub(&scaled).max_abs() < 1e-12);

        // symmetric check: covariate column c times, core columns over c
        let c2 = -1.5;
        let mut vfactors: Vec<Matrix> = coef.covariate_loadings().factors().to_vec();
        for x in vfactors[1].col_mut(0) {
            *x *= c2;
        }
        let mut core2 = coef.core().clone();
        for k in 0..p {
            for row in 0..r_y {
                let v = core2.get(row, k * r_x) / c2;
                core2.set(row, k * r_x, v);
            }
        }
        let lambda_x2 = khatri_rao_chain(&vfactors, None);
        let left2 = coef.response_loadings().assemble().matmul(&core2);
        let mut scaled2 = Matrix::zeros(base.rows(), base.cols());
        for k in 0..p {
            for j in 0..q {
                for row in 0..base.rows() {
                    let mut acc = 0.0;
                    for rx in 0..r_x {
                        acc += left2.get(row, k * r_x + rx) * lambda_x2.get(j, rx);
                    }
                    scaled2.set(row, k * q + j, acc);
                }
            }
        }
        assert!(base.sub(&scaled2).max_abs() < 1e-12);
    }

    #[test]
    fn sparse_coef_round_trips_indices() {
        let dims = [2, 3];
        let mut s = SparseCoef::empty(&dims, 2);
        s.set_flat(4, 7, -1.5);
        s.set_flat(0, 11, 2.0);
        s.set_flat(0, 11, 0.0); // removing by zero
        assert_eq!(s.support_size(), 1);
        let multi = s.flat_to_multi(4, 7);
        let (row, col) = s.multi_to_flat(&multi).unwrap();
        assert_eq!((row, col), (4, 7));
        assert_eq!(s.l1_norm(), 1.5);
        assert!(s
            .multi_to_flat(&[0, 0, 2, 0, 0])
            .is_err());
        let m = s.to_matrix();
        assert_eq!(m.get(4, 7), -1.5);
    }

    #[test]
    fn series_validation_and_lag_window() {
        let a = DenseTensor::zeros(&[2, 2]).unwrap();
        let b = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = TensorSeries::new(vec![a.clone(), b.clone(), a.clone()]).unwrap();
        assert_eq!(s.len(), 3);
        let lags = s.lag_window(2, 2).unwrap();
        assert_eq!(lags[0].data(), b.data()); // most recent first
        assert!(s.lag_window(1, 2).is_none());

        let c = DenseTensor::zeros(&[3]).unwrap();
        assert!(TensorSeries::new(vec![a, c]).is_err());
        assert!(TensorSeries::new(vec![]).is_err());
    }
}
