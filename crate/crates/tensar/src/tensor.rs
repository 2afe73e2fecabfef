//! Dense tensors, column-major matrices, and the multilinear algebra
//! primitives the rest of the crate composes.
//!
//! Conventions used throughout:
//!
//! * All storage is column-major (first index fastest). For a tensor this
//!   means `vec(X)` enumerates multi-indices with the first mode varying
//!   fastest, so that `vec(u1 ∘ u2 ∘ ... ∘ un) = un ⊗ ... ⊗ u1`.
//! * Mode indices are 0-based in code.

use thiserror::Error;

/// Errors raised by tensor and matrix primitives.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {got} does not match shape product {want}")]
    DataLength { want: usize, got: usize },
    #[error("shape entries must all be at least 1")]
    EmptyDim,
    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("split point {split} invalid for order-{order} tensor")]
    SplitOutOfRange { split: usize, order: usize },
    #[error("column count mismatch: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },
    #[error("column {col} has zero norm")]
    ZeroColumn { col: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("empty input")]
    Empty,
}

/// Dense real tensor of arbitrary order with column-major flat storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    /// Builds a tensor from a shape and flat column-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::EmptyDim);
        }
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(TensorError::DataLength {
                want,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::EmptyDim);
        }
        let len: usize = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    /// Total number of entries.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at a full multi-index (0-based).
    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let f = self.flat_index(idx);
        self.data[f] = value;
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut f = 0;
        let mut stride = 1;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[k]);
            f += i * stride;
            stride *= self.shape[k];
        }
        f
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Column-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::EmptyDim);
        }
        if data.len() != rows * cols {
            return Err(TensorError::DataLength {
                want: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Builds a matrix from column slices of equal length.
    pub fn from_cols(cols: &[Vec<f64>]) -> Result<Self, TensorError> {
        if cols.is_empty() || cols[0].is_empty() {
            return Err(TensorError::Empty);
        }
        let rows = cols[0].len();
        let mut data = Vec::with_capacity(rows * cols.len());
        for c in cols {
            if c.len() != rows {
                return Err(TensorError::DataLength {
                    want: rows,
                    got: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Matrix::new(rows, cols.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + c * self.rows]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + c * self.rows] = v;
    }

    /// Contiguous view of column `c`.
    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for c in 0..self.cols {
            for r in 0..self.rows {
                out.data[c + r * self.cols] = self.data[r + c * self.rows];
            }
        }
        out
    }

    /// `self * other`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let out_col = &mut out.data[j * self.rows..(j + 1) * self.rows];
            let b_col = other.col(j);
            for (k, &b) in b_col.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let a_col = self.col(k);
                for (o, &a) in out_col.iter_mut().zip(a_col) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other` without materializing the transpose.
    pub fn tr_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "tr_matmul row mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            let b_col = other.col(j);
            for i in 0..self.cols {
                out.data[i + j * self.cols] = dot(self.col(i), b_col);
            }
        }
        out
    }

    /// `self * v` for a vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        let mut out = vec![0.0; self.rows];
        for (k, &x) in v.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.col(k)) {
                *o += a * x;
            }
        }
        out
    }

    /// `self^T * v` for a vector `v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec dimension mismatch");
        (0..self.cols).map(|c| dot(self.col(c), v)).collect()
    }

    pub fn scale(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        out.scale(c);
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flat column-major view of a tensor: `vec(X)`.
pub fn vectorize(t: &DenseTensor) -> &[f64] {
    t.data()
}

/// Mode-`mode` matricization `X_(s)`: rows index mode `mode`, columns
/// enumerate the remaining modes first-remaining-index-fastest.
pub fn mode_matricize(t: &DenseTensor, mode: usize) -> Result<Matrix, TensorError> {
    let order = t.order();
    if mode >= order {
        return Err(TensorError::ModeOutOfRange { mode, order });
    }
    let d = t.shape()[mode];
    let total = t.len();
    let rest = total / d;
    let stride: usize = t.shape()[..mode].iter().product();
    let mut out = vec![0.0; total];
    // flat index f = low + i*stride + high*stride*d, column = low + high*stride
    let high_count = total / (stride * d);
    let mut f = 0;
    for high in 0..high_count {
        for i in 0..d {
            let col_base = high * stride;
            for low in 0..stride {
                out[i + (col_base + low) * d] = t.data()[f];
                f += 1;
            }
        }
    }
    Matrix::new(d, rest, out)
}

/// `[X]_(mode) * w` without materializing the matricization; `w` has length
/// `len / shape[mode]` and enumerates the remaining modes first-fastest.
#[cfg(test)]
pub(crate) fn mode_vec_product(t: &DenseTensor, mode: usize, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.shape()[mode]];
    mode_vec_product_into(t, mode, w, &mut out);
    out
}

/// As [`mode_vec_product`], accumulating into a caller-provided buffer that
/// is zeroed first.
pub(crate) fn mode_vec_product_into(t: &DenseTensor, mode: usize, w: &[f64], out: &mut [f64]) {
    let d = t.shape()[mode];
    let stride: usize = t.shape()[..mode].iter().product();
    let high_count = t.len() / (stride * d);
    debug_assert_eq!(w.len(), stride * high_count);
    debug_assert_eq!(out.len(), d);
    out.fill(0.0);
    let data = t.data();
    let mut f = 0;
    for high in 0..high_count {
        let w_base = high * stride;
        let wslice = &w[w_base..w_base + stride];
        for o in out.iter_mut() {
            *o += dot(&data[f..f + stride], wslice);
            f += stride;
        }
    }
}

/// Sequential matricization `[X]_s`: rows group modes `0..split`, columns
/// group modes `split..order`, both first-index-fastest. Under the
/// column-major convention this is a pure reshape.
pub fn seq_matricize(t: &DenseTensor, split: usize) -> Result<Matrix, TensorError> {
    let order = t.order();
    if split == 0 || split >= order {
        return Err(TensorError::SplitOutOfRange { split, order });
    }
    let rows: usize = t.shape()[..split].iter().product();
    let cols: usize = t.shape()[split..].iter().product();
    Matrix::new(rows, cols, t.data().to_vec())
}

/// Inverse of [`seq_matricize`]: reshapes a matrix back into a tensor.
pub fn inv_seq_matricize(
    m: &Matrix,
    shape: &[usize],
    split: usize,
) -> Result<DenseTensor, TensorError> {
    let order = shape.len();
    if split == 0 || split >= order {
        return Err(TensorError::SplitOutOfRange { split, order });
    }
    let rows: usize = shape[..split].iter().product();
    let cols: usize = shape[split..].iter().product();
    if m.rows() != rows || m.cols() != cols {
        return Err(TensorError::ShapeMismatch {
            expected: vec![rows, cols],
            got: vec![m.rows(), m.cols()],
        });
    }
    DenseTensor::new(shape.to_vec(), m.data().to_vec())
}

/// Kronecker product `a ⊗ b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    let rb = b.rows();
    for ja in 0..a.cols() {
        for jb in 0..b.cols() {
            let col = ja * b.cols() + jb;
            let b_col = b.col(jb);
            for ia in 0..a.rows() {
                let av = a.get(ia, ja);
                if av == 0.0 {
                    continue;
                }
                let out_col = out.col_mut(col);
                for (ib, &bv) in b_col.iter().enumerate() {
                    out_col[ia * rb + ib] = av * bv;
                }
            }
        }
    }
    out
}

/// Kronecker product of two vectors, `hi ⊗ lo` (lo index fastest).
pub(crate) fn kron_vec(hi: &[f64], lo: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(hi.len() * lo.len());
    for &h in hi {
        out.extend(lo.iter().map(|&l| h * l));
    }
    out
}

/// Khatri-Rao product `a ⊙ b`: column `r` is `kron(a_r, b_r)`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols() != b.cols() {
        return Err(TensorError::ColumnMismatch {
            left: a.cols(),
            right: b.cols(),
        });
    }
    let mut out = Matrix::zeros(a.rows() * b.rows(), a.cols());
    for r in 0..a.cols() {
        let col = kron_vec(a.col(r), b.col(r));
        out.col_mut(r).copy_from_slice(&col);
    }
    Ok(out)
}

/// Rank-1 tensor `v1 ∘ v2 ∘ ... ∘ vn` from its factor vectors.
pub fn outer_rank1(vectors: &[&[f64]]) -> Result<DenseTensor, TensorError> {
    if vectors.is_empty() || vectors.iter().any(|v| v.is_empty()) {
        return Err(TensorError::Empty);
    }
    let shape: Vec<usize> = vectors.iter().map(|v| v.len()).collect();
    // vec(v1 ∘ ... ∘ vn) = vn ⊗ ... ⊗ v1
    let mut data = vectors[0].to_vec();
    for v in &vectors[1..] {
        data = kron_vec(v, &data);
    }
    DenseTensor::new(shape, data)
}

/// Divides every column by its 2-norm. A zero column is reported as a
/// degenerate factor; the caller decides how to recover.
pub fn col_norm(m: &Matrix) -> Result<Matrix, TensorError> {
    let mut out = m.clone();
    for c in 0..m.cols() {
        let norm = dot(m.col(c), m.col(c)).sqrt();
        if norm < 1e-300 {
            return Err(TensorError::ZeroColumn { col: c });
        }
        for x in out.col_mut(c) {
            *x /= norm;
        }
    }
    Ok(out)
}

/// Least-squares solve `argmin_X ||rhs - design*X||_F` via singular value
/// decomposition; returns the minimum-Frobenius-norm minimizer when the
/// design is rank-deficient.
pub fn solve_least_squares(design: &Matrix, rhs: &Matrix) -> Matrix {
    assert_eq!(design.rows(), rhs.rows(), "least-squares row mismatch");
    let a = nalgebra::DMatrix::from_column_slice(design.rows(), design.cols(), design.data());
    let b = nalgebra::DMatrix::from_column_slice(rhs.rows(), rhs.cols(), rhs.data());
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = sigma_max * f64::EPSILON * design.rows().max(design.cols()) as f64;
    let x = svd
        .solve(&b, eps)
        .expect("svd solve with computed u and v_t");
    Matrix::new(design.cols(), rhs.cols(), x.as_slice().to_vec())
        .expect("solution dimensions are positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: builds the mode matricization entry by entry
    /// from multi-index enumeration.
    fn mode_matricize_oracle(t: &DenseTensor, mode: usize) -> Matrix {
        let shape = t.shape();
        let d = shape[mode];
        let rest: usize = t.len() / d;
        let mut out = Matrix::zeros(d, rest);
        let order = t.order();
        let mut idx = vec![0usize; order];
        for _ in 0..t.len() {
            // column index from remaining modes, first-remaining-fastest
            let mut col = 0;
            let mut radix = 1;
            for k in 0..order {
                if k == mode {
                    continue;
                }
                col += idx[k] * radix;
                radix *= shape[k];
            }
            out.set(idx[mode], col, t.get(&idx));
            // advance multi-index, first mode fastest
            for k in 0..order {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    fn tensor_222() -> DenseTensor {
        // X[i,j,k] = i + 2(j-1) + 4(k-1) with 1-based indices
        DenseTensor::new(vec![2, 2, 2], (1..=8).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn vectorize_follows_column_major() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(vectorize(&t), &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(t.get(&[0, 0]), 1.0);
        assert_eq!(t.get(&[1, 0]), 3.0);
        assert_eq!(t.get(&[0, 1]), 2.0);

        let s = DenseTensor::new(vec![1, 1, 1], vec![7.0]).unwrap();
        assert_eq!(vectorize(&s), &[7.0]);

        assert_eq!(vectorize(&tensor_222()), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn tensor_validation() {
        assert!(DenseTensor::new(vec![2, 2], vec![1.0]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn mode_matricize_of_matrix_is_identity_and_transpose() {
        let m = DenseTensor::new(vec![2, 3], (1..=6).map(|v| v as f64).collect()).unwrap();
        let m1 = mode_matricize(&m, 0).unwrap();
        assert_eq!(m1.data(), m.data());
        assert_eq!((m1.rows(), m1.cols()), (2, 3));
        let m2 = mode_matricize(&m, 1).unwrap();
        assert_eq!((m2.rows(), m2.cols()), (3, 2));
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(m2.get(j, i), m1.get(i, j));
            }
        }
        assert!(mode_matricize(&m, 2).is_err());
    }

    #[test]
    fn mode_matricize_matches_enumeration_oracle() {
        let t = tensor_222();
        let got = mode_matricize(&t, 1).unwrap();
        assert_eq!((got.rows(), got.cols()), (2, 4));
        // rows select j: row 0 -> (i,k) pairs with j=0
        assert_eq!(got.col(0), &[1.0, 3.0]);
        assert_eq!(got.col(1), &[2.0, 4.0]);
        assert_eq!(got.col(2), &[5.0, 7.0]);
        assert_eq!(got.col(3), &[6.0, 8.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let shape = vec![3, 2, 4];
        let data: Vec<f64> = (0..24).map(|_| rng.random::<f64>()).collect();
        let t = DenseTensor::new(shape, data).unwrap();
        for mode in 0..3 {
            let got = mode_matricize(&t, mode).unwrap();
            let want = mode_matricize_oracle(&t, mode);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn mode_vec_product_matches_materialized() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = DenseTensor::new(vec![3, 2, 4], (0..24).map(|_| rng.random()).collect()).unwrap();
        for mode in 0..3 {
            let w: Vec<f64> = (0..t.len() / t.shape()[mode])
                .map(|_| rng.random::<f64>() - 0.5)
                .collect();
            let got = mode_vec_product(&t, mode, &w);
            let want = mode_matricize(&t, mode).unwrap().mul_vec(&w);
            for (g, w) in got.iter().zip(&want) {
                assert_relative_eq!(g, w, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn seq_matricize_examples() {
        let t = tensor_222();
        let m = seq_matricize(&t, 2).unwrap();
        assert_eq!((m.rows(), m.cols()), (4, 2));
        assert_eq!(m.col(0), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.col(1), &[5.0, 6.0, 7.0, 8.0]);
        // the split never reorders the flat data
        assert_eq!(m.data(), t.data());

        let m2 = DenseTensor::new(vec![2, 3], (1..=6).map(|v| v as f64).collect()).unwrap();
        let s1 = seq_matricize(&m2, 1).unwrap();
        assert_eq!(s1.data(), m2.data());

        assert!(seq_matricize(&t, 0).is_err());
        assert!(seq_matricize(&t, 3).is_err());
    }

    #[test]
    fn inv_seq_matricize_round_trip() {
        let t = tensor_222();
        let m = seq_matricize(&t, 2).unwrap();
        let back = inv_seq_matricize(&m, t.shape(), 2).unwrap();
        assert_eq!(back, t);
        let wrong = inv_seq_matricize(&m, &[2, 2, 3], 2);
        assert!(wrong.is_err());
    }

    proptest! {
        #[test]
        fn seq_round_trip_any_split(seed in 0u64..64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = vec![3, 2, 4];
            let data: Vec<f64> = (0..24).map(|_| rng.random::<f64>() - 0.5).collect();
            let t = DenseTensor::new(shape, data).unwrap();
            for split in 1..3 {
                let m = seq_matricize(&t, split).unwrap();
                prop_assert_eq!(m.data(), t.data());
                let back = inv_seq_matricize(&m, t.shape(), split).unwrap();
                prop_assert_eq!(back, t.clone());
            }
        }

        #[test]
        fn col_norm_scale_invariance(seed in 0u64..64, c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Matrix::new(4, 3, (0..12).map(|_| rng.random::<f64>() + 0.1).collect()).unwrap();
            let a = col_norm(&m).unwrap();
            let b = col_norm(&m.scaled(c)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            for col in 0..a.cols() {
                let n = dot(a.col(col), a.col(col)).sqrt();
                prop_assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kronecker_examples() {
        let i2 = Matrix::identity(2);
        let five = Matrix::new(1, 1, vec![5.0]).unwrap();
        let k = kronecker(&i2, &five);
        assert_eq!(k.data(), &[5.0, 0.0, 0.0, 5.0]);

        let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let k = kronecker(&a, &b);
        assert_eq!(k.data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn kronecker_mixed_product_identity() {
        // (A ⊗ B)(x ⊗ y) = (Ax) ⊗ (By)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = Matrix::new(3, 2, (0..6).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let b = Matrix::new(2, 4, (0..8).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs = kronecker(&a, &b).mul_vec(&kron_vec(&x, &y));
        let rhs = kron_vec(&a.mul_vec(&x), &b.mul_vec(&y));
        for (l, r) in lhs.iter().zip(&rhs) {
            assert_relative_eq!(l, r, max_relative = 1e-12);
        }
    }

    #[test]
    fn khatri_rao_examples() {
        let a = Matrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let kr = khatri_rao(&a, &b).unwrap();
        assert_eq!(kr.data(), &[3.0, 4.0, 6.0, 8.0]);

        // all-ones 1xR factor is identity on the other side
        let ones = Matrix::new(1, 3, vec![1.0; 3]).unwrap();
        let c = Matrix::new(2, 3, (1..=6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(khatri_rao(&ones, &c).unwrap().data(), c.data());

        let bad = Matrix::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(khatri_rao(&a, &bad).is_err());
    }

    #[test]
    fn khatri_rao_column_is_vectorized_outer() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u1 = Matrix::new(3, 2, (0..6).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let u2 = Matrix::new(4, 2, (0..8).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let kr = khatri_rao(&u2, &u1).unwrap(); // U2 ⊙ U1
        for r in 0..2 {
            let outer = outer_rank1(&[u1.col(r), u2.col(r)]).unwrap();
            for (a, b) in kr.col(r).iter().zip(outer.data()) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn outer_rank1_examples() {
        let t = outer_rank1(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.get(&[0, 1]), 1.0);
        assert_eq!(t.data().iter().map(|x| x.abs()).sum::<f64>(), 1.0);

        let s = outer_rank1(&[&[2.0], &[3.0], &[4.0]]).unwrap();
        assert_eq!(s.shape(), &[1, 1, 1]);
        assert_eq!(s.data(), &[24.0]);

        assert!(outer_rank1(&[]).is_err());
    }

    #[test]
    fn outer_rank1_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v1: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
        let v2: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
        let v3: Vec<f64> = (0..2).map(|_| rng.random::<f64>() - 0.5).collect();
        let t = outer_rank1(&[&v1, &v2, &v3]).unwrap();
        let want = dot(&v1, &v1).sqrt() * dot(&v2, &v2).sqrt() * dot(&v3, &v3).sqrt();
        assert_relative_eq!(t.frobenius_norm(), want, max_relative = 1e-12);
    }

    #[test]
    fn col_norm_examples() {
        let m = Matrix::new(2, 2, vec![3.0, 4.0, 0.0, 1.0]).unwrap();
        let n = col_norm(&m).unwrap();
        assert_eq!(n.data(), &[0.6, 0.8, 0.0, 1.0]);
        // idempotence
        let nn = col_norm(&n).unwrap();
        for (a, b) in n.data().iter().zip(nn.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-15);
        }
        let z = Matrix::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(col_norm(&z), Err(TensorError::ZeroColumn { col: 1 })));
    }

    #[test]
    fn least_squares_identity_and_mean() {
        let design = Matrix::identity(3);
        let rhs = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = solve_least_squares(&design, &rhs);
        for (a, b) in x.data().iter().zip(rhs.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }

        let design = Matrix::new(2, 1, vec![1.0, 1.0]).unwrap();
        let rhs = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let x = solve_least_squares(&design, &rhs);
        assert_relative_eq!(x.get(0, 0), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn least_squares_residual_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..20 {
            let design =
                Matrix::new(8, 3, (0..24).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
            let rhs =
                Matrix::new(8, 2, (0..16).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
            let x = solve_least_squares(&design, &rhs);
            let resid = rhs.sub(&design.matmul(&x));
            let gram_resid = design.tr_matmul(&resid);
            assert!(gram_resid.frobenius_norm() <= 1e-8 * rhs.frobenius_norm());
        }
    }

    #[test]
    fn least_squares_min_norm_on_rank_deficiency() {
        // duplicated column: solutions form a line; SVD picks the one with
        // the smallest norm, which has equal weights on both columns
        let design = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        let rhs = Matrix::new(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        let x = solve_least_squares(&design, &rhs);
        assert_relative_eq!(x.get(0, 0), 1.0, max_relative = 1e-10);
        assert_relative_eq!(x.get(1, 0), 1.0, max_relative = 1e-10);
    }
}
