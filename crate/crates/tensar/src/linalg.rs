//! Internal dense solvers backing the estimators. Small symmetric systems
//! arise from normal-equation accumulation; they are solved through an
//! eigendecomposition so that rank-deficient blocks fall back to the
//! minimum-norm solution.

use crate::tensor::Matrix;
use nalgebra::DMatrix;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.rows(), m.cols(), m.data())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::new(m.nrows(), m.ncols(), m.as_slice().to_vec()).expect("nonempty nalgebra matrix")
}

/// Solves `M X = B` for symmetric positive semidefinite `M`, dropping
/// eigenvalues below a relative threshold (pseudo-inverse). Returns the
/// solution and whether any eigenvalue was dropped.
pub(crate) fn solve_sym_minnorm(m: &Matrix, b: &Matrix) -> (Matrix, bool) {
    debug_assert_eq!(m.rows(), m.cols());
    debug_assert_eq!(m.rows(), b.rows());
    let eig = to_na(m).symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = lambda_max * f64::EPSILON * m.rows() as f64;
    let mut dropped = false;
    // X = V diag(1/lambda) V^T B with small eigenvalues zeroed
    let vt_b = eig.eigenvectors.transpose() * to_na(b);
    let mut scaled = vt_b;
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        if *lam <= tol {
            dropped = true;
            scaled.row_mut(i).fill(0.0);
        } else {
            let inv = 1.0 / lam;
            scaled.row_mut(i).scale_mut(inv);
        }
    }
    let x = eig.eigenvectors * scaled;
    (from_na(&x), dropped)
}

/// Solves `X M = B` for symmetric `M` (right-sided), minimum-norm on rank
/// deficiency.
pub(crate) fn solve_sym_right(m: &Matrix, b: &Matrix) -> (Matrix, bool) {
    let (xt, dropped) = solve_sym_minnorm(m, &b.transpose());
    (xt.transpose(), dropped)
}

/// Smallest singular value of a matrix.
pub(crate) fn smallest_singular_value(m: &Matrix) -> f64 {
    to_na(m)
        .singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral radius of a square matrix by dense eigendecomposition.
pub(crate) fn spectral_radius_dense(m: &Matrix) -> f64 {
    to_na(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub(crate) fn cholesky_factor(m: &Matrix) -> Option<Matrix> {
    to_na(m).cholesky().map(|c| from_na(&c.l()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sym_solve_recovers_known_solution() {
        // M = A^T A with A well conditioned
        let a = Matrix::new(3, 3, vec![2.0, 0.0, 1.0, 1.0, 3.0, 0.0, 0.0, 1.0, 2.0]).unwrap();
        let m = a.tr_matmul(&a);
        let x_true = Matrix::new(3, 2, vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        let b = m.matmul(&x_true);
        let (x, dropped) = solve_sym_minnorm(&m, &b);
        assert!(!dropped);
        for (got, want) in x.data().iter().zip(x_true.data()) {
            assert_relative_eq!(got, want, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn sym_solve_rank_deficient_is_min_norm() {
        // M = v v^T has rank 1; solution should live in span(v)
        let v = [1.0, 2.0];
        let m = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let b = Matrix::new(2, 1, vec![5.0, 10.0]).unwrap(); // = M [1,2]^T ... M*[1;2]=[5;10]
        let (x, dropped) = solve_sym_minnorm(&m, &b);
        assert!(dropped);
        // minimum-norm solution of M x = b with b in range: x = v (v'v)^{-2} v' b
        let scale = (v[0] * 5.0 + v[1] * 10.0) / (5.0f64 * 5.0);
        assert_relative_eq!(x.get(0, 0), v[0] * scale, max_relative = 1e-10);
        assert_relative_eq!(x.get(1, 0), v[1] * scale, max_relative = 1e-10);
    }

    #[test]
    fn spectral_radius_of_rotation_scaled() {
        // 0.8 * rotation has complex eigenvalues of modulus 0.8
        let c = (0.3f64).cos() * 0.8;
        let s = (0.3f64).sin() * 0.8;
        let m = Matrix::new(2, 2, vec![c, s, -s, c]).unwrap();
        assert_relative_eq!(spectral_radius_dense(&m), 0.8, max_relative = 1e-10);
    }

    #[test]
    fn smallest_singular_value_of_orthonormal_is_one() {
        let m = Matrix::identity(4);
        assert_relative_eq!(smallest_singular_value(&m), 1.0, max_relative = 1e-12);
    }
}
