//! Small dense helpers shared by the solver, the planner and the tests.

use nalgebra::{DMatrix, Matrix6, SymmetricEigen};

/// Eigenvalues below `RANK_CUTOFF * lambda_max` are treated as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Pseudo-inverse of a symmetric matrix by eigen-decomposition, with its rank.
pub fn pinv_symmetric(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    if max == 0.0 {
        return (out, 0);
    }
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > RANK_CUTOFF * max {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / lambda;
        }
    }
    (out, rank)
}

/// 6x6 variant of [`pinv_symmetric`]; the flag is false when rank < 6.
pub fn pinv_symmetric6(m: &Matrix6<f64>) -> (Matrix6<f64>, bool) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut out = Matrix6::zeros();
    let mut full = true;
    if max == 0.0 {
        return (out, false);
    }
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > RANK_CUTOFF * max {
            let v = eig.eigenvectors.column(i);
            out += (v * v.transpose()) / lambda;
        } else {
            full = false;
        }
    }
    (out, full)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}
