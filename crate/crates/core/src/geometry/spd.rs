//! Matrix functions on the SPD cone under the affine-invariant metric.

use nalgebra::{DMatrix, SymmetricEigen};

use super::point::symmetrize;

/// Applies a scalar function to the eigenvalues of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let out = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    symmetrize(&out)
}

pub fn sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::sqrt)
}

pub fn inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| 1.0 / x.sqrt())
}

pub fn log(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::ln)
}

pub fn exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, f64::exp)
}

/// Eigenvalues of `y^{-1} z`, computed as those of `L^{-1} z L^{-T}` with
/// `y = L L^T`.
pub fn relative_eigenvalues(y: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<f64> {
    let l = y
        .clone()
        .cholesky()
        .expect("SPD point must admit a Cholesky factor")
        .unpack();
    let a = l
        .solve_lower_triangular(z)
        .expect("triangular factor is invertible");
    let w = l
        .solve_lower_triangular(&a.transpose())
        .expect("triangular factor is invertible");
    SymmetricEigen::new(symmetrize(&w))
        .eigenvalues
        .iter()
        .copied()
        .collect()
}

/// Squared affine-invariant distance `tr[(log(y^{-1} z))^2]`.
pub fn distance_sq(y: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    relative_eigenvalues(y, z)
        .into_iter()
        .map(|l| {
            let ll = l.ln();
            ll * ll
        })
        .sum()
}

/// Logarithm map at `y`, expressed in the whitened frame at `y`:
/// `log(y^{-1/2} x y^{-1/2})`. Its Frobenius norm is the distance.
pub fn log_whitened(y_inv_sqrt: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    log(&symmetrize(&(y_inv_sqrt * x * y_inv_sqrt)))
}

/// Exponential map at `y` for a whitened tangent vector `v`.
pub fn exp_whitened(y_sqrt: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(y_sqrt * exp(v) * y_sqrt))
}
