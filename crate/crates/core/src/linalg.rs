//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute deviation between `m` and its transpose.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let d = m - m.transpose();
    d.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Largest real part over the eigenvalues of (a generally nonsymmetric) `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True if every eigenvalue of `m` has real part strictly below `-tol`.
pub fn is_hurwitz(m: &DMatrix<f64>, tol: f64) -> bool {
    spectral_abscissa(m) < -tol
}

/// Induced 2-norm (largest singular value).
pub fn induced_two_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// True if the symmetric part of `m` has all eigenvalues above `tol`.
pub fn is_positive_definite(m: &DMatrix<f64>, tol: f64) -> bool {
    lambda_min(m) > tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lambda_min_of_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::dvector![3.0, -2.0, 7.0]);
        assert_relative_eq!(lambda_min(&m), -2.0, epsilon = 1e-12);
        assert_relative_eq!(lambda_max(&m), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn hurwitz_detection() {
        let stable = DMatrix::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -0.5]);
        let unstable = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(is_hurwitz(&stable, 1e-9));
        assert!(!is_hurwitz(&unstable, 1e-9));
    }

    #[test]
    fn induced_norm_matches_singular_value() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0]);
        assert_relative_eq!(induced_two_norm(&m), 4.0, epsilon = 1e-12);
    }
}
