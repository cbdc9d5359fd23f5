//! Dense symmetric helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest `|A_ij − A_ji|`.
pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn check_symmetric(a: &DMatrix<f64>, tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "expected a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let asym = max_asymmetry(a);
    if asym > tol * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenpairs of a symmetric matrix, eigenvalues nonincreasing.
pub fn sym_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Spectral norm of a symmetric matrix: the largest absolute eigenvalue.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `A^p` for a symmetric positive definite `A` via its eigendecomposition.
pub fn spd_power(a: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen_desc(a);
    let top = values.first().copied().unwrap_or(0.0);
    if values.iter().any(|&v| !(v > 1e-14 * top.abs().max(f64::MIN_POSITIVE))) {
        return Err(Error::NotPositiveDefinite);
    }
    let scaled = DVector::from_iterator(values.len(), values.iter().map(|v| v.powf(p)));
    Ok(&vectors * DMatrix::from_diagonal(&scaled) * vectors.transpose())
}

pub fn spd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(a, 0.5)
}

pub fn spd_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(a, -0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_square_root_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let r = spd_inv_sqrt(&a).unwrap();
        let id = &r * &r * &a;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
        let s = spd_sqrt(&a).unwrap();
        assert!(((&s * &s) - &a).abs().max() < 1e-12);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(spd_sqrt(&a), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn eigenvalues_sorted_descending() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -2.0]);
        let (vals, vecs) = sym_eigen_desc(&a);
        assert_eq!(vals, vec![5.0, 1.0, -2.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
        assert_eq!(sym_spectral_norm(&a), 5.0);
    }
}
