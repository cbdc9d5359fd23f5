//! Gauss–Hermite quadrature for expectations under a standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights with `Σ w_i f(x_i) ≈ E f(Z)`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials (zero diagonal, off-diagonal `√k`).
    pub fn new(points: usize) -> Self {
        assert!(points >= 1, "quadrature needs at least one node");
        let jacobi = DMatrix::from_fn(points, points, |i, j| {
            if i + 1 == j {
                (j as f64).sqrt()
            } else if j + 1 == i {
                (i as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..points)
            .map(|k| {
                let v0 = eig.eigenvectors[(0, k)];
                (eig.eigenvalues[k], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments() {
        let gh = GaussHermite::new(64);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!(gh.expect(|x| x).abs() < 1e-12);
        assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((gh.expect(|x| x.powi(6)) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn lognormal_mean() {
        // E e^{κZ} = e^{κ²/2}
        let gh = GaussHermite::new(64);
        for kappa in [0.5, 1.0, 2.0] {
            let want = (kappa * kappa / 2.0f64).exp();
            assert!((gh.expect(|x| (kappa * x).exp()) / want - 1.0).abs() < 1e-10);
        }
    }
}
