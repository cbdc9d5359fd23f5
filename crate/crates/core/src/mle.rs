//! Maximum likelihood for the canonical-link model `y_i ~ Q_{ξ_i′γ}`.
//!
//! `L_n(g) = Σ (ξ_i′g) y_i − ψ(ξ_i′g)` is concave, so a damped Newton
//! iteration converges from any start that stays inside the overflow guard.
//! The diagnostics give the local expansion `ĝ = γ + J_n^{−1/2}(W_n + r_n)`
//! and the population information `B_n` that `A_n = n^{−1}Σ η_iη_i′ψ̈(λ_i)`
//! concentrates around.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::ExpFamilySpec;
use crate::linalg::{spd_inv_sqrt, spd_sqrt, sym_eigen_desc, sym_spectral_norm};
use crate::quadrature::GaussHermite;

/// Rows `ξ_i ∈ R^{N+1}` with responses `y_i`.
#[derive(Debug, Clone)]
pub struct DesignSet {
    xi: DMatrix<f64>,
    y: Vec<f64>,
    family: ExpFamilySpec,
    gamma_true: Option<DVector<f64>>,
    warnings: Vec<String>,
}

impl DesignSet {
    pub fn new(xi: DMatrix<f64>, y: Vec<f64>, family: ExpFamilySpec) -> Result<Self> {
        if xi.nrows() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} design rows for {} responses",
                xi.nrows(),
                y.len()
            )));
        }
        if xi.ncols() == 0 || xi.nrows() == 0 {
            return Err(Error::InvalidArgument("empty design".into()));
        }
        if xi.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut warnings = Vec::new();
        if xi.nrows() <= xi.ncols() {
            warnings.push(format!("n = {} does not exceed N + 1 = {}", xi.nrows(), xi.ncols()));
        }
        Ok(Self {
            xi,
            y,
            family,
            gamma_true: None,
            warnings,
        })
    }

    pub fn with_truth(mut self, gamma: DVector<f64>) -> Result<Self> {
        if gamma.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "γ has length {}, design has {} columns",
                gamma.len(),
                self.dim()
            )));
        }
        self.gamma_true = Some(gamma);
        Ok(self)
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn family(&self) -> ExpFamilySpec {
        self.family
    }

    pub fn gamma_true(&self) -> Option<&DVector<f64>> {
        self.gamma_true.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn n(&self) -> usize {
        self.xi.nrows()
    }

    /// `N + 1`.
    pub fn dim(&self) -> usize {
        self.xi.ncols()
    }

    fn linear_predictor(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.xi * g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge factor: `ridge·trace/(N+1)` is added to a singular Hessian.
    pub ridge: f64,
    pub overflow_guard: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            ridge: 1e-12,
            overflow_guard: 500.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub ghat: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `‖∇L_n(ĝ)‖_∞`.
    pub grad_norm: f64,
    pub warnings: Vec<String>,
}

fn guard_check(lambda: &DVector<f64>, guard: f64) -> Result<()> {
    match lambda.iter().position(|l| !(l.abs() <= guard)) {
        Some(row) => Err(Error::Divergence {
            row,
            value: lambda[row].abs(),
        }),
        None => Ok(()),
    }
}

pub fn log_likelihood(d: &DesignSet, g: &DVector<f64>) -> f64 {
    let lambda = d.linear_predictor(g);
    lambda
        .iter()
        .zip(&d.y)
        .map(|(l, y)| l * y - d.family.psi(*l))
        .sum()
}

pub fn gradient(d: &DesignSet, g: &DVector<f64>) -> DVector<f64> {
    let lambda = d.linear_predictor(g);
    let resid = DVector::from_iterator(
        d.n(),
        lambda.iter().zip(&d.y).map(|(l, y)| y - d.family.psi1(*l)),
    );
    d.xi.tr_mul(&resid)
}

/// `J(g) = Σ ξ_iξ_i′ψ̈(ξ_i′g)`, the negative Hessian of `L_n`.
pub fn information(d: &DesignSet, g: &DVector<f64>) -> DMatrix<f64> {
    let lambda = d.linear_predictor(g);
    weighted_gram(&d.xi, lambda.iter().map(|l| d.family.psi2(*l)))
}

fn weighted_gram(x: &DMatrix<f64>, weights: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (mut row, w) in scaled.row_iter_mut().zip(weights) {
        row *= w;
    }
    let j = x.tr_mul(&scaled);
    (&j + j.transpose()) * 0.5
}

/// Solve `J s = grad`, adding a ridge when `J` is numerically singular.
fn newton_direction(
    j: DMatrix<f64>,
    grad: &DVector<f64>,
    opts: &FitOptions,
    warnings: &mut Vec<String>,
) -> Result<DVector<f64>> {
    if let Some(ch) = j.clone().cholesky() {
        return Ok(ch.solve(grad));
    }
    let p = j.nrows();
    let mut shift = (opts.ridge * j.trace() / p as f64).max(f64::MIN_POSITIVE);
    for _ in 0..40 {
        let mut jr = j.clone();
        for i in 0..p {
            jr[(i, i)] += shift;
        }
        if let Some(ch) = jr.cholesky() {
            warnings.push(format!("singular information matrix, ridge {shift:e} added"));
            return Ok(ch.solve(grad));
        }
        shift *= 10.0;
    }
    Err(Error::NotPositiveDefinite)
}

/// Damped Newton from `start` (or `0`).
pub fn fit_mle(d: &DesignSet, opts: &FitOptions, start: Option<&DVector<f64>>) -> Result<FitResult> {
    let p = d.dim();
    let mut g = match start {
        Some(s) if s.len() == p => s.clone(),
        Some(s) => {
            return Err(Error::InvalidArgument(format!(
                "start has length {}, expected {p}",
                s.len()
            )))
        }
        None => DVector::zeros(p),
    };
    guard_check(&d.linear_predictor(&g), opts.overflow_guard)?;
    let mut warnings = d.warnings.clone();
    let mut current = log_likelihood(d, &g);
    let mut grad = gradient(d, &g);
    let mut iterations = 0;
    while grad.amax() > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let dir = newton_direction(information(d, &g), &grad, opts, &mut warnings)?;
        let mut step = 1.0;
        let mut last_overflow;
        let accepted = loop {
            let cand = &g + &dir * step;
            let lambda = d.linear_predictor(&cand);
            match guard_check(&lambda, opts.overflow_guard) {
                Err(e) => last_overflow = Some(e),
                Ok(()) => {
                    last_overflow = None;
                    let value = log_likelihood(d, &cand);
                    // round-off slack
                    if value.is_finite() && value >= current - 1e-13 * current.abs().max(1.0) {
                        break Some((cand, value));
                    }
                }
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((cand, value)) => {
                g = cand;
                current = value;
                grad = gradient(d, &g);
            }
            None => {
                if let Some(e) = last_overflow {
                    return Err(e);
                }
                warnings.push("line search stalled; returning the current near-maximizer".into());
                break;
            }
        }
    }
    let grad_norm = grad.amax();
    let converged = grad_norm <= opts.tol;
    if !converged {
        warnings.push(format!("stopped after {iterations} iterations, ‖∇L‖∞ = {grad_norm:e}"));
    }
    Ok(FitResult {
        ghat: g,
        converged,
        iterations,
        grad_norm,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct MleDiagnostics {
    pub j_n: DMatrix<f64>,
    pub w_n: DVector<f64>,
    pub r_n: DVector<f64>,
    /// `max_i |w_i|` with `w_i = J_n^{−1/2}ξ_i`.
    pub m_n: f64,
}

impl MleDiagnostics {
    pub fn w_norm_sq(&self) -> f64 {
        self.w_n.norm_squared()
    }

    pub fn r_norm(&self) -> f64 {
        self.r_n.norm()
    }

    /// `M_n ≤ ε₁ε₂ / (2G(1)N₊)`, the condition under which `|r_n| ≤ ε₁`
    /// holds on `{|W_n| ≤ √(N₊/ε₂)}`.
    pub fn precondition_holds(&self, family: &ExpFamilySpec, eps1: f64, eps2: f64) -> bool {
        let np = self.w_n.len() as f64;
        self.m_n <= eps1 * eps2 / (2.0 * family.growth(1.0) * np)
    }

    pub fn on_score_event(&self, eps2: f64) -> bool {
        self.w_n.norm() <= (self.w_n.len() as f64 / eps2).sqrt()
    }
}

pub fn mle_diagnostics(d: &DesignSet, gamma: &DVector<f64>, fit: &FitResult) -> Result<MleDiagnostics> {
    if gamma.len() != d.dim() || fit.ghat.len() != d.dim() {
        return Err(Error::InvalidArgument("γ and ĝ must match the design width".into()));
    }
    let j_n = information(d, gamma);
    let inv_half = spd_inv_sqrt(&j_n)?;
    let half = spd_sqrt(&j_n)?;
    let lambda = d.linear_predictor(gamma);
    let w = &d.xi * &inv_half; // row i is w_i′
    let resid = DVector::from_iterator(
        d.n(),
        lambda.iter().zip(&d.y).map(|(l, y)| y - d.family.psi1(*l)),
    );
    let w_n = w.tr_mul(&resid);
    let r_n = &half * (&fit.ghat - gamma) - &w_n;
    let m_n = w
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max);
    Ok(MleDiagnostics { j_n, w_n, r_n, m_n })
}

/// `r_j = E η^j ψ̈(ā + κη)` for `j = 0, 1, 2`, `η ~ N(0, 1)`.
pub fn psi2_moments(family: &ExpFamilySpec, a_bar: f64, kappa: f64) -> Result<[f64; 3]> {
    let gh = GaussHermite::new(64);
    let reach = a_bar.abs() + 15.0 * kappa.abs();
    family.check_lambda(reach)?;
    let r = [0, 1, 2].map(|p| gh.expect(|x| x.powi(p) * family.psi2(a_bar + kappa * x)));
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow {
            family: family.name(),
            lambda: reach,
            limit: family.lambda_limit(),
        });
    }
    Ok(r)
}

/// `A_n = n^{−1}Σ η_iη_i′ψ̈(λ_i)` with `η_i = D^{−1}ξ_i`, and its expectation
/// `B_n` when `η_{i,1..N}` are independent standard normals and the first
/// design column is constant.
pub fn an_bn_matrices(
    d: &DesignSet,
    scale: &[f64],
    gamma: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = d.dim();
    if scale.len() != p || gamma.len() != p {
        return Err(Error::InvalidArgument("D and γ must match the design width".into()));
    }
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::InvalidArgument("D must be nonsingular".into()));
    }
    let eta = DMatrix::from_fn(d.n(), p, |i, k| d.xi[(i, k)] / scale[k]);
    let lambda = d.linear_predictor(gamma);
    let a_n = weighted_gram(&eta, lambda.iter().map(|l| d.family.psi2(*l))) / d.n() as f64;

    let v = d.xi[(0, 0)];
    let a_bar = gamma[0] * v;
    let coef: Vec<f64> = (1..p).map(|k| gamma[k] * scale[k]).collect();
    let kappa = coef.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [r0, r1, r2] = psi2_moments(&d.family, a_bar, kappa)?;
    let c = v / scale[0];
    let mut b_n = DMatrix::zeros(p, p);
    b_n[(0, 0)] = c * c * r0;
    for k in 1..p {
        let u = if kappa > 0.0 { coef[k - 1] / kappa } else { 0.0 };
        b_n[(0, k)] = c * r1 * u;
        b_n[(k, 0)] = c * r1 * u;
        for l in 1..p {
            let ul = if kappa > 0.0 { coef[l - 1] / kappa } else { 0.0 };
            b_n[(k, l)] = if k == l { r0 } else { 0.0 } + (r2 - r0) * u * ul;
        }
    }
    Ok((a_n, b_n))
}

#[derive(Debug, Clone, Serialize)]
pub struct AnBnCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub a_minus_b: f64,
    pub b_inv_norm: f64,
    /// `‖A_n − B_n‖ ≤ (2‖B_n^{−1}‖)^{−1}`.
    pub assumption_holds: bool,
    /// `max_i |η_i|`, reported against `√n`.
    pub max_eta: f64,
}

/// `Σ_j |κ_j′(ĝ − γ)|²` against `6‖B_n^{−1}‖/(nε)·Σ_j |D^{−1}κ_j|²`.
pub fn anbn_error_check(
    d: &DesignSet,
    scale: &[f64],
    gamma: &DVector<f64>,
    fit: &FitResult,
    kappas: &[DVector<f64>],
    eps: f64,
) -> Result<AnBnCheck> {
    let (a_n, b_n) = an_bn_matrices(d, scale, gamma)?;
    let (b_vals, _) = sym_eigen_desc(&b_n);
    let b_min = *b_vals.last().expect("nonempty");
    if !(b_min > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let b_inv_norm = 1.0 / b_min;
    let a_minus_b = sym_spectral_norm(&(&a_n - &b_n));
    let diff = &fit.ghat - gamma;
    let mut lhs = 0.0;
    let mut weight = 0.0;
    for kappa in kappas {
        if kappa.len() != d.dim() {
            return Err(Error::InvalidArgument("κ_j must match the design width".into()));
        }
        lhs += kappa.dot(&diff).powi(2);
        weight += kappa
            .iter()
            .zip(scale)
            .map(|(k, s)| (k / s).powi(2))
            .sum::<f64>();
    }
    let rhs = 6.0 * b_inv_norm / (d.n() as f64 * eps) * weight;
    let max_eta = (0..d.n())
        .map(|i| {
            (0..d.dim())
                .map(|k| (d.xi[(i, k)] / scale[k]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    Ok(AnBnCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
        a_minus_b,
        b_inv_norm,
        assumption_holds: a_minus_b <= 0.5 / b_inv_norm,
        max_eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::FamilyKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn family(kind: FamilyKind) -> ExpFamilySpec {
        ExpFamilySpec::new(kind)
    }

    fn random_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, k| {
            if k == 0 {
                1.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            }
        })
    }

    #[test]
    fn poisson_intercept_is_log_mean() {
        let d = DesignSet::new(DMatrix::from_element(3, 1, 1.0), vec![1.0, 2.0, 3.0], family(FamilyKind::Poisson))
            .unwrap();
        let fit = fit_mle(&d, &FitOptions::default(), None).unwrap();
        assert!(fit.converged);
        assert!((fit.ghat[0] - 2f64.ln()).abs() < 1e-12);
        // grid-search oracle
        let best = (0..20001)
            .map(|i| -1.0 + i as f64 * 1e-4)
            .max_by(|a, b| {
                let la = 6.0 * a - 3.0 * a.exp();
                let lb = 6.0 * b - 3.0 * b.exp();
                la.total_cmp(&lb)
            })
            .unwrap();
        assert!((fit.ghat[0] - best).abs() < 1e-4);
    }

    #[test]
    fn gaussian_is_least_squares() {
        let x = random_design(50, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = DesignSet::new(x.clone(), y.clone(), family(FamilyKind::Gaussian)).unwrap();
        let fit = fit_mle(&d, &FitOptions::default(), None).unwrap();
        let ols = (x.transpose() * &x)
            .cholesky()
            .unwrap()
            .solve(&(x.transpose() * DVector::from_vec(y)));
        assert!((&fit.ghat - ols).amax() < 1e-8);
    }

    #[test]
    fn noise_free_means_recover_gamma() {
        let x = random_design(40, 3, 5);
        let gamma = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        let fam = family(FamilyKind::Gaussian);
        let y: Vec<f64> = (&x * &gamma).iter().map(|l| fam.psi1(*l)).collect();
        let d = DesignSet::new(x, y, fam).unwrap();
        let fit = fit_mle(&d, &FitOptions::default(), None).unwrap();
        assert!((&fit.ghat - &gamma).amax() < 1e-10);
        let diag = mle_diagnostics(&d, &gamma, &fit).unwrap();
        assert!(diag.w_n.amax() < 1e-10 && diag.r_n.amax() < 1e-8);
        let scale = [1.0, 0.5, 0.5];
        let kappas = [DVector::from_vec(vec![0.0, 1.0, 0.0])];
        let chk = anbn_error_check(&d, &scale, &gamma, &fit, &kappas, 0.1).unwrap();
        assert!(chk.lhs < 1e-18 && chk.holds);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in FamilyKind::ALL {
            let x = random_design(30, 3, 8);
            let fam = family(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let y: Vec<f64> = (0..30).map(|_| fam.sample(0.2, &mut rng).unwrap()).collect();
            let d = DesignSet::new(x, y, fam).unwrap();
            let g = DVector::from_vec(vec![0.1, -0.4, 0.3]);
            let grad = gradient(&d, &g);
            let info = information(&d, &g);
            let h = 1e-5;
            for k in 0..3 {
                let mut e = DVector::zeros(3);
                e[k] = h;
                let fd = (log_likelihood(&d, &(&g + &e)) - log_likelihood(&d, &(&g - &e))) / (2.0 * h);
                assert!((fd - grad[k]).abs() <= 1e-5 * grad[k].abs().max(1.0));
                let fd_h = (gradient(&d, &(&g + &e)) - gradient(&d, &(&g - &e))) / (2.0 * h);
                for l in 0..3 {
                    assert!((-fd_h[l] - info[(l, k)]).abs() <= 1e-5 * info[(l, k)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn warm_and_cold_starts_agree() {
        let x = random_design(200, 3, 10);
        let fam = family(FamilyKind::Bernoulli);
        let gamma = DVector::from_vec(vec![0.2, 0.8, -0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (&x * &gamma).iter().map(|l| fam.sample(*l, &mut rng).unwrap()).collect();
        let d = DesignSet::new(x, y, fam).unwrap();
        let cold = fit_mle(&d, &FitOptions::default(), None).unwrap();
        let warm = fit_mle(&d, &FitOptions::default(), Some(&gamma)).unwrap();
        assert!(cold.converged && warm.converged);
        assert!((&cold.ghat - &warm.ghat).amax() < 1e-8);
        // concavity along random lines
        let best = log_likelihood(&d, &cold.ghat);
        for s in [-1.0, -0.1, 0.01, 0.5] {
            let u = DVector::from_vec(vec![0.3, -0.2, 0.9]);
            assert!(log_likelihood(&d, &(&cold.ghat + u * s)) <= best);
        }
    }

    #[test]
    fn divergence_names_the_row() {
        let mut x = DMatrix::from_element(3, 1, 1.0);
        x[(2, 0)] = 1000.0;
        let d = DesignSet::new(x, vec![1.0, 1.0, 1.0], family(FamilyKind::Poisson)).unwrap();
        let start = DVector::from_vec(vec![1.0]);
        assert!(matches!(
            fit_mle(&d, &FitOptions::default(), Some(&start)),
            Err(Error::Divergence { row: 2, .. })
        ));
    }

    #[test]
    fn singular_design_gets_ridge() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let d = DesignSet::new(x, vec![0.5, 1.0, 1.5, 2.0], family(FamilyKind::Gaussian)).unwrap();
        let fit = fit_mle(&d, &FitOptions::default(), None).unwrap();
        assert!(fit.warnings.iter().any(|w| w.contains("ridge")));
        assert!((fit.ghat[0] + fit.ghat[1] - 1.25).abs() < 1e-6);
    }

    #[test]
    fn bn_closed_forms() {
        let x = random_design(10, 3, 12);
        let d = DesignSet::new(x, vec![0.0; 10], family(FamilyKind::Gaussian)).unwrap();
        let gamma = DVector::from_vec(vec![0.1, 0.4, -0.3]);
        let (_, b) = an_bn_matrices(&d, &[1.0, 0.5, 0.5], &gamma).unwrap();
        assert!((b - DMatrix::identity(3, 3)).amax() < 1e-12);
        let dp = DesignSet::new(random_design(10, 3, 13), vec![0.0; 10], family(FamilyKind::Poisson)).unwrap();
        let zero = DVector::zeros(3);
        let (_, b) = an_bn_matrices(&dp, &[1.0, 0.5, 0.5], &zero).unwrap();
        assert!((b - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn bn_matches_monte_carlo_an() {
        // Poisson with a nonzero slope: A_n over a large sample approaches B_n
        let n = 200_000;
        let scale = [1.0, 0.6, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = DMatrix::from_fn(n, 3, |_, k| {
            if k == 0 {
                1.0
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale[k] * z
            }
        });
        let d = DesignSet::new(x, vec![0.0; n], family(FamilyKind::Poisson)).unwrap();
        let gamma = DVector::from_vec(vec![0.2, 0.7, -0.9]);
        let (a, b) = an_bn_matrices(&d, &scale, &gamma).unwrap();
        assert!((a - b).amax() < 0.03);
    }
}
