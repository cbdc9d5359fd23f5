//! Gaussian predictors simulated through a truncated Karhunen–Loève expansion
//! `X = μ + Σ_j √θ_j η_j φ_j`, together with the sample moments the estimators
//! and the Monte Carlo checks need.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::{cosine_basis, BasisSet, Grid, GridFunction};
use crate::stats::{binomial_std_error, Estimate};

/// KL truncation used when the configuration does not fix one.
pub fn default_truncation(grid_size: usize) -> usize {
    (grid_size / 2).clamp(1, 200)
}

/// Mean function, eigenvalues and eigenfunctions of a Gaussian process.
#[derive(Debug, Clone)]
pub struct GPModel {
    mu: GridFunction,
    theta: Vec<f64>,
    basis: BasisSet,
    alpha: f64,
    r: f64,
}

impl GPModel {
    /// `θ_j = R j^{−α}` on the cosine basis, `j ≤ J_max`. The eigenvalue
    /// envelope and spacing conditions are checked before returning.
    pub fn new(grid_size: usize, alpha: f64, r: f64, j_max: usize, mu: Option<GridFunction>) -> Result<Self> {
        if !(alpha > 1.0) || !(r > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need α > 1 and R > 0, got α = {alpha}, R = {r}"
            )));
        }
        if 2 * j_max > grid_size {
            return Err(Error::InvalidArgument(format!(
                "grid size {grid_size} must be at least 2·J_max = {}",
                2 * j_max
            )));
        }
        let basis = cosine_basis(grid_size, j_max)?;
        let grid = basis.grid();
        let mu = match mu {
            Some(m) if m.grid() != grid => return Err(Error::GridMismatch(grid.len(), m.grid().len())),
            Some(m) => m,
            None => GridFunction::zeros(grid),
        };
        let theta = (1..=j_max).map(|j| r * (j as f64).powf(-alpha)).collect();
        let model = Self {
            mu,
            theta,
            basis,
            alpha,
            r,
        };
        model.check_eigenvalue_conditions()?;
        Ok(model)
    }

    /// Arbitrary nonnegative eigenvalues on a given basis. No envelope or
    /// spacing checks; `alpha` and `R` are recorded as NaN.
    pub fn with_eigenvalues(basis: BasisSet, theta: Vec<f64>, mu: Option<GridFunction>) -> Result<Self> {
        if theta.len() > basis.len() {
            return Err(Error::InvalidArgument(format!(
                "{} eigenvalues for {} basis functions",
                theta.len(),
                basis.len()
            )));
        }
        if theta.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("eigenvalues must be nonnegative".into()));
        }
        let grid = basis.grid();
        let mu = mu.unwrap_or_else(|| GridFunction::zeros(grid));
        if mu.grid() != grid {
            return Err(Error::GridMismatch(grid.len(), mu.grid().len()));
        }
        Ok(Self {
            mu,
            theta,
            basis,
            alpha: f64::NAN,
            r: f64::NAN,
        })
    }

    /// `R k^{−α} ≥ θ_k ≥ θ_{k+1} + (α/R) k^{−α−1}` for every `k < J_max`.
    pub fn check_eigenvalue_conditions(&self) -> Result<()> {
        let (alpha, r) = (self.alpha, self.r);
        for k in 1..=self.theta.len() {
            let kf = k as f64;
            let th = self.theta[k - 1];
            if th > r * kf.powf(-alpha) * (1.0 + 1e-12) {
                return Err(Error::SpacingViolation(k));
            }
            if k < self.theta.len() {
                let next = self.theta[k];
                if th < next + (alpha / r) * kf.powf(-alpha - 1.0) {
                    return Err(Error::SpacingViolation(k));
                }
            }
        }
        Ok(())
    }

    /// The consequence `θ_k − θ_j ≥ R^{−1}(k^{−α} − j^{−α})` for `k < j`.
    pub fn gap_lower_bound_holds(&self, k: usize, j: usize) -> bool {
        assert!(1 <= k && k < j && j <= self.theta.len());
        let lhs = self.theta[k - 1] - self.theta[j - 1];
        let rhs = ((k as f64).powf(-self.alpha) - (j as f64).powf(-self.alpha)) / self.r;
        lhs >= rhs * (1.0 - 1e-12)
    }

    pub fn grid(&self) -> Grid {
        self.basis.grid()
    }

    pub fn mu(&self) -> &GridFunction {
        &self.mu
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn truncation(&self) -> usize {
        self.theta.len()
    }

    pub fn trace(&self) -> f64 {
        self.theta.iter().sum()
    }

    /// The covariance kernel `Σ θ_j φ_j(s) φ_j(t)` on the grid.
    pub fn kernel_matrix(&self) -> DMatrix<f64> {
        let phi = self.basis.matrix();
        let t = phi.nrows();
        let scaled = DMatrix::from_fn(t, self.theta.len(), |g, j| phi[(g, j)] * self.theta[j]);
        let k = &scaled * phi.columns(0, self.theta.len()).transpose();
        (&k + k.transpose()) * 0.5
    }
}

/// `n` simulated curves. Rows of `paths` are the node values of `X_i`.
#[derive(Debug, Clone)]
pub struct SampleSet {
    grid: Grid,
    paths: DMatrix<f64>,
    normals: Option<DMatrix<f64>>,
    scores: Option<DMatrix<f64>>,
}

impl SampleSet {
    /// Wrap observed curves (rows) without any simulation truth attached.
    pub fn from_paths(grid: Grid, paths: DMatrix<f64>) -> Result<Self> {
        if paths.ncols() != grid.len() {
            return Err(Error::GridMismatch(grid.len(), paths.ncols()));
        }
        if paths.nrows() < 1 {
            return Err(Error::InvalidArgument("sample needs at least one path".into()));
        }
        if paths.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            grid,
            paths,
            normals: None,
            scores: None,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.paths.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.nrows() == 0
    }

    pub fn paths(&self) -> &DMatrix<f64> {
        &self.paths
    }

    pub fn path(&self, i: usize) -> GridFunction {
        GridFunction::new(self.grid, self.paths.row(i).iter().copied().collect())
            .expect("paths are finite by construction")
    }

    /// The standard normals `η_{i,j}` behind the simulated paths.
    pub fn normals(&self) -> Option<&DMatrix<f64>> {
        self.normals.as_ref()
    }

    /// `z_{i,j} = ⟨X_i − μ, φ_j⟩`, `n × J_max`, present when `μ` was known.
    pub fn scores(&self) -> Option<&DMatrix<f64>> {
        self.scores.as_ref()
    }

    /// Recompute scores against a known mean and basis.
    pub fn with_scores(mut self, mu: &GridFunction, basis: &BasisSet) -> Result<Self> {
        self.scores = Some(project_centered(&self.paths, mu, basis)?);
        Ok(self)
    }
}

/// `⟨X_i − μ, φ_j⟩` for every row `i` and basis function `j`.
pub fn project_centered(paths: &DMatrix<f64>, mu: &GridFunction, basis: &BasisSet) -> Result<DMatrix<f64>> {
    let t = paths.ncols();
    if mu.grid().len() != t || basis.grid().len() != t {
        return Err(Error::GridMismatch(t, basis.grid().len()));
    }
    let mut centered = paths.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mu.values()) {
            *v -= m;
        }
    }
    Ok(centered * basis.matrix() / t as f64)
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // row-major draw order
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Draw `n` paths `X_i = μ + Σ_j √θ_j η_{i,j} φ_j`.
pub fn sample_paths<R: Rng + ?Sized>(model: &GPModel, n: usize, rng: &mut R) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n ≥ 2 paths, got {n}")));
    }
    let j = model.truncation();
    let normals = standard_normals(n, j, rng);
    let phi = model.basis.matrix();
    let t = phi.nrows();
    let scaled_phi_t = DMatrix::from_fn(j, t, |k, g| model.theta[k].sqrt() * phi[(g, k)]);
    let mut paths = &normals * scaled_phi_t;
    for mut row in paths.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(model.mu.values()) {
            *v += m;
        }
    }
    let scores = project_centered(&paths, &model.mu, &model.basis)?;
    Ok(SampleSet {
        grid: model.grid(),
        paths,
        normals: Some(normals),
        scores: Some(scores),
    })
}

/// Pointwise average of the paths.
pub fn sample_mean(s: &SampleSet) -> GridFunction {
    let n = s.len() as f64;
    let values = s.paths.column_iter().map(|c| c.sum() / n).collect();
    GridFunction::new(s.grid, values).expect("mean of finite paths is finite")
}

/// `(n − 1)^{−1} Σ (X_i − X̄)(X_i − X̄)′` as a `T × T` kernel matrix.
pub fn sample_covariance(s: &SampleSet) -> Result<DMatrix<f64>> {
    let n = s.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample covariance needs n ≥ 2, got {n}"
        )));
    }
    let mean = sample_mean(s);
    let mut centered = s.paths.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(mean.values()) {
            *v -= m;
        }
    }
    let k = centered.tr_mul(&centered) / (n - 1) as f64;
    Ok((&k + k.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TailCheck {
    pub n: usize,
    pub x: f64,
    pub threshold: f64,
    pub empirical_prob: f64,
    pub bound: f64,
    pub std_error: f64,
    pub reps: usize,
}

impl TailCheck {
    /// `empirical ≤ bound + k · binomial stderr`.
    pub fn holds(&self, k: f64) -> bool {
        self.empirical_prob <= self.bound + k * self.std_error
    }
}

/// Monte Carlo frequency of `max_i W_i > 4T(log n + x)` where
/// `W_i = Σ_k τ_{i,k} η_{i,k}²` and `T = max_i Σ_k τ_{i,k}`; the reference
/// bound is `2e^{−x}`.
pub fn max_quad_tail_check<R: Rng + ?Sized>(
    tau: &[Vec<f64>],
    x: f64,
    reps: usize,
    rng: &mut R,
) -> Result<TailCheck> {
    let n = tau.len();
    if n == 0 || reps == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1 and reps ≥ 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidArgument(format!("need x ≥ 0, got {x}")));
    }
    if tau.iter().flatten().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidArgument("weights τ must be finite and nonnegative".into()));
    }
    let total = tau.iter().map(|row| row.iter().sum::<f64>()).fold(0.0, f64::max);
    let threshold = 4.0 * total * ((n as f64).ln() + x);
    let mut exceed = 0usize;
    for _ in 0..reps {
        let mut max_w = f64::NEG_INFINITY;
        for row in tau {
            let w: f64 = row
                .iter()
                .map(|t| {
                    let e: f64 = StandardNormal.sample(rng);
                    t * e * e
                })
                .sum();
            max_w = max_w.max(w);
        }
        if max_w > threshold {
            exceed += 1;
        }
    }
    let p = exceed as f64 / reps as f64;
    Ok(TailCheck {
        n,
        x,
        threshold,
        empirical_prob: p,
        bound: 2.0 * (-x).exp(),
        std_error: binomial_std_error(p, reps),
        reps,
    })
}

/// Tail check for `max_i ‖Z_i‖²` against `C′(log n + x)` with
/// `C′ = 4 Σ_k θ_k`. Uses `‖Z_i‖² = Σ_k θ_k η_{i,k}²`, exact under the
/// discrete orthonormality of the basis.
pub fn max_norm_tail_check<R: Rng + ?Sized>(
    model: &GPModel,
    n: usize,
    x: f64,
    reps: usize,
    rng: &mut R,
) -> Result<TailCheck> {
    let tau = vec![model.theta.clone(); n];
    max_quad_tail_check(&tau, x, reps, rng)
}

/// One line of a Monte Carlo moment table.
#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub name: &'static str,
    pub estimate: Estimate,
    /// Exact value when one is known, otherwise the claimed order of magnitude.
    pub reference: f64,
    pub exact: bool,
}

/// Monte Carlo moments of the standardized sample covariances `S_{j,k}` of
/// three independent `N(0, 1)` coordinates observed `n` times.
pub fn sample_cov_moment_report<R: Rng + ?Sized>(n: usize, reps: usize, rng: &mut R) -> Result<Vec<MomentRow>> {
    if n < 3 || reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n ≥ 3 and reps ≥ 2, got n = {n}, reps = {reps}"
        )));
    }
    let nf = n as f64;
    let mut cols: [Vec<f64>; 7] = Default::default();
    for _ in 0..reps {
        let u = standard_normals(n, 3, rng);
        let means: Vec<f64> = (0..3).map(|j| u.column(j).sum() / nf).collect();
        let s = |a: usize, b: usize| {
            (0..n)
                .map(|i| (u[(i, a)] - means[a]) * (u[(i, b)] - means[b]))
                .sum::<f64>()
                / (nf - 1.0)
        };
        let (s00, s01, s21, s02) = (s(0, 0), s(0, 1), s(2, 1), s(0, 2));
        cols[0].push(s00);
        cols[1].push((s00 - 1.0).powi(2));
        cols[2].push(s01);
        cols[3].push(s01 * s02);
        cols[4].push(s01 * s01);
        cols[5].push(s01 * s01 * s21 * s21);
        cols[6].push(s01.powi(4));
    }
    let inv = 1.0 / (nf - 1.0);
    let spec: [(&'static str, f64, bool); 7] = [
        ("E S_jj", 1.0, true),
        ("E (S_jj - 1)^2", 2.0 * inv, true),
        ("E S_jk", 0.0, true),
        ("E S_jk S_jl", 0.0, true),
        ("E S_jk^2", inv, true),
        ("E S_jk^2 S_lk^2", inv * inv, false),
        ("E S_jk^4", inv * inv, false),
    ];
    Ok(spec
        .iter()
        .zip(cols.iter())
        .map(|(&(name, reference, exact), xs)| MomentRow {
            name,
            estimate: Estimate::from_samples(xs),
            reference,
            exact,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_model_satisfies_eigenvalue_conditions() {
        let m = GPModel::new(256, 2.0, 2.0, 128, None).unwrap();
        assert_eq!(m.truncation(), 128);
        for (k, j) in [(1, 2), (1, 50), (3, 4), (10, 100), (127, 128)] {
            assert!(m.gap_lower_bound_holds(k, j), "({k},{j})");
        }
    }

    #[test]
    fn spacing_fails_for_small_radius() {
        // θ_1 − θ_2 = 0.75 < α/R = 2 when R = 1
        assert!(matches!(
            GPModel::new(64, 2.0, 1.0, 32, None),
            Err(Error::SpacingViolation(1))
        ));
        assert!(GPModel::new(64, 2.0, 2.0, 33, None).is_err());
    }

    #[test]
    fn degenerate_model_reproduces_mean() {
        let basis = cosine_basis(16, 4).unwrap();
        let mu = GridFunction::from_fn(basis.grid(), |t| t * t);
        let m = GPModel::with_eigenvalues(basis, vec![0.0; 4], Some(mu.clone())).unwrap();
        let s = sample_paths(&m, 5, &mut rng(1)).unwrap();
        for i in 0..5 {
            assert_eq!(s.path(i).values(), mu.values());
        }
    }

    #[test]
    fn scores_reproduce_latent_normals() {
        let m = GPModel::new(64, 2.0, 2.0, 32, None).unwrap();
        let s = sample_paths(&m, 20, &mut rng(2)).unwrap();
        let eta = s.normals().unwrap();
        let z = s.scores().unwrap();
        for i in 0..20 {
            for j in 0..32 {
                assert!((z[(i, j)] - m.theta()[j].sqrt() * eta[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn first_score_variance_matches_eigenvalue() {
        let basis = cosine_basis(64, 32).unwrap();
        let theta: Vec<f64> = (1..=32).map(|j| (j as f64).powi(-2)).collect();
        let m = GPModel::with_eigenvalues(basis, theta.clone(), None).unwrap();
        let s = sample_paths(&m, 2000, &mut rng(3)).unwrap();
        let z1: Vec<f64> = s.scores().unwrap().column(0).iter().map(|v| v * v).collect();
        let est = Estimate::from_samples(&z1);
        assert!(est.within(theta[0], 4.0), "{est:?}");
        let norms: Vec<f64> = (0..2000).map(|i| s.path(i).norm_sq()).collect();
        let est = Estimate::from_samples(&norms);
        assert!(est.within(theta.iter().sum(), 4.0), "{est:?}");
    }

    #[test]
    fn sample_mean_edge_cases() {
        let g = Grid::new(3).unwrap();
        let one = SampleSet::from_paths(g, DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(sample_mean(&one).values(), &[1.0, 2.0, 3.0]);
        let pm = SampleSet::from_paths(g, DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, -1.0, 2.0, -3.0])).unwrap();
        assert_eq!(sample_mean(&pm).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn covariance_of_identical_paths_is_zero() {
        let g = Grid::new(3).unwrap();
        let s = SampleSet::from_paths(g, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0])).unwrap();
        assert_eq!(sample_covariance(&s).unwrap(), DMatrix::zeros(3, 3));
        let single = SampleSet::from_paths(g, DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0])).unwrap();
        assert!(sample_covariance(&single).is_err());
    }

    #[test]
    fn sample_mean_converges() {
        let basis = cosine_basis(64, 32).unwrap();
        let mu = basis.get(1).clone();
        let theta: Vec<f64> = (1..=32).map(|j| (j as f64).powi(-2)).collect();
        let trace: f64 = theta.iter().sum();
        let m = GPModel::with_eigenvalues(basis, theta, Some(mu.clone())).unwrap();
        let n = 4000;
        // E‖X̄ − μ‖² = Σθ/n; check over independent replications
        let errs: Vec<f64> = (0..40)
            .map(|r| {
                let s = sample_paths(&m, n, &mut rng(100 + r)).unwrap();
                sample_mean(&s).sub(&mu).unwrap().norm_sq() * n as f64
            })
            .collect();
        let est = Estimate::from_samples(&errs);
        assert!(est.within(trace, 4.0), "{est:?} vs {trace}");
    }

    #[test]
    fn tail_check_degenerate_cases() {
        let zero = vec![vec![0.0; 5]; 10];
        let t = max_quad_tail_check(&zero, 1.0, 100, &mut rng(4)).unwrap();
        assert_eq!(t.empirical_prob, 0.0);
        let tau = vec![vec![1.0, 0.5]; 10];
        let t = max_quad_tail_check(&tau, 0.0, 100, &mut rng(4)).unwrap();
        assert_eq!(t.bound, 2.0);
        assert!(t.empirical_prob <= 1.0);
        let neg = vec![vec![-1.0]];
        assert!(max_quad_tail_check(&neg, 1.0, 10, &mut rng(4)).is_err());
    }
}
