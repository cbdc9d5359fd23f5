//! Spectral decomposition of kernel operators and the perturbation bounds
//! that relate the eigenpairs of a reference operator `T` to those of a
//! perturbed operator `T̃ = T + Δ`.
//!
//! A kernel is stored as its `T × T` matrix of node values; the operator it
//! represents is `f ↦ (1/T) Σ_g k(·, t_g) f(t_g)`. Eigenfunctions are
//! normalized in the discrete `L²` inner product.
//!
//! All coordinates below are taken in the reference eigenbasis `{φ_j}`,
//! which must be complete (one function per grid node). For a reference
//! operator of finite rank this means the zero eigenvalue is repeated and
//! its eigenfunctions fill out the grid.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::function_space::{cosine_basis, BasisSet, Grid, GridFunction};
use crate::gp::{standard_normals, GPModel};
use crate::linalg::{check_symmetric, sym_eigen_desc, sym_spectral_norm};
use crate::stats::Estimate;

/// Eigenvalues (nonincreasing) and matching orthonormal eigenfunctions.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    eigenvalues: Vec<f64>,
    eigenfunctions: BasisSet,
}

impl SpectralDecomp {
    pub fn from_parts(eigenvalues: Vec<f64>, eigenfunctions: BasisSet) -> Result<Self> {
        if eigenvalues.len() != eigenfunctions.len() {
            return Err(Error::InvalidArgument(format!(
                "{} eigenvalues for {} eigenfunctions",
                eigenvalues.len(),
                eigenfunctions.len()
            )));
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument("eigenvalues must be nonincreasing".into()));
        }
        Ok(Self {
            eigenvalues,
            eigenfunctions,
        })
    }

    /// The model's own decomposition, completed with zero eigenvalues on the
    /// remaining cosine functions so that it spans the grid.
    pub fn from_model(model: &GPModel) -> Result<Self> {
        let t = model.grid().len();
        let mut theta = model.theta().to_vec();
        theta.resize(t, 0.0);
        Self::from_parts(theta, cosine_basis(t, t)?)
    }

    pub fn grid(&self) -> Grid {
        self.eigenfunctions.grid()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &BasisSet {
        &self.eigenfunctions
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Number of strictly positive eigenvalues.
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&v| v > 0.0).count()
    }

    /// `Σ θ_k φ_k(s) φ_k(t)` on the grid.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let phi = self.eigenfunctions.matrix();
        let scaled = DMatrix::from_fn(phi.nrows(), phi.ncols(), |g, k| phi[(g, k)] * self.eigenvalues[k]);
        let k = scaled * phi.transpose();
        (&k + k.transpose()) * 0.5
    }

    /// Copy with the `k`-th eigenfunction negated.
    pub fn with_flipped(&self, k: usize) -> Self {
        let mut functions = self.eigenfunctions.functions().to_vec();
        functions[k] = functions[k].scaled(-1.0);
        Self {
            eigenvalues: self.eigenvalues.clone(),
            eigenfunctions: BasisSet::new(self.grid(), functions).expect("same grid"),
        }
    }

    /// Cross inner products `⟨φ_j, ψ_k⟩` against another decomposition's
    /// eigenfunctions.
    pub fn cross_gram(&self, other: &SpectralDecomp) -> DMatrix<f64> {
        let t = self.grid().len() as f64;
        self.eigenfunctions.matrix().tr_mul(&other.eigenfunctions.matrix()) / t
    }
}

/// Eigenpairs of the operator with kernel matrix `kernel` on `grid`.
///
/// Eigenvalues in `[−1e−10·max(1, θ_1), 1e−13·max(1, θ_1))` are round-off and
/// are clamped to zero; anything more negative is an error.
pub fn eigendecompose(kernel: &DMatrix<f64>, grid: Grid) -> Result<SpectralDecomp> {
    if kernel.nrows() != grid.len() {
        return Err(Error::GridMismatch(grid.len(), kernel.nrows()));
    }
    check_symmetric(kernel, 1e-10)?;
    let t = grid.len() as f64;
    let (values, vectors) = sym_eigen_desc(&(kernel / t));
    let top = values.first().copied().unwrap_or(0.0).max(1.0);
    let mut eigenvalues = Vec::with_capacity(values.len());
    for v in values {
        if v < -1e-10 * top {
            return Err(Error::NegativeEigenvalue(v));
        }
        eigenvalues.push(if v < 1e-13 * top { 0.0 } else { v });
    }
    let scale = t.sqrt();
    let functions = vectors
        .column_iter()
        .map(|c| GridFunction::new(grid, c.iter().map(|v| v * scale).collect()))
        .collect::<Result<Vec<_>>>()?;
    SpectralDecomp::from_parts(eigenvalues, BasisSet::new(grid, functions)?)
}

/// `⟨φ_j, K φ_k⟩` for the operator with kernel matrix `kernel`.
pub fn kernel_coordinates(kernel: &DMatrix<f64>, basis: &BasisSet) -> DMatrix<f64> {
    let t = basis.grid().len() as f64;
    let phi = basis.matrix();
    let c = phi.tr_mul(&(kernel * &phi)) / (t * t);
    (&c + c.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaNorm {
    /// `δ = ‖T̃ − T‖` in operator norm.
    pub operator: f64,
    /// `Σ_{j,k} (T̃_{j,k} − θ_j{j = k})²`, the squared Hilbert–Schmidt norm,
    /// which bounds `δ²`.
    pub frobenius_sq: f64,
}

/// Size of the perturbation `Δ = K̃ − K` between two kernel matrices.
pub fn delta_norm(k: &DMatrix<f64>, k_tilde: &DMatrix<f64>) -> Result<DeltaNorm> {
    if k.shape() != k_tilde.shape() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch {:?} vs {:?}",
            k.shape(),
            k_tilde.shape()
        )));
    }
    check_symmetric(k, 1e-10)?;
    check_symmetric(k_tilde, 1e-10)?;
    let t = k.nrows() as f64;
    let diff = (k_tilde - k) / t;
    Ok(DeltaNorm {
        operator: sym_spectral_norm(&diff),
        frobenius_sq: diff.iter().map(|v| v * v).sum(),
    })
}

/// `min_{j ≠ k} |θ_j − θ_k|` (zero-based `k`).
pub fn eigen_gap(theta: &[f64], k: usize) -> f64 {
    theta
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, t)| (t - theta[k]).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Coefficients `Λ_{k,j} = T̃_{j,k} / (θ_k − θ_j)`, `Λ_{k,k} = 0`.
fn lambda_row(coords: &DMatrix<f64>, theta: &[f64], k: usize) -> Result<Vec<f64>> {
    (0..theta.len())
        .map(|j| {
            if j == k {
                Ok(0.0)
            } else {
                let gap = theta[k] - theta[j];
                if gap == 0.0 {
                    Err(Error::ZeroGap(k + 1, j + 1))
                } else {
                    Ok(coords[(j, k)] / gap)
                }
            }
        })
        .collect()
}

/// Per-eigenpair quantities for one index `k` (one-based in `k`).
#[derive(Debug, Clone, Serialize)]
pub struct EigenRecord {
    pub k: usize,
    pub theta: f64,
    pub theta_tilde: f64,
    pub gap: f64,
    pub sign: f64,
    pub f_norm_sq: f64,
    pub lambda_norm_sq: f64,
    pub r_norm_sq: f64,
    /// `ε_k > 5δ`: the eigenvector bounds apply.
    pub applicable: bool,
    /// `‖f_k‖² ≤ 9‖Λ_k‖²`; `None` when not applicable.
    pub fk_bound_holds: Option<bool>,
    /// `|r_{k,j}| ≤ 5δ‖Λ_k‖/|θ_k − θ_j|` for all `j ≠ k`; `None` when not applicable.
    pub rjk_bound_holds: Option<bool>,
    /// Largest `|r_{k,j}| / (5δ‖Λ_k‖/|θ_k − θ_j|)` over `j ≠ k`.
    pub rjk_worst_ratio: f64,
    /// `|‖f_k‖² − (2 − 2|⟨φ_k, φ̃_k⟩|)|`.
    pub f_identity_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub delta: f64,
    pub delta_frobenius_sq: f64,
    /// `max_j |θ_j − θ̃_j| − δ`; nonpositive when the eigenvalue bound holds.
    pub eigenvalue_excess: f64,
    pub eigenvalue_bound_holds: bool,
    pub records: Vec<EigenRecord>,
}

/// Compare the eigenpairs of `pert` (kernel `k_tilde`) with those of `reference`
/// (kernel `k`) for `k ≤ kmax`.
pub fn perturbation_report(
    reference: &SpectralDecomp,
    pert: &SpectralDecomp,
    k: &DMatrix<f64>,
    k_tilde: &DMatrix<f64>,
    kmax: usize,
) -> Result<PerturbationReport> {
    let theta = reference.eigenvalues();
    let theta_t = pert.eigenvalues();
    let size = reference.grid().len();
    if reference.len() != size {
        return Err(Error::InvalidArgument(
            "reference decomposition must span the grid".into(),
        ));
    }
    if kmax > reference.rank() || kmax > pert.len() {
        return Err(Error::InvalidArgument(format!(
            "kmax = {kmax} exceeds the reference rank {}",
            reference.rank()
        )));
    }
    let dn = delta_norm(k, k_tilde)?;
    let delta = dn.operator;
    let common = theta.len().min(theta_t.len());
    let excess = (0..common)
        .map(|j| (theta[j] - theta_t[j]).abs() - delta)
        .fold(f64::NEG_INFINITY, f64::max);

    let coords = kernel_coordinates(k_tilde, reference.eigenfunctions());
    let cross = reference.cross_gram(pert);

    let mut records = Vec::with_capacity(kmax);
    for kk in 0..kmax {
        let gap = eigen_gap(theta, kk);
        let overlap = cross[(kk, kk)];
        let sign = if overlap >= 0.0 { 1.0 } else { -1.0 };
        let lambda = lambda_row(&coords, theta, kk)?;
        let lambda_norm_sq: f64 = lambda.iter().map(|v| v * v).sum();
        let lambda_norm = lambda_norm_sq.sqrt();
        // coordinates of f_k = σ φ̃_k − φ_k in the reference basis
        let f: Vec<f64> = (0..size)
            .map(|j| sign * cross[(j, kk)] - if j == kk { 1.0 } else { 0.0 })
            .collect();
        let f_norm_sq = {
            let fk = pert
                .eigenfunctions()
                .get(kk)
                .scaled(sign)
                .sub(reference.eigenfunctions().get(kk))?;
            fk.norm_sq()
        };
        let r: Vec<f64> = f.iter().zip(&lambda).map(|(a, b)| a - b).collect();
        let r_norm_sq = r.iter().map(|v| v * v).sum();
        let mut worst: f64 = 0.0;
        for j in (0..size).filter(|&j| j != kk) {
            let bound = 5.0 * delta * lambda_norm / (theta[kk] - theta[j]).abs();
            let ratio = if bound > 0.0 {
                r[j].abs() / bound
            } else if r[j].abs() <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
        }
        let applicable = gap > 5.0 * delta;
        records.push(EigenRecord {
            k: kk + 1,
            theta: theta[kk],
            theta_tilde: theta_t[kk],
            gap,
            sign,
            f_norm_sq,
            lambda_norm_sq,
            r_norm_sq,
            applicable,
            fk_bound_holds: applicable.then(|| f_norm_sq <= 9.0 * lambda_norm_sq + 1e-12),
            rjk_bound_holds: applicable.then(|| worst <= 1.0 + 1e-9),
            rjk_worst_ratio: worst,
            f_identity_error: (f_norm_sq - (2.0 - 2.0 * overlap.abs())).abs(),
        });
    }
    Ok(PerturbationReport {
        delta,
        delta_frobenius_sq: dn.frobenius_sq,
        eigenvalue_excess: excess,
        eigenvalue_bound_holds: excess <= 1e-10,
        records,
    })
}

/// `‖(H̃_p − H_p)β‖²` and the seven terms that bound it, up to a universal
/// constant, when `min_{k ≤ p} ε_k > 5δ`.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectionDiff {
    pub p: usize,
    pub actual: f64,
    pub terms: [f64; 7],
    pub delta: f64,
    pub valid: bool,
}

impl ProjectionDiff {
    pub fn term_sum(&self) -> f64 {
        self.terms.iter().sum()
    }
}

/// Both decompositions must span the grid; `T̃` and `δ` are recovered from
/// `pert` in the reference basis.
pub fn projection_diff(
    reference: &SpectralDecomp,
    pert: &SpectralDecomp,
    beta: &GridFunction,
    p: usize,
) -> Result<ProjectionDiff> {
    let size = reference.grid().len();
    if reference.len() != size || pert.len() != size {
        return Err(Error::InvalidArgument(
            "projection bounds need complete decompositions".into(),
        ));
    }
    if p == 0 || p > size {
        return Err(Error::InvalidArgument(format!("need 1 ≤ p ≤ {size}, got {p}")));
    }
    let theta = reference.eigenvalues();
    let b = reference.eigenfunctions().coefficients(beta)?;

    let b_tilde = pert.eigenfunctions().coefficients(beta)?;
    let proj_t = pert.eigenfunctions().synthesize(&b_tilde[..p]);
    let proj = reference.eigenfunctions().synthesize(&b[..p]);
    let actual = proj_t.sub(&proj)?.norm_sq();

    // T̃ in reference coordinates: Σ diag(θ̃) Σ′ with Σ_{j,l} = ⟨φ_j, φ̃_l⟩
    let cross = reference.cross_gram(pert);
    let scaled = DMatrix::from_fn(size, size, |j, l| cross[(j, l)] * pert.eigenvalues()[l]);
    let coords = {
        let c = &scaled * cross.transpose();
        (&c + c.transpose()) * 0.5
    };
    let mut delta_m = coords.clone();
    for j in 0..size {
        delta_m[(j, j)] -= theta[j];
    }
    let delta = sym_spectral_norm(&delta_m);

    let lambdas: Vec<Vec<f64>> = (0..p)
        .map(|k| lambda_row(&coords, theta, k))
        .collect::<Result<_>>()?;
    let lam_sq: Vec<f64> = lambdas.iter().map(|l| l.iter().map(|v| v * v).sum()).collect();
    let lam_sq_total: f64 = lam_sq.iter().sum();

    let mut terms = [0.0; 7];
    for k in 0..p {
        let outside: f64 = (p..size).map(|j| lambdas[k][j] * b[j]).sum();
        terms[0] += outside * outside;
    }
    for j in p..size {
        let s: f64 = (0..p).map(|k| lambdas[k][j] * b[k]).sum();
        terms[1] += s * s;
    }
    terms[2] = (0..p).map(|k| b[k] * b[k] * lam_sq[k] * lam_sq[k]).sum();
    let s4: f64 = (0..p).map(|k| b[k].abs() * lam_sq[k]).sum();
    terms[3] = s4 * s4;
    let all_j: f64 = (0..p)
        .map(|k| {
            let s: f64 = (0..size).map(|j| lambdas[k][j] * b[j]).sum();
            s * s
        })
        .sum();
    terms[4] = lam_sq_total * all_j;
    let mut t6 = 0.0;
    let mut t7 = 0.0;
    for k in 0..p {
        let mut weighted = 0.0;
        let mut inv = 0.0;
        for j in (0..size).filter(|&j| j != k) {
            let gap = (theta[k] - theta[j]).abs();
            if gap == 0.0 {
                return Err(Error::ZeroGap(k + 1, j + 1));
            }
            weighted += b[j].abs() / gap;
            inv += 1.0 / gap;
        }
        t6 += lam_sq[k] * weighted * weighted;
        t7 += b[k] * b[k] * inv * inv;
    }
    terms[5] = delta * delta * t6;
    terms[6] = delta * delta * lam_sq_total * t7;

    let min_gap = (0..p).map(|k| eigen_gap(theta, k)).fold(f64::INFINITY, f64::min);
    Ok(ProjectionDiff {
        p,
        actual,
        terms,
        delta,
        valid: min_gap > 5.0 * delta,
    })
}

/// `κ_k(r, γ) = Σ_{j ≠ k} j^{−γ} / |θ_j − θ_k|^r` over the supplied horizon
/// (`k` one-based).
pub fn eigen_gap_sum(theta: &[f64], k: usize, r: f64, gamma: f64) -> Result<f64> {
    if k == 0 || k > theta.len() {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", theta.len())));
    }
    if !(r >= 1.0) {
        return Err(Error::InvalidArgument(format!("need r ≥ 1, got {r}")));
    }
    let tk = theta[k - 1];
    let mut sum = 0.0;
    for (idx, &tj) in theta.iter().enumerate() {
        let j = idx + 1;
        if j == k {
            continue;
        }
        let gap = (tj - tk).abs();
        if gap == 0.0 {
            return Err(Error::ZeroGap(k, j));
        }
        sum += (j as f64).powf(-gamma) / gap.powf(r);
    }
    Ok(sum)
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaMoments {
    pub k: usize,
    pub j: usize,
    /// `E Λ_{k,j}`, exactly zero.
    pub mean_lambda: Estimate,
    /// `E Λ_{k,j}²` and its exact value `θ_jθ_k / ((n − 1)(θ_k − θ_j)²)`.
    pub mean_lambda_sq: Estimate,
    pub exact_lambda_sq: f64,
    /// `E‖Λ_k‖²` and its exact value over the truncation horizon.
    pub mean_norm_sq: Estimate,
    pub exact_norm_sq: f64,
    /// `E‖Λ_k‖⁴`, of order `n^{−2}k⁴`.
    pub mean_norm_4: Estimate,
}

/// Monte Carlo moments of `Λ_{k,j} = √(θ_jθ_k) S_{j,k} / (θ_k − θ_j)` for
/// each `k` in `ks`, with `j = k + 1` for the single-coordinate moments.
pub fn lambda_moment_report<R: Rng + ?Sized>(
    n: usize,
    reps: usize,
    model: &GPModel,
    ks: &[usize],
    rng: &mut R,
) -> Result<Vec<LambdaMoments>> {
    let theta = model.theta();
    let jmax = theta.len();
    if n < 3 || reps < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n ≥ 3 and reps ≥ 2, got n = {n}, reps = {reps}"
        )));
    }
    if ks.iter().any(|&k| k == 0 || k >= jmax) {
        return Err(Error::InvalidArgument(format!("each k must lie in 1..{jmax}")));
    }
    let nf = n as f64;
    let mut acc: Vec<[Vec<f64>; 4]> = ks.iter().map(|_| Default::default()).collect();
    for _ in 0..reps {
        let eta = standard_normals(n, jmax, rng);
        let means: Vec<f64> = eta.column_iter().map(|c| c.sum() / nf).collect();
        for (slot, &k) in acc.iter_mut().zip(ks) {
            let kk = k - 1;
            let mut norm_sq = 0.0;
            let mut single = 0.0;
            for j in (0..jmax).filter(|&j| j != kk) {
                let s: f64 = (0..n)
                    .map(|i| (eta[(i, j)] - means[j]) * (eta[(i, kk)] - means[kk]))
                    .sum::<f64>()
                    / (nf - 1.0);
                let lam = (theta[j] * theta[kk]).sqrt() * s / (theta[kk] - theta[j]);
                norm_sq += lam * lam;
                if j == kk + 1 {
                    single = lam;
                }
            }
            slot[0].push(single);
            slot[1].push(single * single);
            slot[2].push(norm_sq);
            slot[3].push(norm_sq * norm_sq);
        }
    }
    Ok(ks
        .iter()
        .zip(acc)
        .map(|(&k, slot)| {
            let kk = k - 1;
            let weight = |j: usize| theta[j] * theta[kk] / (theta[kk] - theta[j]).powi(2);
            LambdaMoments {
                k,
                j: k + 1,
                mean_lambda: Estimate::from_samples(&slot[0]),
                mean_lambda_sq: Estimate::from_samples(&slot[1]),
                exact_lambda_sq: weight(kk + 1) / (nf - 1.0),
                mean_norm_sq: Estimate::from_samples(&slot[2]),
                exact_norm_sq: (0..jmax).filter(|&j| j != kk).map(weight).sum::<f64>() / (nf - 1.0),
                mean_norm_4: Estimate::from_samples(&slot[3]),
            }
        })
        .collect())
}
