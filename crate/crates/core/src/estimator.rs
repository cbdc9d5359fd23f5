//! Slope estimators for known and estimated covariance, the `(m, N)`
//! schedule, and the per-replication diagnostics around them.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{hellinger_report, ExpFamilySpec};
use crate::function_space::{inner, BasisSet, GridFunction};
use crate::gp::{project_centered, sample_covariance, sample_mean, sample_paths, GPModel, SampleSet};
use crate::linalg::sym_spectral_norm;
use crate::mle::{fit_mle, DesignSet, FitOptions, FitResult};
use crate::spectral::{delta_norm, eigendecompose, projection_diff, SpectralDecomp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefSign {
    #[default]
    Positive,
    Alternating,
}

/// `f = (a, β, μ, K)` together with the response family.
#[derive(Debug, Clone)]
pub struct ModelTruth {
    pub a: f64,
    /// `b_k = ⟨β, φ_k⟩`, `k = 1..J_max`.
    pub b: Vec<f64>,
    pub gp: GPModel,
    pub family: ExpFamilySpec,
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
}

impl ModelTruth {
    /// `b_k = ±R k^{−β}` on the model's eigenfunctions.
    pub fn new(family: ExpFamilySpec, gp: GPModel, beta: f64, a: f64, sign: CoefSign) -> Result<Self> {
        let (alpha, r) = (gp.alpha(), gp.r());
        check_smoothness(alpha, beta)?;
        if a.abs() > r {
            return Err(Error::InvalidArgument(format!("need |a| ≤ R, got a = {a}, R = {r}")));
        }
        let b = (1..=gp.truncation())
            .map(|k| {
                let s = match sign {
                    CoefSign::Alternating if k % 2 == 0 => -1.0,
                    _ => 1.0,
                };
                s * r * (k as f64).powf(-beta)
            })
            .collect();
        Ok(Self {
            a,
            b,
            gp,
            family,
            alpha,
            beta,
            r,
        })
    }

    pub fn with_coefficients(mut self, b: Vec<f64>) -> Result<Self> {
        if b.len() != self.gp.truncation() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for truncation {}",
                b.len(),
                self.gp.truncation()
            )));
        }
        self.b = b;
        Ok(self)
    }

    pub fn slope(&self) -> GridFunction {
        self.gp.basis().synthesize(&self.b)
    }

    /// `b₀ = a + ⟨μ, β⟩`.
    pub fn intercept(&self) -> f64 {
        self.a + inner(self.gp.mu(), &self.slope()).expect("same grid")
    }

    /// `Σ_{k>m} b_k²`.
    pub fn tail_sq(&self, m: usize) -> f64 {
        self.b.iter().skip(m).map(|v| v * v).sum()
    }

    /// `Var λ_i = Σ θ_k b_k²`.
    pub fn lambda_variance(&self) -> f64 {
        self.gp.theta().iter().zip(&self.b).map(|(t, b)| t * b * b).sum()
    }
}

fn check_smoothness(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 1.0) || !(beta > (alpha + 3.0) / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "need α > 1 and β > (α+3)/2, got α = {alpha}, β = {beta}"
        )));
    }
    Ok(())
}

/// Open window `((α+2β−1)^{−1}, (2+2α)^{−1})` for `ζ`.
pub fn zeta_window(alpha: f64, beta: f64) -> (f64, f64) {
    (1.0 / (alpha + 2.0 * beta - 1.0), 1.0 / (2.0 + 2.0 * alpha))
}

pub fn default_zeta(alpha: f64, beta: f64) -> f64 {
    let (lo, hi) = zeta_window(alpha, beta);
    0.5 * (lo + hi)
}

/// `m = max(1, round(n^{1/(α+2β)}))`, `N = max(m+1, round(n^ζ))`.
pub fn schedule(n: usize, alpha: f64, beta: f64, zeta: f64) -> Result<(usize, usize)> {
    check_smoothness(alpha, beta)?;
    let (low, high) = zeta_window(alpha, beta);
    if !(zeta > low && zeta < high) {
        return Err(Error::ZetaOutOfWindow { zeta, low, high });
    }
    let nf = n as f64;
    let m = (nf.powf(1.0 / (alpha + 2.0 * beta)).round() as usize).max(1);
    let big_n = (nf.powf(zeta).round() as usize).max(m + 1);
    Ok((m, big_n))
}

/// `ρ_n = n^{(1−2β)/(α+2β)}`.
pub fn minimax_rate(n: usize, alpha: f64, beta: f64) -> f64 {
    (n as f64).powf((1.0 - 2.0 * beta) / (alpha + 2.0 * beta))
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sample: SampleSet,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Curves from the model and `y_i ~ Q_{λ_i}`, `λ_i = a + ⟨X_i, β⟩`.
pub fn simulate_dataset<R: Rng + ?Sized>(truth: &ModelTruth, n: usize, rng: &mut R) -> Result<Dataset> {
    let sample = sample_paths(&truth.gp, n, rng)?;
    let beta = truth.slope();
    let t = beta.grid().len() as f64;
    let lambda: Vec<f64> = (sample.paths() * DVector::from_column_slice(beta.values()))
        .iter()
        .map(|v| truth.a + v / t)
        .collect();
    let y = lambda
        .iter()
        .map(|&l| truth.family.sample(l, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { sample, y, lambda })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateConfig {
    pub family: ExpFamilySpec,
    pub m: usize,
    pub big_n: usize,
    pub fit: FitOptions,
    pub warm_start: bool,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub beta_hat: GridFunction,
    pub m: usize,
    pub big_n: usize,
    pub ise: f64,
    /// `Σ_{k>m} b_k²`, or NaN without truth.
    pub tail_sq: f64,
    pub fit: FitResult,
    /// `|ise − Σ_{k≤m}(ĝ_k − b_k)² − Σ_{k>m} b_k²|` (known mode).
    pub decomposition_error: Option<f64>,
    /// Largest deviation of the rescaled score Gram from
    /// `diag(n/(n−1), θ̃_1/θ_1, …, θ̃_N/θ_N)` (unknown mode with truth).
    pub score_gram_error: Option<f64>,
}

fn intercept_design(scores: &DMatrix<f64>, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(scores.nrows(), cols + 1, |i, k| if k == 0 { 1.0 } else { scores[(i, k - 1)] })
}

fn check_dims(cfg: &EstimateConfig, available: usize) -> Result<()> {
    if cfg.m == 0 || cfg.m > cfg.big_n || cfg.big_n > available {
        return Err(Error::InvalidArgument(format!(
            "need 1 ≤ m ≤ N ≤ {available}, got m = {}, N = {}",
            cfg.m, cfg.big_n
        )));
    }
    Ok(())
}

/// Fit on the true scores `z_{i,k} = ⟨X_i − μ, φ_k⟩`, `k ≤ N`.
pub fn estimate_known(data: &Dataset, truth: &ModelTruth, cfg: &EstimateConfig) -> Result<EstimateResult> {
    check_dims(cfg, truth.gp.truncation())?;
    let scores = match data.sample.scores() {
        Some(s) => s.clone(),
        None => project_centered(data.sample.paths(), truth.gp.mu(), truth.gp.basis())?,
    };
    let xi = intercept_design(&scores, cfg.big_n);
    let gamma = DVector::from_iterator(
        cfg.big_n + 1,
        std::iter::once(truth.intercept()).chain(truth.b[..cfg.big_n].iter().copied()),
    );
    let design = DesignSet::new(xi, data.y.clone(), cfg.family)?.with_truth(gamma.clone())?;
    let fit = fit_mle(&design, &cfg.fit, cfg.warm_start.then_some(&gamma))?;
    let coeffs: Vec<f64> = fit.ghat.iter().skip(1).take(cfg.m).copied().collect();
    let beta_hat = truth.gp.basis().synthesize(&coeffs);
    let ise = truth.slope().sub(&beta_hat)?.norm_sq();
    let tail_sq = truth.tail_sq(cfg.m);
    let head: f64 = coeffs.iter().zip(&truth.b).map(|(g, b)| (g - b).powi(2)).sum();
    Ok(EstimateResult {
        beta_hat,
        m: cfg.m,
        big_n: cfg.big_n,
        ise,
        tail_sq,
        fit,
        decomposition_error: Some((ise - head - tail_sq).abs()),
        score_gram_error: None,
    })
}

/// Estimated decomposition of the sample covariance.
pub fn empirical_decomp(sample: &SampleSet) -> Result<SpectralDecomp> {
    eigendecompose(&sample_covariance(sample)?, sample.grid())
}

/// Fit on estimated scores from the sample covariance.
pub fn estimate_unknown(data: &Dataset, truth: Option<&ModelTruth>, cfg: &EstimateConfig) -> Result<EstimateResult> {
    if data.sample.len() < 3 {
        return Err(Error::InvalidArgument("unknown-covariance mode needs n ≥ 3".into()));
    }
    let decomp = empirical_decomp(&data.sample)?;
    estimate_unknown_with(data, &decomp, truth, cfg)
}

/// As [`estimate_unknown`] with the decomposition of `K̃` supplied.
pub fn estimate_unknown_with(
    data: &Dataset,
    decomp: &SpectralDecomp,
    truth: Option<&ModelTruth>,
    cfg: &EstimateConfig,
) -> Result<EstimateResult> {
    let n = data.sample.len();
    check_dims(cfg, decomp.len())?;
    let theta_t = decomp.eigenvalues();
    if let Some(idx) = (0..cfg.big_n).find(|&k| !(theta_t[k] > 0.0)) {
        return Err(Error::RankShortfall {
            index: idx + 1,
            value: theta_t[idx],
        });
    }
    let phi_t = BasisSet::new(
        data.sample.grid(),
        decomp.eigenfunctions().functions()[..cfg.big_n].to_vec(),
    )?;
    let mean = sample_mean(&data.sample);
    let scores = project_centered(data.sample.paths(), &mean, &phi_t)?;
    let xi = intercept_design(&scores, cfg.big_n);

    let mut design = DesignSet::new(xi.clone(), data.y.clone(), cfg.family)?;
    let mut score_gram_error = None;
    let mut start = None;
    if let Some(truth) = truth {
        let beta = truth.slope();
        let mut gamma = vec![truth.a + inner(&beta, &mean)?];
        gamma.extend(phi_t.coefficients(&beta)?);
        let gamma = DVector::from_vec(gamma);
        design = design.with_truth(gamma.clone())?;
        if cfg.warm_start {
            start = Some(gamma);
        }
        let theta = truth.gp.theta();
        if cfg.big_n <= theta.len() {
            let nf = n as f64;
            let scale: Vec<f64> = std::iter::once(1.0)
                .chain(theta[..cfg.big_n].iter().map(|t| t.sqrt()))
                .collect();
            let eta = DMatrix::from_fn(n, cfg.big_n + 1, |i, k| xi[(i, k)] / scale[k]);
            let gram = eta.tr_mul(&eta) / (nf - 1.0);
            let mut worst: f64 = 0.0;
            for j in 0..=cfg.big_n {
                for k in 0..=cfg.big_n {
                    let want = match (j, k) {
                        (0, 0) => nf / (nf - 1.0),
                        (j, k) if j == k => theta_t[j - 1] / theta[j - 1],
                        _ => 0.0,
                    };
                    worst = worst.max((gram[(j, k)] - want).abs() / want.abs().max(1.0));
                }
            }
            score_gram_error = Some(worst);
        }
    }
    let fit = fit_mle(&design, &cfg.fit, start.as_ref())?;
    let coeffs: Vec<f64> = fit.ghat.iter().skip(1).take(cfg.m).copied().collect();
    let beta_hat = phi_t.synthesize(&coeffs);
    let (ise, tail_sq) = match truth {
        Some(t) => (t.slope().sub(&beta_hat)?.norm_sq(), t.tail_sq(cfg.m)),
        None => (f64::NAN, f64::NAN),
    };
    Ok(EstimateResult {
        beta_hat,
        m: cfg.m,
        big_n: cfg.big_n,
        ise,
        tail_sq,
        fit,
        decomposition_error: None,
        score_gram_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvChain {
    pub h2_sum: f64,
    pub tv_bound: f64,
}

/// `Σ_i h²(Q_{λ_i}, Q_{λ_{i,N}})` through the model bound, with
/// `λ_i − λ_{i,N} = Σ_{k>N} z_{i,k} b_k`.
pub fn tv_hellinger_chain(truth: &ModelTruth, sample: &SampleSet, big_n: usize) -> Result<TvChain> {
    let owned;
    let scores = match sample.scores() {
        Some(s) => s,
        None => {
            owned = project_centered(sample.paths(), truth.gp.mu(), truth.gp.basis())?;
            &owned
        }
    };
    let b0 = truth.intercept();
    let mut h2_sum = 0.0;
    for i in 0..sample.len() {
        let row = scores.row(i);
        let head: f64 = (0..big_n.min(truth.b.len())).map(|k| row[k] * truth.b[k]).sum();
        let gap: f64 = (big_n..truth.b.len()).map(|k| row[k] * truth.b[k]).sum();
        if gap != 0.0 {
            h2_sum += hellinger_report(&truth.family, b0 + head, gap)?.h2_model_bound;
        }
    }
    Ok(TvChain {
        h2_sum,
        tv_bound: h2_sum.sqrt(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TxxnReport {
    pub n: usize,
    /// `‖K̃ − K‖` in operator norm.
    pub delta: f64,
    /// `max_i ‖X_i − μ‖² / log n`.
    pub max_z_sq_over_log_n: f64,
    /// `‖(H̃_m − H_m)β‖²`.
    pub proj_m: f64,
    /// `‖(H̃_N − H_N)β‖²`.
    pub proj_big_n: f64,
    /// `max_i |η̃_i| · N / √n` with `η̃_i = D^{−1}ξ̃_i`.
    pub max_score_ratio: f64,
    /// `‖S̃Ã_nS̃ − A_n‖` with `S̃ = diag(1, σ_1, …, σ_N)`.
    pub info_gap: f64,
}

pub fn txxn_diagnostics(data: &Dataset, truth: &ModelTruth, m: usize, big_n: usize) -> Result<TxxnReport> {
    let n = data.sample.len();
    let gp = &truth.gp;
    if big_n == 0 || m > big_n || big_n > gp.truncation() {
        return Err(Error::InvalidArgument(format!("need m ≤ N ≤ J_max, got m = {m}, N = {big_n}")));
    }
    let k = gp.kernel_matrix();
    let k_tilde = sample_covariance(&data.sample)?;
    let delta = delta_norm(&k, &k_tilde)?.operator;
    let reference = SpectralDecomp::from_model(gp)?;
    let pert = eigendecompose(&k_tilde, data.sample.grid())?;
    let beta = truth.slope();
    let proj_m = projection_diff(&reference, &pert, &beta, m)?.actual;
    let proj_big_n = projection_diff(&reference, &pert, &beta, big_n)?.actual;

    let t = gp.grid().len() as f64;
    let max_z_sq = data
        .sample
        .paths()
        .row_iter()
        .map(|row| {
            row.iter()
                .zip(gp.mu().values())
                .map(|(x, m)| (x - m).powi(2))
                .sum::<f64>()
                / t
        })
        .fold(0.0, f64::max);

    let theta = gp.theta();
    let scale: Vec<f64> = std::iter::once(1.0)
        .chain(theta[..big_n].iter().map(|v| v.sqrt()))
        .collect();
    let phi_t = BasisSet::new(
        data.sample.grid(),
        pert.eigenfunctions().functions()[..big_n].to_vec(),
    )?;
    let mean = sample_mean(&data.sample);
    let est = project_centered(data.sample.paths(), &mean, &phi_t)?;
    let eta_t = DMatrix::from_fn(n, big_n + 1, |i, k| if k == 0 { 1.0 } else { est[(i, k - 1)] / scale[k] });
    let true_scores = project_centered(data.sample.paths(), gp.mu(), gp.basis())?;
    let eta = DMatrix::from_fn(n, big_n + 1, |i, k| if k == 0 { 1.0 } else { true_scores[(i, k - 1)] / scale[k] });
    let max_eta = eta_t.row_iter().map(|r| r.norm()).fold(0.0, f64::max);

    let cross = reference.cross_gram(&pert);
    let signs: Vec<f64> = std::iter::once(1.0)
        .chain((0..big_n).map(|k| if cross[(k, k)] >= 0.0 { 1.0 } else { -1.0 }))
        .collect();
    let weights: Vec<f64> = data.lambda.iter().map(|l| truth.family.psi2(*l)).collect();
    let gram = |e: &DMatrix<f64>| {
        let mut scaled = e.clone();
        for (mut row, w) in scaled.row_iter_mut().zip(&weights) {
            row *= *w;
        }
        e.tr_mul(&scaled) / n as f64
    };
    let a_t = gram(&eta_t);
    let a = gram(&eta);
    let aligned = DMatrix::from_fn(big_n + 1, big_n + 1, |j, k| signs[j] * a_t[(j, k)] * signs[k]);
    Ok(TxxnReport {
        n,
        delta,
        max_z_sq_over_log_n: max_z_sq / (n as f64).ln(),
        proj_m,
        proj_big_n,
        max_score_ratio: max_eta * big_n as f64 / (n as f64).sqrt(),
        info_gap: sym_spectral_norm(&(aligned - a)),
    })
}
