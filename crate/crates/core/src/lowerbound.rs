//! Hypercube of slopes `β_γ = ε Σ_{j∈J} γ_j β_j φ_j`, `J = {m+1, …, 2m}`,
//! and the affinity bounds that feed Assouad's lemma.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::minimax_rate;
use crate::expfam::{hellinger_sq, ExpFamilySpec};
use crate::gp::{GPModel, SampleSet};

#[derive(Debug, Clone)]
pub struct HypercubeSpec {
    pub m: usize,
    pub eps: f64,
    pub alpha: f64,
    pub beta: f64,
    pub r: f64,
    pub family: ExpFamilySpec,
    pub gp: GPModel,
}

impl HypercubeSpec {
    pub fn new(m: usize, eps: f64, beta: f64, family: ExpFamilySpec, gp: GPModel) -> Result<Self> {
        if m == 0 || 2 * m > gp.truncation() {
            return Err(Error::InvalidArgument(format!(
                "need 1 ≤ m and 2m ≤ J_max = {}, got m = {m}",
                gp.truncation()
            )));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("need ε ≥ 0, got {eps}")));
        }
        if gp.mu().values().iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument("the hypercube needs μ = 0".into()));
        }
        Ok(Self {
            m,
            eps,
            alpha: gp.alpha(),
            beta,
            r: gp.r(),
            family,
            gp,
        })
    }

    /// One-based indices `m+1..=2m`.
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.m + 1..=2 * self.m
    }

    /// `β_j = R j^{−β}`.
    pub fn envelope(&self, j: usize) -> f64 {
        self.r * (j as f64).powf(-self.beta)
    }

    /// `Σ_{j∈J} β_j²`.
    pub fn envelope_sq_sum(&self) -> f64 {
        self.indices().map(|j| self.envelope(j).powi(2)).sum()
    }
}

/// `ε` with `max_{j∈J} n ε² β_j² θ_j = 1`.
pub fn eps_schedule(n: usize, m: usize, beta: f64, gp: &GPModel) -> Result<f64> {
    if m == 0 || 2 * m > gp.truncation() {
        return Err(Error::InvalidArgument(format!("m = {m} does not fit J_max = {}", gp.truncation())));
    }
    let r = gp.r();
    let worst = (m + 1..=2 * m)
        .map(|j| r * r * (j as f64).powf(-2.0 * beta) * gp.theta()[j - 1])
        .fold(0.0, f64::max);
    Ok(1.0 / (n as f64 * worst).sqrt())
}

fn scores(sample: &SampleSet, need: usize) -> Result<&nalgebra::DMatrix<f64>> {
    match sample.scores() {
        Some(s) if s.ncols() >= need => Ok(s),
        _ => Err(Error::InvalidArgument(format!("sample needs scores for the first {need} eigenfunctions"))),
    }
}

/// `Σ_i h²(Q_{λ_i(γ)}, Q_{λ_i(ψ_j γ)})` with `λ_i(γ) = ε Σ_{l∈J} γ_l β_l z_{i,l}`.
/// `gamma[l]` is the bit for index `m + 1 + l`.
pub fn flip_h2_sum(spec: &HypercubeSpec, gamma: &[bool], j: usize, sample: &SampleSet) -> Result<f64> {
    if gamma.len() != spec.m || !spec.indices().contains(&j) {
        return Err(Error::InvalidArgument(format!(
            "need {} bits and j in {:?}",
            spec.m,
            spec.indices()
        )));
    }
    let z = scores(sample, 2 * spec.m)?;
    let bit = j - spec.m - 1;
    let sign = if gamma[bit] { -1.0 } else { 1.0 };
    let step = spec.eps * spec.envelope(j);
    let mut total = 0.0;
    for i in 0..z.nrows() {
        let lambda: f64 = spec
            .indices()
            .zip(gamma)
            .filter(|(_, &g)| g)
            .map(|(l, _)| spec.eps * spec.envelope(l) * z[(i, l - 1)])
            .sum();
        total += hellinger_sq(&spec.family, lambda, sign * step * z[(i, j - 1)])?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize)]
pub struct AffinityRow {
    pub draw: usize,
    pub j: usize,
    pub h2_sum: f64,
    pub affinity_lb: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AffinityReport {
    pub rows: Vec<AffinityRow>,
    pub min_affinity: f64,
}

/// `1 − √min(Σ h², 2)`, floored at zero.
pub fn affinity_lower_bound(h2_sum: f64) -> f64 {
    (1.0 - h2_sum.min(2.0).sqrt()).max(0.0)
}

fn scan(spec: &HypercubeSpec, sample: &SampleSet, patterns: &[Vec<bool>]) -> Result<AffinityReport> {
    let mut rows = Vec::with_capacity(patterns.len() * spec.m);
    for (draw, gamma) in patterns.iter().enumerate() {
        for j in spec.indices() {
            let h2_sum = flip_h2_sum(spec, gamma, j, sample)?;
            rows.push(AffinityRow {
                draw,
                j,
                h2_sum,
                affinity_lb: affinity_lower_bound(h2_sum),
            });
        }
    }
    let min_affinity = rows.iter().map(|r| r.affinity_lb).fold(1.0, f64::min);
    Ok(AffinityReport { rows, min_affinity })
}

/// Affinity bounds for `gamma_draws` uniform patterns and every `j ∈ J`.
pub fn affinity_scan<R: Rng + ?Sized>(
    spec: &HypercubeSpec,
    sample: &SampleSet,
    gamma_draws: usize,
    rng: &mut R,
) -> Result<AffinityReport> {
    if gamma_draws == 0 {
        return Err(Error::InvalidArgument("need at least one γ draw".into()));
    }
    let patterns: Vec<Vec<bool>> = (0..gamma_draws)
        .map(|_| (0..spec.m).map(|_| rng.random::<bool>()).collect())
        .collect();
    scan(spec, sample, &patterns)
}

/// Every pattern in `{0, 1}^J`; `m ≤ 12`.
pub fn affinity_scan_all(spec: &HypercubeSpec, sample: &SampleSet) -> Result<AffinityReport> {
    if spec.m > 12 {
        return Err(Error::InvalidArgument(format!("enumeration needs m ≤ 12, got {}", spec.m)));
    }
    let patterns: Vec<Vec<bool>> = (0..1u32 << spec.m)
        .map(|code| (0..spec.m).map(|b| code >> b & 1 == 1).collect())
        .collect();
    scan(spec, sample, &patterns)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssouadBound {
    pub bound: f64,
    pub rho_n: f64,
    pub ratio: f64,
}

/// `(1/8) ε² Σ_{j∈J} β_j² · min affinity` and its ratio to `ρ_n`.
pub fn assouad_bound(spec: &HypercubeSpec, report: &AffinityReport, n: usize) -> AssouadBound {
    let bound = 0.125 * spec.eps * spec.eps * spec.envelope_sq_sum() * report.min_affinity;
    let rho_n = minimax_rate(n, spec.alpha, spec.beta);
    AssouadBound {
        bound,
        rho_n,
        ratio: bound / rho_n,
    }
}
