//! One-parameter exponential families `dQ_λ/dQ_0 = exp(λy − ψ(λ))`.
//!
//! `ψ̇(λ)` is the mean of `Q_λ` and `ψ̈(λ)` its variance. Every family also
//! carries a growth function `G` with `|ψ⃛(λ + h)| ≤ ψ̈(λ) G(|h|)`, which is
//! what the likelihood and Hellinger bounds are stated in terms of.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gaussian,
    Poisson,
    Bernoulli,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [FamilyKind::Gaussian, FamilyKind::Poisson, FamilyKind::Bernoulli];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Bernoulli => "bernoulli",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(FamilyKind::Gaussian),
            "poisson" => Ok(FamilyKind::Poisson),
            "bernoulli" => Ok(FamilyKind::Bernoulli),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

/// A concrete exponential family. Immutable and `Copy`, so it can be shared
/// freely between replications running on different threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpFamilySpec {
    kind: FamilyKind,
}

/// Look up one of the built-in families by name.
pub fn builtin_family(name: &str) -> Result<ExpFamilySpec> {
    Ok(ExpFamilySpec::new(name.parse()?))
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ExpFamilySpec {
    pub fn new(kind: FamilyKind) -> Self {
        Self { kind }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Largest `|λ|` accepted before cumulant evaluation is refused.
    pub fn lambda_limit(&self) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1e150,
            FamilyKind::Poisson | FamilyKind::Bernoulli => 700.0,
        }
    }

    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !lambda.is_finite() || lambda.abs() > self.lambda_limit() {
            return Err(Error::Overflow {
                family: self.name(),
                lambda,
                limit: self.lambda_limit(),
            });
        }
        Ok(())
    }

    pub fn psi(&self, lambda: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.5 * lambda * lambda,
            FamilyKind::Poisson => lambda.exp(),
            FamilyKind::Bernoulli => {
                if lambda > 0.0 {
                    lambda + (-lambda).exp().ln_1p()
                } else {
                    lambda.exp().ln_1p()
                }
            }
        }
    }

    /// Mean of `Q_λ`.
    pub fn psi1(&self, lambda: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => lambda,
            FamilyKind::Poisson => lambda.exp(),
            FamilyKind::Bernoulli => logistic(lambda),
        }
    }

    /// Variance of `Q_λ`.
    pub fn psi2(&self, lambda: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Poisson => lambda.exp(),
            FamilyKind::Bernoulli => logistic(lambda) * logistic(-lambda),
        }
    }

    pub fn psi3(&self, lambda: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 0.0,
            FamilyKind::Poisson => lambda.exp(),
            FamilyKind::Bernoulli => {
                let p = logistic(lambda);
                let q = logistic(-lambda);
                p * q * (q - p)
            }
        }
    }

    /// Growth function `G(h)`, nondecreasing with `G(0) ≥ 1`.
    pub fn growth(&self, h: f64) -> f64 {
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Poisson | FamilyKind::Bernoulli => h.abs().exp(),
        }
    }

    pub fn try_psi(&self, lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        let v = self.psi(lambda);
        if !v.is_finite() {
            return Err(Error::Overflow {
                family: self.name(),
                lambda,
                limit: self.lambda_limit(),
            });
        }
        Ok(v)
    }

    /// Draw `y ~ Q_λ`.
    pub fn sample<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R) -> Result<f64> {
        self.check_lambda(lambda)?;
        Ok(match self.kind {
            FamilyKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                lambda + z
            }
            FamilyKind::Poisson => {
                let mean = lambda.exp();
                Poisson::new(mean)
                    .map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?
                    .sample(rng)
            }
            FamilyKind::Bernoulli => {
                if rng.random::<f64>() < logistic(lambda) {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }
}

/// The three Hellinger quantities for `Q_λ` against `Q_{λ+δ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HellingerReport {
    /// `2 − 2 exp(ψ(λ + δ/2) − ψ(λ)/2 − ψ(λ + δ)/2)`.
    pub h2_exact: f64,
    /// `ψ(λ) + ψ(λ + δ) − 2ψ(λ + δ/2)`.
    pub h2_psi_bound: f64,
    /// `δ² ψ̈(λ) (1 + |δ|) G(|δ|)`.
    pub h2_model_bound: f64,
}

impl HellingerReport {
    pub fn ordered(&self, tol: f64) -> bool {
        self.h2_exact <= self.h2_psi_bound + tol && self.h2_psi_bound <= self.h2_model_bound + tol
    }
}

/// Squared Hellinger distance between `Q_λ` and `Q_{λ+δ}` with its two upper
/// bounds. `h²` here is `∫(√p − √q)²`, so it lives in `[0, 2]`.
pub fn hellinger_report(family: &ExpFamilySpec, lambda: f64, delta: f64) -> Result<HellingerReport> {
    let a = family.try_psi(lambda)?;
    let b = family.try_psi(lambda + delta)?;
    let mid = family.try_psi(lambda + 0.5 * delta)?;
    let psi_bound = a + b - 2.0 * mid;
    let half_gap = (0.5 * psi_bound).max(0.0);
    let h2_exact = (-2.0 * (-half_gap).exp_m1()).min(2.0);
    let h2_model_bound =
        delta * delta * family.psi2(lambda) * (1.0 + delta.abs()) * family.growth(delta.abs());
    if !h2_model_bound.is_finite() {
        return Err(Error::Overflow {
            family: family.name(),
            lambda: lambda + delta,
            limit: family.lambda_limit(),
        });
    }
    Ok(HellingerReport {
        h2_exact,
        h2_psi_bound: psi_bound,
        h2_model_bound,
    })
}

/// Exact `h²(Q_λ, Q_{λ+δ})` alone.
pub fn hellinger_sq(family: &ExpFamilySpec, lambda: f64, delta: f64) -> Result<f64> {
    let a = family.try_psi(lambda)?;
    let b = family.try_psi(lambda + delta)?;
    let mid = family.try_psi(lambda + 0.5 * delta)?;
    let half_gap = (0.5 * (a + b) - mid).max(0.0);
    Ok((-2.0 * (-half_gap).exp_m1()).min(2.0))
}

fn lattice(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let count = ((hi - lo) / step).round() as usize;
    (0..=count).map(move |i| lo + i as f64 * step)
}

/// Outcome of checking one of the cumulant assumptions on a lattice.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl ExpFamilySpec {
    /// `min ψ̈(λ)` over `λ ∈ [−30, 30]`, step 0.25.
    pub fn check_variance_positive(&self) -> AssumptionCheck {
        let min = lattice(-30.0, 30.0, 0.25)
            .map(|l| self.psi2(l))
            .fold(f64::INFINITY, f64::min);
        AssumptionCheck {
            name: format!("{}: min psi2 > 0", self.name()),
            value: min,
            bound: 0.0,
            pass: min > 0.0,
        }
    }

    /// Worst ratio `|ψ⃛(λ + h)| / (ψ̈(λ) G(|h|))` over `λ ∈ [−30, 30]` (step
    /// 0.25) and `h ∈ [−3, 3]` (step 0.05); the growth assumption holds on
    /// the lattice iff the ratio is at most one.
    pub fn check_third_derivative(&self) -> AssumptionCheck {
        let mut worst: f64 = 0.0;
        for l in lattice(-30.0, 30.0, 0.25) {
            let base = self.psi2(l);
            for h in lattice(-3.0, 3.0, 0.05) {
                let ratio = self.psi3(l + h).abs() / (base * self.growth(h.abs()));
                worst = worst.max(ratio);
            }
        }
        AssumptionCheck {
            name: format!("{}: |psi3(l+h)| <= psi2(l) G(|h|)", self.name()),
            value: worst,
            bound: 1.0,
            pass: worst <= 1.0 + 1e-9,
        }
    }

    /// Smallest `C_ε` with `ψ̈(λ) ≤ C_ε exp(ελ²)` on `λ ∈ [−30, 30]`.
    pub fn fit_variance_envelope(&self, eps: f64) -> AssumptionCheck {
        let c = lattice(-30.0, 30.0, 0.25)
            .map(|l| self.psi2(l) * (-eps * l * l).exp())
            .fold(0.0, f64::max);
        AssumptionCheck {
            name: format!("{}: C_eps finite at eps = {eps}", self.name()),
            value: c,
            bound: f64::INFINITY,
            pass: c.is_finite(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn derivs(f: &ExpFamilySpec, l: f64) -> [f64; 4] {
        [f.psi(l), f.psi1(l), f.psi2(l), f.psi3(l)]
    }

    #[test]
    fn derivatives_at_zero() {
        let g = builtin_family("gaussian").unwrap();
        assert_eq!(derivs(&g, 0.0), [0.0, 0.0, 1.0, 0.0]);
        let p = builtin_family("poisson").unwrap();
        assert_eq!(derivs(&p, 0.0), [1.0, 1.0, 1.0, 1.0]);
        let b = builtin_family("bernoulli").unwrap();
        let d = derivs(&b, 0.0);
        assert!((d[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(&d[1..], &[0.5, 0.25, 0.0]);
    }

    #[test]
    fn unknown_family_is_an_error() {
        assert!(matches!(builtin_family("gamma"), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for kind in FamilyKind::ALL {
            let f = ExpFamilySpec::new(kind);
            for &l in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let d1 = (f.psi(l + h) - f.psi(l - h)) / (2.0 * h);
                let d2 = (f.psi1(l + h) - f.psi1(l - h)) / (2.0 * h);
                let d3 = (f.psi2(l + h) - f.psi2(l - h)) / (2.0 * h);
                let scale = 1.0 + f.psi2(l);
                assert!((d1 - f.psi1(l)).abs() < 1e-7 * scale, "{kind} psi1 at {l}");
                assert!((d2 - f.psi2(l)).abs() < 1e-7 * scale, "{kind} psi2 at {l}");
                assert!((d3 - f.psi3(l)).abs() < 1e-7 * scale, "{kind} psi3 at {l}");
            }
        }
    }

    #[test]
    fn bernoulli_cumulant_is_stable_in_the_tails() {
        let b = ExpFamilySpec::new(FamilyKind::Bernoulli);
        assert!((b.psi(600.0) - 600.0).abs() < 1e-12);
        assert!(b.psi(-600.0) >= 0.0 && b.psi(-600.0) < 1e-250);
    }

    #[test]
    fn assumptions_hold_on_the_lattice() {
        for kind in FamilyKind::ALL {
            let f = ExpFamilySpec::new(kind);
            assert!(f.check_variance_positive().pass, "{kind}");
            let c = f.check_third_derivative();
            assert!(c.pass, "{kind}: worst ratio {}", c.value);
            for eps in [0.1, 0.5, 1.0] {
                assert!(f.fit_variance_envelope(eps).pass, "{kind} eps={eps}");
            }
        }
    }

    #[test]
    fn identical_measures_have_zero_distance() {
        for kind in FamilyKind::ALL {
            let f = ExpFamilySpec::new(kind);
            for &l in &[-4.0, 0.0, 1.3] {
                let r = hellinger_report(&f, l, 0.0).unwrap();
                assert_eq!((r.h2_exact, r.h2_psi_bound, r.h2_model_bound), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn gaussian_unit_shift() {
        let g = ExpFamilySpec::new(FamilyKind::Gaussian);
        let r = hellinger_report(&g, 0.0, 1.0).unwrap();
        assert!((r.h2_exact - 2.0 * (1.0 - (-0.125f64).exp())).abs() < 1e-15);
        assert!((r.h2_exact - 0.2350).abs() < 1e-4);
        assert!((r.h2_psi_bound - 0.25).abs() < 1e-15);
        assert!((r.h2_model_bound - 2.0).abs() < 1e-15);
    }

    /// `∫(√p − √q)²` by the trapezoid rule on a wide interval.
    fn gaussian_h2_by_quadrature(mu1: f64, mu2: f64) -> f64 {
        let (lo, hi, steps) = (-20.0, 20.0, 200_000);
        let dx = (hi - lo) / steps as f64;
        let dens = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (0..=steps)
            .map(|i| {
                let x = lo + i as f64 * dx;
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                let d = dens(x, mu1).sqrt() - dens(x, mu2).sqrt();
                w * d * d * dx
            })
            .sum()
    }

    #[test]
    fn gaussian_closed_form_matches_quadrature() {
        let g = ExpFamilySpec::new(FamilyKind::Gaussian);
        for &(l, d) in &[(0.0, 1.0), (-1.5, 0.3), (2.0, -2.0), (0.5, 3.5)] {
            let oracle = gaussian_h2_by_quadrature(l, l + d);
            let r = hellinger_report(&g, l, d).unwrap();
            assert!((r.h2_exact - oracle).abs() < 1e-9, "λ={l} δ={d}: {} vs {oracle}", r.h2_exact);
        }
    }

    #[test]
    fn poisson_half_shift_is_ordered() {
        let p = ExpFamilySpec::new(FamilyKind::Poisson);
        let r = hellinger_report(&p, 0.0, 0.5).unwrap();
        // direct evaluation of the three formulas
        let x = 0.5 * (1.0 + 0.5f64.exp()) - 0.25f64.exp();
        assert!((r.h2_exact - 2.0 * (1.0 - (-x).exp())).abs() < 1e-15);
        assert!((r.h2_psi_bound - 2.0 * x).abs() < 1e-15);
        assert!((r.h2_model_bound - 0.25 * 1.5 * 0.5f64.exp()).abs() < 1e-15);
        assert!(r.ordered(1e-9));
    }

    #[test]
    fn overflow_is_reported() {
        let p = ExpFamilySpec::new(FamilyKind::Poisson);
        assert!(matches!(hellinger_report(&p, 699.0, 5.0), Err(Error::Overflow { .. })));
        assert!(p.try_psi(f64::INFINITY).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(p.sample(800.0, &mut rng).is_err());
    }

    #[test]
    fn sampler_moments_match_cumulant() {
        let n = 40_000;
        for kind in FamilyKind::ALL {
            let f = ExpFamilySpec::new(kind);
            for &l in &[-1.0, 0.0, 0.8] {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let ys: Vec<f64> = (0..n).map(|_| f.sample(l, &mut rng).unwrap()).collect();
                let mean = ys.iter().sum::<f64>() / n as f64;
                let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let se_mean = (f.psi2(l) / n as f64).sqrt();
                assert!((mean - f.psi1(l)).abs() < 4.0 * se_mean, "{kind} mean at {l}");
                // var of the sample variance: (μ4 − σ⁴)/n, estimated from the draws
                let m4 = ys.iter().map(|y| (y - mean).powi(4)).sum::<f64>() / n as f64;
                let se_var = ((m4 - var * var) / n as f64).sqrt().max(1.0 / n as f64);
                assert!((var - f.psi2(l)).abs() < 4.0 * se_var, "{kind} var at {l}");
            }
        }
    }
}
