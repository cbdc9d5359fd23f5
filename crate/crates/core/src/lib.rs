//! Functional regression for one-parameter exponential families.
//!
//! The response `y_i` is drawn from `Q_λ` with canonical parameter
//! `λ_i = a + ⟨X_i, β⟩`, where `X_i` is a Gaussian process on `[0, 1]`.
//! The slope `β` is estimated by maximum likelihood over a growing number of
//! principal-component scores, with either the true or the estimated
//! covariance operator supplying the eigenfunctions.
//!
//! Modules:
//! - [`expfam`]: cumulant functions, Hellinger distances, samplers.
//! - [`function_space`]: the midpoint grid, discrete `L²` and the cosine basis.
//! - [`gp`]: Karhunen–Loève simulation and sample moments of Gaussian paths.
//! - [`spectral`]: eigendecomposition of kernel operators and perturbation bounds.
//! - [`mle`]: damped Newton for the sieve likelihood and its diagnostics.
//! - [`estimator`]: the known- and unknown-covariance estimators.
//! - [`lowerbound`]: the hypercube construction behind the minimax lower bound.
//! - [`harness`]: configuration, experiment orchestration and CSV output.

pub mod error;
pub mod estimator;
pub mod expfam;
pub mod function_space;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod lowerbound;
pub mod mle;
pub mod quadrature;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use expfam::{ExpFamilySpec, FamilyKind};
pub use function_space::{BasisSet, Grid, GridFunction};
