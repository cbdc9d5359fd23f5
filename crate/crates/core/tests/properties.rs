use approx::assert_relative_eq;
use funglm::estimator::{default_zeta, schedule};
use funglm::expfam::{hellinger_report, ExpFamilySpec, FamilyKind};
use funglm::function_space::{cosine_basis, inner, Grid, GridFunction};
use funglm::gp::{sample_covariance, sample_paths, GPModel};
use funglm::harness::{run, ExperimentConfig, RunMode};
use funglm::spectral::{delta_norm, eigendecompose, perturbation_report, projection_diff, SpectralDecomp};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi rotations, eigenvalues sorted descending.
fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)].powi(2)).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    d.sort_by(|x, y| y.total_cmp(x));
    d
}

#[test]
fn eigendecompose_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for size in [4usize, 8, 16] {
        let a = DMatrix::from_fn(size, size, |_, _| rng.random_range(-1.0..1.0));
        let k = &a * a.transpose();
        let grid = Grid::new(size).unwrap();
        let dec = eigendecompose(&k, grid).unwrap();
        let want = jacobi_eigenvalues(&(&k / size as f64));
        for (got, want) in dec.eigenvalues().iter().zip(&want) {
            assert_relative_eq!(*got, *want, epsilon = 1e-10, max_relative = 1e-9);
        }
        let recon = dec.reconstruct();
        assert!((recon - &k).amax() < 1e-9 * k.amax());
        let gram = dec.eigenfunctions().gram();
        assert!((gram - DMatrix::identity(size, size)).amax() < 1e-10);
    }
}

#[test]
fn cosine_basis_is_orthonormal_on_grid() {
    let basis = cosine_basis(32, 32).unwrap();
    let gram = basis.gram();
    assert!((gram - DMatrix::identity(32, 32)).amax() < 1e-12);
}

#[test]
fn model_kernel_recovers_karhunen_loeve_eigenvalues() {
    let gp = GPModel::new(64, 2.0, 2.0, 20, None).unwrap();
    let dec = eigendecompose(&gp.kernel_matrix(), gp.grid()).unwrap();
    assert_eq!(dec.rank(), 20);
    for (got, want) in dec.eigenvalues().iter().zip(gp.theta()) {
        assert_relative_eq!(*got, *want, max_relative = 1e-9);
    }
}

#[test]
fn projection_difference_within_calibrated_constant() {
    let gp = GPModel::new(64, 2.0, 2.0, 32, None).unwrap();
    let reference = SpectralDecomp::from_model(&gp).unwrap();
    let beta = GridFunction::from_fn(gp.grid(), |t| (t * 3.0).sin() + t * t);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for _ in 0..20 {
        let sample = sample_paths(&gp, 2000, &mut rng).unwrap();
        let pert = eigendecompose(&sample_covariance(&sample).unwrap(), gp.grid()).unwrap();
        for p in [1usize, 2, 3] {
            let d = projection_diff(&reference, &pert, &beta, p).unwrap();
            assert!(d.terms.iter().all(|t| t.is_finite() && *t >= 0.0));
            if d.valid {
                assert!(d.actual <= 50.0 * d.term_sum(), "p = {p}: {} > 50 × {}", d.actual, d.term_sum());
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn report_is_invariant_to_eigenfunction_sign() {
    let gp = GPModel::new(64, 2.0, 2.0, 32, None).unwrap();
    let reference = SpectralDecomp::from_model(&gp).unwrap();
    let k = gp.kernel_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let sample = sample_paths(&gp, 1000, &mut rng).unwrap();
    let kt = sample_covariance(&sample).unwrap();
    let pert = eigendecompose(&kt, gp.grid()).unwrap();
    let base = perturbation_report(&reference, &pert, &k, &kt, 5).unwrap();
    for flip in 0..5 {
        let other = perturbation_report(&reference, &pert.with_flipped(flip), &k, &kt, 5).unwrap();
        assert_eq!(base.delta, other.delta);
        for (a, b) in base.records.iter().zip(&other.records) {
            assert_relative_eq!(a.f_norm_sq, b.f_norm_sq, epsilon = 1e-12);
            assert_relative_eq!(a.lambda_norm_sq, b.lambda_norm_sq, epsilon = 1e-12);
            assert_relative_eq!(a.r_norm_sq, b.r_norm_sq, epsilon = 1e-12);
            assert_eq!(a.applicable, b.applicable);
        }
    }
    let dn = delta_norm(&k, &kt).unwrap();
    assert_eq!(dn.operator, base.delta);
}

#[test]
fn reruns_write_identical_csv() {
    let config = ExperimentConfig::from_json(r#"{"n_list": [300], "reps": 2, "seed": 9}"#).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let a = run(&config, RunMode::SingleRun, first.path()).unwrap();
    let b = run(&config, RunMode::SingleRun, second.path()).unwrap();
    assert_eq!(std::fs::read(&a.csv_path).unwrap(), std::fs::read(&b.csv_path).unwrap());
    assert!(first.path().join("summary.json").exists());
    assert!(first.path().join("assertions.csv").exists());
}

fn family() -> impl Strategy<Value = FamilyKind> {
    prop_oneof![Just(FamilyKind::Gaussian), Just(FamilyKind::Poisson), Just(FamilyKind::Bernoulli)]
}

proptest! {
    #[test]
    fn hellinger_bounds_are_ordered(kind in family(), lambda in -6.0f64..6.0, delta in -2.5f64..2.5) {
        let r = hellinger_report(&ExpFamilySpec::new(kind), lambda, delta).unwrap();
        prop_assert!(r.h2_exact >= -1e-12);
        prop_assert!(r.ordered(1e-9), "{r:?}");
    }

    #[test]
    fn inner_product_is_symmetric(values in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 16)) {
        let grid = Grid::new(16).unwrap();
        let f = GridFunction::new(grid, values.iter().map(|v| v.0).collect()).unwrap();
        let g = GridFunction::new(grid, values.iter().map(|v| v.1).collect()).unwrap();
        let fg = inner(&f, &g).unwrap();
        prop_assert!((fg - inner(&g, &f).unwrap()).abs() < 1e-12);
        prop_assert!(fg * fg <= f.norm_sq() * g.norm_sq() + 1e-9);
    }

    #[test]
    fn basis_round_trips_coefficients(coeffs in proptest::collection::vec(-3.0f64..3.0, 12)) {
        let basis = cosine_basis(24, 12).unwrap();
        let back = basis.coefficients(&basis.synthesize(&coeffs)).unwrap();
        for (a, b) in coeffs.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn schedule_is_monotone_in_n(n in 16usize..100_000, factor in 2usize..8) {
        let zeta = default_zeta(2.0, 3.0);
        let (m1, n1) = schedule(n, 2.0, 3.0, zeta).unwrap();
        let (m2, n2) = schedule(n * factor, 2.0, 3.0, zeta).unwrap();
        prop_assert!(m1 <= m2 && n1 <= n2);
        prop_assert!(m1 >= 1 && n1 > m1 && n2 > m2);
    }
}
