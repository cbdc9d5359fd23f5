use std::path::{Path, PathBuf};
use std::process::ExitCode;

use funglm::harness::{run, Assertion, ExperimentConfig, RunMode, RunOutput};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn execute(name: &str, mode: RunMode, out: &Path) -> RunOutput {
    run(&config(name), mode, out).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn select<'a>(out: &'a RunOutput, pred: impl Fn(&str) -> bool) -> Vec<&'a Assertion> {
    out.assertions.iter().filter(|a| pred(&a.name)).collect()
}

struct Verdict {
    id: usize,
    label: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: usize, label: &'static str, checks: &[&Assertion]) -> Verdict {
    let pass = !checks.is_empty() && checks.iter().all(|a| a.pass);
    let detail = checks
        .iter()
        .filter(|a| !a.pass)
        .map(|a| format!("{}: {} vs {}", a.name, a.value, a.bound))
        .collect::<Vec<_>>()
        .join("; ");
    let detail = if checks.is_empty() { "no checks ran".to_string() } else { detail };
    Verdict { id, label, pass, detail }
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("tempdir");
    let dir = |name: &str| -> PathBuf { root.path().join(name) };
    let mut verdicts = Vec::new();

    let known = execute("rate_sweep_known.json", RunMode::RateSweep, &dir("known"));
    verdicts.push(verdict(1, "rate reproduction, known (mu, K)", &select(&known, |_| true)));

    let unknown = execute("rate_sweep_unknown.json", RunMode::RateSweep, &dir("unknown"));
    verdicts.push(verdict(2, "unknown (mu, K) parity", &select(&unknown, |_| true)));

    let spectral = execute("verify_spectral.json", RunMode::VerifySpectral, &dir("spectral"));
    verdicts.push(verdict(3, "eigenvalue perturbation", &select(&spectral, |n| n.starts_with("eigenvalue perturbation"))));
    verdicts.push(verdict(4, "eigenvector bound", &select(&spectral, |n| n.starts_with("eigenvector bound"))));

    let hell = execute("verify_hellinger.json", RunMode::VerifyHellinger, &dir("hellinger"));
    verdicts.push(verdict(5, "Hellinger ordering", &select(&hell, |n| n.contains("Hellinger ordering"))));

    let mle = execute("verify_mle.json", RunMode::VerifyMle, &dir("mle"));
    verdicts.push(verdict(6, "score normalization", &select(&mle, |n| n.starts_with("poisson: E|W_n|^2") && n.contains("n = 2000"))));
    verdicts.push(verdict(7, "MLE approximation trend", &select(&mle, |n| n.contains("median |r_n| decreases"))));

    let tail = execute("verify_gaussian_tail.json", RunMode::VerifyGaussianTail, &dir("tail"));
    verdicts.push(verdict(8, "Gaussian tail", &select(&tail, |_| true)));

    verdicts.push(verdict(9, "sample-covariance moments", &select(&spectral, |n| n.starts_with("E S_"))));

    let lower = execute("lower_bound.json", RunMode::LowerBound, &dir("lower"));
    verdicts.push(verdict(10, "Assouad affinity", &select(&lower, |_| true)));

    let mut same = Vec::new();
    for (cfg, mode) in [("single_run.json", RunMode::SingleRun), ("verify_hellinger.json", RunMode::VerifyHellinger)] {
        let a = execute(cfg, mode, &dir(&format!("det-a-{}", mode.name())));
        let b = execute(cfg, mode, &dir(&format!("det-b-{}", mode.name())));
        let identical = std::fs::read(&a.csv_path).unwrap() == std::fs::read(&b.csv_path).unwrap();
        same.push(Assertion::flag(format!("{} CSV byte-identical", mode.name()), f64::from(u8::from(identical)), 1.0, identical));
    }
    verdicts.push(verdict(11, "determinism", &same.iter().collect::<Vec<_>>()));

    let mut failed = 0;
    for v in &verdicts {
        if v.pass {
            println!("PASS criterion {}: {}", v.id, v.label);
        } else {
            failed += 1;
            println!("FAIL criterion {}: {} ({})", v.id, v.label, v.detail);
        }
    }
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
