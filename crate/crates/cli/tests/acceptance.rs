//! Acceptance gate: one PASS/FAIL line per criterion, written straight to
//! stderr so that it shows even when the harness captures output.

use std::io::Write;
use std::path::Path;
use std::process::Command;

use nsfide_cli::validate::{self, Audit, CriterionResult};

fn report(r: &CriterionResult) {
    let ok = r.passed && r.within_time();
    let limit = r.time_limit.map_or(String::new(), |l| format!(" (limit {l:.0} s)"));
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "acceptance {} criterion {}: {} [{:.1} s{limit}]",
        if ok { "PASS" } else { "FAIL" },
        r.id,
        r.title,
        r.seconds
    );
    for a in &r.audits {
        let _ = writeln!(err, "    {} {}: {}", if a.passed { "ok  " } else { "FAIL" }, a.name, a.detail);
    }
}

fn check(id: usize) {
    let r = validate::run_criterion(id).unwrap();
    report(&r);
    assert!(r.passed, "criterion {id} failed: {:?}", r.audits.iter().filter(|a| !a.passed).collect::<Vec<_>>());
    assert!(r.within_time(), "criterion {id} took {:.1} s", r.seconds);
}

#[test]
fn criterion_1_fbm_covariance() {
    check(1);
}

#[test]
fn criterion_2_wiener_sampler() {
    check(2);
}

#[test]
fn criterion_3_k_star_isometry() {
    check(3);
}

#[test]
fn criterion_4_resolvent_oracles() {
    check(4);
}

#[test]
fn criterion_5_skorohod_oracle() {
    check(5);
}

#[test]
fn criterion_6_linear_model() {
    check(6);
}

#[test]
fn criterion_7_nonlinear_model() {
    check(7);
}

#[test]
fn criterion_8_density() {
    check(8);
}

fn run_binary(args: &[&str], config: &Path, out: &Path, threads: usize) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_nsfide"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .env_remove("NSFIDE_PATHS")
        .env_remove("NSFIDE_SEED")
        .output()
        .unwrap();
    assert!(status.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&status.stderr));
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_reproducibility() {
    let mut r = validate::run_criterion(9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, validate::reproducibility_config().to_toml()).unwrap();
    for cmd in ["simulate", "density"] {
        let outs: Vec<_> = [(1, "a"), (1, "b"), (8, "c")]
            .iter()
            .map(|(threads, tag)| run_binary(&[cmd], &config, &dir.path().join(format!("{cmd}_{tag}")), *threads))
            .collect();
        r.audits.push(Audit::new(
            format!("binary {cmd}: identical bytes across runs and thread counts"),
            outs[0] == outs[1] && outs[0] == outs[2] && !outs[0].is_empty(),
            format!("{} files", outs[0].len()),
        ));
    }
    r.passed = r.audits.iter().all(|a| a.passed);
    report(&r);
    assert!(r.passed);
}
