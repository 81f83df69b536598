use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, Output};

use nsfide_cli::config::parse_config;
use nsfide_cli::RunConfig;
use nsfide_core::seed::derive_seed;

const BASE: &str = r#"
[model]
hurst = 0.7
horizon = 0.5
delay = 0.25
dt = 0.03125
n_modes = 4
space_points = 15
g = { name = "scaled_tanh", params = [0.1, 1.0] }
f = { name = "scaled_tanh", params = [0.5, 1.0] }
sigma = { name = "scaled_tanh", params = [0.8, 1.0] }
kernel = { name = "exp_decay", params = [1.0, 2.0] }
initial = { alpha = "constant", alpha_params = [1.0], field = "parabola", field_params = [1.0] }

[monte_carlo]
paths = 16
seed = 3
"#;

fn with(from: &str, to: &str) -> String {
    assert!(BASE.contains(from), "fixture edit '{from}' does not apply");
    BASE.replacen(from, to, 1)
}

fn single_error(text: &str) -> String {
    let errs = parse_config(text).unwrap_err().0;
    assert_eq!(errs.len(), 1, "{errs:?}");
    errs[0].clone()
}

#[test]
fn base_fixture_parses_with_defaults_filled() {
    let cfg = parse_config(BASE).unwrap();
    assert_eq!(cfg.model.derivative_depth, 2);
    assert_eq!(cfg.model.blocks, None);
    assert_eq!(cfg.density.functionals, ["e1", "norm", "norm_unnormalized"]);
    assert_eq!(cfg.fbm_test.paths, 20_000);
    // the normalized echo parses back to the same configuration
    assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn shipped_config_is_the_builtin_model() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")).unwrap();
    assert_eq!(parse_config(&text).unwrap(), RunConfig::builtin());
}

#[test]
fn each_invariant_has_its_named_error() {
    let cases = [
        (with("hurst = 0.7", "hurst = 0.4"), "hurst out of (1/2,1)"),
        (with("horizon = 0.5\ndelay = 0.25", "horizon = 3.0\ndelay = 1.0\nblocks = 2"), "T exceeds m·r"),
        (with("delay = 0.25", "delay = 0.3"), "r/dt non-integer"),
        (with("horizon = 0.5", "horizon = 0.51"), "T/dt non-integer"),
        (with("dt = 0.03125", "dt = -0.03125"), "dt must be positive"),
        (with("space_points = 15", "space_points = 3"), "space_points < n_modes"),
        (with("n_modes = 4", "n_modes = 4\nderivative_depth = 5"), "derivative_depth out of"),
        (with("horizon = 0.5", "horizon = 1.5"), "blocks exceed coefficient smoothness"),
        (with("g = { name = \"scaled_tanh\", params = [0.1, 1.0] }", "g = { name = \"constant\", params = [1.0] }"), "g must vanish at zero"),
        (with("\"exp_decay\"", "\"gaussian\""), "kernel"),
        (with("alpha = \"constant\"", "alpha = \"cubic\""), "initial"),
        (with("paths = 16", "paths = 1"), "monte_carlo.paths"),
    ];
    for (text, expected) in cases {
        let e = single_error(&text);
        assert!(e.contains(expected), "expected '{expected}', got '{e}'");
    }
}

#[test]
fn missing_keys_are_listed() {
    let text = BASE.replace("hurst = 0.7\n", "").replace("kernel = { name = \"exp_decay\", params = [1.0, 2.0] }\n", "");
    let errs = parse_config(&text).unwrap_err().0;
    assert_eq!(errs, ["missing key model.hurst", "missing key model.kernel"]);
    assert_eq!(parse_config("").unwrap_err().0, ["missing key model"]);
}

#[test]
fn unknown_fields_are_rejected() {
    let e = single_error(&with("n_modes = 4", "n_modes = 4\nmodes = 3"));
    assert!(e.contains("unknown field"), "{e}");
}

#[test]
fn several_violations_are_all_reported() {
    let text = with("hurst = 0.7", "hurst = 1.2").replace("delay = 0.25", "delay = 0.3");
    assert_eq!(parse_config(&text).unwrap_err().0.len(), 2);
}

#[test]
fn derived_seeds_do_not_collide() {
    let base = 20_240_601;
    let seen: HashSet<u64> = (0..1_000_000).map(|i| derive_seed(base, i)).collect();
    assert_eq!(seen.len(), 1_000_000);
    for i in (0..1_000_000u64).step_by(1000) {
        assert_ne!(derive_seed(base, i), derive_seed(base + 1, i));
        assert_eq!(derive_seed(base, i), derive_seed(base, i));
    }
}

fn nsfide(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_nsfide"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .env_remove("NSFIDE_PATHS")
        .env_remove("NSFIDE_SEED")
        .env_remove("NSFIDE_THREADS")
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

#[test]
fn simulate_without_noise_has_zero_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with("sigma = { name = \"scaled_tanh\", params = [0.8, 1.0] }", "sigma = { name = \"zero\" }");
    let out = nsfide(dir.path(), &cfg, &["simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/moments.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,mean_sq_norm,se,variance"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| r[3] == 0.0 && r[2] == 0.0));
    assert!(rows[0][1] > 0.0);
    assert_eq!(summary(dir.path())["passed"], true);
}

#[test]
fn density_without_noise_has_no_positive_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = with("sigma = { name = \"scaled_tanh\", params = [0.8, 1.0] }", "sigma = { name = \"zero\" }");
    let out = nsfide(dir.path(), &cfg, &["density"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    let results = s["results"].as_array().unwrap();
    assert_eq!(results.len(), 3);
    for r in results {
        assert_eq!(r["fraction_positive"], 0.0);
    }
    let csv = std::fs::read_to_string(dir.path().join("out/density.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("seed,criterion"));
    assert_eq!(csv.lines().count(), 17);
    assert!(dir.path().join("out/density_norm.csv").exists());
}

#[test]
fn resolvent_table_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsfide(dir.path(), BASE, &["resolvent"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/resolvent.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,r_1,r_2,r_3,r_4"));
    assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(1), Some("1.0000000000000000e0"));
}

#[test]
fn invalid_config_exits_with_the_named_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsfide(dir.path(), &with("hurst = 0.7", "hurst = 0.4"), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hurst out of (1/2,1)"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn environment_overrides_path_count() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), BASE).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nsfide"))
        .arg("simulate")
        .env("NSFIDE_CONFIG", dir.path().join("run.toml"))
        .env("NSFIDE_OUT", dir.path().join("out"))
        .env("NSFIDE_PATHS", "5")
        .env("NSFIDE_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.code().is_some_and(|c| c <= 1), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert_eq!(s["results"]["n_paths"], 5);
    assert_eq!(s["config"]["monte_carlo"]["seed"], 11);
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let files = |threads: &str| {
        let d = dir.path().join(threads);
        std::fs::create_dir_all(&d).unwrap();
        let out = nsfide(&d, BASE, &["simulate", "--threads", threads]);
        assert!(out.status.code().is_some_and(|c| c <= 1));
        ["moments.csv", "block_terms.csv", "summary.json"].map(|f| std::fs::read(d.join("out").join(f)).unwrap())
    };
    assert_eq!(files("1"), files("4"));
}
