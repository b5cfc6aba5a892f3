//! End-to-end tests of the command-line interface and its exit-code
//! contract: 0 success, 2 input/validation error, 3 non-convergence or
//! bound violations, 4 internal error.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tvtp")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env("TVTP_THREADS", "2").output().expect("spawn tvtp")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn simulate_writes_contracted_csv_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[dgp]\nt = 200\nrho = 0.8\nseed = 9\n");
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    let r1 = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert!(r1.status.success(), "{}", String::from_utf8_lossy(&r1.stderr));
    let r2 = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(r2.status.success());
    let a = std::fs::read(&out1).unwrap();
    let b = std::fs::read(&out2).unwrap();
    assert_eq!(a, b, "same seed must produce byte-identical files");
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,y,z,s_true");
    assert_eq!(text.lines().count(), 1 + 201, "T = 200 gives 201 data rows plus header");
    // Seed override changes the file.
    let out3 = dir.path().join("c.csv");
    let r3 = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out3.to_str().unwrap(),
        "--seed",
        "10",
    ]);
    assert!(r3.status.success());
    assert_ne!(std::fs::read(&out3).unwrap(), b);
}

#[test]
fn simulate_rejects_zero_length() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[dgp]\nt = 0\n");
    let out = dir.path().join("a.csv");
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[dgp]\nt = 50\nwhatever = 3\n");
    let out = dir.path().join("a.csv");
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("whatever"));
}

#[test]
fn fit_is_deterministic_and_partial_recovers_beta0_at_rho_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(
        &cfg,
        "[model]\nvariant = \"partial\"\n\n[fit]\ngrad_tol = 1e-6\n\n[dgp]\nt = 3200\nrho = 0.0\nseed = 31\n",
    );
    let data = dir.path().join("data.csv");
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(r.status.success());

    let json1 = dir.path().join("fit1.json");
    let r1 = run(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        json1.to_str().unwrap(),
    ]);
    assert_eq!(r1.status.code(), Some(0), "{}", String::from_utf8_lossy(&r1.stderr));
    let json2 = dir.path().join("fit2.json");
    let r2 = run(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        json2.to_str().unwrap(),
    ]);
    let strip = |out: &[u8]| -> String {
        String::from_utf8_lossy(out)
            .lines()
            .filter(|l| !l.starts_with("result written"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&r1.stdout), strip(&r2.stdout), "refit on the same file must be identical");

    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json1).unwrap()).unwrap();
    let names: Vec<String> = parsed["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let estimates = parsed["estimates"].as_array().unwrap();
    let b0_idx = names.iter().position(|n| n == "beta0").unwrap();
    let beta0 = estimates[b0_idx].as_f64().unwrap();
    // Correctly specified at rho = 0: the slope comes back near its value.
    assert!(
        (beta0 - (-0.5)).abs() < 0.3,
        "partial-fit beta0 = {beta0} too far from -0.5 at T = 3200, rho = 0"
    );
    assert_eq!(parsed["converged"], serde_json::Value::Bool(true));
}

#[test]
fn fit_estimator_flag_overrides_variant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(
        &cfg,
        "[model]\nvariant = \"partial\"\n\n[fit]\ngrad_tol = 1e-5\nmax_iter = 200\n\n[dgp]\nt = 400\nrho = 0.8\nseed = 5\n",
    );
    let data = dir.path().join("data.csv");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()])
        .status
        .success());
    let r = run(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--estimator",
        "joint",
    ]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("rho"), "joint fit reports the correlation parameter:\n{stdout}");
}

#[test]
fn fit_names_bad_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[model]\nvariant = \"partial\"\n");
    let data = dir.path().join("data.csv");
    write(&data, "t,y,z\n0,0.5,1.0\n1,oops,0.3\n2,0.1,0.2\n");
    let r = run(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
}

#[test]
fn missing_sections_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[fit]\ngrad_tol = 1e-6\n");
    let data = dir.path().join("data.csv");
    write(&data, "t,y,z\n0,0.5,1.0\n1,0.2,0.3\n2,0.1,0.2\n");
    let r = run(&["fit", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("[model]"));
}

#[test]
fn mc_writes_report_and_flags_single_rep_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(
        &cfg,
        "[mc]\nrho_grid = [0.0]\nt_grid = [64]\nn_reps = 1\nestimators = [\"partial\"]\nmaster_seed = 11\n",
    );
    let out = dir.path().join("mcout");
    let r = run(&["mc", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("mc_report.csv")).unwrap();
    assert!(csv.starts_with("estimator,rho,T,parameter"));
    // One row per parameter of the partial model.
    assert_eq!(csv.lines().filter(|l| l.starts_with("partial,")).count(), 9);
    assert!(csv.contains(",true,"), "single-rep cells are flagged low-precision: {csv}");
    let table = std::fs::read_to_string(out.join("mc_table.txt")).unwrap();
    assert!(table.contains("low precision"));
}

#[test]
fn mixing_check_passes_on_clean_instances() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[mixing]\nn_instances = 60\nmax_len = 7\nseed = 3\n");
    let out = dir.path().join("mixing.csv");
    let r = run(&["mixing-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#') && !l.starts_with("segment")).count(), 60);
    assert!(csv.contains("n_violations = 0"));
}

#[test]
fn missing_files_exit_2() {
    let r = run(&["simulate", "--config", "/nonexistent/cfg.toml", "--out", "/tmp/x.csv"]);
    assert_eq!(r.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    write(&cfg, "[model]\nvariant = \"partial\"\n");
    let r2 = run(&["fit", "--config", cfg.to_str().unwrap(), "--data", "/nonexistent/data.csv"]);
    assert_eq!(r2.status.code(), Some(2));
}
