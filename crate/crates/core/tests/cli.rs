use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chemostokes::cli::run::checkpoints;

const SMALL: &str = "\
nx = 16
ny = 16
modes = 40
t_end = 0.04
dt = 0.001
paths = 2
";

fn run(dir: &Path, mode: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_chemostokes"))
        .arg(mode)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn simulate_writes_one_row_per_path_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "simulate", SMALL, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let energy = read(dir.path(), "energy.csv");
    let mut lines = energy.lines();
    assert_eq!(
        lines.next().unwrap(),
        "path_id,kappa,sup_u2,int_uV,sup_c2,int_cH1,sup_nHm1,int_nq,mass_drift"
    );
    assert_eq!(lines.count(), 2);

    let monitors = read(dir.path(), "monitors.csv");
    let marks = checkpoints(40);
    let rows: Vec<Vec<&str>> = monitors.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * marks.len());
    for m in &marks {
        let at: Vec<_> = rows.iter().filter(|r| r[0] == m.to_string()).collect();
        assert_eq!(at.len(), 2);
        assert_eq!(at[0][2], "0");
        assert_eq!(at[1][2], "1");
    }
    for name in ["n", "c", "ux", "uy"] {
        assert!(dir.path().join(format!("out/snapshots/path1_{name}.txt")).exists());
    }
    assert!(read(dir.path(), "config.echo").contains("paths = 2"));
    assert!(read(dir.path(), "plot.gp").contains("monitors.csv"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = run(dir.path(), "simulate", SMALL, &["--seed", "7"]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["energy.csv", "monitors.csv", "snapshots/path0_n.txt"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let c = tempfile::tempdir().unwrap();
    run(c.path(), "simulate", SMALL, &["--seed", "8"]);
    assert_ne!(read(a.path(), "energy.csv"), read(c.path(), "energy.csv"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "simulate", "q = 3.5\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q > 4"));

    let out = run(dir.path(), "simulate", "not_a_key = 1\n", &[]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(dir.path(), "simulate", SMALL, &["--kappa", "0,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_reach_the_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "simulate", SMALL, &["--paths", "1", "--kappa", "3,5,9", "--seed", "11"]);
    assert_eq!(out.status.code(), Some(0));
    let echo: toml::Table = read(dir.path(), "config.echo").parse().unwrap();
    assert_eq!(echo["paths"].as_integer(), Some(1));
    assert_eq!(echo["kappa"].as_float(), Some(3.0));
    assert_eq!(echo["master_seed"].as_integer(), Some(11));
    assert_eq!(echo["mode"].as_str(), Some("simulate"));
}

#[test]
fn fixpoint_writes_residual_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "fixpoint", SMALL, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = read(dir.path(), "residuals.csv");
    assert!(csv.starts_with("path_id,iter,residual,x_norm\n"));
    let doc: serde_json::Value = serde_json::from_str(&read(dir.path(), "fixpoint.json")).unwrap();
    assert_eq!(doc["converged"], 2);
    let iterations: u64 = doc["paths"].as_array().unwrap().iter().map(|p| p["iterations"].as_u64().unwrap()).sum();
    assert_eq!(csv.lines().count() as u64 - 1, iterations);
}

#[test]
fn glue_reports_runs_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "glue", SMALL, &["--kappa", "0.2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&read(dir.path(), "glue.json")).unwrap();
    let runs = doc["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    for r in runs {
        assert_eq!(r["summary"]["complete"], true);
        assert!(r["max_boundary_jump"].as_f64().unwrap() <= 1e-12);
    }
    assert!(doc["exceedance"]["skipped"].is_string());

    // a one-segment budget cannot absorb the stops
    let tight = format!("{SMALL}max_segments = 1\n");
    let out = run(dir.path(), "glue", &tight, &["--kappa", "0.2"]);
    assert_eq!(out.status.code(), Some(1));
    let failures: serde_json::Value = serde_json::from_str(&read(dir.path(), "failures.json")).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 2);
}

#[test]
fn blow_up_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL.replace("t_end = 0.04\ndt = 0.001", "t_end = 0.4\ndt = 0.02\nsigma_scale = 1000.0");
    let out = run(dir.path(), "simulate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let failures: serde_json::Value = serde_json::from_str(&read(dir.path(), "failures.json")).unwrap();
    assert_eq!(failures[0]["kind"], "blow_up");
}

#[test]
fn verify_smoke_run_reports_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "verify", SMALL, &[]);
    let code = out.status.code();
    assert!(code == Some(0) || code == Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&read(dir.path(), "verify.json")).unwrap();
    let criteria = doc["criteria"].as_array().unwrap();
    let ids: Vec<u64> = criteria.iter().map(|c| c["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, (1..=10).collect::<Vec<_>>());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("criterion")).count(), 10);
    let rerun = &criteria[7]["checks"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(rerun["name"], "rerun byte-identical");
    assert_eq!(rerun["passed"], true);
    assert_eq!(doc["passed"].as_bool(), Some(code == Some(0)));
}
