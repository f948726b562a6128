use std::path::Path;
use std::process::{Command, Output};

use chaintomo::Trajectory;

fn chaintomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaintomo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = chaintomo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn t0_prints_propagation_time() {
    let out = ok(&["t0", "--j12", "53.8", "--j23", "34.8"]);
    let t0: f64 = out.trim().parse().unwrap();
    assert!((t0 - 0.04732).abs() < 1e-5);
}

#[test]
fn ideal_simulation_starts_along_z() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "ideal.csv");
    ok(&["simulate", "--scenario", "case1", "--ideal", "--out", &out]);
    let traj = Trajectory::load_csv(&out).unwrap();
    assert_eq!(traj.len(), 301);
    assert!(traj.mx[0].abs() < 1e-12 && traj.my[0].abs() < 1e-12);
    assert!((traj.mz[0] - 0.5).abs() < 1e-12);
    assert!(traj.max_abs() <= 0.5 + 1e-9);
}

#[test]
fn config_file_couplings_match_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "chain.toml");
    std::fs::write(
        &cfg,
        "omega1_hz = [27.0, 27.0, 27.0]\nj12_hz = 50.0\nj23_hz = 30.0\n\
         t2_s = [0.45, 0.23, 0.63]\nsigma_rel = 0.05\npolarization = 1.0\n",
    )
    .unwrap();
    let a = path(dir.path(), "a.csv");
    let b = path(dir.path(), "b.csv");
    ok(&[
        "simulate",
        "--scenario",
        "case2",
        "--config",
        &cfg,
        "--out",
        &a,
    ]);
    ok(&[
        "simulate",
        "--scenario",
        "case2",
        "--j12",
        "50",
        "--j23",
        "30",
        "--out",
        &b,
    ]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = path(dir.path(), name);
        ok(&[
            "synth",
            "--scenario",
            "case1",
            "--j12",
            "53.8",
            "--j23",
            "34.8",
            "--noise",
            "0.01",
            "--seed",
            seed,
            "--out",
            &out,
        ]);
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv", "7"), run("b.csv", "7"));
    assert_ne!(run("a.csv", "7"), run("c.csv", "8"));
}

#[test]
fn synth_then_fit_recovers_on_grid_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data.csv");
    let surface = path(dir.path(), "surface.csv");
    let result = path(dir.path(), "result.json");
    ok(&[
        "synth",
        "--scenario",
        "case1",
        "--j12",
        "53.8",
        "--j23",
        "34.8",
        "--out",
        &data,
    ]);
    ok(&[
        "fit",
        "--scenario",
        "case1",
        "--data",
        &data,
        "--component",
        "y",
        "--tw",
        "0.05",
        "--grid",
        "51:56:0.1,32:37:0.1",
        "--out-surface",
        &surface,
        "--out-result",
        &result,
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(json["argmin_j12_hz"].as_f64(), Some(53.8));
    assert_eq!(json["argmin_j23_hz"].as_f64(), Some(34.8));
    assert_eq!(json["min_distance"].as_f64(), Some(0.0));
    let rows = std::fs::read_to_string(&surface).unwrap().lines().count();
    assert_eq!(rows, 1 + 51 * 51);
}

#[test]
fn calibrate_recovers_inhomogeneity() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "calib.csv");
    ok(&[
        "synth",
        "--scenario",
        "calibration",
        "--j12",
        "53.8",
        "--j23",
        "34.8",
        "--noise",
        "0.01",
        "--seed",
        "3",
        "--out",
        &data,
    ]);
    let sigma: f64 = ok(&["calibrate", "--data", &data]).trim().parse().unwrap();
    assert!((sigma - 0.05).abs() <= 0.005, "{sigma}");
}

#[test]
fn window_study_reports_one_row_per_window_and_component() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data.csv");
    let report = path(dir.path(), "study.json");
    ok(&[
        "synth",
        "--scenario",
        "case1",
        "--j12",
        "54",
        "--j23",
        "35",
        "--out",
        &data,
    ]);
    let table = ok(&[
        "window-study",
        "--scenario",
        "case1",
        "--data",
        &data,
        "--component",
        "y;z",
        "--windows",
        "0.05,0.1",
        "--grid",
        "52:56:0.5,33:37:0.5",
        "--out",
        &report,
    ]);
    assert!(table.contains("Known values"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert_eq!(row["j12_hz"].as_f64(), Some(54.0));
        assert_eq!(row["j23_hz"].as_f64(), Some(35.0));
    }
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        &["fit", "--bogus"][..],
        &["simulate", "--scenario", "nope", "--out", "x.csv"],
        &["t0", "--j12", "-1", "--j23", "3"],
        &["calibrate", "--data", "/nonexistent/data.csv"],
        &[
            "fit",
            "--scenario",
            "case1",
            "--data",
            "d.csv",
            "--component",
            "y",
            "--tw",
            "0.05",
            "--grid",
            "50:40:0.1,31:38:0.1",
            "--out-surface",
            "s.csv",
            "--out-result",
            "r.json",
        ],
    ] {
        let out = chaintomo(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let stderr = String::from_utf8(out.stderr).unwrap();
        assert_eq!(stderr.trim_end().lines().count(), 1, "{args:?}: {stderr}");
    }
}

#[test]
fn help_exits_cleanly() {
    let out = chaintomo(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("window-study"));
}
