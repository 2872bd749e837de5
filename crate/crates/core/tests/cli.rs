use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simbvp"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("SIMBVP_THREADS")
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const M1: [&str; 7] = [
    "solve",
    "--family",
    "temperature",
    "--m",
    "1",
    "--gamma",
    "0",
];

#[test]
fn solve_writes_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &M1);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&dir.path().join("solutions.json"));
    let recs = v.as_array().unwrap();
    assert_eq!(recs.len(), 1);
    assert!((recs[0]["free_value"].as_f64().unwrap() + 1.0).abs() < 1e-6);
    assert_eq!(recs[0]["shape"], "concave");
    assert!(dir.path().join("profile_000.csv").exists());
}

#[test]
fn outputs_are_byte_stable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path(), &M1);
    run(b.path(), &M1);
    for name in ["solutions.json", "profile_000.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn csv_format() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = M1.to_vec();
    args.extend(["--format", "csv"]);
    assert_eq!(run(dir.path(), &args).status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("solutions.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("family,m,gamma,free_value"));
    assert!(lines.next().unwrap().starts_with("temperature,1,0,"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"family": "temperature", "m": 1, "gamma": 0, "t_max": 30}"#,
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = dir.path().join("file");
    assert_eq!(
        run(&from_file, &["solve", "--config", cfg]).status.code(),
        Some(0)
    );
    assert_eq!(json(&from_file.join("solutions.json"))[0]["t_max"], 30.0);

    let from_flag = dir.path().join("flag");
    assert_eq!(
        run(&from_flag, &["solve", "--config", cfg, "--t-max", "40"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(json(&from_flag.join("solutions.json"))[0]["t_max"], 40.0);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"gama": 0}"#).unwrap();
    let out = run(dir.path(), &["solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(
            dir.path(),
            &["solve", "--family", "bogus", "--m", "1", "--gamma", "0"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        run(
            dir.path(),
            &["solve", "--family", "temperature", "--gamma", "0"]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(dir.path(), &["figures", "7"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_simbvp"))
        .args(M1)
        .arg("--output-dir")
        .arg(dir.path())
        .env("SIMBVP_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn no_solution_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "solve",
            "--family",
            "temperature",
            "--m",
            "-1",
            "--gamma",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(
        json(&dir.path().join("solutions.json")),
        Value::Array(vec![])
    );
}

#[test]
fn negative_values_parse() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "solve",
            "--family",
            "temperature",
            "--m",
            "1",
            "--gamma",
            "-1",
            "--bracket",
            "-3,-1",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&dir.path().join("solutions.json"));
    let golden = 0.5 * (1.0 + 5f64.sqrt());
    assert!((v[0]["free_value"].as_f64().unwrap() + golden).abs() < 1e-6);
}

#[test]
fn figure_three_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["figures", "3"]).status.code(), Some(0));
    let m = json(&dir.path().join("fig3").join("manifest.json"));
    assert_eq!(m["reproduced"], true);
    assert_eq!(m["counts"]["total"], 1);
    assert_eq!(m["curves"][0], "curve_00.csv");
    assert!(dir.path().join("fig3").join("curve_00.csv").exists());
}

#[test]
fn phase_writes_fixed_points() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "phase",
        "--family",
        "temperature",
        "--m",
        "1",
        "--gamma",
        "5",
        "--free-value",
        "-0.1925824035672520",
        "--t-end",
        "5",
    ];
    let out = run(dir.path(), &args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fps = json(&dir.path().join("fixed_points.json"));
    assert_eq!(fps["fixed_points"].as_array().unwrap().len(), 2);
    assert!(dir.path().join("phase.json").exists());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["verify"]).status.code(), Some(0));
    let v = json(&dir.path().join("verify.json"));
    assert!(v.to_string().contains("phase_conjugacy"));
}
