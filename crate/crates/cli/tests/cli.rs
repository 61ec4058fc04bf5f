use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const OSCILLATORS: &str = r#"
[system]
variant = "general_r2"
field = ["x2^2", "-x1^2"]

[task]
to = [0.0, 0.0, -2.0]
horizon = 1.0
"#;

const PUNCTURED: &str = r#"
[system]
variant = "general_r2"
field = ["x1/(x1^2+x2^2)", "x2/(x1^2+x2^2)"]
excluded = { points = [[0.0, 0.0]], note = "x1^2+x2^2=0 excluded" }
"#;

fn config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonholo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("NONHOLO_OUT")
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_punctured_plane() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "p.toml", PUNCTURED);
    let out = dir.path().join("out");
    let o = run(&["analyze", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(out.join("report.json"));
    assert_eq!(report["report"]["verdict"], "uncontrollable");
    let caveats = report["report"]["caveats"].as_array().unwrap();
    assert!(caveats.iter().any(|c| c == "non-simply-connected domain"));
}

#[test]
fn steer_oscillators_verifies() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "o.toml", OSCILLATORS);
    let out = dir.path().join("out");
    let o = run(&["steer", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let plan = json(out.join("plan.json"));
    assert_eq!(plan["verification"]["pass"], true);
    let achieved = plan["verification"]["achieved"].as_array().unwrap();
    assert!((achieved[2].as_f64().unwrap() + 2.0).abs() < 1e-6);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3\n"));
}

#[test]
fn zero_inputs_give_constant_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "o.toml", OSCILLATORS);
    let out = dir.path().join("out");
    let o = run(
        &["simulate", cfg.to_str().unwrap(), "--inputs", "zero; zero", "--from", "0.5,-1,2", "--step", "0.01"],
        &out,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 101);
    let state = |r: &str| r.split_once(',').unwrap().1.to_string();
    assert!(rows.iter().all(|r| state(r) == state(rows[0])));
    assert_eq!(state(rows[0]), "5.0000000000000000e-1,-1.0000000000000000e0,2.0000000000000000e0");
}

#[test]
fn reports_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "o.toml", OSCILLATORS);
    let mut files = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let o = run(&["analyze", cfg.to_str().unwrap(), "--seed", "4"], &out);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = run(&["optimal", cfg.to_str().unwrap(), "--to", "0,0,0.1", "--T", "1"], &out);
        assert!(o.status.success(), "{}", stderr(&o));
        files
            .push((std::fs::read(out.join("report.json")).unwrap(), std::fs::read(out.join("solution.json")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn invalid_overrides_exit_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "o.toml", OSCILLATORS);
    let out = dir.path().join("out");
    let path = cfg.to_str().unwrap();
    for args in [
        vec!["steer", path, "--step", "-0.1"],
        vec!["analyze", path, "--tol", "0"],
        vec!["optimal", path, "--T", "1", "--step", "0.3"],
        vec!["steer", path, "--to", "1,2"],
        vec!["simulate", path, "--inputs", "zero"],
    ] {
        let o = run(&args, &out);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error: "));
    }
    assert!(!out.exists(), "validation must precede any output");
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    for (name, text) in [
        ("syntax.toml", "[system]\nvariant = \"general_r2\"\nfield = [\"x2^\", \"x1\"]\n"),
        ("variant.toml", "[system]\nvariant = \"warp_drive\"\n"),
        ("missing.toml", "[system]\nvariant = \"drift_r3\"\nfield = [\"x1\", \"x2\", \"x3\"]\n"),
    ] {
        let cfg = config(&dir, name, text);
        let o = run(&["analyze", cfg.to_str().unwrap()], &out);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", stderr(&o));
        assert_eq!(stderr(&o).trim_end().lines().count(), 1, "{}", stderr(&o));
    }
}

#[test]
fn unreachable_target_is_a_task_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "g.toml", "[system]\nvariant = \"general_r2\"\nfield = [\"2*x1\", \"2*x2\"]\n");
    let o = run(&["steer", cfg.to_str().unwrap(), "--to", "0,0,1"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(stderr(&o).trim_end().lines().count(), 1);
}
