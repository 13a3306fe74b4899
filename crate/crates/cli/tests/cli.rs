use serde_json::{json, Value};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn base() -> Value {
    json!({
        "schema_version": 1,
        "seed": 1,
        "domain": { "kind": "box", "lo": [0.0], "hi": [1.0] },
        "model": { "model": "brownian", "sigma": 1.0 },
        "n_steps": 16,
        "particles": 8,
        "replicas": 1,
    })
}

fn run(kind: &str, config: &Value, dir: &Path, extra: &[&str]) -> Output {
    let path = dir.join(format!("{kind}.json"));
    fs::write(&path, config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_rldp"))
        .arg(kind)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_one_row_per_particle_and_node() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("simulate", &base(), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("out/paths.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 17);
    let manifest = read_json(&dir.path().join("out/manifest.json"));
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["paths.csv", "result.json"]);
    // No orphan artifacts.
    let mut on_disk: Vec<String> = fs::read_dir(dir.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    on_disk.sort();
    assert_eq!(on_disk, ["manifest.json", "paths.csv", "result.json"]);
}

#[test]
fn constant_laplace_functional_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base();
    c["replicas"] = json!(16);
    c["functional"] = json!({ "functional": "constant", "value": 0.3 });
    let out = run("laplace", &c, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&dir.path().join("out/result.json"));
    assert_eq!(r["estimate"]["value"].as_f64(), Some(0.3));
    assert_eq!(r["estimate"]["std_error"].as_f64(), Some(0.0));
}

#[test]
fn config_errors_exit_with_code_two_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base();
    c["schema_version"] = json!(99);
    let out = run("simulate", &c, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    // Laplace without a functional.
    let out = run("laplace", &base(), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    // Unreadable file.
    let out = Command::new(env!("CARGO_BIN_EXE_rldp"))
        .args(["simulate", "--config", "/nonexistent/x.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn budget_overrun_exits_with_code_three_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base();
    c["max_particle_steps"] = json!(10);
    let out = run("simulate", &c, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    let r = read_json(&dir.path().join("out/result.json"));
    assert_eq!(r["budget_exceeded"], true);
    let m = read_json(&dir.path().join("out/manifest.json"));
    assert_eq!(m["flagged"], true);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("simulate", &base(), dir.path(), &["--seed", "5", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let m = read_json(&dir.path().join("out/manifest.json"));
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["workers"], 2);
    assert_eq!(m["config"]["kind"], "simulate");
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = base();
    c["replicas"] = json!(4);
    c["functional"] = json!({ "functional": "terminal_mean", "lo": 0.0, "hi": 1.0 });
    assert_eq!(run("laplace", &c, dir.path(), &[]).status.code(), Some(0));
    let first = fs::read(dir.path().join("out/result.json")).unwrap();
    let mut resolved = read_json(&dir.path().join("out/manifest.json"))["config"].clone();
    resolved["output_dir"] = json!(dir.path().join("again"));
    let path = dir.path().join("resolved.json");
    fs::write(&path, resolved.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rldp"))
        .args(["laplace", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(first, fs::read(dir.path().join("again/result.json")).unwrap());
}
