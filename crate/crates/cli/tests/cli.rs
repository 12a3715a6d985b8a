use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn rpfcli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rpfcli")).args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = rpfcli(args);
    assert!(
        out.status.success(),
        "rpfcli {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn builtin_config(name: &str) -> Value {
    let out = run_ok(&["builtin", "show", name]);
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_config(dir: &TempDir, name: &str, cfg: &Value) -> String {
    let path = dir.path().join(name);
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn lists_builtins() {
    let out = run_ok(&["builtin", "list"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["figure1", "mp-ensemble", "intermittent-holes", "doubling-baseline"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}

#[test]
fn doubling_lyapunov_is_log_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    run_ok(&["builtin", "run", "doubling-baseline", "lyapunov", "--out", out.to_str().unwrap()]);
    let s = json(&out.join("summary.json"));
    let l = s["lyapunov"]["mean"].as_f64().unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12, "{l}");

    let m = json(&out.join("manifest.json"));
    assert_eq!(m["command"], "lyapunov");
    assert_eq!(m["builtin"], "doubling-baseline");
    assert!(m["versions"]["rpf-core"].is_string());
    assert!(m["timestamp_unix"].is_u64());
    assert_eq!(m["config"]["name"], "doubling-baseline");

    let table = fs::read_to_string(out.join("lyapunov.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "base_point,n,burn_in,K,sample");
    assert_eq!(table.lines().count(), 1 + s["K"].as_u64().unwrap() as usize);
}

#[test]
fn figure1_general_condition_margin() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    run_ok(&["builtin", "run", "figure1", "certify", "--out", out.to_str().unwrap()]);
    let s = json(&out.join("summary.json"));
    let margin = s["sufficient_conditions"]["general"]["mean"].as_f64().unwrap();
    assert!(margin <= 4f64.ln() - 5f64.ln() + 1e-12, "{margin}");
    assert_eq!(s["strongly_contracting"], true);
    assert!(out.join("certify_blocks.csv").exists() && out.join("kingman.csv").exists());
}

#[test]
fn intermittent_xi_bounded_margin() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    run_ok(&["builtin", "run", "mp-ensemble", "certify", "--t", "0.5", "--out", out.to_str().unwrap()]);
    let s = json(&out.join("summary.json"));
    let margin = s["sufficient_conditions"]["xi_bounded"]["mean"].as_f64().unwrap();
    let bound = 0.5 * 3f64.ln() - 2f64.ln();
    assert!(margin < 0.0 && margin <= bound + 1e-10, "{margin} vs {bound}");
    assert_eq!(json(&out.join("manifest.json"))["overrides"]["t"], 0.5);
}

#[test]
fn replays_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|r| {
            let out = dir.path().join(r);
            run_ok(&[
                "builtin",
                "run",
                "figure1",
                "lyapunov",
                "--base-points",
                "4",
                "--seed",
                "11",
                "--out",
                out.to_str().unwrap(),
            ]);
            out
        })
        .collect();
    for file in ["summary.json", "lyapunov.csv"] {
        assert_eq!(fs::read(runs[0].join(file)).unwrap(), fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
    let strip = |p: &Path| {
        let mut m = json(&p.join("manifest.json"));
        m.as_object_mut().unwrap().remove("timestamp_unix");
        m
    };
    assert_eq!(strip(&runs[0]), strip(&runs[1]));
    assert_eq!(strip(&runs[0])["seed"], 11);

    let other = dir.path().join("c");
    run_ok(&[
        "builtin",
        "run",
        "figure1",
        "lyapunov",
        "--base-points",
        "4",
        "--seed",
        "12",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_ne!(fs::read(runs[0].join("lyapunov.csv")).unwrap(), fs::read(other.join("lyapunov.csv")).unwrap());
}

#[test]
fn config_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, "doubling.json", &builtin_config("doubling-baseline"));
    let out = dir.path().join("run");
    run_ok(&["escape", "--config", &path, "--base-points", "2", "--out", out.to_str().unwrap()]);
    let s = json(&out.join("summary.json"));
    let rows = s["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1]["lambda"]["mean"].as_f64().unwrap() < rows[0]["lambda"]["mean"].as_f64().unwrap());
    let csv = fs::read_to_string(out.join("escape.csv")).unwrap();
    assert!(csv.starts_with("eps,n,K,"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let base = builtin_config("doubling-baseline");

    let mut bad_version = base.clone();
    bad_version["schema_version"] = 99.into();
    let p = write_config(&dir, "v.json", &bad_version);
    assert_eq!(rpfcli(&["lyapunov", "--config", &p, "--out", out]).status.code(), Some(2));

    let mut unknown = base.clone();
    unknown["run"]["iterations"] = 3.into();
    let p = write_config(&dir, "u.json", &unknown);
    assert_eq!(rpfcli(&["lyapunov", "--config", &p, "--out", out]).status.code(), Some(2));

    assert_eq!(rpfcli(&["lyapunov", "--config", "/definitely/not/here.json"]).status.code(), Some(2));
    assert_eq!(rpfcli(&["builtin", "run", "no-such-example", "lyapunov"]).status.code(), Some(2));

    let no_escape = write_config(&dir, "f.json", &builtin_config("mp-ensemble"));
    assert_eq!(rpfcli(&["escape", "--config", &no_escape, "--out", out]).status.code(), Some(2));

    // the only branch is cut by the hole, so no full branch survives
    let mut no_full = base.clone();
    no_full["ensemble"]["maps"][0] = serde_json::json!({
        "branches": [{ "family": "affine", "params": { "slope": 1.0, "intercept": 0.0 }, "domain": [0.0, 1.0] }],
        "hole": [[0.4, 0.6]]
    });
    let p = write_config(&dir, "a.json", &no_full);
    let res = rpfcli(&["lyapunov", "--config", &p, "--out", out]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("assumption violated"));

    let mut overflow = base;
    overflow["potential"] = serde_json::json!({ "kind": "constant", "log_g": 800.0 });
    let p = write_config(&dir, "n.json", &overflow);
    assert_eq!(rpfcli(&["lyapunov", "--config", &p, "--out", out]).status.code(), Some(4));
}
