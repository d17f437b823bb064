use std::path::Path;
use std::process::{Command, Output};

fn dynshield(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynshield"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &["--agents", "3", "--simulations", "64", "--particles", "200", "--max-steps", "60"];

fn with_small<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(SMALL.iter().copied()).collect()
}

#[test]
fn run_writes_summary_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dynshield(
        &with_small(&["run", "--seed", "4", "--raw", "raw.csv", "--frames", "frames.json", "--json", "ep.json", "-q"]),
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("ep.json")).unwrap()).unwrap();
    assert_eq!(summary["method"], "shield-acp");
    assert_eq!(summary["certificate_violations"], 0);
    let frames: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("frames.json")).unwrap()).unwrap();
    assert_eq!(frames.as_array().unwrap().len() as u64, summary["steps"].as_u64().unwrap());
    let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert!(raw.starts_with("environment,method,agents,seed,t"));
}

#[test]
fn bench_raw_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let args = with_small(&["bench", "--runs", "2", "--agent-counts", "2,4", "--out", out]);
        let o = dynshield(&args, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(dir.path().join("a/raw.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/raw.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let agg = std::fs::read_to_string(dir.path().join("a/aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 1 + 3 * 2);
    assert!(dir.path().join("a/timing.csv").exists());
    assert!(dir.path().join("a/comparisons.json").exists());
}

#[test]
fn validate_episodes_and_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = dynshield(&with_small(&["validate", "--episodes", "1", "--json", "v.json"]), dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(v["certificate_violations"], 0);
    assert!(v["certificate_checks"].as_u64().unwrap() > 0);

    std::fs::write(
        dir.path().join("model.toml"),
        r#"
states = ["a", "b"]
actions = ["stay", "swap"]
observations = ["o"]
initial = { a = 1.0 }

[[transition]]
from = "a"
action = "stay"
to = { a = 1.0 }

[[transition]]
from = "b"
action = "stay"
to = { b = 1.0 }

[[transition]]
from = "a"
action = "swap"
to = { b = 1.0 }

[[transition]]
from = "b"
action = "swap"
to = { a = 1.0 }

[[observation]]
state = "*"
action = "*"
probs = { o = 1.0 }
"#,
    )
    .unwrap();
    let o = dynshield(&["validate", "--model", "model.toml", "--model-horizon", "2"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("certificate ok"), "{text}");
    assert!(text.contains("\"root_actions\""));
}

#[test]
fn coverage_reports_each_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let o = dynshield(&["coverage", "--steps", "2000", "--json", "c.json"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("tau=")).count(), 3);
    let c: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(c["per_tau"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), "method = \"no-shield\"\nmax_steps = 5\n[planner]\nnum_simulations = 32\nparticle_count = 100\nmax_depth = 10\n").unwrap();
    let o = dynshield(&["run", "-c", "exp.toml", "-q", "--json", "s.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(s["method"], "no-shield");
    assert!(s["steps"].as_u64().unwrap() <= 5);

    let bad = dynshield(&["run", "--preset", "nope"], dir.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown preset"));
    let bad = dynshield(&["run", "--epsilon", "-1"], dir.path());
    assert!(!bad.status.success());
}
