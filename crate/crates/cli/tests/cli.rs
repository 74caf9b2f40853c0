use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn lcsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcsim"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = lcsim(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// A routed 20-agent grid at `routed.lcs.json`.
fn routed(dir: &Path) {
    ok(dir, &["generate", "--agents", "20", "--seed", "3", "--out", "grid.lcs.json"]);
    ok(dir, &["route", "grid.lcs.json", "--out", "routed.lcs.json"]);
}

fn config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

const RUN: &str = r#"
scenario = "routed.lcs.json"
duration = 6.0
seeds = [0, 1]
output = "out"
render = true

[policy]
default = "lane_idm"
"#;

#[test]
fn generate_is_deterministic() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["generate", "--agents", "30", "--seed", "9", "--out", "a.lcs.json"]);
    ok(d.path(), &["generate", "--agents", "30", "--seed", "9", "--out", "b.lcs.json"]);
    ok(d.path(), &["generate", "--agents", "30", "--seed", "10", "--out", "c.lcs.json"]);
    let a = fs::read(d.path().join("a.lcs.json")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.lcs.json")).unwrap());
    assert_ne!(a, fs::read(d.path().join("c.lcs.json")).unwrap());
}

#[test]
fn route_refuses_to_overwrite_without_flag() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["generate", "--agents", "10", "--out", "g.lcs.json"]);
    let before = fs::read(d.path().join("g.lcs.json")).unwrap();
    let out = lcsim(d.path(), &["route", "g.lcs.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--in-place"));
    assert_eq!(before, fs::read(d.path().join("g.lcs.json")).unwrap());

    ok(d.path(), &["route", "g.lcs.json", "--in-place"]);
    assert_ne!(before, fs::read(d.path().join("g.lcs.json")).unwrap());
}

#[test]
fn simulate_writes_everything_and_repeats_exactly() {
    let d = TempDir::new().unwrap();
    routed(d.path());
    config(d.path(), "run.toml", RUN);
    ok(d.path(), &["simulate", "run.toml", "--jobs", "2"]);
    let out = d.path().join("out");
    for f in ["scenario.lcs.json", "events.ndjson", "report.json", "records/seed-0.json", "records/seed-1.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    // one frame for the initial state plus one per tick
    let frames = fs::read_dir(out.join("frames/seed-1")).unwrap().count();
    assert_eq!(frames, 61);
    let first = fs::read(out.join("records/seed-1.json")).unwrap();

    // a single job must give the same bytes
    fs::remove_dir_all(&out).unwrap();
    ok(d.path(), &["simulate", "run.toml"]);
    assert_eq!(first, fs::read(out.join("records/seed-1.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report.get("seeds").is_some());
}

#[test]
fn malformed_config_names_field_and_line() {
    let d = TempDir::new().unwrap();
    routed(d.path());
    config(d.path(), "bad.toml", "scenario = \"routed.lcs.json\"\nduration = \"long\"\n");
    let out = lcsim(d.path(), &["simulate", "bad.toml"]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("duration"), "{err}");
    assert!(!d.path().join("out").exists());
}

#[test]
fn missing_scenario_is_invalid_input() {
    let d = TempDir::new().unwrap();
    config(d.path(), "run.toml", &RUN.replace("routed.lcs.json", "nowhere.lcs.json"));
    let out = lcsim(d.path(), &["simulate", "run.toml"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.lcs.json"));
}

#[test]
fn output_over_a_file_is_rejected() {
    let d = TempDir::new().unwrap();
    routed(d.path());
    fs::write(d.path().join("out"), "keep me").unwrap();
    config(d.path(), "run.toml", RUN);
    let out = lcsim(d.path(), &["simulate", "run.toml"]);
    assert_eq!(code(&out), 1);
    assert_eq!(fs::read_to_string(d.path().join("out")).unwrap(), "keep me");
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let d = TempDir::new().unwrap();
    routed(d.path());
    fs::write(d.path().join("blocker"), "").unwrap();
    config(d.path(), "run.toml", &RUN.replace("output = \"out\"", "output = \"blocker/out\""));
    let out = lcsim(d.path(), &["simulate", "run.toml"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_subcommand_exits_one() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&lcsim(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&lcsim(d.path(), &["--version"])), 0);
}

#[test]
fn evaluate_repeats_report_standard_error() {
    let d = TempDir::new().unwrap();
    routed(d.path());
    config(d.path(), "run.toml", &RUN.replace("render = true", "render = false"));
    let text = ok(d.path(), &["evaluate", "--config", "run.toml", "--repeat", "5", "--out", "eval.json"]);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["repeats"], 5);
    assert_eq!(report["records"], 10);
    for key in ["collision_pct", "offroad_pct"] {
        assert!(report[key]["mean"].is_number(), "{key}");
        assert!(report[key]["std_error"].as_f64().unwrap() >= 0.0, "{key}");
    }
    let saved: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("eval.json")).unwrap()).unwrap();
    assert_eq!(saved, report);

    // records written by simulate evaluate the same way
    ok(d.path(), &["simulate", "run.toml"]);
    let text = ok(d.path(), &["evaluate", "--records", "out/records"]);
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(report["records"], 2);
}

#[test]
fn bench_prints_each_scenario_and_the_mean() {
    let d = TempDir::new().unwrap();
    let dir = d.path().join("scenes");
    fs::create_dir(&dir).unwrap();
    for k in 0..10 {
        let name = format!("scenes/s{k}.lcs.json");
        ok(d.path(), &["generate", "--agents", "12", "--seed", &k.to_string(), "--out", &name]);
        ok(d.path(), &["route", &name, "--in-place"]);
    }
    let text = ok(d.path(), &["bench", "scenes", "--out", "bench.json"]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11, "{text}");
    assert!(lines[..10].iter().all(|l| l.contains(" s (12 agents")), "{text}");
    assert!(lines[10].starts_with("mean ") && lines[10].contains("over 10 scenario(s)"), "{text}");
    assert!(d.path().join("bench.json").is_file());
}

#[test]
fn trained_checkpoint_drives_simulation() {
    let d = TempDir::new().unwrap();
    config(
        d.path(),
        "train.toml",
        "[train]\nsteps = 3\nbatch_size = 2\n\n[corpus]\nscenes = 4\n",
    );
    let text = ok(d.path(), &["train-planner", "--config", "train.toml", "--out", "model/planner.json"]);
    assert!(!text.is_empty());
    let losses = fs::read_to_string(d.path().join("model/planner.losses.ndjson")).unwrap();
    assert_eq!(losses.lines().count(), 3);
    for line in losses.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }

    routed(d.path());
    let run = RUN
        .replace("lane_idm", "traj_idm")
        .replace("render = true", "render = false\ncheckpoint = \"model/planner.json\"")
        .replace("duration = 6.0", "duration = 2.0");
    config(d.path(), "plan.toml", &run);
    ok(d.path(), &["simulate", "plan.toml"]);
    assert!(d.path().join("out/records/seed-0.json").is_file());

    config(d.path(), "typo.toml", "[train]\nstepz = 3\n");
    let out = lcsim(d.path(), &["train-planner", "--config", "typo.toml", "--out", "x.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
    assert!(!d.path().join("x.json").exists());
}
