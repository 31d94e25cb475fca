//! End-to-end runs of the `srbm` binary: exit codes, reports and presets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn srbm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srbm")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn manifest(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run(mode: &str, m: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![mode, "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    srbm(&args)
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

const PLANAR: &str = r#""params": {"drift": [0.0, 0.0], "covariance": [[1.0, 0.0], [0.0, 1.0]],
    "initial": {"kind": "point", "value": [0.0, 0.0]}}"#;
const LINE: &str = r#""params": {"drift": [0.0], "covariance": [[1.0]],
    "initial": {"kind": "point", "value": [0.0]}}"#;

#[test]
fn help_version_and_usage_errors() {
    assert_eq!(code(&srbm(&["--help"])), 0);
    assert_eq!(code(&srbm(&["--version"])), 0);
    assert_eq!(code(&srbm(&["frobnicate"])), 1);
    assert_eq!(code(&srbm(&["check"])), 1);
    assert_eq!(code(&srbm(&["check", "--manifest", "/nonexistent/m.json"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let bad = manifest(dir.path(), "bad.json", r#"{"domain": {"preset": "moebius"}}"#);
    assert_eq!(code(&run("check", &bad, dir.path(), &[])), 1);
    let wrong = manifest(dir.path(), "wrong.json", r#"{"mode": "certify", "domain": {"preset": "quadrant"}}"#);
    assert_eq!(code(&run("check", &wrong, dir.path(), &[])), 1);
}

#[test]
fn check_reports_margins_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ok = manifest(dir.path(), "q.json", r#"{"domain": {"preset": "quadrant"}}"#);
    let out = dir.path().join("q");
    assert_eq!(code(&run("check", &ok, &out, &[])), 0);
    let r = json(&out.join("check.json"));
    assert_eq!(r["passed"], true);
    assert!((r["margins"]["a"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    let c = r["margins"]["hoffman"].as_f64().unwrap();
    assert!((c / 2f64.sqrt() - 1.0).abs() < 0.05, "{c}");
    assert_eq!(r["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(r["manifest"]["domain"]["preset"], "quadrant");

    let tang = manifest(
        dir.path(),
        "t.json",
        r#"{"domain": {"preset": "quadrant"}, "field": {"preset": "quadrant-tangential"}}"#,
    );
    let out = dir.path().join("t");
    assert_eq!(code(&run("check", &tang, &out, &[])), 2);
    let r = json(&out.join("check.json"));
    let fail = &r["audit"]["failure"];
    assert_eq!(fail["active"], serde_json::json!([0, 1]));
    assert_eq!(fail["point"], serde_json::json!([0.0, 0.0]));

    let roof = manifest(
        dir.path(),
        "g.json",
        r#"{"domain": {"preset": "gaussian-roof2d"}, "sampling": {"resolution": 0.01}}"#,
    );
    let out = dir.path().join("g");
    assert_eq!(code(&run("check", &roof, &out, &[])), 2);
    let r = json(&out.join("check.json"));
    let tube = r["assumptions"].as_array().unwrap().iter().find(|a| a["name"] == "tube-depth").unwrap();
    assert_eq!(tube["status"], "fail");
    assert!(r["tube"].as_array().unwrap().iter().all(|t| t["depth"] == "unbounded"));
}

#[test]
fn simulate_needs_a_passing_check_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        dir.path(),
        "t.json",
        &format!(
            r#"{{"domain": {{"preset": "quadrant"}}, "field": {{"preset": "quadrant-tangential"}}, {PLANAR},
                "scheme": {{"delta": 0.01, "grid": {{"horizon": 0.1, "steps": 10}}}}, "paths": 2}}"#
        ),
    );
    assert_eq!(code(&run("simulate", &m, &dir.path().join("a"), &[])), 2);
    // forced, the corner start has no admissible push
    assert_eq!(code(&run("simulate", &m, &dir.path().join("b"), &["--force"])), 4);
}

#[test]
fn disc_paths_stay_within_two_delta_of_the_disc() {
    let dir = tempfile::tempdir().unwrap();
    let delta = 0.01;
    let m = manifest(
        dir.path(),
        "d.json",
        &format!(
            r#"{{"domain": {{"preset": "disc"}}, {PLANAR},
                "scheme": {{"delta": {delta}, "grid": {{"horizon": 0.5, "steps": 500}}}},
                "paths": 100, "dump_paths": 100, "seed": 4, "sampling": {{"resolution": 0.01}}}}"#
        ),
    );
    let out = dir.path().join("out");
    assert_eq!(code(&run("simulate", &m, &out, &[])), 0);
    let mut files = 0;
    for entry in fs::read_dir(out.join("paths")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,X_1,X_2,W_1,W_2,Y_1"));
        for line in lines {
            let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            assert!(v[3].hypot(v[4]) <= 1.0 + 2.0 * delta, "{line}");
        }
        files += 1;
    }
    assert_eq!(files, 100);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["paths"], 100);
    for f in ["metadata.json", "terminal.csv", "terminal_histogram.csv", "check.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn drift_dominated_runs_repeat_exactly_and_seeds_matter() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(
        dir.path(),
        "z.json",
        r#"{"domain": {"preset": "halfline"},
            "params": {"drift": [-1.0], "covariance": [[1e-12]], "initial": {"kind": "point", "value": [0.5]}},
            "scheme": {"delta": 0.001, "grid": {"horizon": 1.0, "steps": 200}}, "paths": 5, "seed": 9}"#,
    );
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert_eq!(code(&run("simulate", &m, out, &[])), 0);
    }
    assert_eq!(code(&run("simulate", &m, &c, &["--seed", "10"])), 0);
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    for f in ["terminal.csv", "summary.json", "metadata.json", "paths/path_00000.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "paths/path_00000.csv"), read(&c, "paths/path_00000.csv"));
    // the drift pins W near the origin from t = 0.5 on
    let s = json(&a.join("summary.json"));
    assert!(s["w_terminal_mean"][0].as_f64().unwrap() <= 0.001 + 1e-5);
}

#[test]
fn converge_modes() {
    let dir = tempfile::tempdir().unwrap();
    let line = manifest(
        dir.path(),
        "h.json",
        &format!(
            r#"{{"domain": {{"preset": "halfline"}}, {LINE},
                "scheme": {{"delta": 0.01, "grid": {{"horizon": 1.0, "steps": 100}}}},
                "sweep": [{{"delta": 0.01, "dt": 0.01}}, {{"delta": 0.001, "dt": 0.001}}, {{"delta": 0.0001, "dt": 0.0001}}],
                "paths": 20}}"#
        ),
    );
    let out = dir.path().join("h");
    assert_eq!(code(&run("converge", &line, &out, &[])), 0);
    let r = json(&out.join("converge.json"));
    assert_eq!(r["oracle"], "skorokhod-1d");
    assert_eq!(r["strictly_decreasing"], true);
    let csv = fs::read_to_string(out.join("converge.csv")).unwrap();
    assert!(csv.starts_with("delta,dt,paths,median_gap,p95_gap,median_y_gap_1\n"));
    assert_eq!(csv.lines().count(), 4);

    let disc = manifest(
        dir.path(),
        "d.json",
        &format!(
            r#"{{"domain": {{"preset": "disc"}}, "field": {{"preset": "disc-oblique"}}, {PLANAR},
                "scheme": {{"delta": 0.02, "grid": {{"horizon": 0.5, "steps": 50}}}},
                "sweep": [{{"delta": 0.04, "dt": 0.02}}, {{"delta": 0.02, "dt": 0.01}}, {{"delta": 0.01, "dt": 0.005}}],
                "paths": 100, "tightness": {{"lambdas": [0.05, 0.1], "eps": 0.5, "sup_bound": 1.5}}}}"#
        ),
    );
    assert_eq!(code(&run("converge", &disc, &dir.path().join("x"), &[])), 1);
    let out = dir.path().join("d");
    assert_eq!(code(&run("converge", &disc, &out, &["--tightness-only"])), 0);
    let csv = fs::read_to_string(out.join("tightness.csv")).unwrap();
    assert!(csv.starts_with("delta,lambda,paths,w_freq"));
    assert!(!csv.contains("gap"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(!out.join("converge.csv").exists());
}

#[test]
fn certify_counts_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let long = manifest(
        dir.path(),
        "l.json",
        &format!(
            r#"{{"domain": {{"preset": "halfline"}}, {LINE},
                "scheme": {{"delta": 0.001, "grid": {{"horizon": 1.0, "steps": 100}}}},
                "certify": {{"windows": [2.0]}}}}"#
        ),
    );
    assert_eq!(code(&run("certify", &long, &dir.path().join("l"), &[])), 1);

    let line = manifest(
        dir.path(),
        "h.json",
        &format!(
            r#"{{"domain": {{"preset": "halfline"}}, {LINE},
                "scheme": {{"delta": 0.001, "grid": {{"horizon": 0.5, "steps": 500}}}},
                "certify": {{"windows": [0.02], "stride": 0.01}}, "paths": 10}}"#
        ),
    );
    let out = dir.path().join("h");
    assert_eq!(code(&run("certify", &line, &out, &[])), 0);
    let r = json(&out.join("certify.json"));
    assert_eq!(r["windows"], 10 * 49);
    assert_eq!(r["VIOLATION"], 0);
    assert!(r["verified"].as_u64().unwrap() > 0);

    let roof = manifest(
        dir.path(),
        "g.json",
        r#"{"domain": {"preset": "gaussian-roof2d"},
            "params": {"drift": [0.0, 0.0], "covariance": [[1.0, 0.0], [0.0, 1.0]], "initial": {"kind": "point", "value": [0.0, 0.5]}},
            "scheme": {"delta": 0.01, "grid": {"horizon": 0.2, "steps": 200}},
            "certify": {"windows": [0.02]}, "paths": 10, "sampling": {"resolution": 0.01}}"#,
    );
    let out = dir.path().join("g");
    assert_eq!(code(&run("certify", &roof, &out, &[])), 0);
    let r = json(&out.join("certify.json"));
    assert_eq!(r["verified"], 0);
    assert_eq!(r["hypothesis_not_met"], r["windows"]);
    assert_eq!(r["failed_hypotheses"]["tube"], r["windows"]);
}

#[test]
fn every_shipped_manifest_parses() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            let m = srbm_cli::LoadedManifest::load(&p).unwrap();
            let mode = m.manifest.mode.expect("shipped manifests declare a mode");
            m.validate(mode).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 8);
}
