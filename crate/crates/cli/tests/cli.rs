use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use fgflow::io::{read_labels_csv, read_measure};
use fgflow::kernel::kernel_eval;
use fgflow::mmd::{dissipation, loss, mmd_squared};
use fgflow::KernelParams;
use serde_json::Value;

fn fgflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fgflow")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = fgflow(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const DATASET: &str = "label,f0,f1\na,0.0,0.0\nb,4.0,1.0\na,1.0,0.5\nc,-2.0,3.0\nb,5.0,2.0\na,0.5,1.5\n";

#[test]
fn lift_writes_measure_and_moments() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATASET);
    let out = dir.path().join("lift");
    ok(&["lift", "--dataset", s(&data), "--out", s(&out)]);
    let m = read_measure::<f64>(&out.join("measure.jsonl")).unwrap();
    assert_eq!(m.len(), 6);
    assert_eq!((m.m(), m.n()), (2, 2));
    // Class means under the identity embedding.
    let a = &m.particles()[0];
    assert!((a.mu[0] - 0.5).abs() < 1e-12 && (a.mu[1] - 2.0 / 3.0).abs() < 1e-12);
    // A one-sample class gets the identity covariance.
    let c = &m.particles()[3];
    assert_eq!(c.sigma.as_matrix(), &nalgebra::DMatrix::identity(2, 2));
    assert!(out.join("moments.jsonl").exists() && out.join("config.json").exists());
}

#[test]
fn lift_reports_parse_line_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "label,f0\na,1.0\nb,oops\n");
    let out = fgflow(&["lift", "--dataset", s(&data), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flow_of_target_onto_itself_is_stationary() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATASET);
    let lifted = dir.path().join("lift");
    ok(&["lift", "--dataset", s(&data), "--out", s(&lifted)]);
    let m = lifted.join("measure.jsonl");
    let out = dir.path().join("flow");
    ok(&["flow", "--source", s(&m), "--target", s(&m), "--iterations", "5", "--out", s(&out)]);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let f: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!((f[1], f[2]), (0.0, 0.0));
    }
    assert_eq!(read_measure::<f64>(&out.join("final.jsonl")).unwrap().particles(), read_measure::<f64>(&m).unwrap().particles());
}

#[test]
fn project_defaults_to_lp_and_recovers_lifted_classes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", DATASET);
    let lifted = dir.path().join("lift");
    ok(&["lift", "--dataset", s(&data), "--out", s(&lifted)]);
    let m = lifted.join("measure.jsonl");
    let out = dir.path().join("p");
    ok(&["project", "--measure", s(&m), "--moments", s(&lifted.join("moments.jsonl")), "--out", s(&out)]);
    let labels = read_labels_csv(std::fs::File::open(out.join("labels.csv")).unwrap()).unwrap();
    assert_eq!(labels, ["a", "b", "a", "c", "b", "a"]);
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["label_method"], "lp");

    let knn = dir.path().join("k");
    ok(&["project", "--measure", s(&m), "--target", s(&m), "--method", "knn", "--k", "1", "--out", s(&knn)]);
    let labels = read_labels_csv(std::fs::File::open(knn.join("labels.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), 6);

    let out = fgflow(&["project", "--measure", s(&m), "--method", "knn", "--out", s(&knn)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_matches_library_and_singleton_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.jsonl", "{\"x\":[0.0],\"mu\":[0.0],\"sigma\":[[1.0]]}\n");
    let b = write(dir.path(), "b.jsonl", "{\"x\":[1.0],\"mu\":[0.5],\"sigma\":[[2.0]]}\n");
    let out = ok(&["eval", "--measure", s(&a), "--target", s(&b), "--alpha", "0.7", "--beta", "0.4", "--gamma", "0.9"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let p = KernelParams::new(0.7, 0.4, 0.9).unwrap();
    let (ma, mb) = (read_measure::<f64>(&a).unwrap(), read_measure::<f64>(&b).unwrap());
    assert_eq!(report["mmd2"].as_f64().unwrap(), mmd_squared(&p, &ma, &mb).unwrap());
    assert_eq!(report["loss"].as_f64().unwrap(), loss(&p, &ma, &mb).unwrap());
    assert_eq!(report["dissipation"].as_f64().unwrap(), dissipation(&p, &ma, &mb).unwrap());
    let k = kernel_eval(&p, &ma.particles()[0], &mb.particles()[0]).unwrap();
    assert!((report["mmd2"].as_f64().unwrap() - 2.0 * (1.0 - k)).abs() < 1e-15);

    let same = ok(&["eval", "--measure", s(&a), "--target", s(&a)]);
    let report: Value = serde_json::from_slice(&same.stdout).unwrap();
    for key in ["mmd2", "loss", "dissipation"] {
        assert_eq!(report[key].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn mixture_demo_writes_parseable_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    ok(&["mixture-demo", "--scenario", "four_to_four", "--iterations", "250", "--out", s(&out)]);
    for step in [0, 100, 200] {
        let snap = read_measure::<f64>(&out.join(format!("snapshots/step_{step:06}.jsonl"))).unwrap();
        assert_eq!(snap.len(), 25);
    }
    assert!(!out.join("snapshots/step_000300.jsonl").exists());
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["final_mmd2"].as_f64().unwrap() < summary["initial_mmd2"].as_f64().unwrap());
    let labels = read_labels_csv(std::fs::File::open(out.join("labels.csv")).unwrap()).unwrap();
    assert_eq!(labels.len(), 25);
}

#[test]
fn resolved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["mixture-demo", "--scenario", "2to4", "--seed", "7", "--iterations", "40", "--step-size", "0.02", "--out", s(&first)]);
    let second = dir.path().join("second");
    ok(&["mixture-demo", "--config", s(&first.join("config.json")), "--out", s(&second)]);
    for f in ["config.json", "trace.csv", "final.jsonl", "labels.csv", "summary.json"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
    // Flags still win over the file.
    let third = dir.path().join("third");
    ok(&["mixture-demo", "--config", s(&first.join("config.json")), "--iterations", "3", "--out", s(&third)]);
    assert_eq!(std::fs::read_to_string(third.join("trace.csv")).unwrap().lines().count(), 4);
}

#[test]
fn config_errors_and_missing_inputs_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "c.json", "{\"alpah\": 1}");
    assert_eq!(fgflow(&["eval", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(fgflow(&["eval"]).status.code(), Some(1));
    assert_eq!(fgflow(&["flow", "--source", "/missing", "--target", "/missing", "--out", s(dir.path())]).status.code(), Some(2));
    assert_eq!(fgflow(&["nonsense"]).status.code(), Some(1));
}

#[test]
fn safeguard_exhaustion_exits_with_its_own_code() {
    // 2→4 seed 0 at the reference settings drives a covariance to the floor.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let run = fgflow(&["mixture-demo", "--scenario", "two_to_four", "--seed", "0", "--out", s(&out)]);
    assert_eq!(run.status.code(), Some(3));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().count() > 2);
    assert!(!out.join("final.jsonl").exists());
}

#[test]
fn killed_run_leaves_a_valid_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let mut child = Command::new(env!("CARGO_BIN_EXE_fgflow"))
        .args(["mixture-demo", "--scenario", "four_to_four", "--iterations", "10000000", "--out", s(&out)])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let trace = out.join("trace.csv");
    let mut rows = 0;
    for _ in 0..200 {
        std::thread::sleep(Duration::from_millis(50));
        rows = std::fs::read_to_string(&trace).map(|t| t.lines().count()).unwrap_or(0);
        if rows > 20 {
            break;
        }
    }
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(rows > 20);
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.ends_with('\n'));
    for (i, line) in text.lines().skip(1).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0].parse::<usize>().unwrap(), i);
        for f in &fields[1..] {
            f.parse::<f64>().unwrap();
        }
    }
}
