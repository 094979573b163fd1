use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fbx(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{command}.json"));
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_fbx"))
        .arg(command)
        .arg("--config")
        .arg(&cfg)
        .args(extra)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

const SOLVE: &str = r#"{"problem":{"fixture":"poly-diag-0.3-0.7","h":0.03125},"output_dir":"solve"}"#;

#[test]
fn solve_writes_summary_and_manifest() {
    let dir = TempDir::new().unwrap();
    let o = fbx(dir.path(), "solve", SOLVE, &["--assert"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_json(dir.path().join("solve/solve.json"));
    assert_eq!(summary["converged"], true);
    assert!(summary["error_vs_fixture"].as_f64().unwrap() <= 5.0 * 0.03125f64.powi(2));
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    let manifest = read_json(dir.path().join("solve/manifest.json"));
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["solution.bin", "solve.json"]);
    let bytes = fs::read(dir.path().join("solve/solution.bin")).unwrap();
    let u = fbx_core::GridField::read_binary(bytes.as_slice()).unwrap();
    assert_eq!(u.extents(), [64, 64]);
}

#[test]
fn diagnose_reports_every_center() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem":{"fixture":"poly-diag-0.3-0.7","h":0.03125},
        "diagnostics":{"centers":[[0.0,0.0]],"r_max":0.4},"output_dir":"diag"}"#;
    let o = fbx(dir.path(), "diagnose", cfg, &["--assert"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(dir.path().join("diag/monotonicity.json"));
    assert_eq!(m["pass"], true);
    assert_eq!(m["centers"].as_array().unwrap().len(), 1);
    let csv = fs::read_to_string(dir.path().join("diag/profile-0.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "r,H,D,phi,W,H2,W2,W25,W3,W4,density");
}

/// Every output except the manifest's wall-clock field is byte-identical.
#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem":{"fixture":"halfspace-e1","h":0.0625},"points":[[0.0,0.0],[0.0,0.5]]}"#;
    for out in ["a", "b"] {
        let o = fbx(dir.path(), "classify", cfg, &["--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut ma = read_json(dir.path().join("a/manifest.json"));
    let mut mb = read_json(dir.path().join("b/manifest.json"));
    for name in ma["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()) {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    ma.as_object_mut().unwrap().remove("wall_clock_seconds");
    mb.as_object_mut().unwrap().remove("wall_clock_seconds");
    assert_eq!(ma, mb);
}

#[test]
fn invalid_configs_exit_2() {
    let dir = TempDir::new().unwrap();
    let cases = [
        r#"{"problem":{"fixture":"poly-diag-0.3-0.7","h":-1}}"#,
        r#"{"problem":{"fixture":"no-such-fixture","h":0.1}}"#,
        r#"{"problme":{}}"#,
        r#"{"command":"diagnose","problem":{"fixture":"poly-diag-0.3-0.7","h":0.0625}}"#,
        "not json",
    ];
    for cfg in cases {
        let o = fbx(dir.path(), "solve", cfg, &[]);
        assert_eq!(code(&o), 2, "{cfg}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = fbx(dir.path(), "report", r#"{"manifests":[]}"#, &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validation_lists_all_errors() {
    let dir = TempDir::new().unwrap();
    let o = fbx(dir.path(), "solve", r#"{"problem":{"fixture":"nope","h":0,"tol":-1}}"#, &[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["problem.h", "problem.tol", "problem.fixture"] {
        assert!(err.contains(field), "{err}");
    }
}

#[test]
fn non_convergence_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem":{"fixture":"poly-diag-0.3-0.7","h":0.125,"solver":"psor","omega":0.001}}"#;
    let o = fbx(dir.path(), "solve", cfg, &[]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(dir.path().join("fbx-out/manifest.json"));
    assert_eq!(manifest["stages"][0]["status"], "failed");
}

/// An interior point of the positivity set has no blow-up; the failed
/// check only changes the exit status under `--assert`.
#[test]
fn failed_check_exits_4_only_with_assert() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem":{"fixture":"poly-diag-0.3-0.7","h":0.0625},"points":[[0.5,0.5]]}"#;
    assert_eq!(code(&fbx(dir.path(), "classify", cfg, &[])), 0);
    assert_eq!(code(&fbx(dir.path(), "classify", cfg, &["--assert"])), 4);
}

#[test]
fn report_counts_match_classification() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem":{"fixture":"halfspace-e1","h":0.0625},
        "points":[[0.0,0.0],[0.0,0.25],[0.0,-0.25],[0.5,0.5]],"output_dir":"cls"}"#;
    assert_eq!(code(&fbx(dir.path(), "classify", cfg, &[])), 0);
    let o = fbx(dir.path(), "report", r#"{"manifests":["cls/manifest.json"],"output_dir":"rep"}"#, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cls = read_json(dir.path().join("cls/classification.json"));
    let csv = fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    for kind in ["regular", "singular", "unresolved"] {
        let n = rows.iter().filter(|r| r.split(',').nth(2) == Some(kind)).count();
        assert_eq!(n as u64, cls["counts"][kind].as_u64().unwrap(), "{kind}");
    }
    assert!(cls["counts"]["regular"].as_u64().unwrap() >= 3);
}

#[test]
fn report_of_empty_batch_is_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"problem":{"fixture":"halfspace-e1","h":0.0625},"points":[],"output_dir":"cls"}"#;
    assert_eq!(code(&fbx(dir.path(), "classify", cfg, &[])), 0);
    let o = fbx(dir.path(), "report", r#"{"manifests":["cls/manifest.json"],"output_dir":"rep"}"#, &[]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 rows"));
}

#[test]
fn report_missing_file_fails() {
    let dir = TempDir::new().unwrap();
    let o = fbx(dir.path(), "report", r#"{"manifests":["nowhere/manifest.json"]}"#, &[]);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));
}

#[test]
fn anomalous_run_reports_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"anomalous":{"h":0.03125,"coarsest_h":0.03125,"tol_k":0.001},"output_dir":"anom"}"#;
    let o = fbx(dir.path(), "construct-anomalous", cfg, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = read_json(dir.path().join("anom/anomalous.json"));
    let k = run["k_star"].as_f64().unwrap();
    assert!(k > 1.0 && k < 10.0, "{k}");
    for name in ["u_star.bin", "free_boundary.csv", "manifest.json"] {
        assert!(dir.path().join("anom").join(name).is_file(), "{name}");
    }
    let o = fbx(dir.path(), "report", r#"{"manifests":["anom/manifest.json"],"output_dir":"rep"}"#, &[]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("rep/summary.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    let cells: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(cells[1], "construct-anomalous");
    assert_eq!(cells[4].parse::<f64>().unwrap(), k);
}
