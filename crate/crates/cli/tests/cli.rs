use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bgkit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgkit"))
        .args(args)
        .env("BGKIT_OUTPUT_DIR", out)
        .output()
        .expect("bgkit runs")
}

fn run_config(dir: &Path, name: &str, text: &str) -> (Output, Option<Value>) {
    let cfg = dir.join(format!("{name}.toml"));
    std::fs::write(&cfg, text).unwrap();
    let out = dir.join(name);
    let output = bgkit(&["run", cfg.to_str().unwrap()], &out);
    let report = std::fs::read_to_string(out.join("report.json")).ok().map(|s| serde_json::from_str(&s).unwrap());
    (output, report)
}

fn without_wall_clock(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.contains("\"wall_clock_seconds\"")).collect::<Vec<_>>().join("\n")
}

#[test]
fn list_is_stable_and_alphabetized() {
    let dir = tempfile::tempdir().unwrap();
    let first = bgkit(&["list"], dir.path());
    assert!(first.status.success());
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names.len(), 11);
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    assert!(names.contains(&"uc-test") && names.contains(&"rk-check"));
    assert_eq!(bgkit(&["list"], dir.path()).stdout, first.stdout);
}

#[test]
fn geometry_check_on_flat_torus() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = run_config(
        dir.path(),
        "geo",
        "experiment = \"geometry-check\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 16\n",
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = report.unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["status"], "pass");
    let defect = report["payload"]["runs"][0]["check"]["metric_compatibility"].as_f64().unwrap();
    assert!(defect < 1e-10);
    assert_eq!(report["config"]["manifold"]["family"], "flat_torus");
    assert!(dir.path().join("geo/geometry.csv").exists());
}

#[test]
fn uc_test_on_warped_torus() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = run_config(
        dir.path(),
        "uc",
        "experiment = \"uc-test\"\n[manifold]\nfamily = \"warped_torus\"\nresolution = 16\n\
         [operator.potential]\ncenter = [1.5707963267948966, 3.141592653589793]\nradius = 0.8\n",
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lambda = report.unwrap()["payload"]["runs"][0]["report"]["lambda_min"].as_f64().unwrap();
    assert!(lambda > 0.0);
    let csv = std::fs::read_to_string(dir.path().join("uc/uc.csv")).unwrap();
    assert!(csv.starts_with("resolution,lambda_min,residual,removed_nodes,restricted_size,volume_fraction\r\n"));
}

#[test]
fn oversized_covering_radius_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (out, report) = run_config(
        dir.path(),
        "cover",
        "experiment = \"cover-build\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 16\n[covering]\nradius = 2.0\n",
    );
    assert_eq!(out.status.code(), Some(64));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains(":6:") && err.contains("inj/2"), "{err}");
    assert!(report.is_none());
}

#[test]
fn unknown_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = run_config(dir.path(), "bad", "experiment = \"killing\"\nsede = 3\n");
    assert_eq!(out.status.code(), Some(64));
    assert!(String::from_utf8(out.stderr).unwrap().contains(":2:"));
}

#[test]
fn exit_codes_for_indeterminate_and_error() {
    let dir = tempfile::tempdir().unwrap();
    // one eigenpair cannot separate a two-dimensional kernel from the rest
    let (out, report) = run_config(
        dir.path(),
        "short",
        "experiment = \"spectrum\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 8\n[operator]\ncount = 1\n",
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report.unwrap()["status"], "indeterminate");
    let (out, _) = run_config(
        dir.path(),
        "sphere",
        "experiment = \"killing\"\n[manifold]\nfamily = \"sphere_stereographic\"\nresolution = 9\n",
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn reports_are_deterministic_and_matrices_exported() {
    let dir = tempfile::tempdir().unwrap();
    let text = "experiment = \"spectrum\"\nseed = 5\n[manifold]\nfamily = \"warped_torus\"\nresolution = 8\n[operator]\nname = \"bochner\"\ncount = 4\n";
    let (a, _) = run_config(dir.path(), "a", text);
    let (b, _) = run_config(dir.path(), "b", text);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(without_wall_clock(&dir.path().join("a/report.json")), without_wall_clock(&dir.path().join("b/report.json")));
    for f in ["eigenvalues.csv", "stiffness.mtx", "mass.mtx"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(x, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let mtx = std::fs::read_to_string(dir.path().join("a/mass.mtx")).unwrap();
    assert!(mtx.starts_with("%%MatrixMarket matrix coordinate real"));
}

#[test]
fn output_dir_override_beats_config() {
    let dir = tempfile::tempdir().unwrap();
    let configured = dir.path().join("configured");
    let text = format!(
        "experiment = \"geometry-check\"\noutput_dir = \"{}\"\n[manifold]\nfamily = \"flat_torus\"\nresolution = 8\n",
        configured.display()
    );
    let (out, report) = run_config(dir.path(), "override", &text);
    assert_eq!(out.status.code(), Some(0));
    assert!(report.is_some());
    assert!(!configured.exists());
}
