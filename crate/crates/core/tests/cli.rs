use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamprep")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn out_dir(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn run_writes_trace_features_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_dir(&dir, "run");
    let o = bin(&["run", "--config", &scenario("two_service.toml"), "--mode", "per_service", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "t_ms,service_id,sensor_id,d_M,d_A,d_MA,rank,selected");
    let first = fs::read_to_string(out.join("features.ndjson")).unwrap();
    let record: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["t_ms", "service_id", "components", "provenance"] {
        assert!(record.get(key).is_some(), "missing {key}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "per_service");
    assert!(String::from_utf8_lossy(&o.stdout).contains("feature invocations"));
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("fault_temperature.toml");
    let (a, b) = (out_dir(&dir, "a"), out_dir(&dir, "b"));
    assert!(bin(&["run", "--config", &cfg, "--seed", "1", "--out", a.to_str().unwrap()]).status.success());
    assert!(bin(&["run", "--config", &cfg, "--seed", "2", "--out", b.to_str().unwrap()]).status.success());
    assert_ne!(fs::read(a.join("features.ndjson")).unwrap(), fs::read(b.join("features.ndjson")).unwrap());
}

#[test]
fn compare_writes_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_dir(&dir, "cmp");
    let o = bin(&["compare", "--config", &scenario("two_service.toml"), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for mode in ["unified", "per_service", "topsis_baseline", "no_selection_fused"] {
        assert!(out.join(mode).join("trace.csv").exists(), "{mode}");
    }
    let cmp: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp["unified_matches_per_service"], true);
    assert!(fs::read_to_string(out.join("comparison.txt")).unwrap().contains("identical"));
}

#[test]
fn synth_output_is_ingestible() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("streams.csv");
    let o = bin(&["synth", "--spec", &scenario("fault_temperature.toml"), "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let streams = streamprep::harness::ingest_csv(&csv).unwrap();
    assert_eq!(streams.len(), 7);
    let t3 = streams.iter().find(|s| s.sensor_id().to_string() == "T3").unwrap();
    assert!(t3.slice(300_000, 1_200_000).iter().all(|p| p.value == 26.0));
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "horizon_ms = -5\n").unwrap();
    let o = bin(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = bin(&["run", "--config", "/nonexistent.toml"]);
    assert!(!o.status.success());
    let o = bin(&["run", "--config", &scenario("two_service.toml"), "--mode", "bogus"]);
    assert!(!o.status.success());
}
