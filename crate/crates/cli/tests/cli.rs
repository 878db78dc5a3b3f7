use std::path::Path;
use std::process::{Command, Output};

use iorm::sim::report::{HISTOGRAM_FILE, METRICS_FILE, SUMMARY_FILE, TRACE_FILE, UTILIZATION_FILE};
use iorm::sim::{builtin, scenario_names, RunResult};
use tempfile::TempDir;

fn iorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iorm")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `name` shortened to `secs` as a scenario file.
fn scenario_file(dir: &Path, name: &str, secs: f64) -> String {
    let mut cfg = builtin(name).expect("builtin");
    cfg.duration_s = secs;
    cfg.warmup_s = 0.0;
    let path = dir.join("scenario.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_scenarios_prints_every_variant() {
    let o = iorm(&["list-scenarios"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in scenario_names() {
        assert!(text.contains(&name), "missing {name}");
    }
}

#[test]
fn run_writes_every_report() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario_file(dir.path(), "noisy-neighbor", 2.0);
    let out = dir.path().join("run");
    let o = iorm(&["run", &cfg, "--seed", "3", "--out", out.to_str().unwrap(), "--trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [SUMMARY_FILE, HISTOGRAM_FILE, UTILIZATION_FILE, METRICS_FILE, TRACE_FILE] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let r: RunResult = serde_json::from_str(&std::fs::read_to_string(out.join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(r.seed, 3);
    r.audit.check().unwrap();
    assert!(stdout(&o).contains("PROD/SALES/OLTP"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario_file(dir.path(), "share-ratios:2", 1.0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(iorm(&["run", &cfg, "--seed", "9", "--out", out.to_str().unwrap(), "--trace"]).status.success());
    }
    for f in [SUMMARY_FILE, HISTOGRAM_FILE, UTILIZATION_FILE, METRICS_FILE, TRACE_FILE] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn overrides_apply() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario_file(dir.path(), "noisy-neighbor", 1.0);
    let out = dir.path().join("run");
    let o = iorm(&["run", &cfg, "--out", out.to_str().unwrap(), "--scheduler", "bypass", "--objective", "low-latency"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("scheduler bypass"));
}

#[test]
fn builtin_names_run_directly() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("run");
    let o = iorm(&["run", "deadline:healthy", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("deadline:healthy"));
}

#[test]
fn zero_duration_succeeds_with_empty_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario_file(dir.path(), "share-ratios:1", 0.0);
    let out = dir.path().join("run");
    let o = iorm(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\nduration_s = \"long\"\n").unwrap();
    let out = dir.path().join("run");
    let o = iorm(&["run", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));

    let o = iorm(&["run", "no-such-scenario", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = scenario_file(dir.path(), "share-ratios:1", -1.0);
    let o = iorm(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_reports_ratio_and_degradation() {
    let dir = TempDir::new().unwrap();
    let alone = dir.path().join("alone");
    let mixed = dir.path().join("mixed");
    for (name, out) in [("noisy-neighbor:alone", &alone), ("noisy-neighbor:bypass", &mixed)] {
        let cfg = scenario_file(dir.path(), name, 2.0);
        assert!(iorm(&["run", &cfg, "--out", out.to_str().unwrap()]).status.success());
    }
    let o = iorm(&["compare", alone.to_str().unwrap(), mixed.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("change%"));
    assert!(text.contains("throughput ratio"));
    assert!(text.contains("PROD/SALES/SCAN"));

    let o = iorm(&["compare", alone.to_str().unwrap(), dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
