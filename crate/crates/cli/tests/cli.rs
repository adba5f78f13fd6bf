use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stepup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepup")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_preset_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepup(&["analyze", "--preset", "sim", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("rds_on 0.0075"), "defaults echoed in header");
    assert!(stdout(&o).contains("1000"));
}

#[test]
fn analyze_json_is_machine_readable() {
    let o = stepup(&["analyze", "--json"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let vout = doc["report"]["vout"].as_f64().unwrap();
    assert!((vout - 1000.0).abs() < 1.0, "{vout}");
}

#[test]
fn invalid_design_exits_2() {
    assert_eq!(code(&stepup(&["analyze", "--duty", "1.2"])), 2);
    assert_eq!(code(&stepup(&["analyze", "--vin", "-3"])), 2);
    assert_eq!(code(&stepup(&["analyze", "--no-such-flag"])), 2);
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"design_typo": {}}"#).unwrap();
    assert_eq!(code(&stepup(&["analyze", "--config", path(&cfg)])), 2);
    assert_eq!(code(&stepup(&["analyze", "--config", path(&dir.path().join("missing.json"))])), 2);
}

#[test]
fn config_file_overrides_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"design": {"vin": 24, "n_ratio": 1.5, "duty": 0.7, "fsw": 100000, "lm": 1e-4,
            "lk": 1e-6, "cap": 1e-5, "rload": 800}, "emit": {"csv": false, "md": true, "svg": false}}"#,
    )
    .unwrap();
    let o = stepup(&["analyze", "--json", "--config", path(&cfg), "--duty", "0.75"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let gain = doc["report"]["gain"].as_f64().unwrap();
    assert!((gain - 2.0 * 4.5 / 0.25).abs() < 1e-9, "{gain}");
}

#[test]
fn audit_reports_the_table_conflict() {
    let o = stepup(&["audit"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("comparison_table_gain_conflict"), "{}", stdout(&o));
}

#[test]
fn compare_csv_has_every_topology() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepup(&["compare", "--n", "1.5", "--d", "0.4", "--vin", "30", "--csv", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(text, stdout(&o));
    assert_eq!(text.lines().count(), 6, "{text}");
}

#[test]
fn design_ranks_candidates() {
    let o = stepup(&["design", "--vin", "30", "--vout", "1000", "--n", "1,1.5,2"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("| ") && !l.starts_with("| rank")).count(), 3);
    let o = stepup(&["design", "--vin", "30", "--vout", "20"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_reports_crosscheck_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepup(&["simulate", "--out", path(dir.path())]);
    // the built-in ladder settles below the closed-form output; see README
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.md", "waves.csv", "op.csv", "losses.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let o = stepup(&["simulate", "--tol", "1.0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_without_convergence_exits_3() {
    let o = stepup(&["simulate", "--max-periods", "3"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_arbitrary_netlist() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("rc.net");
    fs::write(&net, "V v in 0 1\nR r in out 1k\nC c out 0 1u\n").unwrap();
    let o = stepup(&["simulate", "--netlist", path(&net), "--period", "1e-3", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("waves.csv").exists());
    fs::write(&net, "Q q a 0 1\n").unwrap();
    assert_eq!(code(&stepup(&["simulate", "--netlist", path(&net)])), 2);
}

#[test]
fn sweep_writes_efficiency_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = stepup(&["sweep", "--loads", "200,400", "--out", path(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("efficiency.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(fs::read_to_string(dir.path().join("efficiency.svg")).unwrap().starts_with("<svg"));
    assert_eq!(code(&stepup(&["sweep", "--loads", "0"])), 2);
}
