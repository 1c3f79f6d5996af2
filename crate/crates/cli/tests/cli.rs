use std::path::Path;
use std::process::Command;

use softseg_cli::{run_panel, run_sweep, run_theory, ExperimentConfig};

const SMALL_BENCH: &str = r#""bench": {"n_total": 900, "n_train": 600, "d_sig": 2, "d_nuis": 2, "m": 12, "j": 3}"#;

fn small(methods: &str, seeds: &str) -> ExperimentConfig {
    let text = format!(r#"{{"name": "small", {SMALL_BENCH}, "fit": {{"restarts": 1, "max_epochs": 150}}, "methods": [{methods}], "seeds": [{seeds}]}}"#);
    ExperimentConfig::from_json(&text).unwrap()
}

fn softseg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softseg"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn single_method_single_seed_gives_one_row_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_panel(&small(r#"{"method": "pooled"}"#, "3"), tmp.path()).unwrap();
    assert_eq!(out.rows.len(), 1);
    assert_eq!(out.aggregate.len(), 1);
    assert!(out.bootstrap.is_empty());
    assert!(out.invariant_failures.is_empty());
    let csv = std::fs::read_to_string(out.dir.join("aggregate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.lines().nth(1).unwrap().starts_with("small,pooled,1,"));
}

#[test]
fn reruns_write_byte_identical_tables() {
    let cfg = small(r#"{"method": "pooled"}, {"method": "otss", "fit": {"k": 2}}, {"method": "cluster"}"#, "0, 1, 2");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_panel(&cfg, a.path()).unwrap();
    let rb = run_panel(&cfg, b.path()).unwrap();
    for name in ["seed_rows.csv", "aggregate.csv", "bootstrap.csv", "config.json"] {
        let x = std::fs::read(ra.dir.join(name)).unwrap();
        let y = std::fs::read(rb.dir.join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
}

#[test]
fn sweep_over_training_size_keeps_the_evaluation_set() {
    let mut cfg = small(r#"{"method": "pooled"}"#, "0, 1");
    cfg.sweep = serde_json::from_str(r#"{"axis": "n_train", "values": [300, 600]}"#).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let out = run_sweep(&cfg, tmp.path()).unwrap();
    assert_eq!(out.points.len(), 2);
    assert!(out.dir.join("sweep.csv").exists());
    assert_eq!(out.mean_regret("pooled").len(), 2);
}

#[test]
fn config_parse_errors_report_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(tmp.path(), "bad.json", "{\n  \"name\": \"x\",\n  \"methods\": [\n    {\"method\": \"otss\",}\n  ]\n}\n");
    let out = softseg().args(["panel", "--config"]).arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn unknown_method_is_rejected() {
    assert!(ExperimentConfig::from_json(r#"{"name": "x", "methods": [{"method": "svm"}]}"#).is_err());
}

#[test]
fn rate_sweep_with_two_sizes_is_refused() {
    let cfg = ExperimentConfig::from_json(r#"{"name": "t", "theory": {"rate": {"n_grid": [500, 1000]}}}"#).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let err = run_theory(&cfg, tmp.path(), None).unwrap_err();
    assert!(err.to_string().contains("n_grid"), "{err}");
}

#[test]
fn inflated_kappa_fails_the_floor_check_and_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write(
        tmp.path(),
        "theory.json",
        r#"{"name": "t", "theory": {"run_rate_sweeps": false, "mc_samples": 20000, "decomposition_instances": 50, "transfer_triples": 500}}"#,
    );
    let base = softseg().args(["theory", "--config"]).arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    let text = String::from_utf8_lossy(&base.stdout);
    assert!(text.lines().filter(|l| l.contains("floor_")).all(|l| l.starts_with("PASS")), "{text}");

    let out = softseg()
        .args(["theory", "--kappa-scale", "1.5", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL floor_lower")), "{text}");
}

#[test]
fn runtime_subcommand_reports_a_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        r#"{{"name": "rt", {SMALL_BENCH}, "fit": {{"restarts": 1, "max_epochs": 50, "k_grid": [1, 2]}}, "methods": [{{"method": "otss", "fit": {{"k": 2}}}}], "seeds": [0]}}"#
    );
    let path = write(tmp.path(), "rt.json", &text);
    let out = softseg().args(["runtime", "--config"]).arg(&path).arg("--out").arg(tmp.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("em/otss ratio"), "{stdout}");
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        n += 1;
    }
    assert!(n >= 9);
}
