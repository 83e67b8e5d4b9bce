use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otfs-sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("OTFS_SIM_OUT")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL_SPEC: &str = r#"
name = "small"
sweep_var = "snr_db"
sweep_points = [10.0, 20.0]
trials = 3
variants = ["first-peak", "max-peak"]

[config]
Q = 2
"#;

#[test]
fn validate_reports_cp_rule_violation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "L_cp = 5\n").unwrap();
    let o = sim(&["validate", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("L_cp ≥ max L_ch + θ_max − 1"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_list_the_valid_ones() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["validate", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(4), "missing file is an I/O error");
    fs::write(dir.path().join("c.toml"), "users = 2\n").unwrap();
    let o = sim(&["validate", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("`users`") && err.contains("nu_max_T") && err.contains("L_cp"), "{err}");
}

#[test]
fn validate_prints_resolved_config_and_spec() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "Q = 4\n").unwrap();
    let o = sim(&["validate", "--config", "c.toml", "-o", "snr_db=15"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("Q = 4") && text.contains("snr_db = 15.0") && text.contains("M = 128"), "{text}");

    fs::write(dir.path().join("s.toml"), SMALL_SPEC).unwrap();
    let o = sim(&["validate", "--config", "s.toml", "-o", "trials=7"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("trials = 7") && text.contains("# resolved system config"), "{text}");
}

#[test]
fn unknown_figure_lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["figure", "fig7"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fig3, fig4a, fig4b, fig5a, fig5b, fig6"));
}

#[test]
fn run_writes_results_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SPEC).unwrap();
    let run = |out: &str| {
        let o = sim(&["run", "--config", "s.toml", "--out", out, "--workers", "2"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(dir.path().join(out).join("small/results.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(a, b);
    assert_eq!(a.lines().next().unwrap(), "sweep_var,sweep_value,user,variant,metric,value,ci_halfwidth,n_trials,n_failed");
    assert_eq!(a.lines().count(), 1 + 2 * 2 * 2 * 2);
    for f in ["spec.toml", "config.toml", "per-trial.jsonl"] {
        assert!(dir.path().join("a/small").join(f).is_file(), "{f}");
    }
    let trials = fs::read_to_string(dir.path().join("a/small/per-trial.jsonl")).unwrap();
    assert_eq!(trials.lines().count(), 6);
}

#[test]
fn seed_flag_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let draw = |seed: &str| {
        let o = sim(&["trial", "--seed", seed, "--index", "2"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
        let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(v["trial"], 2);
        assert_eq!(v["users"].as_array().unwrap().len(), 2);
        v["users"][0]["cfo_true"].as_f64().unwrap()
    };
    assert_eq!(draw("1"), draw("1"));
    assert_ne!(draw("1"), draw("2"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL_SPEC).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_otfs-sim"))
        .args(["run", "--config", "s.toml", "-o", "trials=1", "-o", "write_trials=false"])
        .current_dir(dir.path())
        .env("OTFS_SIM_OUT", dir.path().join("envout"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("envout/small/results.csv").is_file());
    assert!(!dir.path().join("envout/small/per-trial.jsonl").exists());
}

#[test]
fn reduced_trial_figure_keeps_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["figure", "fig4a", "--override", "trials=2", "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for q in [2, 4] {
        let csv = fs::read_to_string(dir.path().join(format!("o/fig4a-q{q}/results.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 1 + 7 * q * 2 * 2);
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",2,0")), "{csv}");
        let cfg = fs::read_to_string(dir.path().join(format!("o/fig4a-q{q}/config.toml"))).unwrap();
        assert!(cfg.contains(&format!("Q = {q}")));
    }
}

#[test]
fn fig3_dumps_timing_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&["figure", "fig3", "--out", "o"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("o/fig3/timing_metric.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 128);
    assert!(dir.path().join("o/fig3/snapshot.json").is_file());

    let o = sim(&["dump-metric", "-o", "Q=2"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o), csv);
}
