use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], out: &Path) -> Output {
    let output = Command::new(env!("CARGO_BIN_EXE_aoii-sched"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn");
    output
}

fn ok(args: &[&str], out: &Path) -> String {
    let o = run(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).display().to_string()
}

#[test]
fn whittle_table_is_written_and_reloadable() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["whittle-table", "--config", &config("tiny.toml")], dir.path());
    assert!(stdout.contains("saturated_from="));
    let table = aoii_sched::WhittleTable::load(&dir.path().join("whittle_table.json")).unwrap();
    assert_eq!(table.num_devices(), 6);
}

#[test]
fn oracle_writes_one_row_per_state() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["oracle", "--config", &config("single.toml"), "--x-cap", "10"], dir.path());
    assert!(stdout.contains("states 66"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "state,x_1,g_0,b_1,vi_value,vi_action,rvi_bias,rvi_action");
    assert_eq!(lines.count(), 66);
}

#[test]
fn baseline_evaluation_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(
        &["evaluate", "--config", &config("single.toml"), "--policy", "whittle-myopic", "--episodes", "2"],
        dir.path(),
    );
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(metrics["episodes"], 2);
    assert!(dir.path().join("eval_whittle-myopic.json").exists());
}

#[test]
fn train_then_evaluate_leaves_checkpoint_untouched() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--config", &config("tiny.toml"), "--episodes", "1"], dir.path());
    let log = std::fs::read_to_string(dir.path().join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("episode,mean_reward,"));
    let ckpt = dir.path().join("checkpoint.json");
    let before = std::fs::read(&ckpt).unwrap();
    let stdout = ok(
        &["evaluate", "--config", &config("tiny.toml"), "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "1"],
        dir.path(),
    );
    assert!(stdout.contains("shaped_reward"));
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_aoii-sched"))
        .args(["whittle-table", "--config", &config("single.toml")])
        .env("AOII_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("whittle_table.json").exists());
}

#[test]
fn malformed_config_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = \n").unwrap();
    let o = run(&["whittle-table", "--config", bad.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn wi_mappo_evaluation_needs_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["evaluate", "--config", &config("tiny.toml")], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--checkpoint"));
}
