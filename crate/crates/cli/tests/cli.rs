use std::path::Path;
use std::process::{Command, Output};

fn hieralign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hieralign"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const TINY: &str = r#"
seed = 3
[synthetic]
items = 6
stores = 2
days = 150
[gbm]
num_rounds = 10
[basisnet.net]
stacks = 1
layers = 1
width = 8
[basisnet.train]
epochs = 1
batches_per_epoch = 10
batch_size = 4
[basisnet.ensemble]
context_multiples = [2]
bagging_size = 1
[alignment]
grid = [0.9, 1.0, 1.1]
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let o = hieralign(&["run", "--config", &cfg, "--out", &s(&out), "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("lambda* = "));
    assert!(out.join("report.json").exists());

    let r = hieralign(&["report", &s(&out)]);
    assert_eq!(r.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&r.stdout).contains("| Hierarchy | Category |"));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let o = hieralign(&[
        "run", "--config", &cfg, "--out", &s(&out), "--seed", "11", "--frame", "evaluation", "--grid", "1.0,1.2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 11"));
    assert!(report.contains("\"frame\": \"evaluation\""));
    assert!(report.contains("\"lambda\": 1.2"));
}

#[test]
fn sweep_prints_one_line_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    let o = hieralign(&["sweep", "--config", &cfg, "--out", &s(&out), "--grid", "1.0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
    assert!(out.join("scores/sweep_long.csv").exists());
}

#[test]
fn synth_writes_m5_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = hieralign(&["synth", "--out", &s(dir.path()), "--items", "4", "--stores", "1", "--days", "100"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sales_train.csv", "calendar.csv", "sell_prices.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(hieralign(&["run", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    assert_eq!(
        hieralign(&["run", "--config", &cfg, "--out", &s(dir.path()), "--frame", "test"]).status.code(),
        Some(2)
    );
    assert_eq!(
        hieralign(&["run", "--config", &cfg, "--out", &s(dir.path()), "--grid", "0:1:0"]).status.code(),
        Some(2)
    );
    assert_eq!(hieralign(&["run", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(hieralign(&["report", &s(&dir.path().join("empty"))]).status.code(), Some(3));
    assert_eq!(hieralign(&["bogus"]).status.code(), Some(2));
}
