use std::path::Path;

use hieralign::pipeline::{
    cmd_report, cmd_run, cmd_sweep, cmd_synth, read_matrix_csv, DataPaths, PipelineConfig, RunReport, SyntheticSpec,
};
use hieralign::Error;

fn tiny(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::from_toml(
        r#"
seed = 5
[synthetic]
items = 8
stores = 2
days = 200
[gbm]
num_rounds = 15
[basisnet.net]
stacks = 1
layers = 1
width = 8
[basisnet.train]
epochs = 1
batches_per_epoch = 20
batch_size = 4
[basisnet.ensemble]
context_multiples = [2]
bagging_size = 2
[alignment]
grid = [0.8, 0.9, 1.0, 1.1, 1.2]
"#,
    )
    .unwrap();
    c.out = Some(out.to_path_buf());
    c
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn runs_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_run(&tiny(a.path())).unwrap();
    let rb = cmd_run(&tiny(b.path())).unwrap();
    assert_eq!(ra, rb);
    for f in [
        "report.json",
        "forecasts/bottom.csv",
        "forecasts/top_levels.csv",
        "forecasts/all_levels.csv",
        "scores/series.csv",
        "scores/levels.json",
        "scores/alignment.csv",
        "models/gbm/CA_1.json",
        "models/basisnet/ctx2_bag1.json",
    ] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    assert!(a.path().join("timings.json").exists());
    assert_eq!(ra.alignment.len(), 5);
    assert_eq!(ra.levels.len(), 12);
    assert!(ra.neighborhood.contains(&ra.lambda_star));
    assert_eq!(RunReport::load(a.path()).unwrap(), ra);
}

#[test]
fn resuming_from_the_top_forecast_matches_a_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = cmd_run(&tiny(dir.path())).unwrap();
    let bottom = read(&dir.path().join("forecasts/bottom.csv"));
    let report = read(&dir.path().join("report.json"));
    std::fs::remove_dir_all(dir.path().join("models")).unwrap();
    let mut c = tiny(dir.path());
    c.resume = true;
    let resumed = cmd_run(&c).unwrap();
    assert!(!dir.path().join("models/basisnet/ctx2_bag0.json").exists());
    assert_eq!(read(&dir.path().join("forecasts/bottom.csv")), bottom);
    assert_eq!(read(&dir.path().join("report.json")), report);
    assert_eq!(resumed, fresh);
}

#[test]
fn top_forecast_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    cmd_run(&tiny(dir.path())).unwrap();
    let m = read_matrix_csv(&dir.path().join("forecasts/top_levels.csv")).unwrap();
    let path = dir.path().join("copy.csv");
    hieralign::pipeline::write_matrix_csv(&path, &m).unwrap();
    assert_eq!(read(&path), read(&dir.path().join("forecasts/top_levels.csv")));
    assert!(m.values().iter().all(|v| *v >= 0.0));
}

#[test]
fn report_renders_and_compares() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = cmd_run(&tiny(a.path())).unwrap();
    let mut cb = tiny(b.path());
    cb.basisnet.train.epochs = 2;
    cmd_run(&cb).unwrap();
    let text = cmd_report(a.path(), &[]).unwrap();
    assert!(text.contains("| Hierarchy | Category |"));
    assert!(text.contains(&format!("{:.4}", ra.wrmsse)));
    assert!(a.path().join("report.md").exists());
    let both = cmd_report(a.path(), &[b.path().to_path_buf()]).unwrap();
    let header = both.lines().find(|l| l.starts_with("| Hierarchy")).unwrap();
    assert_eq!(header.matches("RMSSE").count(), 2);
    assert!(both.contains("| epochs | 1 | 2 |"));
}

#[test]
fn report_on_an_empty_directory_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    match cmd_report(dir.path(), &[]) {
        Err(Error::MissingArtifacts { files, .. }) => assert!(files.contains(&"report.json".to_string())),
        other => panic!("expected missing artifacts, got {other:?}"),
    }
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_sweep(&tiny(dir.path()), Some(&[1.0])).unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].alignment_rmse.is_some());
    let text = std::fs::read_to_string(dir.path().join("scores/sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn synthesized_files_load_back_as_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = SyntheticSpec {
        items: 6,
        stores: 1,
        days: 150,
        intermittency: 0.5,
    };
    cmd_synth(&spec, 3, &data).unwrap();
    let mut c = tiny(&dir.path().join("run"));
    c.synthetic = None;
    c.data = Some(DataPaths {
        dir: Some(data.clone()),
        ..DataPaths::default()
    });
    let r = cmd_run(&c).unwrap();
    assert_eq!(r.horizon_days.len(), 28);
    assert_eq!(r.train_days, 150 - 28 - 28);
}

#[test]
fn configuration_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.synthetic = None;
    let e = cmd_run(&c).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    c.data = Some(DataPaths {
        dir: Some(dir.path().join("nowhere")),
        ..DataPaths::default()
    });
    assert_eq!(cmd_run(&c).unwrap_err().exit_code(), 2);
    let mut bad = tiny(dir.path());
    bad.alignment.level = 3;
    let e = cmd_run(&bad).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
}

#[test]
fn too_short_synthetic_panels_are_rejected_up_front() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path());
    c.synthetic = Some(SyntheticSpec {
        days: 50,
        ..SyntheticSpec::default()
    });
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn malformed_sales_files_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&SyntheticSpec::default(), 1, &data).unwrap();
    let sales = data.join("sales_train.csv");
    let text = std::fs::read_to_string(&sales).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[1] = format!("{},oops", lines[1].rsplit_once(',').unwrap().0);
    std::fs::write(&sales, lines.join("\n")).unwrap();
    let mut c = tiny(&dir.path().join("run"));
    c.synthetic = None;
    c.data = Some(DataPaths {
        dir: Some(data),
        ..DataPaths::default()
    });
    let e = cmd_run(&c).unwrap_err();
    assert!(matches!(e, Error::Stage { stage: "ingest", .. }), "{e}");
    assert_eq!(e.exit_code(), 3);
}
