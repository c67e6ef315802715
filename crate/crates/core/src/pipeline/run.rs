use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, SyntheticSpec};
use super::report::{top_model_rows, ObjectivePoint, RunReport, REPORT_SCHEMA};
use crate::alignment::{expost_sweep, tune_lambda_cached, write_objective_csv, write_sweep_csv, write_sweep_long_csv, Scoring, SweepRow};
use crate::basisnet::{train_ensemble, write_training_log};
use crate::dataio::{generate_synthetic, split_frames, write_m5_dir, PanelDataset};
use crate::error::{Error, Result};
use crate::gbm::{AsymmetricLoss, GbmConfig, StoreCache};
use crate::hierarchy::{aggregate, enumerate_all_series, SeriesMatrix};
use crate::metrics::{dollar_weights, score_hierarchy, WeightTable};
use crate::seed::derive_seed;

/// Wall-clock seconds per stage, kept apart from the reproducible report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: BTreeMap<String, f64>,
}

struct Stopwatch {
    timings: Timings,
}

impl Stopwatch {
    fn stage<R>(&mut self, name: &'static str, f: impl FnOnce() -> Result<R>) -> Result<R> {
        log::info!("stage {name}: start");
        let t = Instant::now();
        let r = f().map_err(|e| e.at_stage(name))?;
        let secs = t.elapsed().as_secs_f64();
        log::info!("stage {name}: done in {secs:.2}s");
        self.timings.stages.insert(name.to_string(), secs);
        Ok(r)
    }
}

/// Writes a matrix as `series_id,d_<day>,...`.
pub fn write_matrix_csv(path: &Path, m: &SeriesMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["series_id".to_string()];
    header.extend(m.time_index().iter().map(|d| format!("d_{d}")));
    w.write_record(&header)?;
    for (id, row) in m.series_ids().iter().zip(m.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<SeriesMatrix<f64>> {
    let file = path.display().to_string();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let days: Vec<u32> = header
        .iter()
        .skip(1)
        .map(|h| {
            h.strip_prefix("d_")
                .and_then(|d| d.parse().ok())
                .ok_or_else(|| Error::Parse {
                    file: file.clone(),
                    row: 0,
                    column: h.to_string(),
                    message: "expected d_<day>".into(),
                })
        })
        .collect::<Result<_>>()?;
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .zip(header.iter().skip(1))
            .map(|(v, h)| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    file: file.clone(),
                    row: i + 1,
                    column: h.to_string(),
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    SeriesMatrix::from_rows(rows, days, ids)
}

fn create_dirs(out: &Path) -> Result<()> {
    for d in ["models/basisnet", "models/gbm", "forecasts", "scores"] {
        std::fs::create_dir_all(out.join(d))?;
    }
    Ok(())
}

/// Upper levels `1..=top_levels` of the training sales, stacked.
fn top_history(train: &PanelDataset, top_levels: usize) -> Result<SeriesMatrix<f64>> {
    let levels = top_levels.min(train.hierarchy.num_levels());
    let parts = (1..=levels)
        .map(|l| aggregate(&train.hierarchy, &train.sales, l))
        .collect::<Result<Vec<_>>>()?;
    SeriesMatrix::vstack(&parts)
}

const TOP_FORECAST: &str = "forecasts/top_levels.csv";

/// Trains the top-level ensemble (or reloads its forecast) and returns the
/// forecast for the stacked upper levels.
fn top_stage(config: &PipelineConfig, train: &PanelDataset, out: &Path, reuse: bool) -> Result<SeriesMatrix<f64>> {
    let path = out.join(TOP_FORECAST);
    if reuse && path.exists() {
        log::info!("reusing top-level forecast from {}", path.display());
        return read_matrix_csv(&path);
    }
    let history = top_history(train, config.basisnet.top_levels)?;
    let train_cfg = crate::basisnet::TrainConfig {
        seed: derive_seed(config.seed, "basisnet"),
        ..config.basisnet.train.clone()
    };
    let ensemble = train_ensemble(
        &history,
        train.horizon,
        &config.basisnet.net,
        &train_cfg,
        &config.basisnet.ensemble,
    )?;
    for m in &ensemble.members {
        std::fs::write(out.join(format!("models/basisnet/{}.json", m.label())), m.net.to_json()?)?;
        write_training_log(&out.join(format!("models/basisnet/{}_log.csv", m.label())), &m.log)?;
    }
    let forecast = ensemble.forecast_matrix(&history)?.map(|v| v.max(0.0));
    write_matrix_csv(&path, &forecast)?;
    Ok(forecast)
}

fn gbm_config(config: &PipelineConfig) -> GbmConfig {
    GbmConfig {
        seed: derive_seed(config.seed, "gbm"),
        ..config.gbm.clone()
    }
}

/// Row of the aligned level's single node inside the stacked top forecast.
fn aligned_row(config: &PipelineConfig, train: &PanelDataset, top: &SeriesMatrix<f64>) -> Result<Vec<f64>> {
    let level = config.alignment.level;
    let spec = &train.hierarchy;
    if level > config.basisnet.top_levels.min(spec.num_levels()) {
        return Err(Error::Config(format!("alignment level {level} is not forecast by the top model")));
    }
    let lvl = spec.level(level)?;
    if lvl.nodes.len() != 1 {
        return Err(Error::Config(format!("alignment level {level} has {} nodes; need one", lvl.nodes.len())));
    }
    let offset: usize = spec.levels()[..level - 1].iter().map(|l| l.nodes.len()).sum();
    Ok(top.row(offset).to_vec())
}

struct Prepared {
    train: PanelDataset,
    actual: SeriesMatrix<f64>,
    weights: WeightTable,
}

fn prepare(config: &PipelineConfig, sw: &mut Stopwatch) -> Result<Prepared> {
    let (train, actual) = sw.stage("ingest", || {
        let ds = config.dataset()?;
        split_frames(&ds, config.frame)
    })?;
    let weights = sw.stage("weights", || dollar_weights(&train, &train.hierarchy, config.weight_window))?;
    Ok(Prepared { train, actual, weights })
}

/// Full pipeline: ingest, features, top model, λ search, neighborhood
/// ensemble, scoring and report. Artifacts land in the output directory.
pub fn cmd_run(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let out = config.output_dir()?.to_path_buf();
    create_dirs(&out)?;
    std::fs::write(out.join("config.toml"), config.to_toml()?)?;
    let mut sw = Stopwatch {
        timings: Timings::default(),
    };
    let Prepared { train, actual, weights } = prepare(config, &mut sw)?;
    let gbm = gbm_config(config);
    let cache = sw.stage("features", || StoreCache::build(&train, &gbm))?;
    let top = sw.stage("train_top", || top_stage(config, &train, &out, config.resume))?;
    let top_row = aligned_row(config, &train, &top)?;
    let result = sw.stage("tune_lambda", || {
        let r = tune_lambda_cached(
            &cache,
            &train.hierarchy,
            &top_row,
            &config.alignment.grid,
            &gbm,
            &config.alignment.align_config(),
        )?;
        write_objective_csv(&out.join("scores/alignment.csv"), &r)?;
        Ok(r)
    })?;
    let bottom = sw.stage("ensemble", || {
        let loss = AsymmetricLoss::new(result.lambda_star)?;
        for (store, m) in cache.train(&loss, &gbm)? {
            m.save(&out.join(format!("models/gbm/{store}.json")))?;
        }
        let bottom = result
            .ensemble_forecast
            .clone()
            .ok_or_else(|| Error::Training("no neighborhood forecast".into()))?;
        write_matrix_csv(&out.join("forecasts/bottom.csv"), &bottom)?;
        Ok(bottom)
    })?;
    let score = sw.stage("evaluate", || {
        let all = enumerate_all_series(&train.hierarchy, &bottom)?;
        write_matrix_csv(&out.join("forecasts/all_levels.csv"), &all)?;
        let rep = score_hierarchy(
            &train.hierarchy,
            &train.sales,
            &actual,
            &bottom,
            &weights,
            config.report.scale_convention,
            config.report.detail_levels,
        )?;
        rep.write_csv(&out.join("scores/series.csv"))?;
        std::fs::write(out.join("scores/levels.json"), rep.summary_json()?)?;
        Ok(rep)
    })?;
    let report = sw.stage("report", || {
        let top_rows = top_model_rows(config, &train, &actual, &top)?;
        let mut echo = config.clone();
        echo.out = None;
        echo.resume = false;
        let report = RunReport {
            schema_version: REPORT_SCHEMA,
            frame: config.frame,
            seed: config.seed,
            train_days: train.train_end,
            horizon_days: train.horizon_days(),
            lambda_star: result.lambda_star,
            neighborhood: result.neighborhood.clone(),
            alignment: result
                .grid
                .iter()
                .zip(&result.objective)
                .map(|(&lambda, &alignment_rmse)| ObjectivePoint { lambda, alignment_rmse })
                .collect(),
            wrmsse: score.wrmsse,
            excluded_series: score.excluded,
            levels: score.levels.clone(),
            top_model: top_rows,
            config: echo,
        };
        report.save(&out)?;
        Ok(report)
    })?;
    std::fs::write(out.join("timings.json"), serde_json::to_string_pretty(&sw.timings)?)?;
    Ok(report)
}

/// Ex-post λ sweep against held-out actuals; writes the wide and long CSVs.
pub fn cmd_sweep(config: &PipelineConfig, grid: Option<&[f64]>) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let out = config.output_dir()?.to_path_buf();
    create_dirs(&out)?;
    let mut sw = Stopwatch {
        timings: Timings::default(),
    };
    let Prepared { train, actual, weights } = prepare(config, &mut sw)?;
    let gbm = gbm_config(config);
    let cache = sw.stage("features", || StoreCache::build(&train, &gbm))?;
    let top = sw.stage("train_top", || top_stage(config, &train, &out, true))?;
    let top_row = aligned_row(config, &train, &top)?;
    let grid = grid.unwrap_or(&config.alignment.grid);
    let rows = sw.stage("sweep", || {
        let scoring = Scoring {
            spec: &train.hierarchy,
            history: &train.sales,
            actual: &actual,
            weights: &weights,
            convention: config.report.scale_convention,
        };
        expost_sweep(&cache, &scoring, Some(&top_row), grid, &gbm)
    })?;
    write_sweep_csv(&out.join("scores/sweep.csv"), &rows)?;
    write_sweep_long_csv(&out.join("scores/sweep_long.csv"), &rows)?;
    std::fs::write(out.join("sweep_timings.json"), serde_json::to_string_pretty(&sw.timings)?)?;
    Ok(rows)
}

/// Writes a synthetic panel as M5-format CSV files.
pub fn cmd_synth(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<PathBuf> {
    let ds = generate_synthetic(seed, spec.items, spec.stores, spec.days, spec.intermittency)?;
    std::fs::create_dir_all(out)?;
    write_m5_dir(&ds, out)?;
    Ok(out.to_path_buf())
}
