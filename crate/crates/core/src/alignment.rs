//! Loss-multiplier search that aligns aggregated bottom forecasts with an
//! independent top-level forecast.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::PanelDataset;
use crate::error::{Error, Result};
use crate::gbm::{AsymmetricLoss, GbmConfig, StoreCache};
use crate::hierarchy::{aggregate, aggregate_mean, HierarchySpec, SeriesMatrix};
use crate::metrics::{score_hierarchy, ScaleConvention, WeightTable};
use crate::Scalar;

/// How bottom forecasts are combined into the aligned level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// Root mean squared gap between the top forecast and the aggregated bottom
/// forecast over the horizon, using the level-1 sum.
pub fn alignment_objective<T: Scalar>(top: &[T], bottom: &SeriesMatrix<T>, spec: &HierarchySpec) -> Result<T> {
    alignment_objective_at(top, bottom, spec, 1, Aggregation::Sum)
}

/// Alignment objective against one node series at `level`.
pub fn alignment_objective_at<T: Scalar>(
    top: &[T],
    bottom: &SeriesMatrix<T>,
    spec: &HierarchySpec,
    level: usize,
    agg: Aggregation,
) -> Result<T> {
    if top.len() != bottom.n_times() {
        return Err(Error::Dimension(format!(
            "top forecast covers {} steps, bottom forecasts {}",
            top.len(),
            bottom.n_times()
        )));
    }
    if top.is_empty() {
        return Err(Error::Dimension("empty horizon".into()));
    }
    let agg = match agg {
        Aggregation::Sum => aggregate(spec, bottom, level)?,
        Aggregation::Mean => aggregate_mean(spec, bottom, level)?,
    };
    if agg.n_series() != 1 {
        return Err(Error::InvalidArgument(format!(
            "level {level} has {} nodes; alignment needs a single series",
            agg.n_series()
        )));
    }
    let sq = top
        .iter()
        .zip(agg.row(0))
        .fold(T::zero(), |acc, (t, b)| acc + (*t - *b) * (*t - *b));
    Ok((sq / T::of(top.len() as f64)).sqrt())
}

/// `step, 2·step, …` up to `hi` inclusive, with decimal-exact values.
pub fn grid(step_denominator: u32, lo_units: u32, hi_units: u32) -> Vec<f64> {
    (lo_units..=hi_units)
        .map(|k| k as f64 / step_denominator as f64)
        .collect()
}

/// The 0.05-step grid over (0, 2].
pub fn default_grid() -> Vec<f64> {
    grid(20, 1, 40)
}

/// 0.01-step points within one coarse step (0.05) of `center`, inside (0, 2].
pub fn refine_grid(center: f64) -> Vec<f64> {
    let c = (center * 100.0).round() as i64;
    ((c - 4).max(1)..=(c + 4).min(200))
        .map(|k| k as f64 / 100.0)
        .collect()
}

/// Parses `start:stop:step` or a comma-separated list of values.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::Config(format!("invalid grid `{text}`: {m}"));
    let values: Vec<f64> = if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad("expected start:stop:step".into()));
        };
        if !(step > 0.0) || stop < start {
            return Err(bad("step must be positive and stop ≥ start".into()));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<Result<_>>()?
    };
    validate_grid(&values)?;
    Ok(values)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("λ grid is empty".into()));
    }
    if let Some(l) = grid.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("λ grid values must be positive, got {l}")));
    }
    Ok(())
}

/// Objective values over a λ grid plus the selected multiplier and its neighborhood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Ascending λ values.
    pub grid: Vec<f64>,
    /// `None` where training failed at that λ.
    pub objective: Vec<Option<f64>>,
    pub lambda_star: f64,
    pub neighborhood: Vec<f64>,
    /// Mean of the neighborhood models' bottom forecasts.
    #[serde(skip)]
    pub ensemble_forecast: Option<SeriesMatrix<f64>>,
}

/// Index of the smallest objective; ties go to the λ nearest 1, then the smaller λ.
pub fn argmin_lambda(grid: &[f64], objective: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in objective.iter().enumerate() {
        let Some(v) = o else { continue };
        best = match best {
            None => Some(i),
            Some(b) => {
                let bv = objective[b].expect("best has a value");
                let closer = (grid[i] - 1.0).abs() < (grid[b] - 1.0).abs();
                let same = (grid[i] - 1.0).abs() == (grid[b] - 1.0).abs();
                if *v < bv || (*v == bv && (closer || (same && grid[i] < grid[b]))) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Up to five successful grid points centered on `star` in grid order.
pub fn neighborhood(grid: &[f64], objective: &[Option<f64>], star: usize) -> Vec<f64> {
    let ok: Vec<usize> = (0..grid.len()).filter(|&i| objective[i].is_some()).collect();
    let p = ok.iter().position(|&i| i == star).expect("star is a successful point");
    let lo = p.saturating_sub(2);
    let hi = (p + 2).min(ok.len() - 1);
    ok[lo..=hi].iter().map(|&i| grid[i]).collect()
}

/// Elementwise mean of bottom forecasts.
pub fn mean_forecast(members: &[SeriesMatrix<f64>]) -> Result<SeriesMatrix<f64>> {
    let first = members
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of zero forecasts".into()))?;
    if members
        .iter()
        .any(|m| m.n_series() != first.n_series() || m.n_times() != first.n_times())
    {
        return Err(Error::Dimension("neighborhood forecasts differ in shape".into()));
    }
    let n = members.len() as f64;
    let values: Vec<f64> = (0..first.values().len())
        .map(|i| members.iter().map(|m| m.values()[i]).sum::<f64>() / n)
        .collect();
    SeriesMatrix::new(values, first.time_index().to_vec(), first.series_ids().to_vec())
}

fn forecast_at(cache: &StoreCache, lambda: f64, config: &GbmConfig) -> Result<SeriesMatrix<f64>> {
    let loss = AsymmetricLoss::new(lambda)?;
    cache.train_and_forecast(&loss, config)
}

/// Settings for the λ search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Level aligned against; level 1 unless set otherwise (experimental).
    pub level: usize,
    pub aggregation: Aggregation,
    /// Add a 0.01-step pass around the coarse argmin.
    pub refine: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            level: 1,
            aggregation: Aggregation::Sum,
            refine: false,
        }
    }
}

fn evaluate_grid(
    cache: &StoreCache,
    spec: &HierarchySpec,
    top: &[f64],
    grid: &[f64],
    config: &GbmConfig,
    align: &AlignConfig,
) -> Result<Vec<(Option<f64>, Option<SeriesMatrix<f64>>)>> {
    grid.par_iter()
        .map(|&l| match forecast_at(cache, l, config) {
            Ok(f) => {
                let o = alignment_objective_at(top, &f, spec, align.level, align.aggregation)?;
                Ok((Some(o), Some(f)))
            }
            Err(e @ (Error::Training(_) | Error::InvalidArgument(_))) => {
                log::warn!("training at λ = {l} failed: {e}");
                Ok((None, None))
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// Trains per-store bottom models at each λ on pre-built features and picks
/// the λ whose aggregate best matches `top`.
pub fn tune_lambda_cached(
    cache: &StoreCache,
    spec: &HierarchySpec,
    top: &[f64],
    grid: &[f64],
    config: &GbmConfig,
    align: &AlignConfig,
) -> Result<AlignmentResult> {
    validate_grid(grid)?;
    if top.len() != cache.horizon_days.len() {
        return Err(Error::Dimension(format!(
            "top forecast has {} steps, horizon is {}",
            top.len(),
            cache.horizon_days.len()
        )));
    }
    let mut points: Vec<(f64, Option<f64>, Option<SeriesMatrix<f64>>)> = {
        let mut g = grid.to_vec();
        g.sort_by(f64::total_cmp);
        g.dedup();
        let evals = evaluate_grid(cache, spec, top, &g, config, align)?;
        g.into_iter().zip(evals).map(|(l, (o, f))| (l, o, f)).collect()
    };
    if align.refine {
        let grid_now: Vec<f64> = points.iter().map(|p| p.0).collect();
        let objective: Vec<Option<f64>> = points.iter().map(|p| p.1).collect();
        if let Some(star) = argmin_lambda(&grid_now, &objective) {
            let extra: Vec<f64> = refine_grid(grid_now[star])
                .into_iter()
                .filter(|l| !grid_now.contains(l))
                .collect();
            let evals = evaluate_grid(cache, spec, top, &extra, config, align)?;
            points.extend(extra.into_iter().zip(evals).map(|(l, (o, f))| (l, o, f)));
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    let grid: Vec<f64> = points.iter().map(|p| p.0).collect();
    let objective: Vec<Option<f64>> = points.iter().map(|p| p.1).collect();
    let star = argmin_lambda(&grid, &objective).ok_or_else(|| Error::Training("training failed at every λ".into()))?;
    let neighborhood = neighborhood(&grid, &objective, star);
    let members: Vec<SeriesMatrix<f64>> = points
        .into_iter()
        .filter(|p| neighborhood.contains(&p.0))
        .filter_map(|p| p.2)
        .collect();
    Ok(AlignmentResult {
        lambda_star: grid[star],
        ensemble_forecast: Some(mean_forecast(&members)?),
        grid,
        objective,
        neighborhood,
    })
}

/// Builds the per-store feature cache once and runs the λ search on it.
pub fn tune_lambda(ds: &PanelDataset, top: &[f64], grid: &[f64], config: &GbmConfig) -> Result<AlignmentResult> {
    let cache = StoreCache::build(ds, config)?;
    tune_lambda_cached(&cache, &ds.hierarchy, top, grid, config, &AlignConfig::default())
}

/// Retrains the neighborhood models and averages their bottom forecasts.
pub fn neighborhood_ensemble(result: &AlignmentResult, cache: &StoreCache, config: &GbmConfig) -> Result<SeriesMatrix<f64>> {
    if result.neighborhood.is_empty() {
        return Err(Error::InvalidArgument("empty neighborhood".into()));
    }
    let members = result
        .neighborhood
        .par_iter()
        .map(|&l| forecast_at(cache, l, config))
        .collect::<Result<Vec<_>>>()?;
    mean_forecast(&members)
}

/// One λ of the ex-post sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub alignment_rmse: Option<f64>,
    /// `None` where training failed.
    pub wrmsse_total: Option<f64>,
    pub wrmsse_levels: Vec<f64>,
}

/// Inputs for scoring forecasts against held-out actuals.
pub struct Scoring<'a> {
    pub spec: &'a HierarchySpec,
    pub history: &'a SeriesMatrix<f64>,
    pub actual: &'a SeriesMatrix<f64>,
    pub weights: &'a WeightTable,
    pub convention: ScaleConvention,
}

/// Trains bottom models at every λ and scores them against actuals at every level.
pub fn expost_sweep(
    cache: &StoreCache,
    scoring: &Scoring<'_>,
    top: Option<&[f64]>,
    grid: &[f64],
    config: &GbmConfig,
) -> Result<Vec<SweepRow>> {
    validate_grid(grid)?;
    let mut g = grid.to_vec();
    g.sort_by(f64::total_cmp);
    g.dedup();
    let levels = scoring.spec.num_levels();
    g.par_iter()
        .map(|&l| {
            let f = match forecast_at(cache, l, config) {
                Ok(f) => f,
                Err(e @ (Error::Training(_) | Error::InvalidArgument(_))) => {
                    log::warn!("training at λ = {l} failed: {e}");
                    return Ok(SweepRow {
                        lambda: l,
                        alignment_rmse: None,
                        wrmsse_total: None,
                        wrmsse_levels: vec![f64::NAN; levels],
                    });
                }
                Err(e) => return Err(e),
            };
            let rep = score_hierarchy(
                scoring.spec,
                scoring.history,
                scoring.actual,
                &f,
                scoring.weights,
                scoring.convention,
                0,
            )?;
            let alignment_rmse = top.map(|t| alignment_objective(t, &f, scoring.spec)).transpose()?;
            Ok(SweepRow {
                lambda: l,
                alignment_rmse,
                wrmsse_total: Some(rep.wrmsse),
                wrmsse_levels: rep.levels.iter().map(|v| v.wrmsse).collect(),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `lambda,alignment_rmse,wrmsse_total,wrmsse_level_1..L`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let levels = rows.first().map_or(0, |r| r.wrmsse_levels.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["lambda".to_string(), "alignment_rmse".into(), "wrmsse_total".into()];
    header.extend((1..=levels).map(|l| format!("wrmsse_level_{l}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.lambda.to_string(), opt(r.alignment_rmse), opt(r.wrmsse_total)];
        rec.extend(r.wrmsse_levels.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: `lambda,series,value` with series `alignment_rmse`,
/// `total`, or `level_<n>`.
pub fn write_sweep_long_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "series", "value"])?;
    for r in rows {
        let l = r.lambda.to_string();
        if let Some(a) = r.alignment_rmse {
            w.write_record([l.clone(), "alignment_rmse".into(), a.to_string()])?;
        }
        if let Some(t) = r.wrmsse_total {
            w.write_record([l.clone(), "total".into(), t.to_string()])?;
        }
        for (i, v) in r.wrmsse_levels.iter().enumerate() {
            if !v.is_nan() {
                w.write_record([l.clone(), format!("level_{}", i + 1), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `lambda,alignment_rmse` rows of a tuning result.
pub fn write_objective_csv(path: &Path, result: &AlignmentResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "alignment_rmse"])?;
    for (l, o) in result.grid.iter().zip(&result.objective) {
        w.write_record([l.to_string(), opt(*o)])?;
    }
    w.flush()?;
    Ok(())
}
