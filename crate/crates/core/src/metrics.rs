//! Scaled and unscaled forecast error metrics.
//!
//! Sign convention: errors are `forecast - actual`, so over-forecasting is
//! positive.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::PanelDataset;
use crate::error::{Error, Result};
use crate::hierarchy::{enumerate_all_series, HierarchySpec, SeriesMatrix, SeriesRef};
use crate::Scalar;

/// Which part of the training history scales RMSSE/MASE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleConvention {
    /// Every training day.
    Full,
    /// Days from the first non-zero observation onward.
    #[default]
    FromFirstNonZero,
}

fn check_lengths<T>(actual: &[T], forecast: &[T]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(Error::Dimension(format!(
            "actual has {} values, forecast {}",
            actual.len(),
            forecast.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Dimension("empty horizon".into()));
    }
    Ok(())
}

fn scaled_history<T: Scalar>(train: &[T], convention: ScaleConvention) -> &[T] {
    match convention {
        ScaleConvention::Full => train,
        ScaleConvention::FromFirstNonZero => {
            let first = train.iter().position(|v| !v.is_zero()).unwrap_or(train.len());
            &train[first..]
        }
    }
}

/// Mean squared one-step naive error over the history.
fn naive_mse<T: Scalar>(history: &[T]) -> Result<T> {
    if history.len() < 2 {
        return Err(Error::UndefinedScale);
    }
    let sum: T = history.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    let denom = sum / T::of((history.len() - 1) as f64);
    if denom <= T::zero() {
        return Err(Error::UndefinedScale);
    }
    Ok(denom)
}

/// Root mean squared scaled error over the whole training history.
pub fn rmsse<T: Scalar>(train: &[T], actual: &[T], forecast: &[T]) -> Result<T> {
    rmsse_with(train, actual, forecast, ScaleConvention::Full)
}

pub fn rmsse_with<T: Scalar>(train: &[T], actual: &[T], forecast: &[T], convention: ScaleConvention) -> Result<T> {
    check_lengths(actual, forecast)?;
    let scale = naive_mse(scaled_history(train, convention))?;
    let h = T::of(actual.len() as f64);
    let mse: T = actual
        .iter()
        .zip(forecast)
        .map(|(&a, &f)| (a - f) * (a - f))
        .sum::<T>()
        / h;
    Ok((mse / scale).sqrt())
}

/// Mean absolute scaled error with one-step naive scaling.
pub fn mase<T: Scalar>(train: &[T], actual: &[T], forecast: &[T], convention: ScaleConvention) -> Result<T> {
    check_lengths(actual, forecast)?;
    let history = scaled_history(train, convention);
    if history.len() < 2 {
        return Err(Error::UndefinedScale);
    }
    let scale = history.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<T>() / T::of((history.len() - 1) as f64);
    if scale <= T::zero() {
        return Err(Error::UndefinedScale);
    }
    let mae = actual.iter().zip(forecast).map(|(&a, &f)| (a - f).abs()).sum::<T>() / T::of(actual.len() as f64);
    Ok(mae / scale)
}

/// Unscaled accuracy figures for one series.
///
/// `mae` doubles as the MASE numerator; `mape` skips zero actuals and is
/// `None` when every actual is zero; `smape` counts 0 when actual and
/// forecast are both zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportMetrics<T> {
    pub mean_error: T,
    pub mae: T,
    pub rmse: T,
    pub smape: T,
    pub mape: Option<T>,
}

pub fn report_metrics<T: Scalar>(actual: &[T], forecast: &[T]) -> Result<ReportMetrics<T>> {
    check_lengths(actual, forecast)?;
    let h = T::of(actual.len() as f64);
    let hundred = T::of(100.0);
    let mut me = T::zero();
    let mut ae = T::zero();
    let mut se = T::zero();
    let mut sm = T::zero();
    let mut pe = T::zero();
    let mut nonzero = 0usize;
    for (&a, &f) in actual.iter().zip(forecast) {
        let e = f - a;
        me += e;
        ae += e.abs();
        se += e * e;
        let denom = a.abs() + f.abs();
        if denom > T::zero() {
            sm += T::of(2.0) * e.abs() / denom;
        }
        if !a.is_zero() {
            pe += (e / a).abs();
            nonzero += 1;
        }
    }
    Ok(ReportMetrics {
        mean_error: me / h,
        mae: ae / h,
        rmse: (se / h).sqrt(),
        smape: hundred * sm / h,
        mape: (nonzero > 0).then(|| hundred * pe / T::of(nonzero as f64)),
    })
}

/// Per-series weights across every hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub series: Vec<SeriesRef>,
    pub weights: Vec<f64>,
    pub num_levels: usize,
}

impl WeightTable {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn level_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_levels];
        for (s, w) in self.series.iter().zip(&self.weights) {
            sums[s.level - 1] += w;
        }
        sums
    }

    pub fn get(&self, series: &SeriesRef) -> Option<f64> {
        self.series.iter().position(|s| s == series).map(|i| self.weights[i])
    }
}

/// Dollar-sales weights from the last `window_days` training days.
///
/// Each level is normalized to `1/L`; a level with no dollar sales gets
/// uniform weights.
pub fn dollar_weights(ds: &PanelDataset, spec: &HierarchySpec, window_days: usize) -> Result<WeightTable> {
    let n = ds.sales.n_times();
    if window_days == 0 || window_days > n {
        return Err(Error::InvalidArgument(format!(
            "weight window of {window_days} days for {n} training days"
        )));
    }
    let start = n - window_days;
    let mut dollars = Vec::with_capacity(ds.num_series() * window_days);
    for s in 0..ds.num_series() {
        for t in start..n {
            let units = ds.sales.get(s, t);
            let price = ds.price_on(s, (t + 1) as u32).unwrap_or(0.0);
            dollars.push(if units == 0.0 { 0.0 } else { units * price });
        }
    }
    let per_day = SeriesMatrix::new(
        dollars,
        ((start + 1) as u32..=n as u32).collect(),
        ds.sales.series_ids().to_vec(),
    )?;
    let all = enumerate_all_series(spec, &per_day)?;
    let totals: Vec<f64> = all.rows().map(|r| r.iter().sum()).collect();
    weights_from_totals(spec, &totals)
}

/// Normalizes per-series totals (stacking order) to equal level shares.
pub fn weights_from_totals(spec: &HierarchySpec, totals: &[f64]) -> Result<WeightTable> {
    let series = spec.series_refs();
    if totals.len() != series.len() {
        return Err(Error::Dimension(format!(
            "{} totals for {} series",
            totals.len(),
            series.len()
        )));
    }
    let levels = spec.num_levels();
    let share = 1.0 / levels as f64;
    let mut weights = Vec::with_capacity(totals.len());
    let mut offset = 0;
    for level in spec.levels() {
        let count = level.nodes.len();
        let chunk = &totals[offset..offset + count];
        let sum: f64 = chunk.iter().sum();
        if sum > 0.0 {
            weights.extend(chunk.iter().map(|v| share * v / sum));
        } else {
            log::warn!("level {} has no dollar sales; using uniform weights", level.spec.level);
            weights.extend(std::iter::repeat_n(share / count as f64, count));
        }
        offset += count;
    }
    Ok(WeightTable {
        series,
        weights,
        num_levels: levels,
    })
}

/// Weighted sum of per-series RMSSE, summed in weight-table order.
pub fn wrmsse(scores: &[(SeriesRef, f64)], weights: &WeightTable) -> Result<f64> {
    let lookup: HashMap<&SeriesRef, f64> = scores.iter().map(|(s, v)| (s, *v)).collect();
    let score_set: BTreeSet<&SeriesRef> = lookup.keys().copied().collect();
    let weight_set: BTreeSet<&SeriesRef> = weights.series.iter().collect();
    if score_set != weight_set || lookup.len() != scores.len() {
        let diff = score_set
            .symmetric_difference(&weight_set)
            .map(|s| s.to_string())
            .collect::<Vec<_>>();
        return Err(Error::SeriesMismatch(diff));
    }
    Ok(weights
        .series
        .iter()
        .zip(&weights.weights)
        .map(|(s, w)| w * lookup[s])
        .sum())
}

/// One row of the per-series score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScore {
    pub series_id: String,
    pub level: usize,
    /// `None` when the training history has no usable scale.
    pub rmsse: Option<f64>,
    pub mean_error: f64,
    pub mae: f64,
    pub rmse: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: String,
    pub rmsse: Option<f64>,
    pub mean_error: f64,
    pub mae: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub label: String,
    pub series: usize,
    /// `L × Σ ω_i RMSSE_i` over the level.
    pub wrmsse: f64,
    pub mean_rmsse: Option<f64>,
    pub mean_abs_error: f64,
    /// Per-node rows; filled for the levels selected for detail.
    pub nodes: Vec<NodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<SeriesScore>,
    pub wrmsse: f64,
    pub levels: Vec<LevelSummary>,
    /// Series dropped from WRMSSE for lack of a scale.
    pub excluded: usize,
}

/// Scores every series of the hierarchy.
///
/// `history` are the bottom training sales, `actual`/`forecast` bottom
/// matrices over the horizon. Series with undefined scale are left out of
/// WRMSSE (their weight is not redistributed).
pub fn score_hierarchy(
    spec: &HierarchySpec,
    history: &SeriesMatrix<f64>,
    actual: &SeriesMatrix<f64>,
    forecast: &SeriesMatrix<f64>,
    weights: &WeightTable,
    convention: ScaleConvention,
    detail_levels: usize,
) -> Result<ScoreReport> {
    if actual.n_times() != forecast.n_times() {
        return Err(Error::Dimension("actual and forecast horizons differ".into()));
    }
    let hist_all = enumerate_all_series(spec, history)?;
    let act_all = enumerate_all_series(spec, actual)?;
    let fc_all = enumerate_all_series(spec, forecast)?;
    let refs = spec.series_refs();
    if weights.series != refs {
        let a: BTreeSet<String> = weights.series.iter().map(|s| s.to_string()).collect();
        let b: BTreeSet<String> = refs.iter().map(|s| s.to_string()).collect();
        return Err(Error::SeriesMismatch(a.symmetric_difference(&b).cloned().collect()));
    }
    let mut scores = Vec::with_capacity(refs.len());
    let mut scored = Vec::new();
    let mut kept_refs = Vec::new();
    let mut kept_weights = Vec::new();
    for (i, r) in refs.iter().enumerate() {
        let m = report_metrics(act_all.row(i), fc_all.row(i))?;
        let rmsse = match rmsse_with(hist_all.row(i), act_all.row(i), fc_all.row(i), convention) {
            Ok(v) => Some(v),
            Err(Error::UndefinedScale) => None,
            Err(e) => return Err(e),
        };
        if let Some(v) = rmsse {
            scored.push((r.clone(), v));
            kept_refs.push(r.clone());
            kept_weights.push(weights.weights[i]);
        }
        scores.push(SeriesScore {
            series_id: r.id.clone(),
            level: r.level,
            rmsse,
            mean_error: m.mean_error,
            mae: m.mae,
            rmse: m.rmse,
            weight: weights.weights[i],
        });
    }
    let kept = WeightTable {
        series: kept_refs,
        weights: kept_weights,
        num_levels: weights.num_levels,
    };
    let total = wrmsse(&scored, &kept)?;
    let l = spec.num_levels() as f64;
    let mut levels = Vec::new();
    let mut offset = 0;
    for level in spec.levels() {
        let rows = &scores[offset..offset + level.nodes.len()];
        offset += level.nodes.len();
        let rmsses: Vec<f64> = rows.iter().filter_map(|s| s.rmsse).collect();
        levels.push(LevelSummary {
            level: level.spec.level,
            label: level.spec.label.clone(),
            series: rows.len(),
            wrmsse: l * rows.iter().map(|s| s.weight * s.rmsse.unwrap_or(0.0)).sum::<f64>(),
            mean_rmsse: (!rmsses.is_empty()).then(|| rmsses.iter().sum::<f64>() / rmsses.len() as f64),
            mean_abs_error: rows.iter().map(|s| s.mae).sum::<f64>() / rows.len() as f64,
            nodes: if level.spec.level <= detail_levels {
                rows.iter()
                    .map(|s| NodeSummary {
                        id: s.series_id.clone(),
                        rmsse: s.rmsse,
                        mean_error: s.mean_error,
                        mae: s.mae,
                        rmse: s.rmse,
                    })
                    .collect()
            } else {
                Vec::new()
            },
        });
    }
    Ok(ScoreReport {
        excluded: scores.len() - scored.len(),
        scores,
        wrmsse: total,
        levels,
    })
}

impl ScoreReport {
    /// `series_id,level,rmsse,mean_error,mae,rmse,weight`; undefined RMSSE is empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["series_id", "level", "rmsse", "mean_error", "mae", "rmse", "weight"])?;
        for s in &self.scores {
            w.write_record([
                s.series_id.clone(),
                s.level.to_string(),
                s.rmsse.map(|v| v.to_string()).unwrap_or_default(),
                s.mean_error.to_string(),
                s.mae.to_string(),
                s.rmse.to_string(),
                s.weight.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-level summary document (no per-series rows).
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            version: u32,
            wrmsse: f64,
            excluded: usize,
            levels: &'a [LevelSummary],
        }
        Ok(serde_json::to_string_pretty(&Summary {
            version: 1,
            wrmsse: self.wrmsse,
            excluded: self.excluded,
            levels: &self.levels,
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::BottomKey;

    #[test]
    fn perfect_forecast_scores_zero() {
        let train = [1.0, 3.0, 2.0, 5.0];
        assert_eq!(rmsse(&train, &[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        let m = report_metrics(&[1.0, 0.0, 4.0], &[1.0, 0.0, 4.0]).unwrap();
        assert_eq!((m.mean_error, m.mae, m.rmse, m.smape), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(m.mape, Some(0.0));
    }

    #[test]
    fn hand_computed_rmsse() {
        // Naive MSE: five squared diffs of 4 over n-1 = 5 → 4; horizon MSE (4+0)/2 = 2.
        let v = rmsse(&[0.0, 2.0, 0.0, 2.0, 0.0, 2.0], &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
        let v32: f32 = rmsse(&[0.0f32, 2.0, 0.0, 2.0, 0.0, 2.0], &[2.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v32 - 0.707_106_77).abs() < 1e-6);
    }

    #[test]
    fn constant_history_has_no_scale() {
        assert!(matches!(rmsse(&[3.0, 3.0, 3.0], &[1.0], &[1.0]), Err(Error::UndefinedScale)));
        assert!(matches!(rmsse(&[3.0], &[1.0], &[1.0]), Err(Error::UndefinedScale)));
        assert!(rmsse(&[1.0, 2.0], &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn leading_zeros_are_skipped_by_default_convention() {
        let train = [0.0, 0.0, 0.0, 1.0, 3.0];
        let full = rmsse_with(&train, &[1.0], &[0.0], ScaleConvention::Full).unwrap();
        let trimmed = rmsse_with(&train, &[1.0], &[0.0], ScaleConvention::FromFirstNonZero).unwrap();
        // Full: diffs 0,0,1,2 → 5/4; trimmed: diff 2 → 4/1.
        assert!((full - (1.0f64 / 1.25).sqrt()).abs() < 1e-12);
        assert!((trimmed - 0.5).abs() < 1e-12);
    }

    #[test]
    fn report_metric_fixtures() {
        let m = report_metrics(&[1.0, 3.0], &[2.0, 2.0]).unwrap();
        assert_eq!((m.mean_error, m.mae, m.rmse), (0.0, 1.0, 1.0));
        let m = report_metrics(&[1.0, 5.0, 0.0], &[2.0, 6.0, 1.0]).unwrap();
        assert_eq!(m.mean_error, 1.0);
        let m = report_metrics(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(m.smape, 0.0);
        assert_eq!(m.mape, None);
        let m = report_metrics(&[0.0, 2.0], &[1.0, 2.0]).unwrap();
        // |1-0|·2/(0+1) = 2 → 100 · 2/2 = 100.
        assert_eq!(m.smape, 100.0);
    }

    #[test]
    fn mase_uses_one_step_naive_scale() {
        let v: f64 = mase(&[1.0, 2.0, 4.0], &[4.0, 4.0], &[5.0, 6.0], ScaleConvention::Full).unwrap();
        assert!((v - 1.5 / 1.5).abs() < 1e-12);
    }

    fn two_level_spec() -> HierarchySpec {
        HierarchySpec::from_groupings(
            vec![BottomKey::new("a", "s"), BottomKey::new("b", "s")],
            &["id"],
            &[vec!["a".into()], vec!["b".into()]],
            &[("Total", &[]), ("Bottom", &["id"])],
        )
        .unwrap()
    }

    #[test]
    fn dollar_weight_normalization() {
        let spec = two_level_spec();
        // Stacking order: total, a, b.
        let w = weights_from_totals(&spec, &[400.0, 300.0, 100.0]).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.375, 0.125]);
        let w = weights_from_totals(&spec, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.25, 0.25]);
        assert!((w.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrmsse_dot_product_and_mismatch() {
        let refs: Vec<SeriesRef> = (0..3)
            .map(|i| SeriesRef {
                level: 1,
                id: format!("s{i}"),
            })
            .collect();
        let w = WeightTable {
            series: refs.clone(),
            weights: vec![0.5, 0.25, 0.25],
            num_levels: 1,
        };
        let scores: Vec<(SeriesRef, f64)> = refs.iter().cloned().zip([0.4, 0.8, 1.2]).collect();
        assert!((wrmsse(&scores, &w).unwrap() - 0.7).abs() < 1e-12);
        let ones: Vec<_> = refs.iter().cloned().map(|r| (r, 1.0)).collect();
        assert!((wrmsse(&ones, &w).unwrap() - 1.0).abs() < 1e-12);
        let missing = &scores[..2];
        match wrmsse(missing, &w) {
            Err(Error::SeriesMismatch(d)) => assert_eq!(d, vec!["L1:s2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_weights_sum_per_level() {
        let ds = crate::dataio::generate_synthetic(4, 9, 3, 120, 0.5).unwrap();
        let w = dollar_weights(&ds, &ds.hierarchy, 28).unwrap();
        assert!((w.total() - 1.0).abs() < 1e-9);
        for s in w.level_sums() {
            assert!((s - 1.0 / 12.0).abs() < 1e-9);
        }
        assert!(dollar_weights(&ds, &ds.hierarchy, 500).is_err());
    }
}
