use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{BasisNet, NetShape};
use super::optim::{Lookahead, LookaheadConfig, Optimizer, Sgd};
use crate::error::{Error, Result};
use crate::hierarchy::SeriesMatrix;
use crate::seed::derive_seed;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossMetric {
    #[default]
    Smape,
    Mase,
    Mape,
}

impl LossMetric {
    /// Loss of one window and its gradient with respect to the forecast.
    pub fn value_and_grad<T: Scalar>(&self, context: &[T], target: &[T], forecast: &[T]) -> (T, Vec<T>) {
        let h = T::of(target.len() as f64);
        let sign = |x: T| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        };
        let mut loss = T::zero();
        let mut grad = vec![T::zero(); forecast.len()];
        match self {
            LossMetric::Smape => {
                let c = T::of(200.0) / h;
                for t in 0..target.len() {
                    let (y, f) = (target[t], forecast[t]);
                    let d = y.abs() + f.abs();
                    if d == T::zero() {
                        continue;
                    }
                    let e = (y - f).abs();
                    loss += c * e / d;
                    grad[t] = c * (sign(f - y) * d - e * sign(f)) / (d * d);
                }
            }
            LossMetric::Mape => {
                let c = T::of(100.0) / h;
                for t in 0..target.len() {
                    let (y, f) = (target[t], forecast[t]);
                    if y == T::zero() {
                        continue;
                    }
                    loss += c * (y - f).abs() / y.abs();
                    grad[t] = c * sign(f - y) / y.abs();
                }
            }
            LossMetric::Mase => {
                let mut scale = T::zero();
                for w in context.windows(2) {
                    scale += (w[1] - w[0]).abs();
                }
                if context.len() > 1 {
                    scale /= T::of((context.len() - 1) as f64);
                }
                if scale == T::zero() {
                    scale = T::one();
                }
                for t in 0..target.len() {
                    let (y, f) = (target[t], forecast[t]);
                    loss += (y - f).abs() / (scale * h);
                    grad[t] = sign(f - y) / (scale * h);
                }
            }
        }
        (loss, grad)
    }
}

/// Layer sizes shared by every ensemble member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub stacks: usize,
    pub layers: usize,
    pub width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            stacks: 2,
            layers: 4,
            width: 64,
        }
    }
}

impl NetConfig {
    pub fn shape(&self, context_length: usize, horizon: usize) -> NetShape {
        NetShape {
            context_length,
            horizon,
            stacks: self.stacks,
            layers: self.layers,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_metric: LossMetric,
    pub lookahead: LookaheadConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batches_per_epoch: 1000,
            batch_size: 16,
            learning_rate: 0.0006,
            loss_metric: LossMetric::Smape,
            lookahead: LookaheadConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, batches_per_epoch and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.lookahead.k == 0 {
            return Err(Error::Config("lookahead k must be at least 1".into()));
        }
        if !(self.lookahead.alpha > 0.0 && self.lookahead.alpha <= 1.0) {
            return Err(Error::Config(format!("lookahead alpha must lie in (0, 1], got {}", self.lookahead.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

/// Mean absolute value of the context, or 1 when that is zero.
pub fn window_scale<T: Scalar>(context: &[T]) -> T {
    let n = T::of(context.len().max(1) as f64);
    let s = context.iter().fold(T::zero(), |a, x| a + x.abs()) / n;
    if s > T::zero() && s.is_finite() {
        s
    } else {
        T::one()
    }
}

/// A scaled (context, target) training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    pub context: Vec<T>,
    pub target: Vec<T>,
}

impl<T: Scalar> Window<T> {
    pub fn scaled(context: &[T], target: &[T]) -> Self {
        let s = window_scale(context);
        Self {
            context: context.iter().map(|x| *x / s).collect(),
            target: target.iter().map(|x| *x / s).collect(),
        }
    }
}

impl<T: Scalar> BasisNet<T> {
    /// Mean loss over a batch and its parameter gradient.
    pub fn batch_loss_grad(&self, batch: &[Window<T>], metric: LossMetric) -> (T, Vec<T>) {
        let mut grads = vec![T::zero(); self.num_params()];
        let inv = T::one() / T::of(batch.len() as f64);
        let mut total = T::zero();
        for w in batch {
            total += self.forward_backward(
                &w.context,
                |f| {
                    let (l, g) = metric.value_and_grad(&w.context, &w.target, f);
                    (l * inv, g.into_iter().map(|x| x * inv).collect())
                },
                &mut grads,
            );
        }
        (total, grads)
    }

    /// Mean loss over a batch.
    pub fn batch_loss(&self, batch: &[Window<T>], metric: LossMetric) -> T {
        let inv = T::one() / T::of(batch.len() as f64);
        batch.iter().fold(T::zero(), |acc, w| {
            let f = self.forward(&w.context).expect("window matches network");
            acc + metric.value_and_grad(&w.context, &w.target, &f).0 * inv
        })
    }

    /// Forecast from the last `context_length` values of `history`, scaled in
    /// and out by the context mean.
    pub fn predict(&self, history: &[T]) -> Result<Vec<T>> {
        let c = self.shape().context_length;
        if history.len() < c {
            return Err(Error::Dimension(format!("history of {} is shorter than context {c}", history.len())));
        }
        let ctx = &history[history.len() - c..];
        let s = window_scale(ctx);
        let scaled: Vec<T> = ctx.iter().map(|x| *x / s).collect();
        Ok(self.forward(&scaled)?.into_iter().map(|x| x * s).collect())
    }
}

struct Sampler<'a, T> {
    rows: Vec<(&'a [T], usize)>,
    context: usize,
    horizon: usize,
}

impl<'a, T: Scalar> Sampler<'a, T> {
    /// Series are used from their first non-zero value on.
    fn new(series: &'a SeriesMatrix<T>, context: usize, horizon: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, row) in series.rows().enumerate() {
            let first = row.iter().position(|x| *x != T::zero()).unwrap_or(row.len());
            if row.len() - first < context + horizon {
                log::warn!(
                    "series {} has {} usable days, fewer than context {context} + horizon {horizon}; excluded",
                    series.series_ids()[i],
                    row.len() - first
                );
                continue;
            }
            rows.push((row, first));
        }
        if rows.is_empty() {
            return Err(Error::Training(format!(
                "no series is long enough for context {context} + horizon {horizon}"
            )));
        }
        Ok(Self { rows, context, horizon })
    }

    fn sample(&self, rng: &mut impl Rng) -> Window<T> {
        let (row, first) = self.rows[rng.random_range(0..self.rows.len())];
        let last_start = row.len() - self.context - self.horizon;
        let s = rng.random_range(first..=last_start);
        let mid = s + self.context;
        Window::scaled(&row[s..mid], &row[mid..mid + self.horizon])
    }
}

/// Trains one network on random windows drawn uniformly over (series, start).
pub fn train_top<T: Scalar>(
    series: &SeriesMatrix<T>,
    net: &NetConfig,
    context_length: usize,
    horizon: usize,
    config: &TrainConfig,
) -> Result<(BasisNet<T>, Vec<EpochLoss>)> {
    config.validate()?;
    let sampler = Sampler::new(series, context_length, horizon)?;
    let mut model = BasisNet::new(net.shape(context_length, horizon), derive_seed(config.seed, "init"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "windows"));
    let mut opt = Lookahead::new(
        Sgd::new(T::of(config.learning_rate)),
        config.lookahead.k,
        T::of(config.lookahead.alpha),
    );
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut total = 0.0;
        for _ in 0..config.batches_per_epoch {
            let batch: Vec<Window<T>> = (0..config.batch_size).map(|_| sampler.sample(&mut rng)).collect();
            let (loss, grad) = model.batch_loss_grad(&batch, config.loss_metric);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!("non-finite loss or gradient in epoch {epoch}")));
            }
            opt.step(model.params_mut(), &grad);
            total += loss.as_f64();
        }
        log.push(EpochLoss {
            epoch,
            loss: total / config.batches_per_epoch as f64,
        });
    }
    Ok((model, log))
}

pub fn write_training_log(path: &Path, log: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for e in log {
        w.write_record([e.epoch.to_string(), format!("{}", e.loss)])?;
    }
    w.flush()?;
    Ok(())
}

/// Elementwise median; even counts average the two middle values.
pub fn ensemble_forecast<T: Scalar>(forecasts: &[Vec<T>]) -> Result<Vec<T>> {
    let first = forecasts
        .first()
        .ok_or_else(|| Error::InvalidArgument("median of zero forecasts".into()))?;
    if forecasts.iter().any(|f| f.len() != first.len()) {
        return Err(Error::Dimension("member forecasts differ in length".into()));
    }
    let n = forecasts.len();
    Ok((0..first.len())
        .map(|t| {
            let mut col: Vec<T> = forecasts.iter().map(|f| f[t]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) / T::of(2.0)
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Context lengths as multiples of the horizon.
    pub context_multiples: Vec<usize>,
    /// Randomly initialized copies per context length.
    pub bagging_size: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            context_multiples: vec![3, 5, 7],
            bagging_size: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Member<T> {
    pub context_multiple: usize,
    pub bag: usize,
    pub net: BasisNet<T>,
    pub log: Vec<EpochLoss>,
}

impl<T> Member<T> {
    pub fn label(&self) -> String {
        format!("ctx{}_bag{}", self.context_multiple, self.bag)
    }
}

/// Median ensemble over context lengths and bagging copies.
#[derive(Debug, Clone)]
pub struct BasisEnsemble<T> {
    pub members: Vec<Member<T>>,
    pub horizon: usize,
}

impl<T: Scalar> BasisEnsemble<T> {
    /// Members whose context fits inside `history`, combined by median.
    pub fn forecast(&self, history: &[T]) -> Result<Vec<T>> {
        let forecasts: Vec<Vec<T>> = self
            .members
            .iter()
            .filter(|m| m.net.shape().context_length <= history.len())
            .map(|m| m.net.predict(history))
            .collect::<Result<_>>()?;
        if forecasts.is_empty() {
            return Err(Error::Dimension(format!("history of {} fits no ensemble member", history.len())));
        }
        ensemble_forecast(&forecasts)
    }

    /// One forecast row per input series.
    pub fn forecast_matrix(&self, history: &SeriesMatrix<T>) -> Result<SeriesMatrix<T>> {
        let last = history.time_index().last().copied().unwrap_or(0);
        let rows: Vec<Vec<T>> = history.rows().map(|r| self.forecast(r)).collect::<Result<_>>()?;
        let times = (last + 1..=last + self.horizon as u32).collect();
        SeriesMatrix::from_rows(rows, times, history.series_ids().to_vec())
    }
}

/// Trains every (context length, copy) member in parallel. Members whose
/// context no series can fill are skipped with a warning.
pub fn train_ensemble<T: Scalar>(
    series: &SeriesMatrix<T>,
    horizon: usize,
    net: &NetConfig,
    config: &TrainConfig,
    ensemble: &EnsembleConfig,
) -> Result<BasisEnsemble<T>> {
    config.validate()?;
    if ensemble.context_multiples.is_empty() || ensemble.bagging_size == 0 {
        return Err(Error::Config("ensemble needs at least one context length and one copy".into()));
    }
    let jobs: Vec<(usize, usize)> = ensemble
        .context_multiples
        .iter()
        .flat_map(|&m| (0..ensemble.bagging_size).map(move |b| (m, b)))
        .collect();
    let trained: Vec<Result<Option<Member<T>>>> = jobs
        .par_iter()
        .map(|&(m, b)| {
            let cfg = TrainConfig {
                seed: derive_seed(config.seed, &format!("member/{m}/{b}")),
                ..config.clone()
            };
            match train_top(series, net, m * horizon, horizon, &cfg) {
                Ok((net, log)) => Ok(Some(Member {
                    context_multiple: m,
                    bag: b,
                    net,
                    log,
                })),
                Err(Error::Training(msg)) if msg.starts_with("no series") => {
                    log::warn!("ensemble member ctx {m}h copy {b} skipped: {msg}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut members = Vec::new();
    for t in trained {
        if let Some(m) = t? {
            members.push(m);
        }
    }
    if members.is_empty() {
        return Err(Error::Training("every ensemble member was skipped".into()));
    }
    Ok(BasisEnsemble { members, horizon })
}

/// Picks an epoch count by training on all but the last `horizon` days and
/// scoring sMAPE on them. Ties go to fewer epochs.
pub fn select_epochs<T: Scalar>(
    series: &SeriesMatrix<T>,
    horizon: usize,
    context_length: usize,
    net: &NetConfig,
    config: &TrainConfig,
    candidates: &[usize],
) -> Result<(usize, Vec<(usize, f64)>)> {
    let n = series.n_times();
    if n <= horizon {
        return Err(Error::Data("series too short to hold out a horizon".into()));
    }
    let fit = series.slice_time(0, n - horizon)?;
    let holdout = series.slice_time(n - horizon, n)?;
    let mut scores = Vec::new();
    for &epochs in candidates {
        let cfg = TrainConfig {
            epochs,
            ..config.clone()
        };
        let (model, _) = train_top(&fit, net, context_length, horizon, &cfg)?;
        let mut total = 0.0;
        for (hist, actual) in fit.rows().zip(holdout.rows()) {
            let f = model.predict(hist)?;
            total += LossMetric::Smape.value_and_grad(&[], actual, &f).0.as_f64();
        }
        scores.push((epochs, total / series.n_series() as f64));
    }
    let best = scores
        .iter()
        .copied()
        .fold(None::<(usize, f64)>, |acc, (e, s)| match acc {
            Some((be, bs)) if bs < s || (bs == s && be <= e) => Some((be, bs)),
            _ => Some((e, s)),
        })
        .ok_or_else(|| Error::InvalidArgument("no epoch candidates".into()))?;
    Ok((best.0, scores))
}
