//! Per-store bottom-level models with feature matrices cached across losses.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::booster::{train_binned, BoostedModel, GbmConfig};
use super::data::BinnedData;
use super::loss::Objective;
use crate::dataio::PanelDataset;
use crate::error::{Error, Result};
use crate::features::{build_features_for, encode_categoricals, CodeBooks, FeatureMatrix};
use crate::hierarchy::SeriesMatrix;

/// Training and horizon features for one store.
#[derive(Debug, Clone)]
pub struct StoreData {
    pub store: String,
    pub series: Vec<usize>,
    pub books: CodeBooks,
    pub train: BinnedData,
    pub target: Vec<f64>,
    /// Encoded horizon rows; days without a price are absent.
    pub horizon: FeatureMatrix,
}

/// Feature matrices for every store, built once and reused for each λ.
#[derive(Debug, Clone)]
pub struct StoreCache {
    pub stores: Vec<StoreData>,
    pub n_series: usize,
    pub horizon_days: Vec<u32>,
    pub series_ids: Vec<String>,
}

impl StoreCache {
    pub fn build(ds: &PanelDataset, config: &GbmConfig) -> Result<Self> {
        config.validate()?;
        let train_end = ds.train_end as u32;
        let last = train_end + ds.horizon as u32;
        let built: Vec<Result<Option<StoreData>>> = ds
            .stores()
            .into_par_iter()
            .map(|store| {
                let series = ds.series_of_store(&store);
                let train_fm = build_features_for(ds, 1..=train_end, &series)?;
                if train_fm.n_rows() == 0 {
                    log::warn!("store {store} has no post-release rows; skipped");
                    return Ok(None);
                }
                let target = train_fm.targets(ds)?;
                let (encoded, books) = encode_categoricals(&train_fm)?;
                let train = BinnedData::new(&encoded, config.split_mode)?;
                let horizon = books.apply(&build_features_for(ds, train_end + 1..=last, &series)?)?;
                Ok(Some(StoreData {
                    store,
                    series,
                    books,
                    train,
                    target,
                    horizon,
                }))
            })
            .collect();
        let mut stores = Vec::new();
        for s in built {
            if let Some(s) = s? {
                stores.push(s);
            }
        }
        if stores.is_empty() {
            return Err(Error::Training("no store has training rows".into()));
        }
        Ok(Self {
            stores,
            n_series: ds.num_series(),
            horizon_days: ds.horizon_days(),
            series_ids: ds.sales.series_ids().to_vec(),
        })
    }

    /// One model per cached store, trained in parallel.
    pub fn train(&self, loss: &dyn Objective, config: &GbmConfig) -> Result<BTreeMap<String, BoostedModel>> {
        let models: Vec<Result<(String, BoostedModel)>> = self
            .stores
            .par_iter()
            .map(|s| {
                let m = train_binned(&s.train, &s.target, loss, config, s.books.clone())?;
                Ok((s.store.clone(), m))
            })
            .collect();
        models.into_iter().collect()
    }

    /// Bottom-level horizon forecasts; rows without a model or price stay at zero.
    pub fn forecast(&self, models: &BTreeMap<String, BoostedModel>) -> Result<SeriesMatrix<f64>> {
        let h = self.horizon_days.len();
        let first = *self.horizon_days.first().ok_or_else(|| Error::Data("empty horizon".into()))?;
        let mut values = vec![0.0; self.n_series * h];
        let per_store: Vec<Result<Option<(&StoreData, Vec<f64>)>>> = self
            .stores
            .par_iter()
            .map(|s| match models.get(&s.store) {
                Some(m) => Ok(Some((s, m.predict(&s.horizon)?))),
                None => Ok(None),
            })
            .collect();
        for entry in per_store {
            if let Some((s, preds)) = entry? {
                for (r, p) in s.horizon.rows().iter().zip(preds) {
                    values[r.series * h + (r.day - first) as usize] = p;
                }
            }
        }
        SeriesMatrix::new(values, self.horizon_days.clone(), self.series_ids.clone())
    }

    /// Trains with `loss` and returns the bottom forecast.
    pub fn train_and_forecast(&self, loss: &dyn Objective, config: &GbmConfig) -> Result<SeriesMatrix<f64>> {
        let models = self.train(loss, config)?;
        self.forecast(&models)
    }
}

/// One model per store, trained only on that store's rows.
pub fn train_per_store(ds: &PanelDataset, loss: &dyn Objective, config: &GbmConfig) -> Result<BTreeMap<String, BoostedModel>> {
    if ds.stores().is_empty() {
        return Err(Error::Data("dataset has no stores".into()));
    }
    StoreCache::build(ds, config)?.train(loss, config)
}
