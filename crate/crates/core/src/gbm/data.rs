//! Column binning shared by all boosting rounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColumnData, ColumnKind, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SplitMode {
    /// One bin per distinct value: an exact sorted-value scan.
    #[default]
    Exact,
    /// Quantile bins, at most `max_bins` per feature.
    Histogram { max_bins: usize },
}

#[derive(Debug, Clone)]
pub(crate) enum FeatureBins {
    /// Smallest and largest raw value per bin, ascending.
    Numeric { lower: Vec<f64>, upper: Vec<f64> },
    /// Bin index is the category code.
    Categorical { n_codes: usize },
}

impl FeatureBins {
    pub(crate) fn n_bins(&self) -> usize {
        match self {
            FeatureBins::Numeric { upper, .. } => upper.len(),
            FeatureBins::Categorical { n_codes } => *n_codes,
        }
    }
}

/// Encoded features with raw values and per-row bin indices.
#[derive(Debug, Clone)]
pub struct BinnedData {
    pub(crate) n_rows: usize,
    pub(crate) names: Vec<String>,
    pub(crate) kinds: Vec<ColumnKind>,
    pub(crate) raw: Vec<Vec<f64>>,
    pub(crate) bins: Vec<Vec<u32>>,
    pub(crate) features: Vec<FeatureBins>,
    pub(crate) mode: SplitMode,
}

impl BinnedData {
    pub fn new(fm: &FeatureMatrix, mode: SplitMode) -> Result<Self> {
        if !fm.is_encoded() {
            return Err(Error::InvalidArgument("categorical columns must be encoded before training".into()));
        }
        if let SplitMode::Histogram { max_bins } = mode {
            if max_bins < 2 {
                return Err(Error::Config("histogram mode needs at least 2 bins".into()));
            }
        }
        let mut raw = Vec::with_capacity(fm.n_columns());
        let mut bins = Vec::with_capacity(fm.n_columns());
        let mut features = Vec::with_capacity(fm.n_columns());
        for c in fm.columns() {
            match &c.data {
                ColumnData::Numeric(v) => {
                    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                        return Err(Error::Data(format!("feature `{}` holds non-finite value {bad}", c.name)));
                    }
                    let (fb, idx) = bin_numeric(v, mode);
                    raw.push(v.clone());
                    bins.push(idx);
                    features.push(fb);
                }
                ColumnData::Codes(v) => {
                    let n_codes = v.iter().max().map_or(1, |m| *m as usize + 1);
                    raw.push(v.iter().map(|&c| c as f64).collect());
                    bins.push(v.clone());
                    features.push(FeatureBins::Categorical { n_codes });
                }
                ColumnData::Labels(_) => unreachable!("checked encoded above"),
            }
        }
        Ok(Self {
            n_rows: fm.n_rows(),
            names: fm.column_names(),
            kinds: fm.column_kinds(),
            raw,
            bins,
            features,
            mode,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn mode(&self) -> SplitMode {
        self.mode
    }
}

fn bin_numeric(values: &[f64], mode: SplitMode) -> (FeatureBins, Vec<u32>) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for v in sorted {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }
    let (lower, upper) = match mode {
        SplitMode::Histogram { max_bins } if distinct.len() > max_bins => {
            let target = values.len() as f64 / max_bins as f64;
            let mut lower = Vec::new();
            let mut upper = Vec::new();
            let mut filled = 0usize;
            let mut seen = 0usize;
            for (i, &(v, count)) in distinct.iter().enumerate() {
                if filled == 0 {
                    lower.push(v);
                }
                filled += count;
                seen += count;
                let remaining_values = distinct.len() - i - 1;
                let remaining_bins = max_bins - upper.len() - 1;
                let boundary = (seen as f64) >= target * (upper.len() + 1) as f64;
                if (boundary && remaining_bins > 0) || remaining_values == 0 || remaining_values < remaining_bins {
                    upper.push(v);
                    filled = 0;
                }
            }
            (lower, upper)
        }
        _ => {
            let v: Vec<f64> = distinct.iter().map(|d| d.0).collect();
            (v.clone(), v)
        }
    };
    let idx = values
        .iter()
        .map(|x| upper.partition_point(|u| u < x) as u32)
        .collect();
    (FeatureBins::Numeric { lower, upper }, idx)
}
