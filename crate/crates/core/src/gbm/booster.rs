use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{BinnedData, SplitMode};
use super::loss::Objective;
use super::tree::{grow, sample_columns, sample_fraction, GrowParams, Tree};
use crate::error::{Error, Result};
use crate::features::{encode_categoricals, CodeBooks, ColumnData, ColumnKind, FeatureMatrix, RowKey};
use crate::seed::derive_seed;

pub const MODEL_VERSION: u32 = 1;

/// Boosting hyperparameters. Defaults follow the published LightGBM settings
/// where those exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbmConfig {
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub max_depth: Option<usize>,
    pub min_data_in_leaf: usize,
    pub min_sum_hessian: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub min_gain_to_split: f64,
    pub bagging_fraction: f64,
    pub bagging_freq: usize,
    pub colsample_bytree: f64,
    pub colsample_bynode: f64,
    pub seed: u64,
    /// Starting prediction; the target mean when unset.
    pub base_score: Option<f64>,
    pub split_mode: SplitMode,
    /// Truncate to the round with the lowest validation RMSE when a
    /// validation set is supplied.
    pub select_rounds_by_rmse: bool,
}

impl Default for GbmConfig {
    fn default() -> Self {
        Self {
            num_rounds: 200,
            learning_rate: 0.2,
            max_leaves: 31,
            max_depth: None,
            min_data_in_leaf: 20,
            min_sum_hessian: 1e-3,
            lambda_l1: 0.5,
            lambda_l2: 0.5,
            min_gain_to_split: 0.0,
            bagging_fraction: 0.85,
            bagging_freq: 1,
            colsample_bytree: 0.85,
            colsample_bynode: 0.85,
            seed: 0,
            base_score: None,
            split_mode: SplitMode::Exact,
            select_rounds_by_rmse: false,
        }
    }
}

impl GbmConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        frac("bagging_fraction", self.bagging_fraction)?;
        frac("colsample_bytree", self.colsample_bytree)?;
        frac("colsample_bynode", self.colsample_bynode)?;
        if self.num_rounds == 0 {
            return Err(Error::Config("num_rounds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_leaves == 0 {
            return Err(Error::Config("max_leaves must be at least 1".into()));
        }
        if self.lambda_l1 < 0.0 || self.lambda_l2 < 0.0 || self.min_sum_hessian < 0.0 {
            return Err(Error::Config("regularization terms must be non-negative".into()));
        }
        if let Some(b) = self.base_score {
            if !b.is_finite() {
                return Err(Error::Config("base_score must be finite".into()));
            }
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        GrowParams {
            max_leaves: self.max_leaves,
            max_depth: self.max_depth,
            min_data_in_leaf: self.min_data_in_leaf,
            min_sum_hessian: self.min_sum_hessian,
            lambda_l1: self.lambda_l1,
            lambda_l2: self.lambda_l2,
            min_gain_to_split: self.min_gain_to_split,
            colsample_bynode: self.colsample_bynode,
        }
    }
}

/// A trained tree ensemble together with the feature schema it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub version: u32,
    pub objective: String,
    pub base_score: f64,
    pub learning_rate: f64,
    pub config: GbmConfig,
    pub feature_names: Vec<String>,
    pub feature_kinds: Vec<ColumnKind>,
    pub code_books: CodeBooks,
    pub code_book_hash: String,
    pub trees: Vec<Tree>,
}

impl BoostedModel {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Unclipped ensemble output for already-validated columns.
    fn raw_row(&self, cols: &[Vec<f64>], row: usize) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(|f| cols[f][row])).sum();
        self.base_score + self.learning_rate * sum
    }

    /// Checks the matrix against the training schema and returns numeric
    /// columns, encoding labels with the stored code books.
    fn columns_for(&self, fm: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        let names = fm.column_names();
        if names != self.feature_names || fm.column_kinds() != self.feature_kinds {
            let mut bad: Vec<String> = names
                .iter()
                .filter(|n| !self.feature_names.contains(n))
                .chain(self.feature_names.iter().filter(|n| !names.contains(n)))
                .cloned()
                .collect();
            if bad.is_empty() {
                bad = names
                    .iter()
                    .zip(&self.feature_names)
                    .filter(|(a, b)| a != b)
                    .map(|(a, _)| a.clone())
                    .collect();
            }
            if bad.is_empty() {
                bad = names
                    .iter()
                    .zip(fm.column_kinds().iter().zip(&self.feature_kinds))
                    .filter(|(_, (a, b))| a != b)
                    .map(|(n, _)| n.clone())
                    .collect();
            }
            return Err(Error::SchemaMismatch(bad));
        }
        let fm = if fm.is_encoded() { fm.clone() } else { self.code_books.apply(fm)? };
        Ok(fm
            .columns()
            .iter()
            .map(|c| match &c.data {
                ColumnData::Numeric(v) => v.clone(),
                ColumnData::Codes(v) => v.iter().map(|&x| x as f64).collect(),
                ColumnData::Labels(_) => unreachable!("encoded above"),
            })
            .collect())
    }

    /// Raw ensemble output before clipping.
    pub fn predict_raw(&self, fm: &FeatureMatrix) -> Result<Vec<f64>> {
        let cols = self.columns_for(fm)?;
        Ok((0..fm.n_rows()).map(|r| self.raw_row(&cols, r)).collect())
    }

    /// Ensemble output clipped at zero from below.
    pub fn predict(&self, fm: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.predict_raw(fm)?.into_iter().map(|p| p.max(0.0)).collect())
    }

    /// Keeps the first `n` trees.
    pub fn truncate(&mut self, n: usize) {
        self.trees.truncate(n);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Data(format!("unsupported model version {}", m.version)));
        }
        if m.code_books.fingerprint() != m.code_book_hash {
            return Err(Error::Data("model code books do not match their hash".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_target(n_rows: usize, target: &[f64]) -> Result<()> {
    if n_rows == 0 {
        return Err(Error::Training("empty training set".into()));
    }
    if target.len() != n_rows {
        return Err(Error::Dimension(format!("{} targets for {} feature rows", target.len(), n_rows)));
    }
    if let Some(i) = target.iter().position(|y| !y.is_finite()) {
        return Err(Error::Training(format!("non-finite target at row {i}")));
    }
    Ok(())
}

/// Trains on a feature matrix; label columns are encoded with freshly fitted code books.
pub fn train(fm: &FeatureMatrix, target: &[f64], loss: &dyn Objective, config: &GbmConfig) -> Result<BoostedModel> {
    config.validate()?;
    check_target(fm.n_rows(), target)?;
    let (encoded, books) = if fm.is_encoded() {
        (fm.clone(), CodeBooks::default())
    } else {
        encode_categoricals(fm)?
    };
    let data = BinnedData::new(&encoded, config.split_mode)?;
    train_binned(&data, target, loss, config, books)
}

/// Trains on pre-binned data, so callers can reuse the binning across losses.
pub fn train_binned(
    data: &BinnedData,
    target: &[f64],
    loss: &dyn Objective,
    config: &GbmConfig,
    books: CodeBooks,
) -> Result<BoostedModel> {
    config.validate()?;
    check_target(data.n_rows(), target)?;
    let n = data.n_rows();
    let base_score = config
        .base_score
        .unwrap_or_else(|| target.iter().sum::<f64>() / n as f64);
    let params = config.grow_params();
    // Separate streams keep row and column draws identical across losses.
    let mut bag_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "bagging"));
    let mut tree_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "colsample_bytree"));
    let node_seed = derive_seed(config.seed, "colsample_bynode");
    let mut pred = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut bag: Vec<u32> = (0..n as u32).collect();
    let mut trees = Vec::with_capacity(config.num_rounds);
    for round in 0..config.num_rounds {
        for i in 0..n {
            let (g, h) = loss.grad_hess(target[i], pred[i]);
            grad[i] = g;
            hess[i] = h;
        }
        if config.bagging_fraction < 1.0 && config.bagging_freq > 0 && round % config.bagging_freq == 0 {
            bag = sample_fraction(&mut bag_rng, n, config.bagging_fraction);
        }
        let features = sample_columns(&mut tree_rng, data.n_features(), config.colsample_bytree);
        let mut node_rng = ChaCha8Rng::seed_from_u64(node_seed);
        node_rng.set_stream(round as u64);
        let tree = grow(data, bag.clone(), &grad, &hess, &features, &params, &mut node_rng);
        for (i, p) in pred.iter_mut().enumerate() {
            *p += config.learning_rate * tree.predict(|f| data.raw[f][i]);
        }
        if pred.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!("predictions diverged at round {round}")));
        }
        trees.push(tree);
    }
    let code_book_hash = books.fingerprint();
    Ok(BoostedModel {
        version: MODEL_VERSION,
        objective: loss.name(),
        base_score,
        learning_rate: config.learning_rate,
        config: config.clone(),
        feature_names: data.names.clone(),
        feature_kinds: data.kinds.clone(),
        code_books: books,
        code_book_hash,
        trees,
    })
}

/// Number of leading trees with the lowest RMSE on a validation set
/// (0 means the base score alone).
pub fn best_round_by_rmse(model: &BoostedModel, fm: &FeatureMatrix, target: &[f64]) -> Result<usize> {
    check_target(fm.n_rows(), target)?;
    let cols = model.columns_for(fm)?;
    let mut raw = vec![model.base_score; fm.n_rows()];
    let rmse = |p: &[f64]| -> f64 {
        let s: f64 = p.iter().zip(target).map(|(p, y)| (p.max(0.0) - y).powi(2)).sum();
        (s / target.len() as f64).sqrt()
    };
    let mut best = (rmse(&raw), 0);
    for (k, tree) in model.trees.iter().enumerate() {
        for (r, p) in raw.iter_mut().enumerate() {
            *p += model.learning_rate * tree.predict(|f| cols[f][r]);
        }
        let e = rmse(&raw);
        if e < best.0 {
            best = (e, k + 1);
        }
    }
    Ok(best.1)
}

/// Trains and, if enabled in the config, truncates to the best validation round.
pub fn train_with_validation(
    fm: &FeatureMatrix,
    target: &[f64],
    valid: Option<(&FeatureMatrix, &[f64])>,
    loss: &dyn Objective,
    config: &GbmConfig,
) -> Result<BoostedModel> {
    let mut model = train(fm, target, loss, config)?;
    if let (true, Some((vfm, vy))) = (config.select_rounds_by_rmse, valid) {
        let k = best_round_by_rmse(&model, vfm, vy)?;
        model.truncate(k);
    }
    Ok(model)
}

/// Writes predictions keyed by series id and day.
pub fn write_predictions(path: &Path, rows: &[RowKey], series_ids: &[String], values: &[f64]) -> Result<()> {
    if rows.len() != values.len() {
        return Err(Error::Dimension(format!("{} rows for {} predictions", rows.len(), values.len())));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series_id", "day", "prediction"])?;
    for (r, v) in rows.iter().zip(values) {
        let id = series_ids
            .get(r.series)
            .ok_or_else(|| Error::Dimension(format!("series index {} out of range", r.series)))?;
        w.write_record([id.as_str(), &format!("d_{}", r.day), &format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureColumn;
    use crate::gbm::loss::AsymmetricLoss;
    use crate::gbm::tree::{SplitRule, TreeNode};

    fn matrix(x: Vec<f64>) -> FeatureMatrix {
        let rows = (0..x.len()).map(|i| RowKey { series: 0, day: i as u32 + 1 }).collect();
        FeatureMatrix::new(
            rows,
            vec![FeatureColumn {
                name: "x".into(),
                data: ColumnData::Numeric(x),
            }],
        )
        .unwrap()
    }

    fn plain() -> GbmConfig {
        GbmConfig {
            num_rounds: 1,
            learning_rate: 1.0,
            max_leaves: 1,
            min_data_in_leaf: 1,
            min_sum_hessian: 0.0,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            bagging_fraction: 1.0,
            colsample_bytree: 1.0,
            colsample_bynode: 1.0,
            ..GbmConfig::default()
        }
    }

    #[test]
    fn constant_target_is_a_fixed_point() {
        let fm = matrix((0..10).map(f64::from).collect());
        let loss = AsymmetricLoss::new(1.0).unwrap();
        let m = train(&fm, &[4.0; 10], &loss, &plain()).unwrap();
        assert!(m.predict(&fm).unwrap().iter().all(|&p| p == 4.0));
    }

    #[test]
    fn single_newton_step_from_zero_base() {
        let fm = matrix((0..10).map(f64::from).collect());
        let loss = AsymmetricLoss::new(1.0).unwrap();
        let cfg = GbmConfig {
            base_score: Some(0.0),
            ..plain()
        };
        let m = train(&fm, &[10.0; 10], &loss, &cfg).unwrap();
        assert_eq!(m.trees[0].nodes, vec![TreeNode::Leaf { value: 10.0, count: 10 }]);
    }

    #[test]
    fn empty_model_predicts_base_and_clips() {
        let fm = matrix(vec![1.0, 2.0]);
        let loss = AsymmetricLoss::new(1.0).unwrap();
        let mut m = train(&fm, &[1.0, 2.0], &loss, &plain()).unwrap();
        m.truncate(0);
        assert_eq!(m.predict(&fm).unwrap(), vec![1.5, 1.5]);
        m.base_score = -0.3;
        assert_eq!(m.predict_raw(&fm).unwrap(), vec![-0.3, -0.3]);
        assert_eq!(m.predict(&fm).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_built_tree_routes_by_threshold() {
        let fm = matrix(vec![0.0, 1.0, 5.0, 6.0]);
        let loss = AsymmetricLoss::new(1.0).unwrap();
        let mut m = train(&fm, &[0.0; 4], &loss, &plain()).unwrap();
        m.base_score = 0.0;
        m.trees = vec![Tree {
            nodes: vec![
                TreeNode::Split {
                    feature: 0,
                    rule: SplitRule::Threshold(4.5),
                    left: 1,
                    right: 2,
                    gain: 1.0,
                },
                TreeNode::Leaf { value: 1.0, count: 2 },
                TreeNode::Leaf { value: 3.0, count: 2 },
            ],
        }];
        assert_eq!(m.predict(&fm).unwrap(), vec![1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let loss = AsymmetricLoss::new(1.0).unwrap();
        assert!(train(&matrix(vec![]), &[], &loss, &plain()).is_err());
        assert!(train(&matrix(vec![1.0]), &[f64::NAN], &loss, &plain()).is_err());
        let bad = GbmConfig {
            bagging_fraction: 0.0,
            ..plain()
        };
        assert!(matches!(train(&matrix(vec![1.0]), &[1.0], &loss, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn schema_mismatch_names_columns() {
        let loss = AsymmetricLoss::new(1.0).unwrap();
        let m = train(&matrix(vec![1.0, 2.0]), &[1.0, 2.0], &loss, &plain()).unwrap();
        let other = FeatureMatrix::new(
            vec![RowKey { series: 0, day: 1 }],
            vec![FeatureColumn {
                name: "z".into(),
                data: ColumnData::Numeric(vec![1.0]),
            }],
        )
        .unwrap();
        match m.predict(&other) {
            Err(Error::SchemaMismatch(cols)) => assert_eq!(cols, vec!["z".to_string(), "x".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn huge_l2_shrinks_leaves_to_zero() {
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let loss = AsymmetricLoss::new(1.0).unwrap();
        let cfg = GbmConfig {
            lambda_l2: 1e12,
            num_rounds: 5,
            ..GbmConfig::default()
        };
        let m = train(&matrix(x), &y, &loss, &cfg).unwrap();
        for t in &m.trees {
            assert!(t.leaves().all(|(v, _)| v.abs() < 1e-6));
        }
    }

    #[test]
    fn json_round_trip() {
        let x: Vec<f64> = (0..60).map(|i| (i % 7) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 2.0).collect();
        let loss = AsymmetricLoss::new(0.9).unwrap();
        let cfg = GbmConfig {
            num_rounds: 3,
            ..GbmConfig::default()
        };
        let m = train(&matrix(x), &y, &loss, &cfg).unwrap();
        let back = BoostedModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
