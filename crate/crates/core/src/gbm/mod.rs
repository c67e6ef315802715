//! Gradient-boosted regression trees with a pluggable second-order objective.

mod booster;
mod data;
mod loss;
mod store;
mod tree;

pub use booster::{
    best_round_by_rmse, train, train_binned, train_with_validation, write_predictions, BoostedModel, GbmConfig,
    MODEL_VERSION,
};
pub use data::{BinnedData, SplitMode};
pub use loss::{loss_gradient, loss_hessian, AsymmetricLoss, Objective};
pub use store::{train_per_store, StoreCache, StoreData};
pub use tree::{SplitRule, Tree, TreeNode};
