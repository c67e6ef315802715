//! Doubly residual fully connected forecaster for the upper hierarchy levels.

mod net;
mod optim;
mod train;

pub use net::{BasisNet, ForwardTrace, NetShape, WEIGHTS_VERSION};
pub use optim::{Lookahead, LookaheadConfig, Optimizer, Sgd};
pub use train::{
    ensemble_forecast, select_epochs, train_ensemble, train_top, window_scale, write_training_log, BasisEnsemble,
    EnsembleConfig, EpochLoss, LossMetric, Member, NetConfig, TrainConfig, Window,
};
