//! Hierarchical demand forecasting with a top-down aligned, bias-tunable
//! boosted-tree bottom level.

pub mod alignment;
pub mod basisnet;
pub mod dataio;
pub mod error;
pub mod features;
pub mod gbm;
pub mod hierarchy;
pub mod metrics;
pub mod pipeline;
mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SeriesMatrix64 = hierarchy::SeriesMatrix<f64>;
pub type SeriesMatrix32 = hierarchy::SeriesMatrix<f32>;
pub type BasisNet64 = basisnet::BasisNet<f64>;
pub type BasisNet32 = basisnet::BasisNet<f32>;

/// Caps the global worker pool used by every parallel stage.
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
