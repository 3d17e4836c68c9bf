//! Training-strategy toolkit for shift-robust precipitation nowcasting.

pub mod ablation;
pub mod augment;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod forecaster;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod plots;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

/// Sizes the global worker pool. Fails if the pool was already built.
pub fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
