//! Neural texture block compression: a reference BC1/BC4 codec, dense
//! multi-resolution feature grids, small MLPs and a trainer that learns to
//! emit BC blocks for a whole material at once.

pub mod bc_codec;
pub mod error;
pub mod feature_grid;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod real;
pub mod synth;
pub mod texture_io;
pub mod trainer;

pub use error::{Error, Result};
pub use real::Real;

/// Sizes the global worker pool. Must run before any parallel work; later
/// calls fail.
#[cfg(feature = "parallel")]
pub fn init_thread_pool(threads: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}
