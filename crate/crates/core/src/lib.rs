//! Bit-exact elastic data-parallel training.
//!
//! - [`detcore`]: PRNG, reduction kernels, toy model and optimizer.
//! - [`comm`]: bucketed gradient synchronization over virtual ranks.
//! - [`datapipe`]: deterministic sampler and shared data-worker pool.
//! - [`estrt`]: the thread-multiplexed training runtime with checkpointing.
//! - [`planner`]: heterogeneity-aware waste model and configuration search.
//! - [`cluster`]: inter-job scheduler and trace-driven simulator.

pub mod cluster;
pub mod comm;
pub mod datapipe;
pub mod detcore;
pub mod error;
pub mod estrt;
pub mod planner;
pub mod wire;

pub use wire::fnv1a64;

pub use error::{Error, Result};
