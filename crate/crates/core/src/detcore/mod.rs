//! Deterministic numeric foundation: PRNG, reduction kernels and the toy
//! training model.

pub mod model;
pub mod reduce;
pub mod rng;

pub use model::{
    forward_backward, sgd_step, OptState, PassOutput, PassState, Sample, ToyModel, TrackedStat,
    INPUT_DIM, PARAM_COUNT,
};
pub use reduce::{reduce_sum, KernelProfile, ReduceVariant};
pub use rng::{splitmix64_next, Rng64};
