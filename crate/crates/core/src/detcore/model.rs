//! A two-layer tanh regressor with dropout and a rank-tracked running
//! statistic, trained with momentum SGD.
//!
//! The model is tiny on purpose. It exists to carry the three channels
//! through which bits can drift between runs: RNG state (dropout),
//! worker-rank dependent state (the tracked statistic) and kernel shape
//! (every reduction goes through [`reduce_sum`]).

use super::reduce::{reduce_sum, KernelProfile};
use super::rng::Rng64;
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 8;
pub const HIDDEN_DIM: usize = 16;
pub const PARAM_COUNT: usize = INPUT_DIM * HIDDEN_DIM + HIDDEN_DIM + HIDDEN_DIM + 1;

/// Offsets of each tensor inside the flat parameter vector.
pub const W1_OFFSET: usize = 0;
pub const B1_OFFSET: usize = INPUT_DIM * HIDDEN_DIM;
pub const W2_OFFSET: usize = B1_OFFSET + HIDDEN_DIM;
pub const B2_OFFSET: usize = W2_OFFSET + HIDDEN_DIM;

const STAT_DECAY: f64 = 0.9;
const STAT_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: [f64; INPUT_DIM],
    pub y: f64,
}

/// Parameters stored flat: `w1` row-major (`d × h`), then `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    params: Vec<f64>,
}

impl ToyModel {
    pub fn zeros() -> Self {
        Self { params: vec![0.0; PARAM_COUNT] }
    }

    /// Uniform init in `±1/sqrt(fan_in)` per layer, biases zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = Rng64::keyed(&[seed, 0x4D4F_4445_4C]);
        let mut params = vec![0.0; PARAM_COUNT];
        let s1 = 1.0 / (INPUT_DIM as f64).sqrt();
        let s2 = 1.0 / (HIDDEN_DIM as f64).sqrt();
        for p in &mut params[W1_OFFSET..B1_OFFSET] {
            *p = (2.0 * rng.uniform01() - 1.0) * s1;
        }
        for p in &mut params[W2_OFFSET..B2_OFFSET] {
            *p = (2.0 * rng.uniform01() - 1.0) * s2;
        }
        Self { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::Input(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[inline]
    fn w1(&self, i: usize, j: usize) -> f64 {
        self.params[W1_OFFSET + i * HIDDEN_DIM + j]
    }

    /// Raw little-endian bytes of the parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.params.iter().flat_map(|p| p.to_le_bytes()).collect()
    }
}

/// Momentum SGD state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Vec<f64>,
}

impl OptState {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: vec![0.0; PARAM_COUNT] }
    }
}

/// Running mean tracked per worker, in the manner of a normalization layer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrackedStat {
    pub running_mean: f64,
    pub update_count: u64,
}

/// The per-worker state one forward pass reads and advances.
#[derive(Debug)]
pub struct PassState<'a> {
    pub virtual_rank: u32,
    pub dropout_rng: &'a mut Rng64,
    pub stat: &'a mut TrackedStat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassOutput {
    pub loss: f64,
    pub grads: Vec<f64>,
}

/// The offset folded into the tracked statistic for a given worker rank.
#[inline]
pub fn rank_offset(virtual_rank: u32) -> f64 {
    virtual_rank as f64 * (1.0 / (1u64 << 40) as f64)
}

/// One forward and backward pass over a micro-batch.
///
/// Dropout draws one uniform per hidden unit per row, rows in order, units in
/// order; a unit is kept when its draw is `>= dropout_rate` and kept units are
/// scaled by `1 / (1 - dropout_rate)`. A rate of 0 draws nothing.
pub fn forward_backward(
    model: &ToyModel,
    batch: &[Sample],
    dropout_rate: f64,
    state: PassState<'_>,
    kp: &KernelProfile,
) -> Result<PassOutput> {
    if batch.is_empty() {
        return Err(Error::Input("empty micro-batch".into()));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Input(format!("dropout rate {dropout_rate} outside [0, 1)")));
    }
    let variant = kp.reduce;
    let rows = batch.len();
    let inv_rows = 1.0 / rows as f64;
    let keep_scale = 1.0 / (1.0 - dropout_rate);

    // Forward. Per row: activations, dropout multipliers, hidden outputs.
    let mut act = vec![0.0; rows * HIDDEN_DIM];
    let mut mult = vec![1.0; rows * HIDDEN_DIM];
    let mut preds = vec![0.0; rows];
    let mut terms = [0.0; INPUT_DIM];
    let mut hidden_terms = [0.0; HIDDEN_DIM];
    for (r, sample) in batch.iter().enumerate() {
        for j in 0..HIDDEN_DIM {
            for (i, t) in terms.iter_mut().enumerate() {
                *t = sample.x[i] * model.w1(i, j);
            }
            let z = reduce_sum(&terms, variant) + model.params[B1_OFFSET + j];
            let a = z.tanh();
            act[r * HIDDEN_DIM + j] = a;
            if dropout_rate > 0.0 {
                let u = state.dropout_rng.uniform01();
                mult[r * HIDDEN_DIM + j] = if u >= dropout_rate { keep_scale } else { 0.0 };
            }
            hidden_terms[j] = model.params[W2_OFFSET + j] * (a * mult[r * HIDDEN_DIM + j]);
        }
        preds[r] = reduce_sum(&hidden_terms, variant) + model.params[B2_OFFSET];
    }

    let errs: Vec<f64> = preds.iter().zip(batch).map(|(p, s)| p - s.y).collect();
    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
    let loss = reduce_sum(&sq, variant) * inv_rows;

    // Backward. d loss / d pred_r = 2 err_r / rows.
    let dpred: Vec<f64> = errs.iter().map(|e| 2.0 * e * inv_rows).collect();
    let mut dz = vec![0.0; rows * HIDDEN_DIM];
    for r in 0..rows {
        for j in 0..HIDDEN_DIM {
            let k = r * HIDDEN_DIM + j;
            let a = act[k];
            dz[k] = dpred[r] * model.params[W2_OFFSET + j] * mult[k] * (1.0 - a * a);
        }
    }

    let mut grads = vec![0.0; PARAM_COUNT];
    let mut col = vec![0.0; rows];
    for i in 0..INPUT_DIM {
        for j in 0..HIDDEN_DIM {
            for r in 0..rows {
                col[r] = batch[r].x[i] * dz[r * HIDDEN_DIM + j];
            }
            grads[W1_OFFSET + i * HIDDEN_DIM + j] = reduce_sum(&col, variant);
        }
    }
    for j in 0..HIDDEN_DIM {
        for r in 0..rows {
            col[r] = dz[r * HIDDEN_DIM + j];
        }
        grads[B1_OFFSET + j] = reduce_sum(&col, variant);
        for r in 0..rows {
            col[r] = dpred[r] * (act[r * HIDDEN_DIM + j] * mult[r * HIDDEN_DIM + j]);
        }
        grads[W2_OFFSET + j] = reduce_sum(&col, variant);
    }
    grads[B2_OFFSET] = reduce_sum(&dpred, variant);

    let batch_mean = reduce_sum(&preds, variant) * inv_rows;
    state.stat.running_mean = state.stat.running_mean * STAT_DECAY
        + STAT_RATE * (batch_mean + rank_offset(state.virtual_rank));
    state.stat.update_count += 1;

    Ok(PassOutput { loss, grads })
}

/// `v ← μ·v + g; p ← p − lr·v`, in parameter-index order.
pub fn sgd_step(model: &mut ToyModel, opt: &mut OptState, grads: &[f64]) -> Result<()> {
    if grads.len() != PARAM_COUNT || opt.velocity.len() != PARAM_COUNT {
        return Err(Error::Input(format!(
            "gradient length {} / velocity length {} != {PARAM_COUNT}",
            grads.len(),
            opt.velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at index {i}")));
    }
    for ((p, v), &g) in model.params.iter_mut().zip(&mut opt.velocity).zip(grads) {
        *v = opt.momentum * *v + g;
        *p -= opt.lr * *v;
    }
    Ok(())
}

/// Generic form of [`sgd_step`] over raw slices, for models of any size.
pub fn sgd_step_slices(params: &mut [f64], velocity: &mut [f64], lr: f64, momentum: f64, grads: &[f64]) {
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}
