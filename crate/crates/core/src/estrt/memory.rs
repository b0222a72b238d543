//! Device memory accounting.
//!
//! [`MemoryMeter`] follows the runtime's allocations on one executor: the
//! model and optimizer replica are resident for the whole mini-batch,
//! activations live from forward to the end of backward, and gradients stay
//! on the device only until the next EST starts. The peak therefore does not
//! grow with the number of ESTs an executor hosts.
//!
//! [`MemoryModel`] is the analytic comparison against packing one worker
//! process per logical worker onto the same device.

const F64: u64 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemoryMeter {
    pub current: u64,
    pub peak: u64,
}

impl MemoryMeter {
    fn alloc(&mut self, bytes: u64) {
        self.current += bytes;
        self.peak = self.peak.max(self.current);
    }

    fn free(&mut self, bytes: u64) {
        self.current = self.current.checked_sub(bytes).expect("freed more than allocated");
    }

    /// Parameters and momentum buffers become resident.
    pub fn begin_minibatch(&mut self, params: usize) {
        self.current = 0;
        self.alloc(2 * params as u64 * F64);
    }

    /// Activations for `rows` rows: pre-activations, dropout multipliers and
    /// hidden outputs.
    pub fn forward(&mut self, rows: usize) {
        self.alloc(activation_bytes(rows));
    }

    pub fn backward_done(&mut self, rows: usize, grads: usize) {
        self.alloc(grads as u64 * F64);
        self.free(activation_bytes(rows));
    }

    /// Gradients copied to host memory.
    pub fn migrate_grads(&mut self, grads: usize) {
        self.free(grads as u64 * F64);
    }

    pub fn end_minibatch(&mut self) {
        self.current = 0;
    }
}

fn activation_bytes(rows: usize) -> u64 {
    use crate::detcore::model::HIDDEN_DIM;
    3 * (rows * HIDDEN_DIM) as u64 * F64
}

/// Per-device peak memory under both execution strategies, in MB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryModel {
    /// Fixed cost of one device context.
    pub context_mb: f64,
    /// Peak footprint of one logical worker (MU).
    pub mu_mb: f64,
    pub capacity_mb: f64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        Self { context_mb: 750.0, mu_mb: 1500.0, capacity_mb: 16_384.0 }
    }
}

impl MemoryModel {
    /// Multiplexed ESTs share one context and one MU.
    pub fn est_peak_mb(&self, _threads: usize) -> f64 {
        self.context_mb + self.mu_mb
    }

    /// One process per logical worker, each with its own context and MU.
    pub fn packing_peak_mb(&self, threads: usize) -> f64 {
        threads as f64 * (self.context_mb + self.mu_mb)
    }

    /// Smallest worker count at which packing no longer fits.
    pub fn packing_limit(&self) -> usize {
        (1..)
            .find(|&k| self.packing_peak_mb(k) > self.capacity_mb)
            .expect("capacity is finite")
    }
}
