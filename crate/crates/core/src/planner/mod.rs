//! Intra-job planning: how many GPUs of each type to use, how many
//! executors per GPU and how many ESTs per executor.

mod adapt;
mod search;
mod waste;

pub use adapt::{
    fallback_on_slowdown, fallback_with_slack, update_profile, Decision, FallbackMonitor, Observation, FALLBACK_SLACK,
    PROFILE_ALPHA, WARMUP_STEPS,
};
pub use search::{
    best_config, enumerate_configs, enumerate_configs_grid, plan_order, propose, propose_with, Proposal, Proposals, SearchSpace,
};
pub use waste::{multi_executor_adjust, waste_model, WasteEval};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estrt::ExecutorSpec;

pub const DEFAULT_WASTE_THRESHOLD: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DeviceType {
    pub name: String,
    pub count: usize,
    /// Device memory measured in MU.
    pub memory_mu: f64,
    /// `interference[k]` is the per-executor efficiency with `k + 1`
    /// executors sharing the device.
    #[serde(default = "single_executor")]
    pub interference: Vec<f64>,
}

fn single_executor() -> Vec<f64> {
    vec![1.0]
}

impl DeviceType {
    /// Largest executor count that fits in memory and has a known
    /// interference factor.
    pub fn max_executors(&self, mu_per_executor: f64) -> usize {
        let by_mem = if mu_per_executor > 0.0 {
            (self.memory_mu / mu_per_executor).floor().max(0.0) as usize
        } else {
            usize::MAX
        };
        by_mem.min(self.interference.len())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct DevicePool {
    #[serde(rename = "device")]
    pub types: Vec<DeviceType>,
}

impl DevicePool {
    pub fn validate(&self) -> Result<()> {
        for t in &self.types {
            let i = &t.interference;
            if i.first() != Some(&1.0) {
                return Err(Error::Config(format!("{}: interference must start at 1.0", t.name)));
            }
            if i.windows(2).any(|w| w[1] > w[0]) || i.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                return Err(Error::Config(format!(
                    "{}: interference must be non-increasing within (0, 1]",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t.name == name)
    }

    pub fn counts(&self) -> Vec<usize> {
        self.types.iter().map(|t| t.count).collect()
    }

    /// The same device types with different counts.
    pub fn with_counts(&self, counts: &[usize]) -> Self {
        Self {
            types: self
                .types
                .iter()
                .zip(counts)
                .map(|(t, &c)| DeviceType { count: c, ..t.clone() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadProfile {
    /// `C_i` per device type, in pool order.
    pub capability: Vec<f64>,
    /// Defaults used before any runtime observation.
    pub historical: Vec<f64>,
    pub mu_per_executor: f64,
}

impl WorkloadProfile {
    pub fn from_history(historical: Vec<f64>, mu_per_executor: f64) -> Self {
        Self { capability: historical.clone(), historical, mu_per_executor }
    }
}

/// A candidate placement and its modelled cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub nums: Vec<usize>,
    pub executors: Vec<usize>,
    pub threads: Vec<usize>,
    pub cu_capacity: usize,
    pub f_overload: f64,
    pub waste: f64,
    pub waste_norm: f64,
    pub perf: f64,
}

impl PlanConfig {
    /// CUs per GPU of each type: executors × threads.
    pub fn per_gpu_cus(&self) -> Vec<usize> {
        self.executors.iter().zip(&self.threads).map(|(m, t)| m * t).collect()
    }

    pub fn total_gpus(&self) -> usize {
        self.nums.iter().sum()
    }

    /// Executor layout for the runtime: types in pool order, each GPU's
    /// executors in turn, ESTs filled contiguously until `max_p` are placed.
    pub fn to_layout(&self, pool: &DevicePool, max_p: usize) -> Result<Vec<ExecutorSpec>> {
        if self.nums.len() != pool.types.len() {
            return Err(Error::Config("plan and pool disagree on device types".into()));
        }
        for (i, t) in pool.types.iter().enumerate() {
            if self.nums[i] > t.count {
                return Err(Error::Config(format!(
                    "plan uses {} {} GPUs, pool has {}",
                    self.nums[i], t.name, t.count
                )));
            }
        }
        if self.cu_capacity < max_p {
            return Err(Error::Config(format!("plan holds {} ESTs, job has {max_p}", self.cu_capacity)));
        }
        let mut remaining = max_p;
        let mut layout = Vec::new();
        for (i, t) in pool.types.iter().enumerate() {
            for _ in 0..self.nums[i] * self.executors[i] {
                let take = self.threads[i].min(remaining);
                if take > 0 {
                    layout.push(ExecutorSpec::new(&t.name, take));
                    remaining -= take;
                }
            }
        }
        Ok(layout)
    }
}
