//! Runtime feedback: capability profiling and fallback on slowdown.

use super::WorkloadProfile;

pub const PROFILE_ALPHA: f64 = 0.5;
pub const FALLBACK_SLACK: f64 = 0.05;
pub const WARMUP_STEPS: usize = 10;

/// Measured throughput of one device type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub type_index: usize,
    pub minibatches_per_sec: f64,
}

/// Folds observations into the capability estimates in order, one
/// exponential-moving-average step each. Unobserved types keep their
/// current value.
pub fn update_profile(profile: &WorkloadProfile, stats: &[Observation]) -> WorkloadProfile {
    let mut out = profile.clone();
    for o in stats {
        if let Some(c) = out.capability.get_mut(o.type_index) {
            if o.minibatches_per_sec.is_finite() && o.minibatches_per_sec >= 0.0 {
                *c = (1.0 - PROFILE_ALPHA) * *c + PROFILE_ALPHA * o.minibatches_per_sec;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Revert,
}

pub fn fallback_on_slowdown(prev_perf: f64, new_perf: f64) -> Decision {
    fallback_with_slack(prev_perf, new_perf, FALLBACK_SLACK)
}

pub fn fallback_with_slack(prev_perf: f64, new_perf: f64, slack: f64) -> Decision {
    if new_perf < prev_perf * (1.0 - slack) {
        Decision::Revert
    } else {
        Decision::Keep
    }
}

/// Collects post-reconfiguration throughput and decides once enough
/// mini-batches have been seen.
#[derive(Debug, Clone)]
pub struct FallbackMonitor {
    prev_perf: f64,
    warmup: usize,
    slack: f64,
    samples: Vec<f64>,
}

impl FallbackMonitor {
    pub fn new(prev_perf: f64) -> Self {
        Self { prev_perf, warmup: WARMUP_STEPS, slack: FALLBACK_SLACK, samples: Vec::new() }
    }

    pub fn with_params(prev_perf: f64, warmup: usize, slack: f64) -> Self {
        Self { prev_perf, warmup: warmup.max(1), slack, samples: Vec::new() }
    }

    /// Records one mini-batch rate; `None` while still warming up.
    pub fn observe(&mut self, rate: f64) -> Option<Decision> {
        self.samples.push(rate);
        if self.samples.len() < self.warmup {
            return None;
        }
        let mean = self.samples.iter().sum::<f64>() / self.samples.len() as f64;
        Some(fallback_with_slack(self.prev_perf, mean, self.slack))
    }
}
