//! Inter-job scheduling and a trace-driven cluster simulator.

mod report;
mod sim;

pub use report::{metrics_csv, summary_csv, timeline_csv, METRICS_HEADER};
pub use sim::{simulate, JobMetrics, SimMetrics, SimMode};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::estrt::DeterminismMode;
use crate::planner::{DevicePool, DeviceType, Proposal, WorkloadProfile, DEFAULT_WASTE_THRESHOLD};

/// Simulator constants.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub round_s: f64,
    pub restore_timeout_s: f64,
    /// Progress lost per reconfiguration of a running job.
    pub reconfig_cost_s: f64,
    pub proposals_k: usize,
    pub waste_threshold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            round_s: 30.0,
            restore_timeout_s: 300.0,
            reconfig_cost_s: 10.0,
            proposals_k: 3,
            waste_threshold: DEFAULT_WASTE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub name: String,
    pub count: usize,
    pub memory_mu: f64,
    #[serde(default = "single_executor")]
    pub interference: Vec<f64>,
    /// Mini-batches per second of one EST, keyed by workload.
    #[serde(default)]
    pub capability: BTreeMap<String, f64>,
}

fn single_executor() -> Vec<f64> {
    vec![1.0]
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    #[serde(default = "one")]
    pub mu_per_executor: f64,
}

/// High-priority serving demand that revokes GPUs from training.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServingEvent {
    pub at_s: f64,
    pub device: String,
    pub count: usize,
    pub duration_s: f64,
}

/// Pool, workload profiles and simulator settings in one TOML document:
///
/// ```toml
/// [sim]
/// round_s = 30.0
///
/// [[device]]
/// name = "v100"
/// count = 4
/// memory_mu = 4.0
/// interference = [1.0, 0.8]
/// capability = { resnet = 2.45 }
///
/// [workload.resnet]
/// mu_per_executor = 1.0
///
/// [[serving]]
/// at_s = 600.0
/// device = "v100"
/// count = 2
/// duration_s = 120.0
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default)]
    pub sim: SimParams,
    pub device: Vec<DeviceEntry>,
    #[serde(default)]
    pub workload: BTreeMap<String, WorkloadEntry>,
    #[serde(default)]
    pub serving: Vec<ServingEvent>,
}

impl ClusterConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.device.is_empty() {
            return Err(Error::Config("pool has no device types".into()));
        }
        let mut names = BTreeSet::new();
        for d in &self.device {
            if !names.insert(&d.name) {
                return Err(Error::Config(format!("device type `{}` listed twice", d.name)));
            }
            if let Some((k, c)) = d.capability.iter().find(|(_, c)| !(c.is_finite() && **c >= 0.0)) {
                return Err(Error::Config(format!("{}: capability for `{k}` is {c}", d.name)));
            }
        }
        self.pool().validate()?;
        let s = &self.sim;
        if !(s.round_s > 0.0 && s.restore_timeout_s >= 0.0 && s.reconfig_cost_s >= 0.0) {
            return Err(Error::Config("sim: round_s must be > 0, timeout and cost >= 0".into()));
        }
        for e in &self.serving {
            if !names.contains(&e.device) {
                return Err(Error::Config(format!("serving event names unknown device `{}`", e.device)));
            }
            if !(e.at_s >= 0.0 && e.duration_s > 0.0) {
                return Err(Error::Config("serving events need at_s >= 0 and duration_s > 0".into()));
            }
        }
        Ok(())
    }

    pub fn pool(&self) -> DevicePool {
        DevicePool {
            types: self
                .device
                .iter()
                .map(|d| DeviceType {
                    name: d.name.clone(),
                    count: d.count,
                    memory_mu: d.memory_mu,
                    interference: d.interference.clone(),
                })
                .collect(),
        }
    }

    /// Capabilities of `workload` in pool order; types without an entry
    /// cannot run it.
    pub fn profile(&self, workload: &str) -> Result<WorkloadProfile> {
        if !self.device.iter().any(|d| d.capability.contains_key(workload)) {
            return Err(Error::Config(format!("no device type lists a capability for `{workload}`")));
        }
        let caps = self
            .device
            .iter()
            .map(|d| d.capability.get(workload).copied().unwrap_or(0.0))
            .collect();
        let mu = self.workload.get(workload).map_or(1.0, |w| w.mu_per_executor);
        Ok(WorkloadProfile::from_history(caps, mu))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceJob {
    pub job_id: u32,
    pub arrival_s: f64,
    pub min_p: usize,
    pub max_p: usize,
    pub total_minibatches: u64,
    pub workload_key: String,
    pub determinism: DeterminismMode,
}

#[derive(Deserialize)]
struct TraceRow {
    job_id: u32,
    arrival_s: f64,
    #[serde(rename = "minP")]
    min_p: usize,
    #[serde(rename = "maxP")]
    max_p: usize,
    total_minibatches: u64,
    workload_key: String,
    determinism: String,
}

pub const TRACE_HEADER: &str = "job_id,arrival_s,minP,maxP,total_minibatches,workload_key,determinism";

pub fn parse_trace(text: &str) -> Result<Vec<TraceJob>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Input(e.to_string()))?;
    let got: Vec<&str> = header.iter().collect();
    if got.join(",") != TRACE_HEADER {
        return Err(Error::Input(format!("trace header must be `{TRACE_HEADER}`")));
    }
    let mut jobs = Vec::new();
    let mut ids = BTreeSet::new();
    for (line, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = row.map_err(|e| Error::Input(format!("trace row {}: {e}", line + 1)))?;
        let determinism = DeterminismMode::from_str(&row.determinism)?;
        if !(row.arrival_s.is_finite() && row.arrival_s >= 0.0) {
            return Err(Error::Input(format!("job {}: bad arrival time", row.job_id)));
        }
        if row.max_p == 0 || row.min_p > row.max_p || row.total_minibatches == 0 {
            return Err(Error::Input(format!(
                "job {}: need 0 <= minP <= maxP, maxP >= 1 and total_minibatches >= 1",
                row.job_id
            )));
        }
        if !ids.insert(row.job_id) {
            return Err(Error::Input(format!("job id {} repeated", row.job_id)));
        }
        jobs.push(TraceJob {
            job_id: row.job_id,
            arrival_s: row.arrival_s,
            min_p: row.min_p,
            max_p: row.max_p,
            total_minibatches: row.total_minibatches,
            workload_key: row.workload_key,
            determinism,
        });
    }
    if jobs.is_empty() {
        return Err(Error::Input("trace has no jobs".into()));
    }
    Ok(jobs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobProposal {
    pub job_id: u32,
    pub proposal: Proposal,
}

/// Scan order: higher speedup per GPU, then more GPUs, then lower job id.
pub fn proposal_order(a: &JobProposal, b: &JobProposal) -> Ordering {
    b.proposal
        .speedup_per_gpu
        .total_cmp(&a.proposal.speedup_per_gpu)
        .then_with(|| b.proposal.gpu_delta.cmp(&a.proposal.gpu_delta))
        .then_with(|| a.job_id.cmp(&b.job_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOutcome {
    /// Indices into the input, in scan order.
    pub order: Vec<usize>,
    pub approved: Vec<usize>,
    /// Scanned but not satisfiable with what was left.
    pub skipped: Vec<usize>,
    pub remaining: Vec<usize>,
}

/// Greedy approval in [`proposal_order`]. Unsatisfiable proposals are
/// dropped and the scan moves on; it stops once no GPU is left.
pub fn schedule(proposals: &[JobProposal], available: &[usize]) -> ScheduleOutcome {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposal_order(&proposals[a], &proposals[b]).then(a.cmp(&b)));
    let mut remaining = available.to_vec();
    let mut approved = Vec::new();
    let mut skipped = Vec::new();
    for &i in &order {
        if remaining.iter().all(|&r| r == 0) {
            break;
        }
        let p = &proposals[i].proposal;
        match remaining.get_mut(p.gpu_type) {
            Some(r) if *r >= p.gpu_delta => {
                *r -= p.gpu_delta;
                approved.push(i);
            }
            _ => skipped.push(i),
        }
    }
    ScheduleOutcome { order, approved, skipped, remaining }
}
