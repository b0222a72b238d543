//! Training runs described by a TOML file with a restart schedule.
//!
//! ```toml
//! seed = 7
//! max_p = 4
//! determinism = "d1d2"
//!
//! [[phase]]
//! steps = 100
//! executors = ["v100:2", "v100:2"]
//!
//! [[phase]]
//! steps = 100
//! executors = ["v100:3", "t4:1"]
//! ```
//!
//! Every phase after the first starts by checkpointing and restoring onto
//! its executors. An executor written without `:threads` gets an even
//! share of the ESTs.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use detscale::datapipe::DataConfig;
use detscale::detcore::ReduceVariant;
use detscale::estrt::{checkpoint_restore, checkpoint_save, DeterminismMode, ExecutorSpec, TrainConfig, TrainingState};

use crate::runlog::{RunLog, StepRecord};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub steps: u64,
    pub executors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dataset_size: Option<usize>,
    pub micro_batch: Option<usize>,
    pub jitter: Option<f64>,
    pub lanes_per_est: Option<usize>,
    pub prefetch_depth: Option<usize>,
    pub shared_workers: Option<usize>,
    pub shuffle: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub seed: u64,
    pub max_p: usize,
    pub determinism: String,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub dropout: Option<f64>,
    pub bucket_cap: Option<usize>,
    pub collective: Option<String>,
    #[serde(default)]
    pub autotune_nonce: u64,
    /// Dump full parameters every this many steps; 0 never.
    #[serde(default)]
    pub dump_every: u64,
    #[serde(default)]
    pub data: DataSection,
    pub phase: Vec<Phase>,
}

pub fn parse_executor(s: &str) -> Result<ExecutorSpec> {
    match s.split_once(':') {
        None if !s.is_empty() => Ok(ExecutorSpec::auto(s)),
        Some((kind, n)) if !kind.is_empty() => {
            let n: usize = n.parse().with_context(|| format!("executor `{s}`: bad thread count"))?;
            Ok(ExecutorSpec::new(kind, n))
        }
        _ => bail!("executor `{s}` is not `device` or `device:threads`"),
    }
}

impl TrainSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        if spec.phase.is_empty() {
            bail!("at least one [[phase]] is required");
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let dd = DataConfig::default();
        let s = &self.data;
        Ok(TrainConfig {
            seed: self.seed,
            max_p: self.max_p,
            lr: self.lr.unwrap_or(d.lr),
            momentum: self.momentum.unwrap_or(d.momentum),
            dropout: self.dropout.unwrap_or(d.dropout),
            bucket_cap: self.bucket_cap.unwrap_or(d.bucket_cap),
            collective: match &self.collective {
                Some(c) => c.parse::<ReduceVariant>()?,
                None => d.collective,
            },
            determinism: self.determinism.parse::<DeterminismMode>()?.validate()?,
            autotune_nonce: self.autotune_nonce,
            data: DataConfig {
                seed: self.seed,
                dataset_size: s.dataset_size.unwrap_or(dd.dataset_size),
                micro_batch: s.micro_batch.unwrap_or(dd.micro_batch),
                jitter: s.jitter.unwrap_or(dd.jitter),
                lanes_per_est: s.lanes_per_est.unwrap_or(dd.lanes_per_est),
                prefetch_depth: s.prefetch_depth.unwrap_or(dd.prefetch_depth),
                shared_workers: s.shared_workers.unwrap_or(dd.shared_workers),
                shuffle: s.shuffle.unwrap_or(dd.shuffle),
            },
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.phase.iter().map(|p| p.steps).sum()
    }
}

pub struct TrainOutput {
    pub log: RunLog,
    pub state: TrainingState,
}

pub fn run(spec: &TrainSpec) -> Result<TrainOutput> {
    let cfg = spec.train_config()?;
    let mut state: Option<TrainingState> = None;
    let mut log = RunLog::default();
    for (i, phase) in spec.phase.iter().enumerate() {
        let layout = phase.executors.iter().map(|e| parse_executor(e)).collect::<Result<Vec<_>>>()?;
        let mut ts = match state.take() {
            None => TrainingState::new(cfg.clone(), &layout)?,
            Some(prev) => checkpoint_restore(&checkpoint_save(&prev)?, &layout).with_context(|| format!("phase {}", i + 1))?,
        };
        for _ in 0..phase.steps {
            let losses = ts.step()?;
            let dump = spec.dump_every > 0 && ts.global_step % spec.dump_every == 0;
            log.records.push(StepRecord::capture(&ts, &losses, dump));
        }
        state = Some(ts);
    }
    Ok(TrainOutput { log, state: state.expect("at least one phase") })
}
