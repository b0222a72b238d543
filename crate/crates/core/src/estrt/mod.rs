//! The thread-multiplexed training runtime.
//!
//! A job always trains with `max_p` logical workers (ESTs), whatever the
//! physical layout. Each executor owns one model/optimizer replica and runs
//! its assigned ESTs one after another for every mini-batch, parking each
//! finished EST's gradients on the host. After all ESTs finish, gradients
//! are synchronized and a single optimizer step is applied and mirrored to
//! every executor.
//!
//! Which bits survive a change of layout depends on [`DeterminismMode`]:
//!
//! - D0 pins seeds and kernel choice for a fixed layout.
//! - D1 additionally synchronizes over fixed virtual ranks and carries the
//!   communication bucket map across restarts.
//! - D2 forces hardware-agnostic kernels so device kinds can change too.

mod checkpoint;
pub mod memory;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{checkpoint_restore, checkpoint_save, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, EST_RECORD_BYTES};

use crate::comm::{self, BucketMap};
use crate::datapipe::{DataConfig, DataPipe};
use crate::detcore::model::{
    forward_backward, sgd_step, OptState, PassState, Sample, ToyModel, TrackedStat, PARAM_COUNT,
};
use crate::detcore::reduce::{KernelProfile, ReduceVariant};
use crate::detcore::rng::Rng64;
use crate::error::{Error, Result};
use crate::planner::{DevicePool, PlanConfig};
use memory::MemoryMeter;

const DROPOUT_TAG: u64 = 0x4452_4F50;
const AUTOTUNE_TAG: u64 = 0x4155_544F;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeterminismMode {
    pub d0: bool,
    pub d1: bool,
    pub d2: bool,
}

impl DeterminismMode {
    pub const NONE: Self = Self { d0: false, d1: false, d2: false };
    pub const D0: Self = Self { d0: true, d1: false, d2: false };
    pub const D1: Self = Self { d0: true, d1: true, d2: false };
    pub const D1D2: Self = Self { d0: true, d1: true, d2: true };

    pub fn validate(self) -> Result<Self> {
        if self.d1 && !self.d0 {
            return Err(Error::Config("D1 requires D0".into()));
        }
        Ok(self)
    }

    pub(crate) fn bits(self) -> u8 {
        self.d0 as u8 | (self.d1 as u8) << 1 | (self.d2 as u8) << 2
    }

    pub(crate) fn from_bits(b: u8) -> Option<Self> {
        if b & !0b111 != 0 {
            return None;
        }
        Self { d0: b & 1 != 0, d1: b & 2 != 0, d2: b & 4 != 0 }.validate().ok()
    }
}

impl fmt::Display for DeterminismMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match (self.d0, self.d1, self.d2) {
            (false, false, false) => "none",
            (false, false, true) => "d2",
            (true, false, false) => "d0",
            (true, false, true) => "d0d2",
            (true, true, false) => "d1",
            (true, true, true) => "d1d2",
            (false, true, _) => "invalid",
        };
        f.write_str(s)
    }
}

impl FromStr for DeterminismMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::NONE),
            "d0" => Ok(Self::D0),
            "d0d2" | "d0+d2" => Ok(Self { d0: true, d1: false, d2: true }),
            "d1" | "d0d1" => Ok(Self::D1),
            "d1d2" | "d1+d2" | "d0d1d2" => Ok(Self::D1D2),
            other => Err(Error::Config(format!("unknown determinism mode `{other}`"))),
        }
    }
}

/// All state owned by one logical worker.
#[derive(Debug, Clone, PartialEq)]
pub struct EstContext {
    pub virtual_rank: u32,
    pub dropout_rng: Rng64,
    pub stat: TrackedStat,
    /// Host-side copy of gradients while a mini-batch is in flight.
    pub pending_grads: Option<Vec<f64>>,
    pub minibatch_idx: u64,
}

impl EstContext {
    pub fn new(seed: u64, virtual_rank: u32) -> Self {
        Self {
            virtual_rank,
            dropout_rng: Rng64::keyed(&[seed, virtual_rank as u64, DROPOUT_TAG]),
            stat: TrackedStat::default(),
            pending_grads: None,
            minibatch_idx: 0,
        }
    }

    fn pass_state(&mut self) -> PassState<'_> {
        PassState {
            virtual_rank: self.virtual_rank,
            dropout_rng: &mut self.dropout_rng,
            stat: &mut self.stat,
        }
    }
}

/// One executor slot of a layout: a device kind and, optionally, how many
/// ESTs it hosts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutorSpec {
    pub device_kind: String,
    pub threads: Option<usize>,
}

impl ExecutorSpec {
    pub fn new(device_kind: &str, threads: usize) -> Self {
        Self { device_kind: device_kind.to_string(), threads: Some(threads) }
    }

    pub fn auto(device_kind: &str) -> Self {
        Self { device_kind: device_kind.to_string(), threads: None }
    }
}

/// Contiguous-by-rank assignment of `max_p` ESTs onto a layout.
///
/// With explicit thread counts they must sum to `max_p` and executor `e` takes
/// the next `threads[e]` ranks. Without them each executor takes
/// `ceil(max_p / E)` ranks in turn.
pub fn assign_ranks(layout: &[ExecutorSpec], max_p: usize) -> Result<Vec<Vec<u32>>> {
    if layout.is_empty() {
        return Err(Error::Config("layout has no executors".into()));
    }
    let given: Vec<usize> = layout.iter().filter_map(|e| e.threads).collect();
    let counts: Vec<usize> = if given.len() == layout.len() {
        let total: usize = given.iter().sum();
        if total != max_p {
            return Err(Error::Config(format!(
                "layout thread counts sum to {total}, job has {max_p} ESTs"
            )));
        }
        given
    } else if given.is_empty() {
        let per = max_p.div_ceil(layout.len());
        (0..layout.len())
            .map(|e| per.min(max_p.saturating_sub(e * per)))
            .collect()
    } else {
        return Err(Error::Config("give thread counts for all executors or none".into()));
    };
    if let Some(e) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!("executor {e} would host no EST")));
    }
    let mut next = 0u32;
    Ok(counts
        .into_iter()
        .map(|c| {
            let ranks: Vec<u32> = (next..next + c as u32).collect();
            next += c as u32;
            ranks
        })
        .collect())
}

/// One device process: its kernels, its ESTs and its model replica.
#[derive(Debug, Clone)]
pub struct ExecutorState {
    pub device_kind: String,
    pub kernel_profile: KernelProfile,
    pub assigned_ests: Vec<u32>,
    pub model: ToyModel,
    pub opt: OptState,
    /// Gradients of the most recent EST, still resident on the device.
    pub device_grads: Option<Vec<f64>>,
    pub memory: MemoryMeter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_p: usize,
    pub lr: f64,
    pub momentum: f64,
    pub dropout: f64,
    pub bucket_cap: usize,
    /// Collective algorithm used for gradient synchronization.
    pub collective: ReduceVariant,
    pub determinism: DeterminismMode,
    /// Only consulted without D0, where kernels are picked by run-to-run
    /// varying autotuning.
    pub autotune_nonce: u64,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_p: 4,
            lr: 0.05,
            momentum: 0.9,
            dropout: 0.5,
            bucket_cap: 64,
            collective: ReduceVariant::Tree(2),
            determinism: DeterminismMode::D1D2,
            autotune_nonce: 0,
            data: DataConfig::default(),
        }
    }
}

/// Everything a job needs to continue training, shared by all its ESTs.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub cfg: TrainConfig,
    pub ests: Vec<EstContext>,
    pub executors: Vec<ExecutorState>,
    pub bucket_map: BucketMap,
    /// Whether the post-first-mini-batch bucket rebuild has happened.
    pub buckets_rebuilt: bool,
    pub data: DataPipe,
    pub global_step: u64,
    pub epoch: u64,
}

impl TrainingState {
    pub fn new(mut cfg: TrainConfig, layout: &[ExecutorSpec]) -> Result<Self> {
        cfg.determinism.validate()?;
        if cfg.max_p == 0 {
            return Err(Error::Config("max_p must be >= 1".into()));
        }
        cfg.data.seed = cfg.seed;
        let data = DataPipe::new(cfg.data.clone(), cfg.max_p)?;
        let ests = (0..cfg.max_p as u32).map(|r| EstContext::new(cfg.seed, r)).collect();
        let model = ToyModel::init(cfg.seed);
        let opt = OptState::new(cfg.lr, cfg.momentum);
        let bucket_map = BucketMap::initial(PARAM_COUNT, cfg.bucket_cap)?;
        let mut ts = Self {
            cfg,
            ests,
            executors: Vec::new(),
            bucket_map,
            buckets_rebuilt: false,
            data,
            global_step: 0,
            epoch: 0,
        };
        ts.executors = ts.build_executors(layout, &model, &opt)?;
        Ok(ts)
    }

    pub(crate) fn build_executors(
        &self,
        layout: &[ExecutorSpec],
        model: &ToyModel,
        opt: &OptState,
    ) -> Result<Vec<ExecutorState>> {
        let groups = assign_ranks(layout, self.cfg.max_p)?;
        layout
            .iter()
            .zip(groups)
            .map(|(spec, ranks)| {
                Ok(ExecutorState {
                    device_kind: spec.device_kind.clone(),
                    kernel_profile: KernelProfile::for_device(&spec.device_kind, self.cfg.determinism.d2)?,
                    assigned_ests: ranks,
                    model: model.clone(),
                    opt: opt.clone(),
                    device_grads: None,
                    memory: MemoryMeter::default(),
                })
            })
            .collect()
    }

    pub fn max_p(&self) -> usize {
        self.cfg.max_p
    }

    pub fn model(&self) -> &ToyModel {
        &self.executors[0].model
    }

    pub fn opt(&self) -> &OptState {
        &self.executors[0].opt
    }

    /// Thread counts of the current layout, executor by executor.
    pub fn layout_threads(&self) -> Vec<usize> {
        self.executors.iter().map(|e| e.assigned_ests.len()).collect()
    }

    pub fn layout(&self) -> Vec<ExecutorSpec> {
        self.executors
            .iter()
            .map(|e| ExecutorSpec::new(&e.device_kind, e.assigned_ests.len()))
            .collect()
    }

    /// Whether the state is between mini-batches.
    pub fn at_boundary(&self) -> bool {
        self.ests.iter().all(|e| e.pending_grads.is_none())
            && self.executors.iter().all(|e| e.device_grads.is_none())
    }

    /// Kernel an executor runs this step. Without D0 the choice is left to a
    /// best-fit autotuner whose timing noise is modelled by the nonce.
    fn kernel_for(&self, exec_idx: usize) -> KernelProfile {
        let ex = &self.executors[exec_idx];
        if self.cfg.determinism.d0 {
            return ex.kernel_profile.clone();
        }
        let mut rng = Rng64::keyed(&[self.cfg.autotune_nonce, self.global_step, exec_idx as u64, AUTOTUNE_TAG]);
        let reduce = match rng.below(3) {
            0 => ex.kernel_profile.reduce,
            1 => ReduceVariant::Sequential,
            _ => ReduceVariant::Tree(2),
        };
        KernelProfile { device_kind: ex.device_kind.clone(), reduce }
    }

    fn check_replicas_equal(&self) -> Result<()> {
        let (head, rest) = self.executors.split_first().expect("non-empty layout");
        for (i, ex) in rest.iter().enumerate() {
            let same_model = ex.model.params().iter().zip(head.model.params()).all(|(a, b)| a.to_bits() == b.to_bits());
            let same_opt = ex.opt.velocity.iter().zip(&head.opt.velocity).all(|(a, b)| a.to_bits() == b.to_bits())
                && ex.opt.lr.to_bits() == head.opt.lr.to_bits()
                && ex.opt.momentum.to_bits() == head.opt.momentum.to_bits();
            if !same_model || !same_opt {
                return Err(Error::Corruption(format!(
                    "executor {} replica differs from executor 0 at mini-batch boundary",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Forward-backward for every EST, executor by executor, ESTs in
    /// ascending rank. Leaves gradients parked for [`Self::sync_phase`].
    pub fn compute_phase(&mut self, global_batch: &[Sample]) -> Result<Vec<f64>> {
        let p = self.cfg.max_p;
        if global_batch.is_empty() || global_batch.len() % p != 0 {
            return Err(Error::Config(format!(
                "global batch of {} rows is not divisible into {p} micro-batches",
                global_batch.len()
            )));
        }
        if !self.at_boundary() {
            return Err(Error::State("previous mini-batch has not been synchronized".into()));
        }
        self.check_replicas_equal()?;
        let micro = global_batch.len() / p;
        let mut losses = vec![0.0; p];
        for e in 0..self.executors.len() {
            let kp = self.kernel_for(e);
            let ex = &mut self.executors[e];
            ex.memory.begin_minibatch(PARAM_COUNT);
            let ranks = ex.assigned_ests.clone();
            for (k, &rank) in ranks.iter().enumerate() {
                // Parked gradients of the previous EST leave the device first.
                if let Some(prev) = ex.device_grads.take() {
                    ex.memory.migrate_grads(prev.len());
                    self.ests[ranks[k - 1] as usize].pending_grads = Some(prev);
                }
                let rows = &global_batch[rank as usize * micro..(rank as usize + 1) * micro];
                ex.memory.forward(rows.len());
                let out = forward_backward(&ex.model, rows, self.cfg.dropout, self.ests[rank as usize].pass_state(), &kp)?;
                ex.memory.backward_done(rows.len(), out.grads.len());
                losses[rank as usize] = out.loss;
                ex.device_grads = Some(out.grads);
            }
        }
        Ok(losses)
    }

    /// Gradient of `rank` from wherever it is parked.
    fn grads_of(&self, rank: u32) -> &[f64] {
        if let Some(g) = &self.ests[rank as usize].pending_grads {
            return g;
        }
        self.executors
            .iter()
            .find(|ex| ex.assigned_ests.last() == Some(&rank))
            .and_then(|ex| ex.device_grads.as_deref())
            .expect("every EST produced gradients this mini-batch")
    }

    /// Synchronize parked gradients, apply one optimizer step and mirror it.
    pub fn sync_phase(&mut self) -> Result<()> {
        if self.at_boundary() {
            return Err(Error::State("no gradients to synchronize".into()));
        }
        let p = self.cfg.max_p;
        let synced = if self.cfg.determinism.d1 {
            // Every EST is a participant under its fixed virtual rank.
            let replicas: Vec<Vec<f64>> = (0..p as u32).map(|r| self.grads_of(r).to_vec()).collect();
            comm::allreduce(&replicas, &self.bucket_map, self.cfg.collective)?
        } else {
            // Participants are the physical executors; each first folds its
            // own ESTs' gradients together on the host.
            let replicas: Vec<Vec<f64>> = self
                .executors
                .iter()
                .map(|ex| {
                    let mut acc = vec![0.0; PARAM_COUNT];
                    for &r in &ex.assigned_ests {
                        for (a, g) in acc.iter_mut().zip(self.grads_of(r)) {
                            *a += g;
                        }
                    }
                    acc
                })
                .collect();
            let mut sum = comm::allreduce_sum(&replicas, &self.bucket_map, self.cfg.collective)?;
            for v in &mut sum {
                *v /= p as f64;
            }
            sum
        };

        if !self.buckets_rebuilt {
            let key = self.comm_world();
            let arrival = comm::simulated_arrival_order(PARAM_COUNT, &key);
            self.bucket_map = BucketMap::rebuild_from_arrival(&arrival, self.cfg.bucket_cap)?;
            self.buckets_rebuilt = true;
        }

        let (head, rest) = self.executors.split_first_mut().expect("non-empty layout");
        sgd_step(&mut head.model, &mut head.opt, &synced)?;
        for ex in rest {
            ex.model = head.model.clone();
            ex.opt = head.opt.clone();
        }
        for ex in &mut self.executors {
            ex.device_grads = None;
            ex.memory.end_minibatch();
        }
        for est in &mut self.ests {
            est.pending_grads = None;
            est.minibatch_idx += 1;
        }
        self.global_step += 1;
        self.epoch = self.data.epoch_of(self.global_step);
        Ok(())
    }

    /// The communication world the runtime sets up channels for: the fixed
    /// virtual world under D1, the physical executors otherwise.
    fn comm_world(&self) -> Vec<usize> {
        if self.cfg.determinism.d1 {
            vec![1; self.cfg.max_p]
        } else {
            self.layout_threads()
        }
    }

    /// One full mini-batch on an explicit global batch. Returns per-EST
    /// losses indexed by virtual rank.
    pub fn run_minibatch(&mut self, global_batch: &[Sample]) -> Result<Vec<f64>> {
        let losses = self.compute_phase(global_batch)?;
        self.sync_phase()?;
        Ok(losses)
    }

    /// Pull the next mini-batch from the data pipeline and train on it.
    pub fn step(&mut self) -> Result<Vec<f64>> {
        let m = self.global_step;
        let mut global = Vec::new();
        for rank in 0..self.cfg.max_p as u32 {
            global.extend(self.data.next_batch(rank, m)?);
        }
        let losses = self.run_minibatch(&global)?;
        self.data.commit(m)?;
        Ok(losses)
    }

    /// Checkpoint and restore onto `layout`. Training continues at the same
    /// global step.
    pub fn reconfigure_layout(&mut self, layout: &[ExecutorSpec]) -> Result<()> {
        let bytes = checkpoint_save(self)?;
        *self = checkpoint_restore(&bytes, layout)?;
        Ok(())
    }

    /// Move onto the executor layout described by a planner configuration.
    pub fn reconfigure(&mut self, plan: &PlanConfig, pool: &DevicePool) -> Result<()> {
        let layout = plan.to_layout(pool, self.cfg.max_p)?;
        self.reconfigure_layout(&layout)
    }

    /// State equality on everything a checkpoint carries plus the layout.
    pub fn same_state(&self, other: &Self) -> bool {
        let exec_eq = self.executors.len() == other.executors.len()
            && self.executors.iter().zip(&other.executors).all(|(a, b)| {
                a.device_kind == b.device_kind
                    && a.kernel_profile == b.kernel_profile
                    && a.assigned_ests == b.assigned_ests
                    && a.model.to_bytes() == b.model.to_bytes()
                    && bits_eq(&a.opt.velocity, &b.opt.velocity)
            });
        exec_eq
            && self.cfg == other.cfg
            && self.ests == other.ests
            && self.bucket_map == other.bucket_map
            && self.buckets_rebuilt == other.buckets_rebuilt
            && self.data.same_state(&other.data)
            && self.global_step == other.global_step
            && self.epoch == other.epoch
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[cfg(test)]
mod tests;
