//! Deterministic distributed sampler and shared data-worker pool.
//!
//! Every logical worker (EST) `i` owns `lanes_per_est` virtual data-worker
//! states `R(i, j)`, exactly as it would with dedicated loader processes.
//! Mini-batch `m` of EST `i` is always prepared from lane `j = m mod lanes`,
//! whichever physical worker slot happens to pick the task up. Physical slots
//! take turns pulling states from the queuing buffer and committing them
//! back, so batch bytes depend only on `(seed, epoch, m, i)`.
//!
//! The buffer keeps the lane state each not-yet-consumed mini-batch was
//! prepared from; a checkpoint carries those states so a restarted job
//! regenerates the same batches.

use std::collections::{BTreeMap, VecDeque};

use crate::detcore::model::{Sample, INPUT_DIM};
use crate::detcore::rng::Rng64;
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

const LANE_TAG: u64 = 0x4C41_4E45;
const DATA_TAG: u64 = 0x4441_5441;

/// One epoch's sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    pub seed: u64,
    pub epoch: u64,
    pub dataset_size: usize,
    pub total_p: usize,
    /// Rows per EST per mini-batch; the ragged tail shorter than
    /// `total_p × micro_batch` is dropped.
    pub micro_batch: usize,
    pub shuffle: bool,
}

impl SamplePlan {
    pub fn usable_len(&self) -> usize {
        let stride = self.total_p * self.micro_batch.max(1);
        self.dataset_size - self.dataset_size % stride
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.usable_len() / (self.total_p * self.micro_batch.max(1))
    }
}

/// Per-EST index lists for one epoch. Position `t` of the (optionally
/// shuffled) index list goes to EST `t mod total_p`.
pub fn epoch_indices(plan: &SamplePlan) -> Result<Vec<Vec<u32>>> {
    if plan.total_p == 0 {
        return Err(Error::Config("total_p must be >= 1".into()));
    }
    if plan.dataset_size < plan.total_p {
        return Err(Error::Config(format!(
            "dataset of {} rows cannot feed {} workers",
            plan.dataset_size, plan.total_p
        )));
    }
    let mut order: Vec<u32> = (0..plan.dataset_size as u32).collect();
    if plan.shuffle {
        Rng64::new(plan.seed ^ plan.epoch).shuffle(&mut order);
    }
    order.truncate(plan.usable_len());
    let mut lists = vec![Vec::with_capacity(order.len() / plan.total_p); plan.total_p];
    for (t, idx) in order.into_iter().enumerate() {
        lists[t % plan.total_p].push(idx);
    }
    Ok(lists)
}

/// The synthetic regression dataset every run draws from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Sample>,
}

impl Dataset {
    /// `x ~ U[-1, 1]^d`, `y = sin(w·x) + 0.1·x₀²` for a seeded direction `w`.
    pub fn synthetic(seed: u64, n: usize) -> Self {
        let mut rng = Rng64::keyed(&[seed, DATA_TAG]);
        let mut dir = [0.0; INPUT_DIM];
        for w in &mut dir {
            *w = 2.0 * rng.uniform01() - 1.0;
        }
        let rows = (0..n)
            .map(|_| {
                let mut x = [0.0; INPUT_DIM];
                for v in &mut x {
                    *v = 2.0 * rng.uniform01() - 1.0;
                }
                let mut dot = 0.0;
                for i in 0..INPUT_DIM {
                    dot += dir[i] * x[i];
                }
                Sample { x, y: dot.sin() + 0.1 * (x[0] * x[0]) }
            })
            .collect();
        Self { rows }
    }
}

/// The recorded state of virtual data worker `worker` of EST `est`, as it was
/// before preparing mini-batch `minibatch_idx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerState {
    pub est: u32,
    pub worker: u32,
    pub rng: Rng64,
    pub minibatch_idx: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub state: WorkerState,
    /// Physical worker slot that prepared the batch. Not part of the output.
    pub slot: usize,
    pub batch: Vec<Sample>,
    pub consumed: bool,
}

impl QueueEntry {
    /// Position of this micro-batch in the global batch stream.
    pub fn batch_id(&self, total_p: usize) -> u64 {
        self.state.minibatch_idx * total_p as u64 + self.state.est as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub dataset_size: usize,
    pub micro_batch: usize,
    /// Uniform jitter half-width applied to every feature of a sample; 0
    /// disables augmentation.
    pub jitter: f64,
    pub lanes_per_est: usize,
    pub prefetch_depth: usize,
    pub shared_workers: usize,
    pub shuffle: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset_size: 1024,
            micro_batch: 16,
            jitter: 0.05,
            lanes_per_est: 2,
            prefetch_depth: 2,
            shared_workers: 2,
            shuffle: true,
        }
    }
}

/// How physical worker slots pick up ready tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotSchedule {
    /// Tasks in `(minibatch, est)` order, slots round-robin.
    InOrder,
    /// Any ready lane may go next, chosen by a seeded RNG.
    Shuffled(u64),
}

#[derive(Debug, Clone)]
pub struct DataPipe {
    cfg: DataConfig,
    total_p: usize,
    dataset: Dataset,
    epoch_cache: Option<(u64, Vec<Vec<u32>>)>,
    /// Lane states after the last task each lane completed, keyed `(est, lane)`.
    frontier: BTreeMap<(u32, u32), Rng64>,
    queue: VecDeque<QueueEntry>,
    next_produce: u64,
    next_consume: u64,
    slot_turn: usize,
}

impl DataPipe {
    pub fn new(cfg: DataConfig, total_p: usize) -> Result<Self> {
        if cfg.shared_workers == 0 {
            return Err(Error::Config("at least one shared data worker is required".into()));
        }
        if total_p == 0 {
            return Err(Error::Config("total_p must be >= 1".into()));
        }
        if cfg.lanes_per_est == 0 || cfg.micro_batch == 0 {
            return Err(Error::Config("lanes_per_est and micro_batch must be >= 1".into()));
        }
        let pipe = Self {
            dataset: Dataset::synthetic(cfg.seed, cfg.dataset_size),
            cfg,
            total_p,
            epoch_cache: None,
            frontier: BTreeMap::new(),
            queue: VecDeque::new(),
            next_produce: 0,
            next_consume: 0,
            slot_turn: 0,
        };
        if pipe.plan(0).steps_per_epoch() == 0 {
            return Err(Error::Config(format!(
                "dataset of {} rows is smaller than one global batch of {}",
                pipe.cfg.dataset_size,
                total_p * pipe.cfg.micro_batch
            )));
        }
        epoch_indices(&pipe.plan(0))?;
        Ok(pipe)
    }

    pub fn config(&self) -> &DataConfig {
        &self.cfg
    }

    pub fn set_shared_workers(&mut self, w: usize) -> Result<()> {
        if w == 0 {
            return Err(Error::Config("at least one shared data worker is required".into()));
        }
        self.cfg.shared_workers = w;
        Ok(())
    }

    pub fn plan(&self, epoch: u64) -> SamplePlan {
        SamplePlan {
            seed: self.cfg.seed,
            epoch,
            dataset_size: self.cfg.dataset_size,
            total_p: self.total_p,
            micro_batch: self.cfg.micro_batch,
            shuffle: self.cfg.shuffle,
        }
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.plan(0).steps_per_epoch() as u64
    }

    pub fn epoch_of(&self, minibatch: u64) -> u64 {
        minibatch / self.steps_per_epoch()
    }

    pub fn queue(&self) -> &VecDeque<QueueEntry> {
        &self.queue
    }

    pub fn next_consume(&self) -> u64 {
        self.next_consume
    }

    fn lane_of(&self, minibatch: u64) -> u32 {
        ((minibatch % self.steps_per_epoch()) % self.cfg.lanes_per_est as u64) as u32
    }

    fn first_use_in_epoch(&self, minibatch: u64) -> bool {
        minibatch % self.steps_per_epoch() < self.cfg.lanes_per_est as u64
    }

    fn fresh_lane(&self, epoch: u64, est: u32, lane: u32) -> Rng64 {
        Rng64::keyed(&[self.cfg.seed, epoch, est as u64, lane as u64, LANE_TAG])
    }

    fn indices_for(&mut self, epoch: u64) -> &Vec<Vec<u32>> {
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let lists = epoch_indices(&self.plan(epoch)).expect("plan validated at construction");
            self.epoch_cache = Some((epoch, lists));
        }
        &self.epoch_cache.as_ref().unwrap().1
    }

    /// Prepare the micro-batch for `state`, returning it with the lane state
    /// left behind.
    fn materialize(&mut self, state: &WorkerState) -> (Vec<Sample>, Rng64) {
        let steps = self.steps_per_epoch();
        let epoch = state.minibatch_idx / steps;
        let m = (state.minibatch_idx % steps) as usize;
        let b = self.cfg.micro_batch;
        let jitter = self.cfg.jitter;
        let idx: Vec<u32> = self.indices_for(epoch)[state.est as usize][m * b..(m + 1) * b].to_vec();
        let mut rng = state.rng;
        let batch = idx
            .iter()
            .map(|&i| {
                let mut s = self.dataset.rows[i as usize];
                if jitter != 0.0 {
                    let delta = (rng.uniform01() - 0.5) * 2.0 * jitter;
                    for v in &mut s.x {
                        *v += delta;
                    }
                }
                s
            })
            .collect();
        (batch, rng)
    }

    /// Run every task for mini-batches `next_produce..=through` on the shared
    /// slots.
    pub fn prefetch_through(&mut self, through: u64, schedule: SlotSchedule) {
        if through < self.next_produce {
            return;
        }
        // One FIFO of tasks per (est, lane); a lane's tasks are serialized
        // because each starts from the state its predecessor committed.
        let mut lanes: BTreeMap<(u32, u32), VecDeque<u64>> = BTreeMap::new();
        for m in self.next_produce..=through {
            let lane = self.lane_of(m);
            for est in 0..self.total_p as u32 {
                lanes.entry((est, lane)).or_default().push_back(m);
            }
        }
        let mut picker = match schedule {
            SlotSchedule::InOrder => None,
            SlotSchedule::Shuffled(seed) => Some(Rng64::new(seed)),
        };
        let mut produced = Vec::new();
        loop {
            let ready: Vec<(u32, u32)> = lanes
                .iter()
                .filter(|(_, q)| !q.is_empty())
                .map(|(k, _)| *k)
                .collect();
            if ready.is_empty() {
                break;
            }
            let key = match picker.as_mut() {
                None => *ready
                    .iter()
                    .min_by_key(|k| (lanes[*k].front().copied(), k.0))
                    .unwrap(),
                Some(rng) => ready[rng.below(ready.len() as u64) as usize],
            };
            let m = lanes.get_mut(&key).unwrap().pop_front().unwrap();
            let (est, lane) = key;
            let start = if self.first_use_in_epoch(m) {
                self.fresh_lane(self.epoch_of(m), est, lane)
            } else {
                self.frontier[&key]
            };
            let state = WorkerState { est, worker: lane, rng: start, minibatch_idx: m };
            let (batch, after) = self.materialize(&state);
            self.frontier.insert(key, after);
            let slot = self.slot_turn % self.cfg.shared_workers;
            self.slot_turn += 1;
            produced.push(QueueEntry { state, slot, batch, consumed: false });
        }
        produced.sort_by_key(|e| (e.state.minibatch_idx, e.state.est));
        self.queue.extend(produced);
        self.next_produce = through + 1;
    }

    /// Hand EST `est` its micro-batch for `minibatch`, prefetching as needed.
    pub fn next_batch(&mut self, est: u32, minibatch: u64) -> Result<Vec<Sample>> {
        if minibatch < self.next_consume {
            return Err(Error::Progress(format!(
                "mini-batch {minibatch} was already consumed (next is {})",
                self.next_consume
            )));
        }
        if est as usize >= self.total_p {
            return Err(Error::Input(format!("EST {est} out of range")));
        }
        self.prefetch_through(minibatch + self.cfg.prefetch_depth as u64, SlotSchedule::InOrder);
        let entry = self
            .queue
            .iter_mut()
            .find(|e| e.state.minibatch_idx == minibatch && e.state.est == est)
            .ok_or_else(|| Error::Progress(format!("no queued batch for ({minibatch}, {est})")))?;
        if entry.consumed {
            return Err(Error::Progress(format!(
                "batch for mini-batch {minibatch}, EST {est} already consumed"
            )));
        }
        entry.consumed = true;
        Ok(entry.batch.clone())
    }

    /// Retire mini-batch `minibatch` once every EST has consumed it.
    pub fn commit(&mut self, minibatch: u64) -> Result<()> {
        if minibatch != self.next_consume {
            return Err(Error::Progress(format!(
                "commit of mini-batch {minibatch} out of order (expected {})",
                self.next_consume
            )));
        }
        let pending = self
            .queue
            .iter()
            .filter(|e| e.state.minibatch_idx == minibatch && !e.consumed)
            .count();
        if pending > 0 {
            return Err(Error::Progress(format!(
                "mini-batch {minibatch} still has {pending} unconsumed micro-batches"
            )));
        }
        self.queue.retain(|e| e.state.minibatch_idx != minibatch);
        self.next_consume += 1;
        Ok(())
    }

    /// The buffered states for mini-batches after `consumed_through`.
    pub fn drain_for_checkpoint(&self, consumed_through: Option<u64>) -> Vec<WorkerState> {
        self.queue
            .iter()
            .filter(|e| consumed_through.map_or(true, |c| e.state.minibatch_idx > c))
            .map(|e| e.state)
            .collect()
    }

    /// Equality on everything that determines future batches; ignores the
    /// transient worker-slot bookkeeping.
    pub fn same_state(&self, other: &Self) -> bool {
        self.cfg == other.cfg
            && self.total_p == other.total_p
            && self.frontier == other.frontier
            && self.next_produce == other.next_produce
            && self.next_consume == other.next_consume
            && self.queue.len() == other.queue.len()
            && self
                .queue
                .iter()
                .zip(&other.queue)
                .all(|(a, b)| a.state == b.state && a.batch == b.batch && a.consumed == b.consumed)
    }

    pub fn encode(&self, w: &mut Writer) {
        let c = &self.cfg;
        w.u64(c.seed);
        w.u64(c.dataset_size as u64);
        w.u64(c.micro_batch as u64);
        w.f64(c.jitter);
        w.u32(c.lanes_per_est as u32);
        w.u32(c.prefetch_depth as u32);
        w.u32(c.shared_workers as u32);
        w.u8(c.shuffle as u8);
        w.u64(self.next_consume);
        w.len_u32(self.frontier.len());
        for (&(est, lane), rng) in &self.frontier {
            w.u32(est);
            w.u32(lane);
            w.u64(rng.state);
        }
        let states = self.drain_for_checkpoint(self.next_consume.checked_sub(1));
        w.len_u32(states.len());
        for s in states {
            w.u32(s.est);
            w.u32(s.worker);
            w.u64(s.rng.state);
            w.u64(s.minibatch_idx);
        }
    }

    pub fn decode(r: &mut Reader<'_>, total_p: usize) -> Result<Self> {
        let at = r.offset();
        let cfg = DataConfig {
            seed: r.u64()?,
            dataset_size: r.u64()? as usize,
            micro_batch: r.u64()? as usize,
            jitter: r.f64()?,
            lanes_per_est: r.u32()? as usize,
            prefetch_depth: r.u32()? as usize,
            shared_workers: r.u32()? as usize,
            shuffle: r.u8()? != 0,
        };
        let mut pipe = Self::new(cfg, total_p)
            .map_err(|e| Error::Format { offset: at, msg: format!("data config: {e}") })?;
        pipe.next_consume = r.u64()?;
        pipe.next_produce = pipe.next_consume;
        let n = r.len(16)?;
        for _ in 0..n {
            let est = r.u32()?;
            let lane = r.u32()?;
            pipe.frontier.insert((est, lane), Rng64::new(r.u64()?));
        }
        let n = r.len(24)?;
        for _ in 0..n {
            let at = r.offset();
            let state = WorkerState {
                est: r.u32()?,
                worker: r.u32()?,
                rng: Rng64::new(r.u64()?),
                minibatch_idx: r.u64()?,
            };
            if state.est as usize >= total_p || state.minibatch_idx < pipe.next_consume {
                return Err(Error::Format { offset: at, msg: "queued worker state out of range".into() });
            }
            let (batch, _) = pipe.materialize(&state);
            let slot = pipe.slot_turn % pipe.cfg.shared_workers;
            pipe.slot_turn += 1;
            pipe.next_produce = pipe.next_produce.max(state.minibatch_idx + 1);
            pipe.queue.push_back(QueueEntry { state, slot, batch, consumed: false });
        }
        Ok(pipe)
    }
}
