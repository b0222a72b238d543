//! On-demand checkpoint format.
//!
//! ```text
//! "ESCK" | version u32
//! params      : u32 n, n × f64
//! optstate    : f64 lr, f64 momentum, u32 n, n × f64 velocity
//! flags       : u8 determinism bits (D0=1, D1=2, D2=4), u8 buckets_rebuilt,
//!               f64 dropout, u32 bucket_cap, u32 collective fan-in (0 = seq),
//!               u64 seed, u64 autotune nonce
//! bucket_map  : present iff D1; u32 cap, u32 buckets, per bucket u32 len + len × u32
//! est contexts: u32 count, per EST u32 rank, u64 rng, f64 running_mean,
//!               u64 update_count, u64 minibatch_idx
//! queue_buffer: data config, next mini-batch, lane frontier, queued worker states
//! counters    : u64 global_step, u64 epoch
//! ```
//!
//! All integers little-endian, all floats raw binary64 little-endian. Only
//! one replica of model and optimizer is stored: replicas are identical at
//! mini-batch boundaries, which is the only place a checkpoint may be taken.

use super::{DeterminismMode, EstContext, ExecutorSpec, TrainConfig, TrainingState};
use crate::comm::BucketMap;
use crate::datapipe::DataPipe;
use crate::detcore::model::{OptState, ToyModel, TrackedStat, PARAM_COUNT};
use crate::detcore::reduce::ReduceVariant;
use crate::detcore::rng::Rng64;
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ESCK";
pub const CHECKPOINT_VERSION: u32 = 1;
/// Serialized size of one EST context.
pub const EST_RECORD_BYTES: usize = 4 + 8 + 8 + 8 + 8;

pub fn checkpoint_save(ts: &TrainingState) -> Result<Vec<u8>> {
    if !ts.at_boundary() {
        return Err(Error::State("checkpoint requested in the middle of a mini-batch".into()));
    }
    ts.check_replicas_equal()?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);

    w.f64s(ts.model().params());

    let opt = ts.opt();
    w.f64(opt.lr);
    w.f64(opt.momentum);
    w.f64s(&opt.velocity);

    let cfg = &ts.cfg;
    w.u8(cfg.determinism.bits());
    w.u8(ts.buckets_rebuilt as u8);
    w.f64(cfg.dropout);
    w.len_u32(cfg.bucket_cap);
    w.u32(match cfg.collective {
        ReduceVariant::Sequential => 0,
        ReduceVariant::Tree(f) => f as u32,
    });
    w.u64(cfg.seed);
    w.u64(cfg.autotune_nonce);

    if cfg.determinism.d1 {
        ts.bucket_map.encode(&mut w);
    }

    w.len_u32(ts.ests.len());
    for est in &ts.ests {
        w.u32(est.virtual_rank);
        w.u64(est.dropout_rng.state);
        w.f64(est.stat.running_mean);
        w.u64(est.stat.update_count);
        w.u64(est.minibatch_idx);
    }

    ts.data.encode(&mut w);

    w.u64(ts.global_step);
    w.u64(ts.epoch);
    Ok(w.buf)
}

pub fn checkpoint_restore(bytes: &[u8], layout: &[ExecutorSpec]) -> Result<TrainingState> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic".into() });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }

    let at = r.offset();
    let params = r.f64s()?;
    let model = ToyModel::from_params(params).map_err(|e| Error::Format { offset: at, msg: e.to_string() })?;

    let lr = r.f64()?;
    let momentum = r.f64()?;
    let at = r.offset();
    let velocity = r.f64s()?;
    if velocity.len() != PARAM_COUNT {
        return Err(Error::Format { offset: at, msg: format!("velocity has {} entries", velocity.len()) });
    }
    let opt = OptState { lr, momentum, velocity };

    let at = r.offset();
    let determinism = DeterminismMode::from_bits(r.u8()?)
        .ok_or_else(|| Error::Format { offset: at, msg: "invalid determinism flags".into() })?;
    let buckets_rebuilt = r.u8()? != 0;
    let dropout = r.f64()?;
    let bucket_cap = r.u32()? as usize;
    let at = r.offset();
    let collective = match r.u32()? {
        0 => ReduceVariant::Sequential,
        f if f >= 2 => ReduceVariant::Tree(f as usize),
        f => return Err(Error::Format { offset: at, msg: format!("invalid collective fan-in {f}") }),
    };
    let seed = r.u64()?;
    let autotune_nonce = r.u64()?;

    let pinned_map = if determinism.d1 {
        let at = r.offset();
        let bm = BucketMap::decode(&mut r)?;
        bm.validate(PARAM_COUNT)
            .map_err(|e| Error::Format { offset: at, msg: format!("bucket map: {e}") })?;
        Some(bm)
    } else {
        None
    };

    let at = r.offset();
    let n = r.len(EST_RECORD_BYTES)?;
    if n == 0 {
        return Err(Error::Format { offset: at, msg: "checkpoint holds no EST contexts".into() });
    }
    let mut ests = Vec::with_capacity(n);
    for k in 0..n {
        let at = r.offset();
        let est = EstContext {
            virtual_rank: r.u32()?,
            dropout_rng: Rng64::new(r.u64()?),
            stat: TrackedStat { running_mean: r.f64()?, update_count: r.u64()? },
            pending_grads: None,
            minibatch_idx: r.u64()?,
        };
        if est.virtual_rank as usize != k {
            return Err(Error::Format { offset: at, msg: format!("EST {k} records rank {}", est.virtual_rank) });
        }
        ests.push(est);
    }

    let data = DataPipe::decode(&mut r, n)?;
    let global_step = r.u64()?;
    let epoch = r.u64()?;
    if !r.is_empty() {
        return r.fail("trailing bytes after counters");
    }

    let cfg = TrainConfig {
        seed,
        max_p: n,
        lr,
        momentum,
        dropout,
        bucket_cap,
        collective,
        determinism,
        autotune_nonce,
        data: data.config().clone(),
    };
    // Without D1 the communication layer is rebuilt from scratch: buckets go
    // back to static order and are re-derived after the first mini-batch.
    let (bucket_map, buckets_rebuilt) = match pinned_map {
        Some(bm) => (bm, buckets_rebuilt),
        None => (BucketMap::initial(PARAM_COUNT, bucket_cap)?, false),
    };
    let mut ts = TrainingState {
        cfg,
        ests,
        executors: Vec::new(),
        bucket_map,
        buckets_rebuilt,
        data,
        global_step,
        epoch,
    };
    ts.executors = ts.build_executors(layout, &model, &opt)?;
    Ok(ts)
}
