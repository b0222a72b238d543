//! Configuration enumeration and scale-out proposals.

use std::cmp::Ordering;
use std::collections::HashSet;

use super::{waste_model, DevicePool, PlanConfig, WorkloadProfile, DEFAULT_WASTE_THRESHOLD};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    pub min_p: usize,
    pub max_p: usize,
    /// Fraction, compared against `waste_norm / 100`.
    pub waste_threshold: f64,
    /// Only configurations drawing on a single device type.
    pub homogeneous: bool,
}

impl SearchSpace {
    pub fn new(min_p: usize, max_p: usize) -> Self {
        Self { min_p, max_p, waste_threshold: DEFAULT_WASTE_THRESHOLD, homogeneous: false }
    }
}

/// One way to use a device type: `n` GPUs, `m` executors each, `t` ESTs per
/// executor. `n == 0` means the type is unused.
#[derive(Debug, Clone, Copy)]
struct TypeChoice {
    n: usize,
    m: usize,
    t: usize,
    /// `MC = m·C·I(m)`.
    mc: f64,
}

const UNUSED: TypeChoice = TypeChoice { n: 0, m: 0, t: 0, mc: 0.0 };

/// Executor counts usable on each type, with the per-executor capability
/// `C·I(m)` for each.
fn executor_options(pool: &DevicePool, profile: &WorkloadProfile, space: &SearchSpace) -> Result<Vec<Vec<(usize, f64)>>> {
    if profile.capability.len() != pool.types.len() {
        return Err(Error::Input(format!(
            "profile has {} capabilities for {} device types",
            profile.capability.len(),
            pool.types.len()
        )));
    }
    if space.max_p == 0 {
        return Err(Error::Input("maxP must be >= 1".into()));
    }
    pool.validate()?;
    Ok(pool
        .types
        .iter()
        .zip(&profile.capability)
        .map(|(ty, &c)| {
            if !(c > 0.0) || ty.count == 0 {
                return Vec::new();
            }
            (1..=ty.max_executors(profile.mu_per_executor).min(space.max_p))
                .map(|m| (m, c * ty.interference[m - 1]))
                .collect()
        })
        .collect())
}

fn accept(choices: &[TypeChoice], space: &SearchSpace, buf: &mut Buffers) -> Option<PlanConfig> {
    let gpus: usize = choices.iter().map(|c| c.n).sum();
    if gpus < space.min_p.max(1) || gpus > space.max_p {
        return None;
    }
    if space.homogeneous && choices.iter().filter(|c| c.n > 0).count() > 1 {
        return None;
    }
    buf.nums.clear();
    buf.cus.clear();
    buf.caps.clear();
    for c in choices {
        buf.nums.push(c.n);
        buf.cus.push(c.m * c.t);
        buf.caps.push(c.mc);
    }
    let cap: usize = buf.nums.iter().zip(&buf.cus).map(|(n, a)| n * a).sum();
    if cap < space.max_p {
        return None;
    }
    let e = waste_model(&buf.nums, &buf.cus, &buf.caps, space.max_p).ok()?;
    if !(e.waste_norm <= space.waste_threshold * 100.0) {
        return None;
    }
    Some(PlanConfig {
        nums: buf.nums.clone(),
        executors: choices.iter().map(|c| c.m).collect(),
        threads: choices.iter().map(|c| c.t).collect(),
        cu_capacity: e.cu_capacity,
        f_overload: e.f_overload,
        waste: e.waste,
        waste_norm: e.waste_norm,
        perf: e.perf,
    })
}

#[derive(Default)]
struct Buffers {
    nums: Vec<usize>,
    cus: Vec<usize>,
    caps: Vec<f64>,
}

/// Ranking used everywhere a single best configuration is needed: higher
/// perf first, then fewer GPUs, then lexicographic `nums`, `executors`,
/// `threads`.
pub fn plan_order(a: &PlanConfig, b: &PlanConfig) -> Ordering {
    b.perf
        .total_cmp(&a.perf)
        .then_with(|| a.total_gpus().cmp(&b.total_gpus()))
        .then_with(|| a.nums.cmp(&b.nums))
        .then_with(|| a.executors.cmp(&b.executors))
        .then_with(|| a.threads.cmp(&b.threads))
}

/// Calls `visit` for every feasible configuration. Every `(nums, executors,
/// threads)` triple is produced at most once.
fn for_each_exhaustive(
    pool: &DevicePool,
    profile: &WorkloadProfile,
    space: &SearchSpace,
    visit: &mut dyn FnMut(PlanConfig),
) -> Result<()> {
    let exec = executor_options(pool, profile, space)?;
    let per_type: Vec<Vec<TypeChoice>> = pool
        .types
        .iter()
        .zip(&exec)
        .map(|(ty, opts)| {
            let mut v = vec![UNUSED];
            for n in 1..=ty.count.min(space.max_p) {
                for &(m, r) in opts {
                    for t in 1..=space.max_p / m {
                        v.push(TypeChoice { n, m, t, mc: m as f64 * r });
                    }
                }
            }
            v
        })
        .collect();
    let mut stack = vec![UNUSED; per_type.len()];
    let mut buf = Buffers::default();
    walk(&per_type, 0, 0, &mut stack, space, &mut buf, visit);
    Ok(())
}

fn walk(
    per_type: &[Vec<TypeChoice>],
    i: usize,
    gpus: usize,
    stack: &mut Vec<TypeChoice>,
    space: &SearchSpace,
    buf: &mut Buffers,
    visit: &mut dyn FnMut(PlanConfig),
) {
    if i == per_type.len() {
        if let Some(cfg) = accept(stack, space, buf) {
            visit(cfg);
        }
        return;
    }
    for &c in &per_type[i] {
        if gpus + c.n > space.max_p {
            continue;
        }
        stack[i] = c;
        walk(per_type, i + 1, gpus + c.n, stack, space, buf, visit);
    }
}

/// All feasible configurations, best first.
pub fn enumerate_configs(pool: &DevicePool, profile: &WorkloadProfile, space: &SearchSpace) -> Result<Vec<PlanConfig>> {
    let mut out = Vec::new();
    for_each_exhaustive(pool, profile, space, &mut |c| out.push(c))?;
    out.sort_by(plan_order);
    Ok(out)
}

/// The first entry of [`enumerate_configs`] without materializing the list.
pub fn best_config(pool: &DevicePool, profile: &WorkloadProfile, space: &SearchSpace) -> Result<Option<PlanConfig>> {
    let mut best: Option<PlanConfig> = None;
    for_each_exhaustive(pool, profile, space, &mut |c| {
        if best.as_ref().map_or(true, |b| plan_order(&c, b) == Ordering::Less) {
            best = Some(c);
        }
    })?;
    Ok(best)
}

/// Rounding-based generator: for every `(nums, executors)` choice, sweep
/// `t = k / r_max` for `k = 1..=maxP`, where `r_i = C_i·I(m_i)` is the
/// per-executor capability and `r_max` its maximum over used types, and
/// try `threads_i ∈ {floor(t·r_i), ceil(t·r_i)}`.
pub fn enumerate_configs_grid(pool: &DevicePool, profile: &WorkloadProfile, space: &SearchSpace) -> Result<Vec<PlanConfig>> {
    let exec = executor_options(pool, profile, space)?;
    let shapes: Vec<Vec<(usize, usize, f64)>> = pool
        .types
        .iter()
        .zip(&exec)
        .map(|(ty, opts)| {
            let mut v = vec![(0, 0, 0.0)];
            for n in 1..=ty.count.min(space.max_p) {
                for &(m, r) in opts {
                    v.push((n, m, r));
                }
            }
            v
        })
        .collect();

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut buf = Buffers::default();
    let mut idx = vec![0usize; shapes.len()];
    loop {
        let shape: Vec<(usize, usize, f64)> = idx.iter().zip(&shapes).map(|(&k, s)| s[k]).collect();
        let gpus: usize = shape.iter().map(|s| s.0).sum();
        if gpus >= 1 && gpus <= space.max_p {
            let r_max = shape.iter().filter(|s| s.0 > 0).map(|s| s.2).fold(0.0f64, f64::max);
            for k in 1..=space.max_p {
                let t = k as f64 / r_max;
                let cands: Vec<Vec<usize>> = shape
                    .iter()
                    .map(|&(n, m, r)| {
                        if n == 0 {
                            return vec![0];
                        }
                        let x = t * r;
                        let mut c: Vec<usize> = [x.floor(), x.ceil()]
                            .iter()
                            .map(|&v| v as usize)
                            .filter(|&v| v >= 1 && v * m <= space.max_p)
                            .collect();
                        c.dedup();
                        c
                    })
                    .collect();
                for_each_product(&cands, &mut |threads| {
                    let choices: Vec<TypeChoice> = shape
                        .iter()
                        .zip(threads)
                        .map(|(&(n, m, r), &t)| {
                            if n == 0 {
                                UNUSED
                            } else {
                                TypeChoice { n, m, t, mc: m as f64 * r }
                            }
                        })
                        .collect();
                    if let Some(cfg) = accept(&choices, space, &mut buf) {
                        if seen.insert((cfg.nums.clone(), cfg.executors.clone(), cfg.threads.clone())) {
                            out.push(cfg);
                        }
                    }
                });
            }
        }
        if !advance(&mut idx, &shapes) {
            break;
        }
    }
    out.sort_by(plan_order);
    Ok(out)
}

fn advance<T>(idx: &mut [usize], sets: &[Vec<T>]) -> bool {
    for i in (0..idx.len()).rev() {
        idx[i] += 1;
        if idx[i] < sets[i].len() {
            return true;
        }
        idx[i] = 0;
    }
    false
}

fn for_each_product(sets: &[Vec<usize>], f: &mut dyn FnMut(&[usize])) {
    if sets.iter().any(|s| s.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; sets.len()];
    let mut cur = vec![0usize; sets.len()];
    loop {
        for (i, &k) in idx.iter().enumerate() {
            cur[i] = sets[i][k];
        }
        f(&cur);
        if !advance(&mut idx, sets) {
            break;
        }
    }
}

/// Adding `gpu_delta` GPUs of `gpu_type` to the current grant lets the job
/// run `config`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub config: PlanConfig,
    pub speedup_per_gpu: f64,
    pub gpu_delta: usize,
    pub gpu_type: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposals {
    /// Best configuration on the current grant, if any is feasible.
    pub top1: Option<PlanConfig>,
    pub proposals: Vec<Proposal>,
}

/// Best configuration on `grant` and up to `k` single-GPU scale-out
/// proposals drawn from `free`.
///
/// A grant too small to run at all (fewer than `max(minP, 1)` GPUs) instead
/// gets one proposal per type that brings it to exactly that size, with the
/// resulting perf spread over the added GPUs.
pub fn propose(
    grant: &[usize],
    free: &[usize],
    pool: &DevicePool,
    profile: &WorkloadProfile,
    space: &SearchSpace,
    k: usize,
) -> Result<Proposals> {
    if grant.len() != pool.types.len() {
        return Err(Error::Input("grant vector must match the pool".into()));
    }
    propose_with(grant, free, space, k, &mut |counts| best_config(&pool.with_counts(counts), profile, space))
}

/// [`propose`] over a caller-supplied top-1 search, so callers can memoize
/// it per grant.
pub fn propose_with(
    grant: &[usize],
    free: &[usize],
    space: &SearchSpace,
    k: usize,
    best: &mut dyn FnMut(&[usize]) -> Result<Option<PlanConfig>>,
) -> Result<Proposals> {
    if grant.len() != free.len() {
        return Err(Error::Input("grant and free vectors differ in length".into()));
    }
    let top1 = best(grant)?;
    let held: usize = grant.iter().sum();
    let need = space.min_p.max(1).saturating_sub(held);
    let (delta, base) = match &top1 {
        Some(c) => (1, c.perf),
        None if need == 0 => (1, 0.0),
        None => (need, 0.0),
    };
    let mut proposals = Vec::new();
    let mut next = grant.to_vec();
    for j in 0..grant.len() {
        if free[j] < delta {
            continue;
        }
        next[j] += delta;
        let found = best(&next)?;
        next[j] -= delta;
        if let Some(cfg) = found {
            let speedup = (cfg.perf - base) / delta as f64;
            if speedup > 0.0 {
                proposals.push(Proposal { config: cfg, speedup_per_gpu: speedup, gpu_delta: delta, gpu_type: j });
            }
        }
    }
    proposals.sort_by(|a, b| b.speedup_per_gpu.total_cmp(&a.speedup_per_gpu).then(a.gpu_type.cmp(&b.gpu_type)));
    proposals.truncate(k);
    Ok(Proposals { top1, proposals })
}
