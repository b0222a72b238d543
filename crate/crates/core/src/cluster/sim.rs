//! Discrete-event simulation of a trace on a shared pool.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use super::{schedule, ClusterConfig, JobProposal, TraceJob};
use crate::error::{Error, Result};
use crate::planner::{best_config, propose_with, waste_model, DevicePool, PlanConfig, SearchSpace, WorkloadProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// FIFO gang scheduling of `maxP` same-type GPUs.
    Yarn,
    /// Elastic, one device type per job.
    Homo,
    /// Elastic, mixed device types for jobs with D2.
    Heter,
}

impl fmt::Display for SimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimMode::Yarn => "yarn",
            SimMode::Homo => "homo",
            SimMode::Heter => "heter",
        })
    }
}

impl FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yarn" | "yarn-cs" => Ok(SimMode::Yarn),
            "homo" => Ok(SimMode::Homo),
            "heter" => Ok(SimMode::Heter),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobMetrics {
    pub job_id: u32,
    pub arrival_s: f64,
    pub start_s: f64,
    pub finish_s: f64,
    pub jct_s: f64,
    pub preemptions: u32,
    pub reconfigurations: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub mode: SimMode,
    pub jobs: Vec<JobMetrics>,
    /// Jobs that could never be placed, with the reason.
    pub rejected: Vec<(u32, String)>,
    pub mean_jct_s: f64,
    /// From the first arrival to the last completion.
    pub makespan_s: f64,
    /// `(time, GPUs granted to training)` at every change.
    pub timeline: Vec<(f64, usize)>,
    pub preemptions: u32,
}

impl SimMetrics {
    /// Time-weighted mean of the allocation timeline over the makespan.
    pub fn mean_allocated(&self) -> f64 {
        let Some(&(t0, _)) = self.timeline.first() else { return 0.0 };
        let end = t0 + self.makespan_s;
        if self.makespan_s <= 0.0 {
            return 0.0;
        }
        let mut area = 0.0;
        for (i, &(t, g)) in self.timeline.iter().enumerate() {
            let next = self.timeline.get(i + 1).map_or(end, |n| n.0).min(end);
            if next > t {
                area += g as f64 * (next - t);
            }
        }
        area / self.makespan_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    ServingEnd(usize),
    Completion(usize, u64),
    RestoreTimeout(usize, u64),
    ServingStart(usize),
    Arrival(usize),
    Round,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed: BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    NotArrived,
    /// Arrived, holding nothing runnable.
    Queued,
    Running,
    /// Lost GPUs to serving and waits for exactly those to come back.
    AwaitRestore(Vec<Vec<u32>>),
    Done,
}

struct Job {
    spec: TraceJob,
    profile: usize,
    space: SearchSpace,
    phase: Phase,
    held: Vec<BTreeSet<u32>>,
    config: Option<PlanConfig>,
    perf: f64,
    done: f64,
    last: f64,
    stall_until: f64,
    /// When the current configuration was adopted.
    planned_at: f64,
    version: u64,
    restore_version: u64,
    start: Option<f64>,
    finish: Option<f64>,
    preemptions: u32,
    reconfigs: u32,
}

impl Job {
    fn counts(&self) -> Vec<usize> {
        self.held.iter().map(|h| h.len()).collect()
    }

    fn gpus(&self) -> usize {
        self.held.iter().map(|h| h.len()).sum()
    }

    /// Accrue progress up to `now`.
    fn advance(&mut self, now: f64) {
        let from = self.last.max(self.stall_until);
        if self.perf > 0.0 && now > from {
            self.done += self.perf * (now - from);
        }
        self.last = now;
    }

    fn remaining(&self) -> f64 {
        (self.spec.total_minibatches as f64 - self.done).max(0.0)
    }
}

type PlanKey = (usize, Vec<usize>, bool, usize, usize);

struct Sim<'a> {
    mode: SimMode,
    cfg: &'a ClusterConfig,
    pool: DevicePool,
    profiles: Vec<WorkloadProfile>,
    jobs: Vec<Job>,
    free: Vec<BTreeSet<u32>>,
    serving_held: Vec<Vec<Vec<u32>>>,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    fifo: Vec<usize>,
    rejected: Vec<(u32, String)>,
    timeline: Vec<(f64, usize)>,
    plan_cache: HashMap<PlanKey, Option<PlanConfig>>,
    round_pending: bool,
}

/// Run `trace` on the pool described by `cfg`. Deterministic: the same
/// inputs always yield the same metrics.
pub fn simulate(trace: &[TraceJob], cfg: &ClusterConfig, mode: SimMode) -> Result<SimMetrics> {
    if trace.is_empty() {
        return Err(Error::Input("trace has no jobs".into()));
    }
    cfg.validate()?;
    let pool = cfg.pool();
    if pool.types.iter().all(|t| t.count == 0) {
        return Err(Error::Config("pool has no GPUs".into()));
    }
    let mut sim = Sim::new(trace, cfg, pool, mode)?;
    sim.run()?;
    Ok(sim.metrics())
}

impl<'a> Sim<'a> {
    fn new(trace: &[TraceJob], cfg: &'a ClusterConfig, pool: DevicePool, mode: SimMode) -> Result<Self> {
        let mut keys: Vec<&str> = trace.iter().map(|j| j.workload_key.as_str()).collect();
        keys.sort_unstable();
        keys.dedup();
        let profiles = keys.iter().map(|k| cfg.profile(k)).collect::<Result<Vec<_>>>()?;
        let types = pool.types.len();
        let mut order: Vec<&TraceJob> = trace.iter().collect();
        order.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.job_id.cmp(&b.job_id)));
        let jobs = order
            .into_iter()
            .map(|spec| {
                let homogeneous = match mode {
                    SimMode::Heter => !spec.determinism.d2,
                    _ => true,
                };
                Job {
                    profile: keys.binary_search(&spec.workload_key.as_str()).expect("key collected above"),
                    space: SearchSpace {
                        min_p: spec.min_p,
                        max_p: spec.max_p,
                        waste_threshold: cfg.sim.waste_threshold,
                        homogeneous,
                    },
                    phase: Phase::NotArrived,
                    held: vec![BTreeSet::new(); types],
                    config: None,
                    perf: 0.0,
                    done: 0.0,
                    last: spec.arrival_s,
                    stall_until: 0.0,
                    planned_at: 0.0,
                    version: 0,
                    restore_version: 0,
                    start: None,
                    finish: None,
                    preemptions: 0,
                    reconfigs: 0,
                    spec: spec.clone(),
                }
            })
            .collect();
        let free = pool.types.iter().map(|t| (0..t.count as u32).collect()).collect();
        let mut sim = Self {
            mode,
            cfg,
            pool,
            profiles,
            jobs,
            free,
            serving_held: vec![Vec::new(); cfg.serving.len()],
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            fifo: Vec::new(),
            rejected: Vec::new(),
            timeline: Vec::new(),
            plan_cache: HashMap::new(),
            round_pending: false,
        };
        for j in 0..sim.jobs.len() {
            sim.push(sim.jobs[j].spec.arrival_s, EventKind::Arrival(j));
        }
        for (i, e) in cfg.serving.iter().enumerate() {
            sim.push(e.at_s, EventKind::ServingStart(i));
        }
        Ok(sim)
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Event { time, seq: self.seq, kind });
        self.seq += 1;
    }

    fn active(&self) -> bool {
        self.jobs.iter().any(|j| j.phase != Phase::Done)
    }

    fn run(&mut self) -> Result<()> {
        while let Some(ev) = self.heap.pop() {
            if !self.active() {
                break;
            }
            self.now = ev.time;
            match ev.kind {
                EventKind::Arrival(j) => self.on_arrival(j)?,
                EventKind::Completion(j, v) => self.on_completion(j, v)?,
                EventKind::Round => self.round_pending = false,
                EventKind::ServingStart(i) => self.on_serving_start(i)?,
                EventKind::ServingEnd(i) => self.on_serving_end(i)?,
                EventKind::RestoreTimeout(j, v) => self.on_restore_timeout(j, v)?,
            }
            self.pass()?;
            self.audit()?;
            self.sample();
            if self.mode != SimMode::Yarn && !self.round_pending && self.active() {
                self.round_pending = true;
                self.push(self.now + self.cfg.sim.round_s, EventKind::Round);
            }
        }
        if let Some(j) = self.jobs.iter().find(|j| j.phase != Phase::Done) {
            return Err(Error::State(format!("simulation ended with job {} unfinished", j.spec.job_id)));
        }
        Ok(())
    }

    fn on_arrival(&mut self, j: usize) -> Result<()> {
        let job = &self.jobs[j];
        let prof = &self.profiles[job.profile];
        let usable = |i: usize| prof.capability[i] > 0.0 && self.pool.types[i].max_executors(prof.mu_per_executor) > 0;
        let counts: Vec<usize> = (0..self.pool.types.len()).map(|i| if usable(i) { self.pool.types[i].count } else { 0 }).collect();
        let reason = match self.mode {
            SimMode::Yarn => (!counts.iter().any(|&c| c >= job.spec.max_p))
                .then(|| format!("maxP {} exceeds every device type's count", job.spec.max_p)),
            _ => {
                let full = self.best(j, &counts)?;
                full.is_none().then(|| "no feasible configuration on the whole pool".to_string())
            }
        };
        let job = &mut self.jobs[j];
        match reason {
            Some(r) => {
                job.phase = Phase::Done;
                self.rejected.push((job.spec.job_id, r));
            }
            None => {
                job.phase = Phase::Queued;
                job.last = self.now;
                self.fifo.push(j);
            }
        }
        Ok(())
    }

    fn on_completion(&mut self, j: usize, version: u64) -> Result<()> {
        let now = self.now;
        let job = &mut self.jobs[j];
        if job.version != version || job.phase != Phase::Running {
            return Ok(());
        }
        job.advance(now);
        job.done = job.spec.total_minibatches as f64;
        job.phase = Phase::Done;
        job.finish = Some(now);
        job.perf = 0.0;
        job.config = None;
        self.release_all(j);
        self.fifo.retain(|&k| k != j);
        Ok(())
    }

    fn release_all(&mut self, j: usize) {
        let held = std::mem::replace(&mut self.jobs[j].held, vec![BTreeSet::new(); self.pool.types.len()]);
        for (t, ids) in held.into_iter().enumerate() {
            self.free[t].extend(ids);
        }
    }

    fn take_free(&mut self, t: usize, n: usize) -> Vec<u32> {
        let ids: Vec<u32> = self.free[t].iter().take(n).copied().collect();
        for id in &ids {
            self.free[t].remove(id);
        }
        ids
    }

    fn free_counts(&self) -> Vec<usize> {
        self.free.iter().map(|f| f.len()).collect()
    }

    fn best(&mut self, j: usize, counts: &[usize]) -> Result<Option<PlanConfig>> {
        let job = &self.jobs[j];
        let key = (job.profile, counts.to_vec(), job.space.homogeneous, job.space.min_p, job.space.max_p);
        if let Some(hit) = self.plan_cache.get(&key) {
            return Ok(hit.clone());
        }
        let found = best_config(&self.pool.with_counts(counts), &self.profiles[job.profile], &job.space)?;
        self.plan_cache.insert(key, found.clone());
        Ok(found)
    }

    fn schedule_completion(&mut self, j: usize) {
        let now = self.now;
        let job = &mut self.jobs[j];
        job.version += 1;
        if job.perf > 0.0 {
            let at = now.max(job.stall_until) + job.remaining() / job.perf;
            let v = job.version;
            self.push(at, EventKind::Completion(j, v));
        }
    }

    /// Re-plan job `j` on what it holds; GPUs the best configuration does
    /// not use go back to the pool. With nothing runnable the job is
    /// suspended.
    fn replan(&mut self, j: usize) -> Result<()> {
        let now = self.now;
        self.jobs[j].advance(now);
        let counts = self.jobs[j].counts();
        let cfg = self.best(j, &counts)?;
        let was_running = self.jobs[j].config.is_some();
        match cfg {
            None => {
                self.release_all(j);
                let job = &mut self.jobs[j];
                job.config = None;
                job.perf = 0.0;
                job.phase = Phase::Queued;
            }
            Some(cfg) => {
                for t in 0..counts.len() {
                    let extra = counts[t] - cfg.nums[t];
                    let drop: Vec<u32> = self.jobs[j].held[t].iter().rev().take(extra).copied().collect();
                    for id in drop {
                        self.jobs[j].held[t].remove(&id);
                        self.free[t].insert(id);
                    }
                }
                let cost = self.cfg.sim.reconfig_cost_s;
                let job = &mut self.jobs[j];
                // A configuration replaced at the instant it was adopted never
                // ran, so only the first of a burst of changes costs anything.
                if was_running && job.config.as_ref() != Some(&cfg) && job.planned_at < now {
                    job.stall_until = now.max(job.stall_until) + cost;
                    job.reconfigs += 1;
                } else if !was_running && job.start.is_some() {
                    // Resuming after suspension restores from a checkpoint.
                    job.stall_until = now + cost;
                    job.reconfigs += 1;
                }
                job.start.get_or_insert(now);
                if job.config.as_ref() != Some(&cfg) {
                    job.planned_at = now;
                }
                job.perf = cfg.perf;
                job.config = Some(cfg);
                job.phase = Phase::Running;
            }
        }
        self.schedule_completion(j);
        Ok(())
    }

    fn pass(&mut self) -> Result<()> {
        match self.mode {
            SimMode::Yarn => self.yarn_pass(),
            _ => self.elastic_pass(),
        }
    }

    fn yarn_pass(&mut self) -> Result<()> {
        while let Some(&j) = self.fifo.iter().find(|&&k| self.jobs[k].phase == Phase::Queued) {
            let job = &self.jobs[j];
            let prof = &self.profiles[job.profile];
            let n = job.spec.max_p;
            let pick = (0..self.pool.types.len())
                .filter(|&t| prof.capability[t] > 0.0 && self.free[t].len() >= n)
                .max_by(|&a, &b| prof.capability[a].total_cmp(&prof.capability[b]).then(b.cmp(&a)));
            let Some(t) = pick else { break };
            let mut nums = vec![0; self.pool.types.len()];
            nums[t] = n;
            let mut cus = vec![0; nums.len()];
            cus[t] = 1;
            let eval = waste_model(&nums, &cus, &prof.capability, n)?;
            let ids = self.take_free(t, n);
            let now = self.now;
            let cost = self.cfg.sim.reconfig_cost_s;
            let job = &mut self.jobs[j];
            job.held[t].extend(ids);
            job.last = now;
            if job.start.is_some() {
                job.stall_until = now + cost;
                job.reconfigs += 1;
            }
            job.start.get_or_insert(now);
            job.perf = eval.perf;
            job.phase = Phase::Running;
            self.schedule_completion(j);
        }
        Ok(())
    }

    /// The proposal scheduler, repeated until a pass approves nothing.
    fn elastic_pass(&mut self) -> Result<()> {
        let k = self.cfg.sim.proposals_k;
        for _ in 0..64 {
            let free = self.free_counts();
            if free.iter().all(|&f| f == 0) {
                break;
            }
            // Waiting jobs are admitted in arrival order.
            let head = self.fifo.iter().copied().find(|&k| self.jobs[k].phase == Phase::Queued);
            let mut props = Vec::new();
            for j in 0..self.jobs.len() {
                match self.jobs[j].phase {
                    Phase::Running => {}
                    Phase::Queued if Some(j) == head => {}
                    _ => continue,
                }
                let grant = self.jobs[j].counts();
                let space = self.jobs[j].space;
                let out = propose_with(&grant, &free, &space, k, &mut |c| self.best(j, c))?;
                let id = self.jobs[j].spec.job_id;
                props.extend(out.proposals.into_iter().map(|p| JobProposal { job_id: id, proposal: p }));
            }
            let outcome = schedule(&props, &free);
            if outcome.approved.is_empty() {
                break;
            }
            let mut touched = Vec::new();
            for &i in &outcome.approved {
                let jp = &props[i];
                let j = self.index_of(jp.job_id);
                let ids = self.take_free(jp.proposal.gpu_type, jp.proposal.gpu_delta);
                self.jobs[j].advance(self.now);
                self.jobs[j].held[jp.proposal.gpu_type].extend(ids);
                if !touched.contains(&j) {
                    touched.push(j);
                }
            }
            for j in touched {
                self.replan(j)?;
            }
        }
        Ok(())
    }

    fn index_of(&self, job_id: u32) -> usize {
        self.jobs.iter().position(|j| j.spec.job_id == job_id).expect("proposal from a known job")
    }

    fn on_serving_start(&mut self, i: usize) -> Result<()> {
        let ev = &self.cfg.serving[i];
        let t = self.pool.index_of(&ev.device).expect("validated device name");
        let want = ev.count.min(self.pool.types[t].count);
        let mut got = self.take_free(t, want);
        // Victims: latest arrivals first.
        let mut victims: Vec<usize> = (0..self.jobs.len()).filter(|&j| !self.jobs[j].held[t].is_empty()).collect();
        victims.sort_by(|&a, &b| {
            let (x, y) = (&self.jobs[a].spec, &self.jobs[b].spec);
            y.arrival_s.total_cmp(&x.arrival_s).then(y.job_id.cmp(&x.job_id))
        });
        for j in victims {
            if got.len() >= want {
                break;
            }
            let n = (want - got.len()).min(self.jobs[j].held[t].len());
            let lost: Vec<u32> = self.jobs[j].held[t].iter().rev().take(n).copied().collect();
            for id in &lost {
                self.jobs[j].held[t].remove(id);
            }
            got.extend(&lost);
            self.preempt(j, t, lost)?;
        }
        self.serving_held[i] = vec![Vec::new(); self.pool.types.len()];
        self.serving_held[i][t] = got;
        self.push(self.now + ev.duration_s, EventKind::ServingEnd(i));
        Ok(())
    }

    fn preempt(&mut self, j: usize, t: usize, lost: Vec<u32>) -> Result<()> {
        let now = self.now;
        let timeout = self.cfg.sim.restore_timeout_s;
        let job = &mut self.jobs[j];
        job.advance(now);
        job.preemptions += 1;
        job.perf = 0.0;
        job.version += 1;
        if self.mode == SimMode::Yarn {
            // A gang cannot shrink: give everything back and requeue.
            job.phase = Phase::Queued;
            job.config = None;
            self.release_all(j);
            return Ok(());
        }
        let mut missing = match std::mem::replace(&mut job.phase, Phase::Queued) {
            Phase::AwaitRestore(m) => m,
            _ => vec![Vec::new(); self.pool.types.len()],
        };
        missing[t].extend(lost);
        job.phase = Phase::AwaitRestore(missing);
        job.restore_version += 1;
        let v = job.restore_version;
        self.push(now + timeout, EventKind::RestoreTimeout(j, v));
        Ok(())
    }

    fn on_serving_end(&mut self, i: usize) -> Result<()> {
        for (t, ids) in std::mem::take(&mut self.serving_held[i]).into_iter().enumerate() {
            self.free[t].extend(ids);
        }
        // Jobs waiting for exactly these GPUs get them back first.
        for j in 0..self.jobs.len() {
            let Phase::AwaitRestore(missing) = &self.jobs[j].phase else { continue };
            let ready = missing.iter().enumerate().all(|(t, ids)| ids.iter().all(|id| self.free[t].contains(id)));
            if !ready {
                continue;
            }
            let missing = missing.clone();
            for (t, ids) in missing.into_iter().enumerate() {
                for id in ids {
                    self.free[t].remove(&id);
                    self.jobs[j].held[t].insert(id);
                }
            }
            let now = self.now;
            let job = &mut self.jobs[j];
            job.last = now;
            job.phase = Phase::Running;
            job.perf = job.config.as_ref().map_or(0.0, |c| c.perf);
            job.restore_version += 1;
            self.schedule_completion(j);
        }
        Ok(())
    }

    fn on_restore_timeout(&mut self, j: usize, v: u64) -> Result<()> {
        let job = &mut self.jobs[j];
        if job.restore_version != v || !matches!(job.phase, Phase::AwaitRestore(_)) {
            return Ok(());
        }
        job.phase = Phase::Running;
        job.last = self.now;
        self.replan(j)
    }

    /// Every GPU is free, held by exactly one job, or serving.
    fn audit(&self) -> Result<()> {
        for (t, ty) in self.pool.types.iter().enumerate() {
            let held: usize = self.jobs.iter().map(|j| j.held[t].len()).sum();
            let serving: usize = self.serving_held.iter().map(|s| s.get(t).map_or(0, |v| v.len())).sum();
            if held + serving + self.free[t].len() != ty.count {
                return Err(Error::State(format!("GPU accounting broken for {} at t={}", ty.name, self.now)));
            }
        }
        Ok(())
    }

    fn sample(&mut self) {
        let g: usize = self.jobs.iter().map(|j| j.gpus()).sum();
        match self.timeline.last_mut() {
            Some(last) if last.0 == self.now => last.1 = g,
            Some(last) if last.1 == g => {}
            _ => self.timeline.push((self.now, g)),
        }
    }

    fn metrics(&self) -> SimMetrics {
        let mut jobs: Vec<JobMetrics> = self
            .jobs
            .iter()
            .filter_map(|j| {
                let finish = j.finish?;
                Some(JobMetrics {
                    job_id: j.spec.job_id,
                    arrival_s: j.spec.arrival_s,
                    start_s: j.start.unwrap_or(finish),
                    finish_s: finish,
                    jct_s: finish - j.spec.arrival_s,
                    preemptions: j.preemptions,
                    reconfigurations: j.reconfigs,
                })
            })
            .collect();
        jobs.sort_by_key(|j| j.job_id);
        let first = self.jobs.iter().map(|j| j.spec.arrival_s).fold(f64::INFINITY, f64::min);
        let last = jobs.iter().map(|j| j.finish_s).fold(first, f64::max);
        let mean = if jobs.is_empty() { 0.0 } else { jobs.iter().map(|j| j.jct_s).sum::<f64>() / jobs.len() as f64 };
        SimMetrics {
            mode: self.mode,
            preemptions: jobs.iter().map(|j| j.preemptions).sum(),
            jobs,
            rejected: self.rejected.clone(),
            mean_jct_s: mean,
            makespan_s: last - first,
            timeline: self.timeline.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estrt::DeterminismMode;

    fn job(id: u32, at: f64, min_p: usize, max_p: usize, total: u64) -> TraceJob {
        TraceJob {
            job_id: id,
            arrival_s: at,
            min_p,
            max_p,
            total_minibatches: total,
            workload_key: "w".into(),
            determinism: DeterminismMode::D1D2,
        }
    }

    fn cfg(text: &str) -> ClusterConfig {
        ClusterConfig::from_toml(text).unwrap()
    }

    const ONE_TYPE: &str = r#"
        [[device]]
        name = "v100"
        count = 2
        memory_mu = 1.0
        capability = { w = 1.0 }
    "#;

    #[test]
    fn uncontended_job_same_in_all_modes() {
        let c = cfg(ONE_TYPE);
        let trace = vec![job(1, 0.0, 0, 2, 600)];
        let jcts: Vec<f64> = [SimMode::Yarn, SimMode::Homo, SimMode::Heter]
            .iter()
            .map(|&m| simulate(&trace, &c, m).unwrap().jobs[0].jct_s)
            .collect();
        assert_eq!(jcts, vec![300.0, 300.0, 300.0]);
    }

    #[test]
    fn fifo_on_one_gpu() {
        let c = cfg(&ONE_TYPE.replace("count = 2", "count = 1"));
        let trace = vec![job(1, 0.0, 0, 1, 100), job(2, 0.0, 0, 1, 50)];
        let m = simulate(&trace, &c, SimMode::Yarn).unwrap();
        assert_eq!(m.jobs[0].jct_s, 100.0);
        assert_eq!(m.jobs[1].jct_s, 150.0);
    }

    #[test]
    fn yarn_rejects_oversized_gang() {
        let c = cfg(ONE_TYPE);
        let m = simulate(&[job(1, 0.0, 0, 3, 10), job(2, 0.0, 0, 1, 10)], &c, SimMode::Yarn).unwrap();
        assert_eq!(m.rejected.len(), 1);
        assert_eq!(m.jobs.len(), 1);
        let m = simulate(&[job(1, 0.0, 0, 3, 30)], &c, SimMode::Homo).unwrap();
        assert!(m.rejected.is_empty());
    }

    #[test]
    fn preempted_gpus_come_back_without_reconfiguration() {
        let text = format!(
            "{ONE_TYPE}\n[[serving]]\nat_s = 10.0\ndevice = \"v100\"\ncount = 2\nduration_s = 50.0\n"
        );
        let c = cfg(&text);
        let m = simulate(&[job(1, 0.0, 0, 2, 600)], &c, SimMode::Homo).unwrap();
        let j = &m.jobs[0];
        assert_eq!(j.preemptions, 1);
        assert_eq!(j.reconfigurations, 0);
        assert_eq!(j.jct_s, 350.0);
    }

    #[test]
    fn restore_timeout_reconfigures_onto_remaining() {
        let text = format!(
            "{ONE_TYPE}\n[[serving]]\nat_s = 10.0\ndevice = \"v100\"\ncount = 1\nduration_s = 1000.0\n"
        );
        let c = cfg(&text);
        let m = simulate(&[job(1, 0.0, 0, 2, 600)], &c, SimMode::Homo).unwrap();
        let j = &m.jobs[0];
        assert_eq!(j.preemptions, 1);
        assert_eq!(j.reconfigurations, 1);
        // 20 mini-batches before, none while waiting 300 s, then 10 s stall
        // and 580 at one per second.
        assert_eq!(j.jct_s, 10.0 + 300.0 + 10.0 + 580.0);
    }

    #[test]
    fn full_preemption_suspends_and_resumes() {
        let text = format!(
            "{ONE_TYPE}\n[[serving]]\nat_s = 10.0\ndevice = \"v100\"\ncount = 2\nduration_s = 1000.0\n"
        );
        let c = cfg(&text);
        let m = simulate(&[job(1, 0.0, 0, 2, 600)], &c, SimMode::Homo).unwrap();
        let j = &m.jobs[0];
        assert_eq!(j.preemptions, 1);
        // Resumes once serving leaves at 1010 s and restarts from checkpoint.
        assert_eq!(j.finish_s, 1010.0 + 10.0 + 580.0 / 2.0);
    }

    #[test]
    fn repeatable() {
        let c = cfg(ONE_TYPE);
        let trace: Vec<TraceJob> = (0..6).map(|i| job(i, i as f64 * 7.0, 0, 2, 100 + 37 * i as u64)).collect();
        for mode in [SimMode::Yarn, SimMode::Homo, SimMode::Heter] {
            assert_eq!(simulate(&trace, &c, mode).unwrap(), simulate(&trace, &c, mode).unwrap());
        }
    }
}
