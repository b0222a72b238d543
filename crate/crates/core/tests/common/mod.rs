//! Brute-force planning oracle, independent of the planner's search code.

use detscale::planner::{DevicePool, DeviceType, WorkloadProfile};
use proptest::prelude::*;

#[derive(Debug, Clone)]
pub struct Instance {
    pub pool: DevicePool,
    pub profile: WorkloadProfile,
    pub min_p: usize,
    pub max_p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleBest {
    pub perf: f64,
    pub nums: Vec<usize>,
    pub executors: Vec<usize>,
    pub threads: Vec<usize>,
}

/// The waste model evaluated directly over per-GPU capability `mc` and CUs `ma`.
/// Returns `(waste, waste_norm_percent, perf)`.
pub fn waste_eval(nums: &[usize], ma: &[usize], mc: &[f64], max_p: usize) -> Option<(f64, f64, f64)> {
    let cap: usize = (0..nums.len()).map(|i| nums[i] * ma[i]).sum();
    if cap < max_p {
        return None;
    }
    let used: Vec<usize> = (0..nums.len()).filter(|&i| nums[i] > 0).collect();
    if used.iter().all(|&i| ma[i] == 0) {
        return None;
    }
    let f = used.iter().map(|&i| ma[i] as f64 / mc[i]).fold(0.0, f64::max);
    let mut waste = 0.0;
    let mut total = 0.0;
    for &i in &used {
        let load = ma[i] as f64 / mc[i];
        if load != f {
            waste += nums[i] as f64 * (mc[i] - ma[i] as f64 / f).max(0.0);
        }
        total += nums[i] as f64 * mc[i];
    }
    waste += (cap - max_p) as f64 / f;
    Some((waste, waste / total * 100.0, total - waste))
}

/// Every `(nums, executors, threads)` with `max(minP,1) ≤ Σnums ≤ maxP`,
/// per-GPU CUs `m·t ≤ maxP`, memory-feasible `m`, and waste within the
/// threshold. Returns the highest perf.
pub fn brute_force(inst: &Instance, threshold: f64) -> Option<OracleBest> {
    let k = inst.pool.types.len();
    let mut per_type: Vec<Vec<(usize, usize, usize, f64)>> = Vec::new();
    for (ty, &c) in inst.pool.types.iter().zip(&inst.profile.capability) {
        let mem = (ty.memory_mu / inst.profile.mu_per_executor).floor() as usize;
        let max_m = mem.min(ty.interference.len());
        let mut v = vec![(0, 0, 0, 0.0)];
        if c > 0.0 {
            for n in 1..=ty.count {
                for m in 1..=max_m {
                    for t in 1..=inst.max_p {
                        if m * t <= inst.max_p {
                            v.push((n, m, t, m as f64 * (c * ty.interference[m - 1])));
                        }
                    }
                }
            }
        }
        per_type.push(v);
    }
    let mut best: Option<OracleBest> = None;
    let mut idx = vec![0usize; k];
    loop {
        let pick: Vec<_> = (0..k).map(|i| per_type[i][idx[i]]).collect();
        let gpus: usize = pick.iter().map(|p| p.0).sum();
        if gpus >= inst.min_p.max(1) && gpus <= inst.max_p {
            let nums: Vec<usize> = pick.iter().map(|p| p.0).collect();
            let ma: Vec<usize> = pick.iter().map(|p| p.1 * p.2).collect();
            let mc: Vec<f64> = pick.iter().map(|p| p.3).collect();
            if let Some((_, norm, perf)) = waste_eval(&nums, &ma, &mc, inst.max_p) {
                if norm <= threshold * 100.0 && best.as_ref().map_or(true, |b| perf > b.perf) {
                    best = Some(OracleBest {
                        perf,
                        nums,
                        executors: pick.iter().map(|p| p.1).collect(),
                        threads: pick.iter().map(|p| p.2).collect(),
                    });
                }
            }
        }
        let mut i = 0;
        loop {
            if i == k {
                return best;
            }
            idx[i] += 1;
            if idx[i] < per_type[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

pub fn device(name: &str, count: usize, memory_mu: f64, interference: Vec<f64>) -> DeviceType {
    DeviceType { name: name.into(), count, memory_mu, interference }
}

/// ≤ 3 types, N_i ≤ 4, maxP ≤ 16, I ≡ 1 with one or two executor slots.
pub fn instances() -> impl Strategy<Value = Instance> {
    let ty = (0usize..=4, 1usize..=60, 1usize..=2);
    (prop::collection::vec(ty, 1..=3), 1usize..=16, 0usize..=4).prop_map(|(types, max_p, min_p)| {
        let pool = DevicePool {
            types: types
                .iter()
                .enumerate()
                .map(|(i, &(n, _, slots))| device(&format!("g{i}"), n, 2.0, vec![1.0; slots]))
                .collect(),
        };
        let caps = types.iter().map(|&(_, c, _)| c as f64 * 0.05).collect();
        Instance { pool, profile: WorkloadProfile::from_history(caps, 1.0), min_p: min_p.min(max_p), max_p }
    })
}
