//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single PASS/FAIL line; run with `--nocapture` to see them.

#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use detscale::cluster::{metrics_csv, parse_trace, schedule, simulate, timeline_csv, ClusterConfig, JobProposal, SimMode};
use detscale::datapipe::{DataConfig, DataPipe};
use detscale::detcore::Sample;
use detscale::estrt::memory::MemoryModel;
use detscale::estrt::{ExecutorSpec, TrainConfig, TrainingState};
use detscale::planner::{best_config, enumerate_configs, PlanConfig, Proposal, SearchSpace, DEFAULT_WASTE_THRESHOLD};
use detscale::wire::{Reader, Writer};
use detscale_cli::repro::{self, Level, Matrix, Mode};
use detscale_cli::runlog::{bitdiff, Diff};
use detscale_cli::train::{self, Phase, TrainSpec};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

fn report(n: u32, title: &str, failures: &[String]) {
    if failures.is_empty() {
        println!("criterion {n} PASS  {title}");
    } else {
        println!("criterion {n} FAIL  {title}");
        for f in failures {
            println!("    {f}");
        }
        panic!("criterion {n} failed: {}", failures.join("; "));
    }
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl Into<String>) {
    if !ok {
        failures.push(what.into());
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detscale"))
}

#[test]
fn criterion_1_reproducibility_ladder() {
    let mut f = Vec::new();
    let matrix = Matrix::from_toml(&read("matrix.toml")).unwrap();
    check(&mut f, matrix.max_p == 4, "matrix maxP is not 4");
    let levels: Vec<Level> = matrix.scenario.iter().map(|s| s.level.parse().unwrap()).collect();
    check(&mut f, levels == [Level::S1, Level::S2, Level::S3, Level::S4, Level::S5], format!("levels {levels:?}"));
    for s in &matrix.scenario {
        for side in [&s.a, &s.b] {
            let steps: u64 = side.iter().map(|p| p.steps).sum();
            check(&mut f, steps == 200, format!("{}: {steps} mini-batches", s.level));
        }
        let r = repro::run_scenario(&matrix, s, Mode::D1D2).unwrap();
        check(&mut f, r.equal(), format!("{}: {}", s.level, r.diff));
        check(&mut f, r.elapsed < Duration::from_secs(10), format!("{}: took {:?}", s.level, r.elapsed));
    }
    let out = bin().args(["reprocheck", "--mode", "d1d2", "--matrix"]).arg(fixture("matrix.toml")).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    check(&mut f, out.status.code() == Some(0), format!("reprocheck exit {:?}", out.status.code()));
    check(&mut f, text.matches("BITWISE-EQUAL").count() == 5, "reprocheck table is not 5/5");
    report(1, "S1-S5 bitwise equal under D1+D2", &f);
}

fn executors(kind: &str, threads: &[usize]) -> Vec<String> {
    threads.iter().map(|t| format!("{kind}:{t}")).collect()
}

fn spec(mode: &str, phases: Vec<Phase>) -> TrainSpec {
    let mut s = TrainSpec::from_toml(&format!(
        "seed = 7\nmax_p = 4\ndeterminism = \"{mode}\"\n[[phase]]\nsteps = 1\nexecutors = [\"v100\"]\n"
    ))
    .unwrap();
    s.phase = phases;
    s
}

#[test]
fn criterion_2_treatment_necessity() {
    let mut f = Vec::new();
    // D0 only: restart from four executors to two after 70 steps.
    let four = executors("v100", &[1, 1, 1, 1]);
    let a = train::run(&spec("d0", vec![Phase { steps: 200, executors: four.clone() }])).unwrap();
    let b = train::run(&spec(
        "d0",
        vec![Phase { steps: 70, executors: four }, Phase { steps: 130, executors: executors("v100", &[2, 2]) }],
    ))
    .unwrap();
    match bitdiff(&a.log, &b.log).unwrap() {
        // Every step ends in gradient synchronization; step 71 is the first
        // one after the restart.
        Diff::Diverged { step, .. } => check(&mut f, step == 71, format!("D0 first divergence at step {step}, expected 71")),
        Diff::Identical => f.push("D0 restart did not diverge".into()),
    }
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    std::fs::write(&pa, a.log.to_jsonl()).unwrap();
    std::fs::write(&pb, b.log.to_jsonl()).unwrap();
    let out = bin().arg("bitdiff").arg(&pa).arg(&pb).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    check(&mut f, out.status.code() == Some(1), format!("bitdiff exit {:?}", out.status.code()));
    check(&mut f, text.contains("step 71"), format!("bitdiff said `{}`", text.trim()));

    // D1 without D2: v100 for 100 steps, then t4.
    let a = train::run(&spec("d1", vec![Phase { steps: 200, executors: executors("v100", &[2, 2]) }])).unwrap();
    let b = train::run(&spec(
        "d1",
        vec![
            Phase { steps: 100, executors: executors("v100", &[2, 2]) },
            Phase { steps: 100, executors: executors("t4", &[2, 2]) },
        ],
    ))
    .unwrap();
    match bitdiff(&a.log, &b.log).unwrap() {
        Diff::Diverged { step, .. } => check(&mut f, step == 101, format!("D1 first divergence at step {step}, expected 101")),
        Diff::Identical => f.push("D1 across device kinds did not diverge".into()),
    }
    // The same kind change under D1+D2 stays equal.
    let c = train::run(&spec("d1d2", vec![Phase { steps: 200, executors: executors("v100", &[2, 2]) }])).unwrap();
    let d = train::run(&spec(
        "d1d2",
        vec![
            Phase { steps: 100, executors: executors("v100", &[2, 2]) },
            Phase { steps: 100, executors: executors("t4", &[2, 2]) },
        ],
    ))
    .unwrap();
    check(&mut f, bitdiff(&c.log, &d.log).unwrap() == Diff::Identical, "D1+D2 diverged across device kinds");
    let matrix = Matrix::from_toml(&read("matrix.toml")).unwrap();
    let d0 = repro::run_matrix(&matrix, Mode::D0).unwrap();
    check(&mut f, d0.iter().any(|r| r.level == Level::S4 && !r.equal()), "D0 passed S4");
    check(&mut f, d0.iter().all(|r| !r.violated()), "D0 violated its own guarantees");
    report(2, "D0 diverges at the first post-restart sync, D1 exactly at the device change", &f);
}

#[test]
fn criterion_3_planner_matches_brute_force() {
    let mut f = Vec::new();
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    let count = std::cell::Cell::new(0usize);
    let res = runner.run(&oracle::instances(), |inst| {
        count.set(count.get() + 1);
        let o = oracle::brute_force(&inst, DEFAULT_WASTE_THRESHOLD).map(|b| b.perf.to_bits());
        let p = best_config(&inst.pool, &inst.profile, &SearchSpace::new(inst.min_p, inst.max_p))
            .unwrap()
            .map(|c| c.perf.to_bits());
        prop_assert_eq!(o, p);
        Ok(())
    });
    if let Err(e) = res {
        f.push(format!("oracle mismatch: {e}"));
    }
    let count = count.get();
    check(&mut f, count >= 500, format!("only {count} instances"));
    let out = bin()
        .args(["plan", "--minp", "0", "--maxp", "4", "--pool"])
        .arg(fixture("plan_pool.toml"))
        .arg("--profile")
        .arg(fixture("plan_profile.toml"))
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    let top = text.lines().nth(2).unwrap_or("");
    let cols: Vec<&str> = top.split_whitespace().collect();
    check(&mut f, cols.get(1) == Some(&"1,1") && cols.get(3) == Some(&"3,1"), format!("plan top-1 row `{top}`"));
    report(3, &format!("planner top-1 perf equals brute force on {count} instances; 2.45:1 picks (3,1)"), &f);
}

#[test]
fn criterion_4_waste_identities() {
    let mut f = Vec::new();
    let mut runner = TestRunner::new(Config { cases: 500, failure_persistence: None, ..Config::default() });
    let emitted = std::cell::Cell::new(0usize);
    let res = runner.run(&oracle::instances(), |inst| {
        for c in enumerate_configs(&inst.pool, &inst.profile, &SearchSpace::new(inst.min_p, inst.max_p)).unwrap() {
            emitted.set(emitted.get() + 1);
            prop_assert!(c.waste >= 0.0, "negative waste {:?}", c);
            prop_assert!(c.waste_norm <= 30.0, "filter breached {:?}", c);
            let total: f64 = (0..c.nums.len())
                .filter(|&i| c.nums[i] > 0)
                .map(|i| c.nums[i] as f64 * c.executors[i] as f64 * inst.profile.capability[i])
                .sum();
            if c.waste == 0.0 {
                prop_assert_eq!(c.perf, total);
            }
        }
        Ok(())
    });
    if let Err(e) = res {
        f.push(e.to_string());
    }
    // Homogeneous and divisible: waste is exactly zero.
    for n in 1..=4usize {
        for k in 1..=4usize {
            let inst = oracle::Instance {
                pool: detscale::planner::DevicePool { types: vec![oracle::device("g", n, 1.0, vec![1.0])] },
                profile: detscale::planner::WorkloadProfile::from_history(vec![1.5], 1.0),
                min_p: n,
                max_p: n * k,
            };
            let best = best_config(&inst.pool, &inst.profile, &SearchSpace::new(n, n * k)).unwrap().unwrap();
            check(&mut f, best.waste == 0.0 && best.perf == n as f64 * 1.5, format!("N={n} k={k}: {best:?}"));
        }
    }
    let emitted = emitted.get();
    report(4, &format!("waste >= 0, zero-waste perf identity and 30% filter on {emitted} configs"), &f);
}

fn dummy() -> PlanConfig {
    PlanConfig {
        nums: vec![1],
        executors: vec![1],
        threads: vec![1],
        cu_capacity: 1,
        f_overload: 1.0,
        waste: 0.0,
        waste_norm: 0.0,
        perf: 1.0,
    }
}

fn jp(job: u32, s: f64, d: usize, t: usize) -> JobProposal {
    JobProposal { job_id: job, proposal: Proposal { config: dummy(), speedup_per_gpu: s, gpu_delta: d, gpu_type: t } }
}

#[test]
fn criterion_5_scheduler_properties() {
    let mut f = Vec::new();
    let strat = (1usize..4).prop_flat_map(|nt| {
        let one = (0u32..6, 0u32..6, 1usize..5, 0..nt).prop_map(|(j, s, d, t)| jp(j, s as f64 * 0.5, d, t));
        (prop::collection::vec(one, 0..30), prop::collection::vec(0usize..6, nt))
    });
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let cases = std::cell::Cell::new(0usize);
    let res = runner.run(&strat, |(props, avail)| {
        cases.set(cases.get() + 1);
        let out = schedule(&props, &avail);
        // Sort key: speedup desc, more GPUs first, job id asc.
        for w in out.order.windows(2) {
            let (a, b) = (&props[w[0]], &props[w[1]]);
            let ka = (-a.proposal.speedup_per_gpu, std::cmp::Reverse(a.proposal.gpu_delta), a.job_id);
            let kb = (-b.proposal.speedup_per_gpu, std::cmp::Reverse(b.proposal.gpu_delta), b.job_id);
            prop_assert!(ka.partial_cmp(&kb) != Some(std::cmp::Ordering::Greater));
        }
        // Conservation.
        let mut used = vec![0; avail.len()];
        for &i in &out.approved {
            used[props[i].proposal.gpu_type] += props[i].proposal.gpu_delta;
        }
        for t in 0..avail.len() {
            prop_assert_eq!(used[t] + out.remaining[t], avail[t]);
        }
        // Termination with every proposal accounted for, and no skipped
        // proposal that would have fit when it was reached.
        let visited = out.approved.len() + out.skipped.len();
        prop_assert!(visited == props.len() || out.remaining.iter().all(|&r| r == 0));
        let mut left = avail.clone();
        for &i in out.order.iter().take(visited) {
            let p = &props[i].proposal;
            let fits = left[p.gpu_type] >= p.gpu_delta;
            prop_assert_eq!(fits, out.approved.contains(&i));
            if fits {
                left[p.gpu_type] -= p.gpu_delta;
            }
        }
        Ok(())
    });
    if let Err(e) = res {
        f.push(e.to_string());
    }
    let cases = cases.get();
    check(&mut f, cases >= 1000, format!("only {cases} cases"));
    // Equal speedup: the proposal asking for more GPUs goes first.
    let out = schedule(&[jp(1, 1.0, 1, 0), jp(2, 1.0, 2, 0)], &[2]);
    check(&mut f, out.approved == vec![1], format!("tie rule: approved {:?}", out.approved));
    // An unsatisfiable head does not stall the scan.
    let out = schedule(&[jp(1, 9.0, 5, 0), jp(2, 1.0, 1, 0)], &[1]);
    check(&mut f, out.approved == vec![1] && out.skipped == vec![0], "skip rule");
    report(5, &format!("scheduler sort key, conservation and termination over {cases} cases"), &f);
}

fn sample_bits(batches: &[Vec<Sample>]) -> Vec<u64> {
    batches.iter().flatten().flat_map(|s| s.x.iter().chain([&s.y]).map(|v| v.to_bits())).collect()
}

fn consume(p: &mut DataPipe, from: u64, to: u64) -> Vec<Vec<Sample>> {
    let mut out = Vec::new();
    for m in from..to {
        for est in 0..4 {
            out.push(p.next_batch(est, m).unwrap());
        }
        p.commit(m).unwrap();
    }
    out
}

#[test]
fn criterion_6_data_pipeline_invariance() {
    let mut f = Vec::new();
    let cfg = |w| DataConfig { seed: 11, dataset_size: 1024, shared_workers: w, ..DataConfig::default() };
    let mut base_pipe = DataPipe::new(cfg(1), 4).unwrap();
    let epoch = base_pipe.steps_per_epoch();
    let base = sample_bits(&consume(&mut base_pipe, 0, epoch));
    check(&mut f, base.len() == 1024 * 9, format!("epoch carried {} values", base.len()));
    for w in [2, 4, 8] {
        let got = sample_bits(&consume(&mut DataPipe::new(cfg(w), 4).unwrap(), 0, epoch));
        check(&mut f, got == base, format!("W={w} changed batch bytes"));
    }
    for w in [1, 2, 4, 8] {
        let mut p = DataPipe::new(cfg(w), 4).unwrap();
        let mid = epoch / 2;
        let mut head = consume(&mut p, 0, mid);
        let mut buf = Writer::default();
        p.encode(&mut buf);
        let mut q = DataPipe::decode(&mut Reader::new(&buf.buf), 4).unwrap();
        q.set_shared_workers(9 - w).unwrap();
        head.extend(consume(&mut q, mid, epoch));
        check(&mut f, sample_bits(&head) == base, format!("restore at step {mid} with W={w}"));
    }
    // Through the training runtime: the same run with 1 and 8 data workers.
    let run = |w| {
        let c = TrainConfig { seed: 11, data: cfg(w), ..TrainConfig::default() };
        let mut ts = TrainingState::new(c, &[ExecutorSpec::new("v100", 2), ExecutorSpec::new("v100", 2)]).unwrap();
        for _ in 0..epoch {
            ts.step().unwrap();
        }
        ts.model().to_bytes()
    };
    check(&mut f, run(1) == run(8), "trained model depends on worker count");
    report(6, "batch bytes identical for W in {1,2,4,8} and across mid-epoch restore", &f);
}

#[test]
fn criterion_7_memory_model() {
    let mut f = Vec::new();
    let peaks: Vec<u64> = [1usize, 2, 4, 8, 16]
        .iter()
        .map(|&t| {
            let c = TrainConfig { max_p: t, seed: 3, ..TrainConfig::default() };
            let mut ts = TrainingState::new(c, &[ExecutorSpec::new("v100", t)]).unwrap();
            ts.step().unwrap();
            ts.step().unwrap();
            ts.executors[0].memory.peak
        })
        .collect();
    check(&mut f, peaks.iter().all(|&p| p == peaks[0]), format!("runtime peaks {peaks:?}"));
    let m = MemoryModel::default();
    let est: Vec<f64> = (1..=16).map(|t| m.est_peak_mb(t)).collect();
    let pack: Vec<f64> = (1..=16).map(|t| m.packing_peak_mb(t)).collect();
    check(&mut f, est.iter().all(|&e| e == est[0] && e <= m.capacity_mb), "EST peak not flat under capacity");
    check(&mut f, (1..=16).all(|t| pack[t - 1] == t as f64 * pack[0]), "packing not linear");
    let limit = m.packing_limit();
    check(&mut f, limit > 1 && limit <= 16, format!("packing crosses capacity at {limit}"));
    report(7, &format!("EST peak flat for 1..16 threads, packing exceeds capacity at {limit} workers"), &f);
}

#[test]
fn criterion_8_trace_simulation() {
    let mut f = Vec::new();
    let cfg = ClusterConfig::from_toml(&read("pool.toml")).unwrap();
    let trace = parse_trace(&read("trace20.csv")).unwrap();
    check(&mut f, trace.len() == 20, "trace is not 20 jobs");
    check(&mut f, cfg.pool().counts().iter().sum::<usize>() == 8, "pool is not 8 GPUs");
    let t0 = Instant::now();
    let [y, ho, he] = [SimMode::Yarn, SimMode::Homo, SimMode::Heter].map(|m| simulate(&trace, &cfg, m).unwrap());
    let elapsed = t0.elapsed();
    check(&mut f, elapsed < Duration::from_secs(5), format!("took {elapsed:?}"));
    check(&mut f, he.mean_jct_s < ho.mean_jct_s && ho.mean_jct_s < y.mean_jct_s, "mean JCT order");
    check(&mut f, he.makespan_s <= ho.makespan_s && ho.makespan_s <= y.makespan_s, "makespan order");
    check(&mut f, he.mean_allocated() >= ho.mean_allocated(), "heter allocates fewer GPUs than homo");
    for m in [&y, &ho, &he] {
        let again = simulate(&trace, &cfg, m.mode).unwrap();
        check(&mut f, metrics_csv(&again) == metrics_csv(m), format!("{} metrics not repeatable", m.mode));
        check(&mut f, timeline_csv(&again) == timeline_csv(m), format!("{} timeline not repeatable", m.mode));
    }
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let st = bin()
            .args(["simulate", "--mode", "heter", "--trace"])
            .arg(fixture("trace20.csv"))
            .arg("--pool")
            .arg(fixture("pool.toml"))
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        check(&mut f, st.status.success(), "simulate command failed");
        outputs.push(["metrics.csv", "timeline.csv", "summary.csv"].map(|n| std::fs::read(out.join(n)).unwrap_or_default()));
    }
    check(&mut f, outputs[0] == outputs[1], "simulate output files differ between runs");
    report(
        8,
        &format!(
            "mean JCT heter {:.1} < homo {:.1} < yarn {:.1}; makespan {:.0} <= {:.0} <= {:.0}; GPUs {:.2} >= {:.2}",
            he.mean_jct_s,
            ho.mean_jct_s,
            y.mean_jct_s,
            he.makespan_s,
            ho.makespan_s,
            y.makespan_s,
            he.mean_allocated(),
            ho.mean_allocated()
        ),
        &f,
    );
}
