use super::*;
use crate::detcore::model::forward_backward;
use crate::planner::DeviceType;

fn cfg(mode: DeterminismMode) -> TrainConfig {
    TrainConfig { seed: 7, determinism: mode, ..TrainConfig::default() }
}

fn layout(kind: &str, threads: &[usize]) -> Vec<ExecutorSpec> {
    threads.iter().map(|&t| ExecutorSpec::new(kind, t)).collect()
}

fn run(ts: &mut TrainingState, steps: usize) -> Vec<Vec<u64>> {
    (0..steps)
        .map(|_| ts.step().unwrap().iter().map(|l| l.to_bits()).collect())
        .collect()
}

fn params_bits(ts: &TrainingState) -> Vec<u64> {
    ts.model().params().iter().map(|p| p.to_bits()).collect()
}

fn state_bits(ts: &TrainingState) -> Vec<u64> {
    let mut v = params_bits(ts);
    v.extend(ts.opt().velocity.iter().map(|x| x.to_bits()));
    v
}

#[test]
fn executor_count_does_not_matter_under_d1() {
    let mut a = TrainingState::new(cfg(DeterminismMode::D1), &layout("v100", &[4])).unwrap();
    let mut b = TrainingState::new(cfg(DeterminismMode::D1), &layout("v100", &[1, 1, 1, 1])).unwrap();
    let mut c = TrainingState::new(cfg(DeterminismMode::D1), &layout("v100", &[3, 1])).unwrap();
    let la = run(&mut a, 20);
    assert_eq!(la, run(&mut b, 20));
    assert_eq!(la, run(&mut c, 20));
    assert_eq!(params_bits(&a), params_bits(&b));
    assert_eq!(params_bits(&a), params_bits(&c));
}

#[test]
fn device_kind_needs_d2() {
    let mut a = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("v100", &[2, 2])).unwrap();
    let mut b = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("t4", &[2, 2])).unwrap();
    run(&mut a, 10);
    run(&mut b, 10);
    assert_eq!(params_bits(&a), params_bits(&b));

    let mut a = TrainingState::new(cfg(DeterminismMode::D1), &layout("v100", &[2, 2])).unwrap();
    let mut b = TrainingState::new(cfg(DeterminismMode::D1), &layout("t4", &[2, 2])).unwrap();
    run(&mut a, 10);
    run(&mut b, 10);
    assert_ne!(params_bits(&a), params_bits(&b));
}

#[test]
fn single_est_is_plain_sgd() {
    let c = TrainConfig { max_p: 1, dropout: 0.0, ..cfg(DeterminismMode::D1D2) };
    let mut ts = TrainingState::new(c.clone(), &layout("a100", &[1])).unwrap();
    let mut model = ToyModel::init(c.seed);
    let mut opt = OptState::new(c.lr, c.momentum);
    let mut data = DataPipe::new(DataConfig { seed: c.seed, ..c.data.clone() }, 1).unwrap();
    let kp = KernelProfile::agnostic("a100").unwrap();
    let mut rng = Rng64::new(0);
    let mut stat = TrackedStat::default();
    for m in 0..15u64 {
        let batch = data.next_batch(0, m).unwrap();
        data.commit(m).unwrap();
        let state = PassState { virtual_rank: 0, dropout_rng: &mut rng, stat: &mut stat };
        let out = forward_backward(&model, &batch, 0.0, state, &kp).unwrap();
        sgd_step(&mut model, &mut opt, &out.grads).unwrap();
        let losses = ts.step().unwrap();
        assert_eq!(losses[0].to_bits(), out.loss.to_bits());
    }
    assert_eq!(ts.model().to_bytes(), model.to_bytes());
}

#[test]
fn save_restore_save_is_identity() {
    let mut ts = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("v100", &[2, 2])).unwrap();
    run(&mut ts, 5);
    let bytes = checkpoint_save(&ts).unwrap();
    let back = checkpoint_restore(&bytes, &ts.layout()).unwrap();
    assert!(back.same_state(&ts));
    assert_eq!(checkpoint_save(&back).unwrap(), bytes);
}

#[test]
fn checkpoint_grows_by_one_record_per_est() {
    let sizes: Vec<usize> = (1..=6)
        .map(|p| {
            let c = TrainConfig { max_p: p, ..cfg(DeterminismMode::D1D2) };
            checkpoint_save(&TrainingState::new(c, &[ExecutorSpec::auto("v100")]).unwrap())
                .unwrap()
                .len()
        })
        .collect();
    for w in sizes.windows(2) {
        assert_eq!(w[1] - w[0], EST_RECORD_BYTES);
    }
}

#[test]
fn ranks_follow_layout() {
    let ts = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("v100", &[3, 1])).unwrap();
    assert_eq!(ts.executors[0].assigned_ests, vec![0, 1, 2]);
    assert_eq!(ts.executors[1].assigned_ests, vec![3]);
    let auto = assign_ranks(&[ExecutorSpec::auto("t4"), ExecutorSpec::auto("t4"), ExecutorSpec::auto("t4")], 4);
    assert!(matches!(auto, Err(Error::Config(_))));
    assert_eq!(
        assign_ranks(&[ExecutorSpec::auto("t4"), ExecutorSpec::auto("t4")], 3).unwrap(),
        vec![vec![0, 1], vec![2]]
    );
    assert!(assign_ranks(&layout("t4", &[2, 1]), 4).is_err());
}

#[test]
fn elastic_restart_matches_uninterrupted() {
    let mode = DeterminismMode::D1;
    let mut base = TrainingState::new(cfg(mode), &layout("v100", &[1, 1, 1, 1])).unwrap();
    let base_log = run(&mut base, 20);

    let mut ts = TrainingState::new(cfg(mode), &layout("v100", &[1, 1, 1, 1])).unwrap();
    let mut log = run(&mut ts, 10);
    ts.reconfigure_layout(&layout("v100", &[2, 2])).unwrap();
    log.extend(run(&mut ts, 10));
    assert_eq!(log, base_log);
    assert_eq!(params_bits(&ts), params_bits(&base));

    let mut ts = TrainingState::new(cfg(mode), &layout("v100", &[1, 1, 1, 1])).unwrap();
    let mut log = run(&mut ts, 7);
    ts.reconfigure_layout(&layout("v100", &[3, 1])).unwrap();
    log.extend(run(&mut ts, 6));
    ts.reconfigure_layout(&layout("v100", &[1, 1, 1, 1])).unwrap();
    log.extend(run(&mut ts, 7));
    assert_eq!(log, base_log);
}

#[test]
fn d0_restart_diverges_at_first_sync() {
    let mode = DeterminismMode::D0;
    let mut base = TrainingState::new(cfg(mode), &layout("v100", &[1, 1, 1, 1])).unwrap();
    run(&mut base, 10);
    let mut ts = base.clone();
    ts.reconfigure_layout(&layout("v100", &[2, 2])).unwrap();
    assert_eq!(params_bits(&ts), params_bits(&base));
    let a = base.step().unwrap();
    let b = ts.step().unwrap();
    // Losses come from the shared pre-sync parameters, the update does not.
    assert_eq!(a, b);
    assert_ne!(state_bits(&ts), state_bits(&base));
}

#[test]
fn without_d0_reruns_differ_by_nonce() {
    let mk = |nonce| TrainConfig { autotune_nonce: nonce, ..cfg(DeterminismMode::NONE) };
    let mut a = TrainingState::new(mk(1), &layout("v100", &[2, 2])).unwrap();
    let mut b = TrainingState::new(mk(1), &layout("v100", &[2, 2])).unwrap();
    let mut c = TrainingState::new(mk(2), &layout("v100", &[2, 2])).unwrap();
    let la = run(&mut a, 10);
    assert_eq!(la, run(&mut b, 10));
    assert_ne!(la, run(&mut c, 10));
}

#[test]
fn replica_drift_is_corruption() {
    let mut ts = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("v100", &[2, 2])).unwrap();
    run(&mut ts, 2);
    let mut p = ts.executors[1].model.params().to_vec();
    p[3] = f64::from_bits(p[3].to_bits() ^ 1);
    ts.executors[1].model = ToyModel::from_params(p).unwrap();
    assert!(matches!(ts.step(), Err(Error::Corruption(_))));
    assert!(matches!(checkpoint_save(&ts), Err(Error::Corruption(_))));
}

#[test]
fn checkpoint_errors() {
    let mut ts = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("v100", &[2, 2])).unwrap();
    run(&mut ts, 1);
    let bytes = checkpoint_save(&ts).unwrap();
    let lay = ts.layout();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint_restore(&bad, &lay), Err(Error::Format { offset: 0, .. })));

    let mut bad = bytes.clone();
    bad[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert_eq!(checkpoint_restore(&bad, &lay).unwrap_err(), Error::Version { found: 2, expected: 1 });

    for cut in [6, 100, bytes.len() - 1] {
        assert!(matches!(checkpoint_restore(&bytes[..cut], &lay), Err(Error::Format { .. })));
    }
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(checkpoint_restore(&long, &lay), Err(Error::Format { .. })));

    // Thread counts must cover exactly the stored ESTs.
    assert!(matches!(checkpoint_restore(&bytes, &layout("v100", &[2, 1])), Err(Error::Config(_))));

    let batch: Vec<Sample> = {
        let mut g = Vec::new();
        for r in 0..4 {
            g.extend(ts.data.next_batch(r, ts.global_step).unwrap());
        }
        g
    };
    ts.compute_phase(&batch).unwrap();
    assert!(matches!(checkpoint_save(&ts), Err(Error::State(_))));
    assert!(matches!(ts.compute_phase(&batch), Err(Error::State(_))));
    ts.sync_phase().unwrap();
    assert!(matches!(ts.sync_phase(), Err(Error::State(_))));
}

#[test]
fn gradients_leave_device_when_next_est_starts() {
    let mut ts = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("v100", &[3, 1])).unwrap();
    let mut batch = Vec::new();
    for r in 0..4 {
        batch.extend(ts.data.next_batch(r, 0).unwrap());
    }
    ts.compute_phase(&batch).unwrap();
    let parked: Vec<bool> = ts.ests.iter().map(|e| e.pending_grads.is_some()).collect();
    assert_eq!(parked, vec![true, true, false, false]);
    assert!(ts.executors.iter().all(|e| e.device_grads.is_some()));
    ts.sync_phase().unwrap();
    assert!(ts.at_boundary());
}

#[test]
fn executor_peak_memory_independent_of_threads() {
    let peaks: Vec<u64> = [1usize, 2, 4, 8, 16]
        .iter()
        .map(|&t| {
            let c = TrainConfig { max_p: t, ..cfg(DeterminismMode::D1D2) };
            let mut ts = TrainingState::new(c, &layout("v100", &[t])).unwrap();
            run(&mut ts, 2);
            ts.executors[0].memory.peak
        })
        .collect();
    assert!(peaks.iter().all(|&p| p == peaks[0]), "{peaks:?}");
}

#[test]
fn reconfigure_from_plan() {
    let pool = DevicePool {
        types: vec![
            DeviceType { name: "v100".into(), count: 1, memory_mu: 4.0, interference: vec![1.0] },
            DeviceType { name: "t4".into(), count: 1, memory_mu: 4.0, interference: vec![1.0] },
        ],
    };
    let profile = crate::planner::WorkloadProfile::from_history(vec![2.45, 1.0], 1.0);
    let plan = crate::planner::best_config(&pool, &profile, &crate::planner::SearchSpace::new(0, 4))
        .unwrap()
        .unwrap();
    let mut base = TrainingState::new(cfg(DeterminismMode::D1D2), &layout("a10", &[4])).unwrap();
    let mut ts = base.clone();
    run(&mut ts, 3);
    ts.reconfigure(&plan, &pool).unwrap();
    assert_eq!(ts.layout_threads(), vec![3, 1]);
    run(&mut ts, 3);
    run(&mut base, 6);
    assert_eq!(params_bits(&ts), params_bits(&base));
}

#[test]
fn mode_strings_round_trip() {
    for m in [DeterminismMode::NONE, DeterminismMode::D0, DeterminismMode::D1, DeterminismMode::D1D2] {
        assert_eq!(m.to_string().parse::<DeterminismMode>().unwrap(), m);
        assert_eq!(DeterminismMode::from_bits(m.bits()), Some(m));
    }
    assert!(DeterminismMode::from_bits(2).is_none());
    assert!("d3".parse::<DeterminismMode>().is_err());
}

