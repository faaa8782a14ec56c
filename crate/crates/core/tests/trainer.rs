use t2s_core::config::{Mode, RunConfig};
use t2s_core::model::load_checkpoint;
use t2s_core::trainer::{
    compute_objective, draw_batch, load_state, run, synthetic_corpus, train_step, RunOptions, Terms, TrainState,
    CHECKPOINT_FILE, LOSS_LOG_FILE,
};
use t2s_core::translate::EngineKind;
use t2s_core::Error;

fn small() -> RunConfig {
    let mut cfg = RunConfig {
        height: 32,
        width: 32,
        n_source: 8,
        n_target: 8,
        n_eval: 4,
        iters: 6,
        eval_every: 3,
        ckpt_every: 3,
        ..RunConfig::default()
    };
    cfg.optim.warmup = 2;
    cfg
}

fn opts(dir: &std::path::Path) -> RunOptions {
    RunOptions {
        out_dir: Some(dir.to_path_buf()),
        dump_pairs: None,
        run_name: "t".into(),
    }
}

#[test]
fn zero_iterations_checkpoint_equals_init() {
    let cfg = RunConfig { iters: 0, ..small() };
    let corpus = synthetic_corpus(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run(&cfg, &corpus, None, &opts(dir.path())).unwrap();
    assert!(out.logs.is_empty());
    let ck = load_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck, TrainState::init(&cfg).to_checkpoint(&cfg));
    let log = std::fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn eval_interval_beyond_horizon_gives_one_final_eval() {
    let cfg = RunConfig { eval_every: 100, ..small() };
    let corpus = synthetic_corpus(&cfg).unwrap();
    let out = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    assert_eq!(out.evals.len(), 1);
    assert_eq!(out.evals[0].step, cfg.iters);
}

#[test]
fn periodic_evals_and_artifacts() {
    let cfg = small();
    let corpus = synthetic_corpus(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    let o = RunOptions {
        dump_pairs: Some(pairs.clone()),
        ..opts(dir.path())
    };
    let out = run(&cfg, &corpus, None, &o).unwrap();
    assert_eq!(out.evals.iter().map(|e| e.step).collect::<Vec<_>>(), [3, 6]);
    let log = std::fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 1 + cfg.iters as usize);
    assert!(log.starts_with("step,l_source,l_target,l_pull,weighted_pull,total,q_mean,gamma,w0,w1,w2,w3\n"));
    for name in ["config.txt", "metrics.csv", "ccd.svg", "pdd.svg", "iou.svg"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert!(std::fs::metadata(&pairs).unwrap().len() > 0);
    let back = RunConfig::load(&dir.path().join("config.txt")).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn dg_consumes_no_target_images() {
    let mut cfg = small();
    cfg.mode = Mode::Dg;
    cfg.engine.kind = EngineKind::ColorJitter;
    let corpus = synthetic_corpus(&cfg).unwrap();
    let out = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    assert_eq!(out.state.target_images_seen, 0);
    assert!(out.logs.iter().all(|l| l.l_target == 0.0));

    let cfg = small();
    let out = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    assert_eq!(out.state.target_images_seen, cfg.iters * cfg.batch_target as u64);
}

#[test]
fn teacher_moves_only_at_the_ema_update() {
    let mut cfg = small();
    cfg.optim.warmup = 0;
    let corpus = synthetic_corpus(&cfg).unwrap();
    let mut state = TrainState::init(&cfg);
    for _ in 0..3 {
        let batch = draw_batch(&corpus, &cfg, state.step);
        let before = state.teacher.params.clone();
        let student_before = state.student.clone();
        let obj = compute_objective(&state.student, &state.teacher, &batch, &cfg, state.step, Terms::ALL).unwrap();
        assert_eq!(state.teacher.params, before);
        state.opt.step(&mut state.student, &obj.grads).unwrap();
        assert_eq!(state.teacher.params, before);
        assert_ne!(state.student, student_before);
        state.teacher.ema_update(&state.student).unwrap();
        for ((t, old), s) in state.teacher.params.data.iter().zip(&before.data).zip(&state.student.data) {
            let want = cfg.eta * old + (1.0 - cfg.eta) * s;
            assert!((t - want).abs() <= 1e-15 * (1.0 + want.abs()));
        }
        state.step += 1;
    }
}

#[test]
fn train_step_updates_teacher_once() {
    let cfg = small();
    let corpus = synthetic_corpus(&cfg).unwrap();
    let mut a = TrainState::init(&cfg);
    let mut b = a.clone();
    let batch = draw_batch(&corpus, &cfg, 0);
    train_step(&mut a, &batch, &cfg).unwrap();
    let obj = compute_objective(&b.student, &b.teacher, &batch, &cfg, 0, Terms::ALL).unwrap();
    b.opt.step(&mut b.student, &obj.grads).unwrap();
    b.teacher.ema_update(&b.student).unwrap();
    assert_eq!(a.teacher, b.teacher);
    assert_eq!(a.student, b.student);
    assert_eq!(a.step, 1);
}

#[test]
fn unreachable_confidence_collapses_to_source_only() {
    let mut cfg = small();
    cfg.iters = 8;
    cfg.loss.lambda_pull = 0.0;
    cfg.delta_p = 1.0 + 1e-9;
    let corpus = synthetic_corpus(&cfg).unwrap();
    let out = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    for l in &out.logs {
        assert_eq!(l.l_target, 0.0);
        assert_eq!(l.q_mean, 0.0);
        assert_eq!(l.weighted_pull, 0.0);
        assert_eq!(l.total, l.l_source);
    }
}

#[test]
fn default_config_losses_stay_finite_for_500_steps() {
    let cfg = RunConfig {
        iters: 500,
        eval_every: 0,
        ..RunConfig::default()
    };
    let corpus = synthetic_corpus(&cfg).unwrap();
    let out = run(&cfg, &corpus, None, &RunOptions::default()).unwrap();
    assert_eq!(out.logs.len(), 500);
    for l in &out.logs {
        let all = [l.l_source, l.l_target, l.l_pull, l.weighted_pull, l.total, l.q_mean];
        assert!(all.iter().all(|v| v.is_finite()), "step {}: {all:?}", l.step);
        assert!(l.weights.iter().all(|w| w.is_finite()));
    }
    assert!(out.evals[0].miou.is_finite());
}

#[test]
fn resume_continues_the_loss_log_and_rejects_other_configs() {
    let cfg = small();
    let corpus = synthetic_corpus(&cfg).unwrap();
    let whole = tempfile::tempdir().unwrap();
    run(&cfg, &corpus, None, &opts(whole.path())).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = RunConfig { iters: 4, ..cfg.clone() };
    run(&first, &corpus, None, &opts(split.path())).unwrap();
    let state = load_state(split.path(), &cfg).unwrap().unwrap();
    assert_eq!(state.step, 4);
    run(&cfg, &corpus, Some(state), &opts(split.path())).unwrap();
    let read = |d: &std::path::Path| std::fs::read(d.join(LOSS_LOG_FILE)).unwrap();
    assert_eq!(read(whole.path()), read(split.path()));
    assert_eq!(
        std::fs::read(whole.path().join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(split.path().join(CHECKPOINT_FILE)).unwrap()
    );

    let other = RunConfig { seed: 9, ..cfg };
    assert!(matches!(load_state(split.path(), &other), Err(Error::ConfigInvalid(_))));
    assert!(load_state(tempfile::tempdir().unwrap().path(), &other).unwrap().is_none());
}
