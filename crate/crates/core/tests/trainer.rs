use promode::data::UtteranceRecord;
use promode::model::{load_checkpoint, ModelConfig};
use promode::synth::{generate_utterance, GenConfig, Inventory};
use promode::trainer::{
    init_model, train, RunOutputs, StepLog, TrainConfig, TrainError, LATEST_CHECKPOINT,
};

fn corpus(n: usize) -> Vec<UtteranceRecord> {
    let cfg = GenConfig {
        phonemes_min: 6,
        phonemes_max: 10,
        ..GenConfig::default()
    };
    let inv = Inventory::new(&cfg);
    (0..n)
        .map(|i| generate_utterance(&cfg, &inv, "train", i).unwrap())
        .collect()
}

fn quick(iterations: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 2,
        iterations,
        seed: 5,
        checkpoint_every: 0,
        dev_every: 0,
        ..TrainConfig::default()
    }
}

fn run(cfg: &TrainConfig, model_cfg: &ModelConfig, data: &[UtteranceRecord]) -> Vec<StepLog> {
    let model = init_model(model_cfg, cfg).unwrap();
    train(model, 0, data, &[], cfg, &RunOutputs::default())
        .unwrap()
        .history
}

#[test]
fn loss_falls_when_overfitting_a_batch() {
    let data = corpus(1);
    let cfg = TrainConfig {
        batch_size: 1,
        ..quick(60)
    };
    let h = run(&cfg, &ModelConfig::tiny(), &data);
    let first: f64 = h[..5].iter().map(|s| s.loss).sum::<f64>() / 5.0;
    let last: f64 = h[h.len() - 5..].iter().map(|s| s.loss).sum::<f64>() / 5.0;
    assert!(last < 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = corpus(4);
    let a = run(&quick(6), &ModelConfig::tiny(), &data);
    let b = run(&quick(6), &ModelConfig::tiny(), &data);
    assert_eq!(a, b);
    let c = run(
        &TrainConfig {
            seed: 6,
            ..quick(6)
        },
        &ModelConfig::tiny(),
        &data,
    );
    assert_ne!(a, c);
}

#[test]
fn thread_count_does_not_change_results() {
    let data = corpus(4);
    let cfg = TrainConfig {
        batch_size: 4,
        ..quick(4)
    };
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let three = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let a = one.install(|| run(&cfg, &ModelConfig::tiny(), &data));
    let b = three.install(|| run(&cfg, &ModelConfig::tiny(), &data));
    assert_eq!(a, b);
}

#[test]
fn resume_reproduces_an_uninterrupted_run() {
    let data = corpus(4);
    let dir = tempfile::tempdir().unwrap();
    let full = run(&quick(8), &ModelConfig::tiny(), &data);

    let first = TrainConfig {
        checkpoint_every: 4,
        ..quick(4)
    };
    let out = RunOutputs {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        log_path: Some(dir.path().join("log.jsonl")),
    };
    let m = init_model(&ModelConfig::tiny(), &first).unwrap();
    train(m, 0, &data, &[], &first, &out).unwrap();
    let ck = load_checkpoint(&dir.path().join(LATEST_CHECKPOINT)).unwrap();
    assert_eq!(ck.iteration, 4);
    let rest = train(ck.model, ck.iteration, &data, &[], &quick(8), &out).unwrap();
    assert_eq!(rest.history[..], full[4..]);

    let log = std::fs::read_to_string(dir.path().join("log.jsonl")).unwrap();
    let logged: Vec<StepLog> = log
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(logged, full);
}

#[test]
fn divergence_keeps_last_good_checkpoint() {
    let data = corpus(2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e38,
        checkpoint_every: 1,
        ..quick(50)
    };
    let out = RunOutputs {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        log_path: None,
    };
    let m = init_model(&ModelConfig::tiny(), &cfg).unwrap();
    let err = train(m, 0, &data, &[], &cfg, &out).unwrap_err();
    let TrainError::Diverged {
        iteration,
        checkpoint,
        ..
    } = err
    else {
        panic!("expected divergence, got {err}");
    };
    let ck = load_checkpoint(std::path::Path::new(&checkpoint)).unwrap();
    assert!(ck.iteration < iteration);
}

#[test]
fn disabled_aol_logs_zero_pd1_terms() {
    let data = corpus(2);
    let mut mc = ModelConfig::tiny();
    mc.ablations.disable_aol = true;
    let h = run(&quick(2), &mc, &data);
    for s in &h {
        for name in ["pd1.f0", "pd1.energy", "pd1.mel10", "pd1.vuv"] {
            assert_eq!(s.components[name], 0.0);
        }
        let pd2: f64 = s
            .components
            .iter()
            .filter(|(k, _)| k.starts_with("pd2."))
            .map(|(_, v)| v)
            .sum();
        assert!((pd2 - s.loss).abs() <= 1e-5 * s.loss.abs().max(1.0));
    }
}

#[test]
fn dev_loss_and_early_stopping() {
    let data = corpus(4);
    let cfg = TrainConfig {
        learning_rate: 1e-12,
        dev_every: 1,
        early_stopping: true,
        patience: 2,
        ..quick(50)
    };
    let h = train(
        init_model(&ModelConfig::tiny(), &cfg).unwrap(),
        0,
        &data,
        &data[..2],
        &cfg,
        &RunOutputs::default(),
    )
    .unwrap();
    assert!(h.history.iter().all(|s| s.dev_loss.is_some()));
    assert!(h.stopped_early && h.iteration < 50, "{}", h.iteration);
}

#[test]
fn empty_train_set_and_bad_config_are_rejected() {
    let m = init_model(&ModelConfig::tiny(), &quick(1)).unwrap();
    assert!(matches!(
        train(m.clone(), 0, &[], &[], &quick(1), &RunOutputs::default()),
        Err(TrainError::EmptyTrainSet)
    ));
    let bad = TrainConfig {
        batch_size: 0,
        ..quick(1)
    };
    assert!(matches!(
        train(m, 0, &corpus(1), &[], &bad, &RunOutputs::default()),
        Err(TrainError::Config(_))
    ));
}
