use dualrecon::autodiff::Checkpoint;
use dualrecon::blocks::BlockConfig;
use dualrecon::data::*;
use dualrecon::error::Error;
use dualrecon::model::{Mode, ModelConfig};
use dualrecon::train::*;

fn tiny() -> (ModelConfig, TrainConfig, Dataset, Dataset) {
    let spec = DatasetSpec {
        phantom: PhantomSpec {
            size: 16,
            ..PhantomSpec::default()
        },
        train: 6,
        val: 2,
        test: 0,
    };
    let model = ModelConfig::full(Mode::Dual, BlockConfig::with_channels(4));
    let train = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr_decay_every: 1,
        seed: 11,
        ..TrainConfig::default()
    };
    (
        model,
        train,
        spec.generate(Split::Train).unwrap(),
        spec.generate(Split::Val).unwrap(),
    )
}

#[test]
fn lr_schedule_halves_at_the_boundary() {
    let c = TrainConfig::default();
    assert_eq!(c.lr_at(1), 1e-3);
    assert_eq!(c.lr_at(20), 1e-3);
    assert_eq!(c.lr_at(21), 5e-4);
    assert_eq!(c.lr_at(30), 5e-4);
}

#[test]
fn one_epoch_smoke_writes_loadable_checkpoints() {
    let (model, mut cfg, train, val) = tiny();
    cfg.epochs = 1;
    let dir = tempfile::tempdir().unwrap();
    let train = train.truncated(4);
    let mut s = Session::new(model, cfg, 16).unwrap();
    s.run(&train, &val, Some(dir.path()), |_| {}).unwrap();
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    assert!(log.starts_with("epoch,lr,train_loss,val_loss,val_psnr\n"));
    for f in ["best.ckpt", "last.ckpt"] {
        let ck = Checkpoint::read(dir.path().join(f)).unwrap();
        let (m, _) = load_model(&ck).unwrap();
        assert_eq!(m.store.count(), s.model.store.count());
    }
    let (loaded, _) = load_model(&Checkpoint::read(dir.path().join("last.ckpt")).unwrap()).unwrap();
    for ((_, a), (_, b)) in loaded.store.iter().zip(s.model.store.iter()) {
        assert_eq!(a.value(), b.value(), "{}", a.name);
    }
}

#[test]
fn identical_seeds_give_identical_logs() {
    let (model, cfg, train, val) = tiny();
    let run = || {
        let mut s = Session::new(model.clone(), cfg.clone(), 16).unwrap();
        s.run(&train, &val, None, |_| {}).unwrap();
        log_csv(&s.state.log)
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.lines().count(), 3);
}

#[test]
fn resume_continues_bit_for_bit() {
    let (model, cfg, train, val) = tiny();
    let mut whole = Session::new(model.clone(), cfg.clone(), 16).unwrap();
    whole.run(&train, &val, None, |_| {}).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Session::new(
        model,
        TrainConfig {
            epochs: 1,
            ..cfg.clone()
        },
        16,
    )
    .unwrap();
    first.run(&train, &val, Some(dir.path()), |_| {}).unwrap();
    let state =
        Checkpoint::from_bytes(&std::fs::read(dir.path().join("last.ckpt")).unwrap()).unwrap();
    let best = Checkpoint::read(dir.path().join("best.ckpt")).unwrap();
    let mut resumed = Session::resume(&state, Some(&best), 16).unwrap();
    resumed.config.epochs = 2;
    resumed.run(&train, &val, None, |_| {}).unwrap();

    let (a, b) = (&whole.state.log[1], &resumed.state.log[1]);
    assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
    assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
    assert_eq!(log_csv(&whole.state.log), log_csv(&resumed.state.log));
    for ((_, p), (_, q)) in whole.model.store.iter().zip(resumed.model.store.iter()) {
        assert_eq!(p.value(), q.value(), "{}", p.name);
    }
    assert_eq!(whole.state.adam, resumed.state.adam);
}

#[test]
fn non_finite_loss_names_a_parameter() {
    let (model, cfg, train, val) = tiny();
    let mut s = Session::new(model, cfg, 16).unwrap();
    let id = s
        .model
        .store
        .id("img.sfe.0.weight")
        .expect("parameter name");
    s.model.store.value_mut(id).data_mut()[0] = f64::NAN;
    match s.run_epoch(&train, &val) {
        Err(Error::NonFinite { detail, .. }) => {
            assert!(
                detail.contains("first non-finite parameter gradient: ksp.")
                    || detail.contains("img."),
                "{detail}"
            );
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epochs": 3, "learning_rate": 1}"#).is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
    assert_eq!((c.epochs, c.batch_size), (3, 4));
    assert!(TrainConfig {
        lr: -1.0,
        ..c.clone()
    }
    .validate()
    .is_err());
    assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
}

#[test]
fn ablation_single_row_and_row_errors() {
    let (model, mut cfg, train, val) = tiny();
    cfg.epochs = 1;
    let test = val.clone();
    let m = run_ablation(
        &[Placement::baseline()],
        &model,
        &cfg,
        (&train, &val, &test),
        None,
        false,
    );
    assert_eq!(m.rows.len(), 1);
    assert!(m.rows[0].error.is_none() && m.rows[0].psnr.is_finite());
    assert_eq!(m.to_csv().lines().count(), 2);

    // a window that does not divide 16 makes the local-detail rows fail
    let mut bad = model.clone();
    bad.block.window = 5;
    let rows = [Placement::baseline(), Placement::full()];
    let m = run_ablation(&rows, &bad, &cfg, (&train, &val, &test), None, true);
    assert!(m.rows[0].error.is_none());
    assert!(m.rows[1].error.is_some());
}
