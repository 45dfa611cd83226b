use lumenseg::data::{synth_dataset, GrayImage, Sample};
use lumenseg::metrics::BinaryMask;
use lumenseg::model::{build, Architecture};
use lumenseg::train::{
    fit, load_model, load_state, train_epoch, OptimizerKind, OptimizerState, Preset, TrainConfig, Trainer,
    BEST_CKPT, LAST_CKPT, LOG_CSV,
};
use lumenseg::Error;

fn tiny(epochs: usize) -> TrainConfig {
    TrainConfig {
        architecture: Architecture::SimpleUnet,
        kernel_size: 3,
        base_filters: 2,
        input_size: 32,
        epochs,
        batch_size: 2,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 0.05,
        split_fraction: 0.75,
        augment: true,
        seed: 21,
        ..TrainConfig::preset(Preset::Custom)
    }
}

fn constant_sample() -> Sample {
    let scan = GrayImage::from_unit(32, 32, (0..32 * 32).map(|i| (i % 17) as f64 / 17.0).collect()).unwrap();
    let full = BinaryMask::from_fn(32, 32, |_, _| true);
    Sample::new("c".into(), scan, full.clone(), full).unwrap()
}

#[test]
fn resume_reproduces_remaining_log() {
    let data = synth_dataset(8, 32, 4).unwrap();
    let mut cfg = tiny(5);
    cfg.plateau = Some(lumenseg::train::PlateauConfig {
        patience: 1,
        ..Default::default()
    });
    let full_dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(cfg.clone(), &data).unwrap().with_run_dir(full_dir.path()).unwrap();
    full.run(|_| {}).unwrap();

    let part_dir = tempfile::tempdir().unwrap();
    let mut part = Trainer::new(cfg, &data).unwrap().with_run_dir(part_dir.path()).unwrap();
    part.step_epoch().unwrap();
    part.step_epoch().unwrap();
    drop(part);
    let mut resumed = Trainer::resume(&part_dir.path().join(LAST_CKPT), &data).unwrap();
    assert_eq!(resumed.log().len(), 2);
    resumed.run(|_| {}).unwrap();

    assert_eq!(resumed.log(), full.log());
    assert_eq!(resumed.graph().params(), full.graph().params());
    let a = std::fs::read(full_dir.path().join(LOG_CSV)).unwrap();
    let b = std::fs::read(part_dir.path().join(LOG_CSV)).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        load_state(&full_dir.path().join(LAST_CKPT)).unwrap(),
        load_state(&part_dir.path().join(LAST_CKPT)).unwrap()
    );
}

#[test]
fn best_checkpoint_matches_min_validation_loss() {
    let data = synth_dataset(8, 32, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny(4), &data).unwrap().with_run_dir(dir.path()).unwrap();
    t.run(|_| {}).unwrap();
    let out = t.finish().unwrap();
    assert_eq!(out.log.len(), 4);
    assert_eq!(Some(out.best_val_loss), out.log.min_val_loss());
    let best = load_model(&dir.path().join(BEST_CKPT)).unwrap();
    assert_eq!(best.params(), &out.best_params);
    let val = data.load_ids(&out.val_ids).unwrap();
    let stats = lumenseg::train::evaluate(&best, &val, lumenseg::data::Target::Lumen, 1.0).unwrap();
    assert_eq!(stats.loss, out.best_val_loss);
}

#[test]
fn loss_falls_on_constant_mask() {
    let cfg = TrainConfig {
        batch_size: 1,
        augment: false,
        ..tiny(50)
    };
    let mut graph = build(&cfg.arch_config()).unwrap();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.adam, graph.params());
    let samples = [constant_sample()];
    let losses: Vec<f64> = (1..=50)
        .map(|e| train_epoch(&mut graph, &mut opt, &samples, &cfg, e).unwrap().loss)
        .collect();
    assert!(losses[49] < losses[0] * 0.5, "{} -> {}", losses[0], losses[49]);
}

#[test]
fn small_lr_single_batch_is_nonincreasing() {
    let data = synth_dataset(3, 32, 8).unwrap();
    let samples = data.load_all().unwrap();
    let cfg = TrainConfig {
        batch_size: 3,
        learning_rate: 1e-4,
        augment: false,
        clip_norm: None,
        ..tiny(1)
    };
    let mut graph = build(&cfg.arch_config()).unwrap();
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, cfg.adam, graph.params());
    let mut prev = f64::INFINITY;
    for e in 1..=15 {
        let l = train_epoch(&mut graph, &mut opt, &samples, &cfg, e).unwrap().loss;
        assert!(l <= prev * 1.05, "step {e}: {prev} -> {l}");
        prev = l;
    }
}

#[test]
fn zero_lr_step_is_bit_identical() {
    let data = synth_dataset(2, 32, 8).unwrap();
    let samples = data.load_all().unwrap();
    for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let cfg = TrainConfig {
            optimizer: kind,
            learning_rate: 0.0,
            augment: false,
            ..tiny(1)
        };
        let mut graph = build(&cfg.arch_config()).unwrap();
        let before: Vec<u64> = graph
            .params()
            .iter()
            .flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        let mut opt = OptimizerState::new(kind, 0.0, cfg.adam, graph.params());
        train_epoch(&mut graph, &mut opt, &samples, &cfg, 1).unwrap();
        let after: Vec<u64> = graph
            .params()
            .iter()
            .flat_map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect();
        assert_eq!(before, after);
    }
}

#[test]
fn empty_split_side_rejected() {
    let one = synth_dataset(1, 32, 1).unwrap();
    let two = synth_dataset(2, 32, 1).unwrap();
    for (data, fraction) in [(&one, 0.5), (&two, 0.3)] {
        let err = fit(TrainConfig { split_fraction: fraction, batch_size: 1, ..tiny(1) }, data)
            .err()
            .unwrap();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}

#[test]
fn inputs_are_resized_to_the_configured_size() {
    let data = synth_dataset(4, 64, 2).unwrap();
    let out = fit(TrainConfig { batch_size: 1, ..tiny(1) }, &data).unwrap();
    assert_eq!(out.graph.input.height, 32);
    assert_eq!(out.log.len(), 1);
}
