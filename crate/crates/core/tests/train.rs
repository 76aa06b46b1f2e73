use stlm_core::model::*;
use stlm_core::synth::*;
use stlm_core::train::*;
use stlm_core::{Error, Tape};

fn images(n: usize, size: usize, seed: u64) -> Vec<Image> {
    let ds = make_synthetic_dataset(&DatasetSpec {
        n_train: n,
        n_test_good: 1,
        n_test_bad: 1,
        size,
        seed,
        perlin: perlin(),
        ..DatasetSpec::default()
    })
    .unwrap();
    ds.train.into_iter().map(|s| s.image).collect()
}

fn perlin() -> PerlinParams {
    PerlinParams {
        base_period_range: (4, 8),
        ..PerlinParams::default()
    }
}

fn trainer_with(model: ModelConfig, train: TrainConfig, anomaly: AnomalySpec) -> Trainer {
    let size = model.image_size;
    let m = Model::new(model, train.seed).unwrap();
    Trainer::new(m, train, anomaly, perlin(), SourceBank::Procedural, images(4, size, 1)).unwrap()
}

fn trainer(train: TrainConfig) -> Trainer {
    trainer_with(ModelConfig::miniature(), train, AnomalySpec::default())
}

const COMPONENTS: [&str; 5] = ["plain.", "denoising.", "decoder.", "teacher_proj.", "fa."];

#[test]
fn one_step_moves_every_trainable_component_but_not_the_teacher() {
    let mut t = trainer(TrainConfig::default());
    let before: Vec<u64> = COMPONENTS.iter().map(|c| t.model.params.checksum(c)).collect();
    let teacher = t.model.params.checksum("teacher.");
    let r = t.next_step().unwrap();
    assert!(r.losses.is_finite());
    assert!(r.losses.l_p > 0.0 && r.losses.l_de > 0.0 && r.losses.l_focal > 0.0);
    for (c, b) in COMPONENTS.iter().zip(before) {
        assert_ne!(t.model.params.checksum(c), b, "{c} unchanged");
    }
    assert_eq!(t.model.params.checksum("teacher."), teacher);
}

#[test]
fn hundred_steps_stay_finite() {
    let mut t = trainer(TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    });
    assert_eq!(t.total_steps(), 100);
    let log = t.run(|_, _| Ok(())).unwrap();
    assert_eq!(log.len(), 100);
    assert!(log.iter().all(|r| r.losses.is_finite() && r.grad_norm.is_finite()));
    let total = |r: &StepRecord| {
        let l = r.losses;
        (l.l_total - (l.l_p + l.l_de + l.l_focal + l.l_l1)).abs()
    };
    assert!(log.iter().all(|r| total(r) < 1e-5));
}

#[test]
fn identical_streams_without_anomalies_give_equal_distillation_losses() {
    let anomaly = AnomalySpec {
        activation_prob: 0.0,
        ..AnomalySpec::default()
    };
    let mut t = trainer_with(ModelConfig::miniature(), TrainConfig::default(), anomaly);
    let plain: Vec<_> = t
        .model
        .params
        .iter()
        .filter(|(k, _)| k.starts_with("plain."))
        .map(|(k, v)| (k.replacen("plain.", "denoising.", 1), v.clone()))
        .collect();
    for (k, v) in plain {
        t.model.params.insert(k, v);
    }
    let r = t.next_step().unwrap();
    assert!((r.losses.l_p - r.losses.l_de).abs() < 1e-6, "{:?}", r.losses);
}

#[test]
fn two_stage_freezes_students_in_the_second_stage() {
    let mut t = trainer(TrainConfig {
        epochs: 2,
        stage_mode: StageMode::TwoStage,
        ..TrainConfig::default()
    });
    let spe = t.steps_per_epoch();
    let fa0 = t.model.params.checksum("fa.");
    for _ in 0..spe {
        let r = t.next_step().unwrap();
        assert_eq!(r.stage, Stage::Distill);
        assert_eq!(r.losses.l_focal, 0.0);
    }
    assert_eq!(t.model.params.checksum("fa."), fa0);
    let tlm: Vec<u64> = COMPONENTS[..4].iter().map(|c| t.model.params.checksum(c)).collect();
    while !t.is_done() {
        let r = t.next_step().unwrap();
        assert_eq!(r.stage, Stage::Segment);
        assert_eq!((r.losses.l_p, r.losses.l_de), (0.0, 0.0));
    }
    let after: Vec<u64> = COMPONENTS[..4].iter().map(|c| t.model.params.checksum(c)).collect();
    assert_eq!(tlm, after);
    assert_ne!(t.model.params.checksum("fa."), fa0);
}

#[test]
fn segmentation_loss_alone_reaches_the_encoders() {
    let mut t = trainer(TrainConfig::default());
    let inputs = t.step_inputs(Stage::Joint, &[0, 1], 17).unwrap();
    let model = t.model.clone();
    let trainable = |n: &str| !is_teacher(n) && !is_buffer(n);
    let mut tape = Tape::new();
    let mut b = Binder::new(&model.params, &trainable);
    let g = step_graph(&mut tape, &mut b, &model, Stage::Joint, &inputs, 4.0).unwrap();
    let grads = tape.backward(g.l_focal.unwrap()).unwrap();
    for name in ["plain.encoder.patch.weight", "denoising.encoder.patch.weight"] {
        let id = b.bound()[name];
        let gr = grads.get(id).expect(name);
        assert!(gr.data().iter().any(|v| v.abs() > 0.0), "{name}");
    }
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = trainer(cfg.clone());
        let log = t.run(|_, _| Ok(())).unwrap();
        (log, t.model.params.checksum(""))
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let mut other = trainer(TrainConfig { seed: 10, ..cfg });
    other.run(|_, _| Ok(())).unwrap();
    assert_ne!(other.model.params.checksum(""), ca);
}

#[test]
fn batches_cover_each_epoch() {
    let t = trainer(TrainConfig {
        batch_size: 3,
        ..TrainConfig::default()
    });
    assert_eq!(t.steps_per_epoch(), 2);
    let mut seen: Vec<usize> = (0..2).flat_map(|s| t.batch_indices(s)).collect();
    seen.sort();
    assert_eq!(seen, vec![0, 1, 2, 3]);
    assert_ne!(t.batch_seed(0), t.batch_seed(1));
}

#[test]
fn invalid_configs_are_rejected() {
    for (cfg, key) in [
        (TrainConfig { batch_size: 0, ..TrainConfig::default() }, "train.batch_size"),
        (TrainConfig { adam_lr: -1.0, ..TrainConfig::default() }, "train.adam_lr"),
        (TrainConfig { focal_gamma: -0.5, ..TrainConfig::default() }, "train.focal_gamma"),
    ] {
        match cfg.validate() {
            Err(Error::InvalidConfig { key: k, .. }) => assert_eq!(k, key),
            other => panic!("{key}: {other:?}"),
        }
    }
    let m = Model::new(ModelConfig::miniature(), 0).unwrap();
    let bad = AnomalySpec {
        activation_prob: 1.5,
        ..AnomalySpec::default()
    };
    let e = Trainer::new(m, TrainConfig::default(), bad, perlin(), SourceBank::Procedural, images(2, 16, 0));
    assert!(matches!(e, Err(Error::InvalidConfig { .. })));
}

#[test]
fn non_finite_loss_reports_the_batch_seed() {
    let mut t = trainer(TrainConfig::default());
    let w = t.model.params.get_mut("fa.head.conv.weight").unwrap();
    *w = w.map(|_| f32::NAN);
    let seed = t.batch_seed(0);
    match t.next_step() {
        Err(Error::NonFiniteLoss { step, batch_seed, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(batch_seed, seed);
        }
        other => panic!("expected NonFiniteLoss, got {other:?}"),
    }
}

#[test]
fn teacher_free_training_needs_no_teacher_weights() {
    let cfg = ModelConfig {
        use_teacher: false,
        ..ModelConfig::miniature()
    };
    let mut t = trainer_with(cfg, TrainConfig::default(), AnomalySpec::default());
    assert!(t.model.params.iter().all(|(k, _)| !k.starts_with("teacher")));
    let r = t.next_step().unwrap();
    assert_eq!((r.losses.l_p, r.losses.l_de), (0.0, 0.0));
    assert!(r.losses.l_focal > 0.0);
}
