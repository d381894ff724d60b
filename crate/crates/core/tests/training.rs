use cafv_autodiff::Tensor;
use cafv_core::data::{make_synthetic_benchmark, Benchmark, SyntheticSpec};
use cafv_core::training::{pretrain_classifier, GanTrainer, TrainConfig, TrainedClassifier};
use cafv_core::Error;

fn small() -> (Benchmark, TrainConfig) {
    let spec = SyntheticSpec {
        num_classes: 4,
        feature_dim: 4,
        counts: vec![20, 20, 20, 6],
        seed: 11,
        ..SyntheticSpec::default()
    };
    let config = TrainConfig {
        feature_dim: 4,
        noise_dim: 2,
        batch_size: 8,
        generator_hidden: 8,
        critic_hidden: 8,
        n_critic: 2,
        generator_lr: 1e-2,
        critic_lr: 1e-2,
        gan_epochs: 4,
        classifier_epochs: 20,
        classifier_lr: 0.05,
        log_every: 1,
        seed: 3,
        ..TrainConfig::default()
    };
    (make_synthetic_benchmark(&spec).unwrap(), config)
}

fn classifier(b: &Benchmark, c: &TrainConfig) -> TrainedClassifier {
    pretrain_classifier(&b.train, c).unwrap()
}

#[test]
fn resume_reproduces_the_uninterrupted_trace() {
    let (b, config) = small();
    let cls = classifier(&b, &config);
    let mut straight = GanTrainer::new(&config, &b.train, &cls).unwrap();
    let total = straight.total_steps();
    assert!(total >= 12);
    straight.run().unwrap();

    for k in [0, 1, 5, total - 10] {
        let mut first = GanTrainer::new(&config, &b.train, &cls).unwrap();
        first.run_until(k).unwrap();
        let dir = tempfile::tempdir().unwrap();
        first.checkpoint(dir.path()).unwrap();
        drop(first);
        let mut resumed = GanTrainer::resume(dir.path(), &b.train).unwrap();
        assert_eq!(resumed.step(), k);
        resumed.run_until(k + 10).unwrap();
        let h = resumed.history();
        assert_eq!(h.len() as u64, k + 10);
        for (a, e) in h.iter().zip(straight.history()) {
            assert_eq!(a.to_json_line(), e.to_json_line(), "step {}", e.step);
        }
        if k + 10 == total {
            for (name, p) in straight.bundle().params.iter() {
                assert_eq!(&p.value, resumed.bundle().params.get(name).unwrap(), "{name}");
            }
        }
    }
}

#[test]
fn nan_weights_stop_training_with_the_step() {
    let (b, config) = small();
    let cls = classifier(&b, &config);
    let mut t = GanTrainer::new(&config, &b.train, &cls).unwrap();
    t.run_until(3).unwrap();
    let shape = t.bundle().params.get("g_xy.b_out").unwrap().shape().to_vec();
    let mut poisoned = Tensor::zeros(&shape);
    poisoned.data_mut()[0] = f64::NAN;
    t.bundle_mut().params.set("g_xy.b_out", poisoned).unwrap();
    match t.train_step() {
        Err(Error::NonFiniteLoss { step, .. }) => assert_eq!(step, 4),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
    assert_eq!(t.step(), 3);
    assert_eq!(t.history().len(), 3);
}

#[test]
fn zero_epochs_leave_the_initial_bundle() {
    let (b, mut config) = small();
    let cls = classifier(&b, &config);
    config.gan_epochs = 0;
    let fresh = GanTrainer::new(&config, &b.train, &cls).unwrap();
    let mut t = GanTrainer::new(&config, &b.train, &cls).unwrap();
    assert_eq!(t.total_steps(), 0);
    t.run().unwrap();
    assert!(t.is_finished());
    assert!(t.history().is_empty());
    for (name, p) in fresh.bundle().params.iter() {
        assert_eq!(&p.value, t.bundle().params.get(name).unwrap(), "{name}");
    }
}

#[test]
fn training_leaves_data_and_classifier_untouched() {
    let (b, config) = small();
    let cls = classifier(&b, &config);
    let data_hash = b.train.content_hash();
    let w = cls.params.get("cls.w").unwrap().clone();
    let mut t = GanTrainer::new(&config, &b.train, &cls).unwrap();
    t.run().unwrap();
    assert_eq!(b.train.content_hash(), data_hash);
    assert_eq!(cls.params.get("cls.w").unwrap(), &w);
    assert_eq!(t.bundle().params.get("cls.w").unwrap(), &w);
}

#[test]
fn recorded_losses_are_finite_with_non_negative_penalties() {
    let (b, config) = small();
    let cls = classifier(&b, &config);
    let mut t = GanTrainer::new(&config, &b.train, &cls).unwrap();
    t.run().unwrap();
    assert_eq!(t.history().len() as u64, t.total_steps());
    for h in t.history() {
        assert!(h.is_finite());
        assert!(h.penalty_x >= 0.0 && h.penalty_y >= 0.0);
        assert!(h.cycle >= 0.0);
    }
}

#[test]
fn sparse_logging_keeps_the_last_step() {
    let (b, mut config) = small();
    config.log_every = 5;
    let cls = classifier(&b, &config);
    let mut t = GanTrainer::new(&config, &b.train, &cls).unwrap();
    t.run().unwrap();
    let steps: Vec<u64> = t.history().iter().map(|h| h.step).collect();
    let total = t.total_steps();
    let mut expected: Vec<u64> = (1..=total).filter(|s| s % 5 == 0).collect();
    if total % 5 != 0 {
        expected.push(total);
    }
    assert_eq!(steps, expected);
}

#[test]
fn resume_rejects_a_mismatched_dataset() {
    let (b, config) = small();
    let cls = classifier(&b, &config);
    let mut t = GanTrainer::new(&config, &b.train, &cls).unwrap();
    t.run_until(2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.checkpoint(dir.path()).unwrap();
    let other = make_synthetic_benchmark(&SyntheticSpec {
        feature_dim: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    assert!(matches!(GanTrainer::resume(dir.path(), &other.train), Err(Error::Dimension(_))));
}
