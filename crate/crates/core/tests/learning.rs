use chrono::Duration;
use gctaf::data::{generate_synthetic, zscore_apply, zscore_fit, BinaryDataset, SynthSpec};
use gctaf::model::ModelConfig;
use gctaf::rng::Rng;
use gctaf::training::{train, vlt_baseline, TrainConfig, VltConfig};

/// Train and test sets from one world, the test set starting after the
/// training set ends, both normalized with training statistics.
fn pair(
    spec: &SynthSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> (BinaryDataset, BinaryDataset) {
    let root = Rng::new(seed);
    let train_spec = SynthSpec {
        n_instances: n_train,
        world_seed: seed,
        ..spec.clone()
    };
    let test_spec = SynthSpec {
        n_instances: n_test,
        start_time: spec.start_time + Duration::hours(2 * n_train as i64),
        ..train_spec.clone()
    };
    let (tr, _) = generate_synthetic(&train_spec, &root.split(1)).unwrap();
    let (te, _) = generate_synthetic(&test_spec, &root.split(2)).unwrap();
    let stats = zscore_fit(&tr).unwrap();
    (
        zscore_apply(&tr, &stats).unwrap().to_binary().unwrap(),
        zscore_apply(&te, &stats).unwrap().to_binary().unwrap(),
    )
}

#[test]
fn last_step_baseline_is_null_without_signal() {
    let spec = SynthSpec {
        tau: 20,
        n_features: 6,
        m: 3,
        amplitude: 0.0,
        imbalance: 0.3,
        ..SynthSpec::default()
    };
    for seed in 0..5 {
        let (tr, te) = pair(&spec, 300, 300, seed);
        let tss = vlt_baseline(&tr, &te, &VltConfig::default())
            .unwrap()
            .tss
            .unwrap();
        assert!(tss.abs() < 0.15, "seed {seed}: TSS {tss}");
    }
}

#[test]
fn last_step_baseline_is_perfect_on_noise_free_last_step_signal() {
    let spec = SynthSpec {
        tau: 20,
        n_features: 6,
        m: 3,
        noise: 0.0,
        last_step_signal: true,
        ..SynthSpec::default()
    };
    let (tr, te) = pair(&spec, 300, 200, 1);
    let r = vlt_baseline(&tr, &te, &VltConfig::default()).unwrap();
    assert_eq!(r.tss, Some(1.0));
    assert_eq!(r.accuracy, Some(1.0));
}

#[test]
fn noise_free_training_converges() {
    let spec = SynthSpec {
        tau: 20,
        n_features: 6,
        m: 3,
        signal_features: 3,
        noise: 0.0,
        ..SynthSpec::default()
    };
    let (tr, val) = pair(&spec, 500, 200, 3);
    let model = ModelConfig {
        tau: 20,
        n_features: 6,
        heads: 2,
        head_size: 8,
        ff_dim: 8,
        mlp_units: vec![16],
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 10,
        ..TrainConfig::default()
    };
    let out = train(&model, &cfg, &tr, &val, &Rng::new(3)).unwrap();
    let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.train_loss).collect();
    for w in losses[..5].windows(2) {
        assert!(w[1] < w[0], "training loss not decreasing: {losses:?}");
    }
    let best = out.report.selected().val.unwrap().tss;
    assert_eq!(best, Some(1.0), "losses {losses:?}");
}
