mod common;

use common::random_array;
use gctaf::data::{generate_synthetic, load_dataset, write_synthetic, SynthSpec, SIGNAL_FILE};
use gctaf::encoder::{encoder_block_forward, encoder_stack_forward, EncoderBlockParams};
use gctaf::model::{
    forward, init_params, transformer_baseline_forward, Ablation, Checkpoint, ModelConfig,
};
use gctaf::params::{bind_frozen, leaves};
use gctaf::rng::Rng;
use gctaf::tensor::{Array, Tensor};

fn config(ablation: Ablation) -> ModelConfig {
    ModelConfig {
        tau: 9,
        n_features: 5,
        global_tokens: 3,
        num_blocks: 2,
        heads: 2,
        head_size: 4,
        ff_dim: 6,
        mlp_units: vec![8, 4],
        dropout: 0.3,
        ablation,
        ..ModelConfig::default()
    }
}

#[test]
fn zero_parameter_blocks_are_exact_identity() {
    let x = Tensor::constant(&random_array(&[3, 7, 5], &mut Rng::new(1)));
    for layer_norm in [true, false] {
        let zero = EncoderBlockParams::init(5, 2, 3, 4, 0.2, layer_norm, &mut Rng::new(2))
            .map(&mut |a: &Array| Array::zeros(a.shape()))
            .map(&mut bind_frozen);
        for training in [false, true] {
            let y = encoder_block_forward(&zero, &x, training, &mut Rng::new(3)).unwrap();
            assert_eq!(y.data(), x.data());
            let stacked = encoder_stack_forward(
                &[zero.clone(), zero.clone()],
                &x,
                training,
                &mut Rng::new(3),
            )
            .unwrap();
            assert_eq!(stacked.data(), x.data());
        }
    }
}

#[test]
fn no_global_tokens_is_the_plain_transformer() {
    let cfg = config(Ablation::NoGlobalTokens);
    for seed in 0..5 {
        let params = init_params(&cfg, &Rng::new(seed))
            .unwrap()
            .map(&mut bind_frozen);
        let x = Tensor::constant(&random_array(
            &[4, cfg.tau, cfg.n_features],
            &mut Rng::new(seed + 50),
        ));
        for training in [false, true] {
            let ours = forward(&params, &cfg, &x, training, &mut Rng::new(seed + 7)).unwrap();
            let plain = transformer_baseline_forward(
                &params.blocks,
                &params.mlp,
                &params.output,
                &x,
                cfg.dropout,
                training,
                &mut Rng::new(seed + 7),
            )
            .unwrap();
            let a: Vec<u64> = ours.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = plain.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn checkpoint_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for ablation in Ablation::ALL {
        let cfg = config(ablation);
        let params = init_params(&cfg, &Rng::new(4)).unwrap();
        let mut ck = Checkpoint::new(cfg.clone(), params);
        ck.extra.insert(
            "preprocess.std".into(),
            Array::new(vec![2], vec![f64::MIN_POSITIVE, 3.5]).unwrap(),
        );
        let path = dir.path().join(format!("{ablation:?}.gctaf"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, cfg);
        let bits = |c: &Checkpoint| -> Vec<(String, Vec<u64>)> {
            leaves(&c.params)
                .into_iter()
                .map(|(name, a)| (name, a.data().iter().map(|v| v.to_bits()).collect()))
                .collect()
        };
        assert_eq!(bits(&back), bits(&ck));
        assert_eq!(back.extra, ck.extra);
        assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes());
    }
}

#[test]
fn synthetic_data_round_trips_through_disk() {
    let spec = SynthSpec {
        n_instances: 40,
        tau: 12,
        n_features: 4,
        m: 3,
        signal_features: 2,
        missing_fraction: 0.1,
        ..SynthSpec::default()
    };
    let (mut ds, signals) = generate_synthetic(&spec, &Rng::new(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_synthetic(dir.path(), &ds, &signals).unwrap();
    let mut back = load_dataset(&manifest).unwrap();
    ds.sort_canonical();
    back.sort_canonical();
    assert_eq!(back.meta, ds.meta);
    assert_eq!(back.len(), ds.len());
    for (a, b) in back.instances.iter().zip(&ds.instances) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.start_time, b.start_time);
        assert_eq!(a.source_id, b.source_id);
        let bits = |v: &[Option<f64>]| v.iter().map(|c| c.map(f64::to_bits)).collect::<Vec<_>>();
        assert_eq!(bits(&a.values), bits(&b.values));
    }
}

fn tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_writes_identical_files() {
    let spec = SynthSpec {
        n_instances: 30,
        tau: 10,
        n_features: 3,
        m: 2,
        signal_features: 2,
        ..SynthSpec::default()
    };
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let (ds, signals) = generate_synthetic(&spec, &Rng::new(7)).unwrap();
        write_synthetic(d.path(), &ds, &signals).unwrap();
    }
    let (a, b) = (tree(dirs[0].path()), tree(dirs[1].path()));
    assert!(a.iter().any(|(name, _)| name == SIGNAL_FILE));
    assert_eq!(a, b);
}
