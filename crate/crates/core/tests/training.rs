use molham::encoders::EncoderConfig;
use molham::oracle::{bundled_corpus, label_molecule, Dataset};
use molham::training::{
    finetune, load_checkpoint, load_into, pretrain, save_checkpoint, Checkpoint, Model, ModelConfig, RngState,
    Stage, TrainConfig, TrainError,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus_dataset(n: usize) -> Dataset {
    let corpus = bundled_corpus();
    let records = corpus
        .iter()
        .enumerate()
        .filter_map(|(i, s)| label_molecule(i, s, 0).ok())
        .take(n)
        .collect();
    Dataset::new(records)
}

fn small_cfg(d: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d,
            layers: 1,
            rounds: 2,
            ..EncoderConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn pre_cfg() -> TrainConfig {
    TrainConfig {
        stage: Stage::Pretrain,
        epochs: 1,
        batch_size: 4,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn params(model: &Model) -> Vec<(String, Vec<f64>)> {
    model
        .store
        .iter()
        .map(|(_, n, t)| (n.to_string(), t.data().to_vec()))
        .collect()
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let ds = corpus_dataset(6);
    let mut model = Model::new(&small_cfg(8), 1);
    let before = params(&model);
    let cfg = TrainConfig {
        lr: 0.0,
        epochs: 3,
        batch_size: 16,
        ..pre_cfg()
    };
    let out = pretrain(&mut model, &ds, &cfg).unwrap();
    assert_eq!(params(&model), before);
    assert_eq!(out.trace.len(), 3);
    for r in &out.trace {
        assert!((r.total - out.trace[0].total).abs() < 1e-12 * out.trace[0].total.abs());
    }

    let cfg = TrainConfig {
        lr: 0.0,
        epochs: 3,
        batch_size: 16,
        keep_prob: 1.0,
        ..TrainConfig::default()
    };
    let out = finetune(&mut model, &ds, &cfg).unwrap();
    assert_eq!(params(&model), before);
    for r in &out.trace {
        assert!((r.total - out.trace[0].total).abs() < 1e-12 * out.trace[0].total.abs());
    }
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let ds = corpus_dataset(8);
    let run = || {
        let mut model = Model::new(&small_cfg(8), 2);
        let a = pretrain(&mut model, &ds, &pre_cfg()).unwrap();
        let ft = TrainConfig {
            epochs: 1,
            batch_size: 4,
            seed: 6,
            ..TrainConfig::default()
        };
        let b = finetune(&mut model, &ds, &ft).unwrap();
        (params(&model), a.trace, b.trace, a.rng, b.rng)
    };
    let (p1, a1, b1, r1, s1) = run();
    let (p2, a2, b2, r2, s2) = run();
    assert_eq!(p1, p2);
    assert_eq!(a1, a2);
    // NaN-free comparison of the fine-tune trace
    assert_eq!(format!("{b1:?}"), format!("{b2:?}"));
    assert_eq!((r1, s1), (r2, s2));
}

#[test]
fn pretrain_epoch_means_decrease() {
    // one batch per epoch so the in-batch contrastive negatives stay fixed
    let ds = corpus_dataset(200);
    let mut model = Model::new(&small_cfg(16), 3);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: ds.len(),
        ..pre_cfg()
    };
    let out = pretrain(&mut model, &ds, &cfg).unwrap();
    let mut means = vec![(0.0, 0usize); cfg.epochs];
    for r in &out.trace {
        means[r.epoch].0 += r.total;
        means[r.epoch].1 += 1;
    }
    let means: Vec<f64> = means.iter().map(|(s, n)| s / *n as f64).collect();
    let down = means.windows(2).filter(|w| w[1] < w[0]).count();
    let frac = down as f64 / (means.len() - 1) as f64;
    println!("epoch means {:.5} -> {:.5}, decreasing pairs {:.3}", means[0], means[49], frac);
    assert!(frac >= 0.9, "{frac}: {means:?}");
}

#[test]
fn never_masking_makes_both_terms_equal() {
    let ds = corpus_dataset(6);
    let mut model = Model::new(&small_cfg(8), 4);
    let cfg = TrainConfig {
        keep_prob: 1.0,
        epochs: 2,
        batch_size: 3,
        ..TrainConfig::default()
    };
    let out = finetune(&mut model, &ds, &cfg).unwrap();
    for r in &out.trace {
        assert_eq!(r.masked, r.unmasked);
        // λ₂·x + (1 − λ₂)·x
        assert!((r.total - r.unmasked).abs() < 1e-12 * r.unmasked);
    }
}

#[test]
fn full_weight_on_unmasked_term_ignores_masks() {
    let ds = corpus_dataset(6);
    let run = |keep: f64| {
        let mut model = Model::new(&small_cfg(8), 5);
        let cfg = TrainConfig {
            lambda2: 1.0,
            keep_prob: keep,
            epochs: 2,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let out = finetune(&mut model, &ds, &cfg).unwrap();
        assert!(out.trace.iter().all(|r| r.masked.is_nan()));
        params(&model)
    };
    assert_eq!(run(1.0), run(0.3));
}

#[test]
fn v_plus_is_untouched_without_its_discrepancy_term() {
    let ds = corpus_dataset(6);
    let run = |lambda1: f64| {
        let mut model = Model::new(&small_cfg(8), 6);
        let before = params(&model);
        let cfg = TrainConfig { lambda1, ..pre_cfg() };
        pretrain(&mut model, &ds, &cfg).unwrap();
        let after = params(&model);
        let moved = |prefix: &str| {
            before
                .iter()
                .zip(&after)
                .filter(|(b, _)| b.0.starts_with(prefix))
                .any(|(b, a)| b.1 != a.1)
        };
        (moved("dis.v_plus"), moved("dis.v_minus"), moved("tok."))
    };
    assert_eq!(run(0.0), (false, true, true));
    assert_eq!(run(0.5), (true, true, true));
}

#[test]
fn smiles_only_finetune_reads_no_coordinates() {
    let ds = corpus_dataset(6);
    let mut model = Model::new(&small_cfg(8), 7);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    finetune(&mut model, &ds, &cfg).unwrap();
    assert_eq!(ds.coord_reads(), 0);

    let before = params(&model);
    let fused = TrainConfig { fusion: true, ..cfg };
    finetune(&mut model, &ds, &fused).unwrap();
    assert!(ds.coord_reads() > 0);
    let after = params(&model);
    for (b, a) in before.iter().zip(&after) {
        if b.0.starts_with("tok.") {
            assert_eq!(b.1, a.1, "{} moved while frozen", b.0);
        }
    }
    assert!(before.iter().zip(&after).any(|(b, a)| b.0.starts_with("geo.") && b.1 != a.1));
}

#[test]
fn invalid_configs_and_bad_records_are_reported() {
    let ds = corpus_dataset(3);
    let mut model = Model::new(&small_cfg(8), 8);
    for cfg in [
        TrainConfig { lambda1: -1.0, ..TrainConfig::default() },
        TrainConfig { lambda2: 1.5, ..TrainConfig::default() },
        TrainConfig { keep_prob: -0.1, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
    ] {
        assert!(matches!(finetune(&mut model, &ds, &cfg), Err(TrainError::InvalidConfig(_))));
    }
    assert!(matches!(
        finetune(&mut model, &Dataset::default(), &TrainConfig::default()),
        Err(TrainError::EmptyDataset)
    ));
    let mut bad = ds.clone();
    bad.records[1].smiles = "C[Si]C".into();
    let idx = bad.records[1].index;
    match finetune(&mut model, &bad, &TrainConfig::default()) {
        Err(TrainError::Record { index, .. }) => assert_eq!(index, idx),
        other => panic!("expected a record error, got {:?}", other.err()),
    }
}

fn trained_checkpoint() -> Checkpoint {
    let ds = corpus_dataset(4);
    let mut model = Model::new(&small_cfg(8), 9);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let out = finetune(&mut model, &ds, &cfg).unwrap();
    Checkpoint {
        model,
        train: Some(cfg),
        rng: Some(out.rng),
    }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let ck = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    save_checkpoint(&a, &ck).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(params(&loaded.model), params(&ck.model));
    assert_eq!(loaded.train, ck.train);
    assert_eq!(loaded.rng, ck.rng);
    save_checkpoint(&b, &loaded).unwrap();
    for f in ["manifest.json", "params.bin"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let mut fresh = Model::new(&small_cfg(8), 123);
    load_into(&mut fresh, &a).unwrap();
    assert_eq!(params(&fresh), params(&ck.model));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let ck = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &ck).unwrap();
    let blob = dir.path().join("params.bin");
    let bytes = std::fs::read(&blob).unwrap();

    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(TrainError::CorruptFile { .. })));

    let mut flipped = bytes.clone();
    flipped[17] ^= 1;
    std::fs::write(&blob, &flipped).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(TrainError::CorruptFile { .. })));

    std::fs::write(&blob, &bytes).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(TrainError::CorruptFile { .. })));

    std::fs::write(&manifest, text.replace("\"version\": 1", "\"version\": 99")).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(TrainError::VersionMismatch(_))));
}

#[test]
fn loading_into_a_different_width_names_the_shapes() {
    let ck = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &ck).unwrap();
    let mut wide = Model::new(&small_cfg(12), 0);
    let before = params(&wide);
    match load_into(&mut wide, dir.path()) {
        Err(TrainError::VersionMismatch(msg)) => {
            assert!(msg.contains("[27, 8]") && msg.contains("[27, 12]"), "{msg}");
        }
        other => panic!("expected a version mismatch, got {:?}", other.err()),
    }
    // nothing is written on failure
    assert_eq!(params(&wide), before);
}

#[test]
fn rng_state_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..13 {
        rng.next_u32();
    }
    let state = RngState::capture(&rng);
    let json = serde_json::to_string(&state).unwrap();
    let mut back = serde_json::from_str::<RngState>(&json).unwrap().restore().unwrap();
    for _ in 0..100 {
        assert_eq!(rng.gen::<u64>(), back.gen::<u64>());
    }
    let broken = RngState {
        seed: "zz".into(),
        ..state
    };
    assert!(broken.restore().is_none());
}
