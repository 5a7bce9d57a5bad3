use cftlab::corpus::{
    filter_min_frequency, generate_base_corpus, inject, Corpus, Experiment, InjectionConfig, VocabSpec,
};
use cftlab::encoder::{pretrain_r0, EncoderModel, PhiConfig, PretrainConfig};
use cftlab::numeric::softmax;
use cftlab::pipeline::{
    cft_predict, cft_train_step, predict_all, predict_batch, shuffle_within_batch, train, Features, LabelPools,
    Predictor, TrainConfig,
};
use cftlab::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn injected(n: usize, seed: u64, ratio: f64) -> Corpus {
    let base = generate_base_corpus(n, &VocabSpec::default(), seed).unwrap();
    let cfg = InjectionConfig::stopword(ratio);
    inject(Experiment::Stopword, &filter_min_frequency(&base, &cfg), &cfg, seed + 1).unwrap()
}

fn r0_for(corpus: &Corpus) -> EncoderModel {
    let cfg = PretrainConfig {
        epochs: 1,
        ..PretrainConfig::default()
    };
    pretrain_r0(corpus, &cfg).unwrap()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 16,
        ..TrainConfig::desk()
    }
}

#[test]
fn shuffle_of_one_row_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(shuffle_within_batch(&[vec![1.0, 2.0]], &mut rng), vec![vec![1.0, 2.0]]);
}

#[test]
fn shuffle_conserves_rows() {
    let rows: Vec<u32> = (0..50).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut out = shuffle_within_batch(&rows, &mut rng);
    assert_ne!(out, rows);
    out.sort();
    assert_eq!(out, rows);
}

#[test]
fn shuffle_replays_under_seed() {
    let rows: Vec<u32> = (0..8).collect();
    let first = shuffle_within_batch(&rows, &mut ChaCha8Rng::seed_from_u64(42));
    for _ in 0..3 {
        assert_eq!(shuffle_within_batch(&rows, &mut ChaCha8Rng::seed_from_u64(42)), first);
    }
    let other = shuffle_within_batch(&rows, &mut ChaCha8Rng::seed_from_u64(43));
    assert_ne!(other, first);
}

#[test]
fn step_leaves_frozen_encoder_untouched() {
    let corpus = injected(30, 5, 0.9);
    let r0 = r0_for(&corpus);
    let before = r0.checksum();
    let cfg = small_cfg();
    let feats = Features::new(&corpus, &r0, &cfg.phi).unwrap();
    let pools = LabelPools::new(&feats.labels);
    let mut r1 = r0.clone();
    let mut bundle = cftlab::heads::CausalBundle::init(cftlab::pipeline::bundle_shape(r0.d, &cfg), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch: Vec<usize> = (0..16).collect();
    cft_train_step(&batch, &feats, &pools, &r0, &mut r1, &mut bundle, &cfg, &mut rng).unwrap();
    assert_eq!(r0.checksum(), before);
    assert_ne!(r1.checksum(), before);
}

#[test]
fn trained_run_keeps_pretrained_copy() {
    let corpus = injected(40, 6, 0.9);
    let r0 = r0_for(&corpus);
    let out = train(&corpus, &r0, &small_cfg()).unwrap();
    assert_eq!(out.r0.checksum(), r0.checksum());
}

#[test]
fn zero_weights_reduce_to_plain_fine_tuning() {
    let corpus = injected(40, 7, 0.9);
    let r0 = r0_for(&corpus);
    let full = train(&corpus, &r0, &small_cfg()).unwrap();
    let plain_cfg = TrainConfig {
        lambda_c: 0.0,
        lambda_y: 0.0,
        ..small_cfg()
    };
    let plain = train(&corpus, &r0, &plain_cfg).unwrap();
    let sft = cftlab::baselines::train_sft(&corpus, &r0, &small_cfg()).unwrap();
    for ((a, b), c) in full.trajectory.iter().zip(&plain.trajectory).zip(&sft.trajectory) {
        assert_eq!(a.encoder.checksum(), b.encoder.checksum());
        assert_eq!(b.encoder.checksum(), c.encoder.checksum());
        for name in ["cls.w", "cls.b"] {
            assert_eq!(a.bundle.get(name), b.bundle.get(name));
        }
    }
}

#[test]
fn classifier_loss_decreases_on_separable_data() {
    let spec = VocabSpec {
        polarity: 1.0,
        ..VocabSpec::default()
    };
    let corpus = generate_base_corpus(64, &spec, 11).unwrap();
    let r0 = r0_for(&corpus);
    let cfg = TrainConfig {
        batch_size: 16,
        lr_main: 1e-3,
        ..TrainConfig::desk()
    };
    let feats = Features::new(&corpus, &r0, &cfg.phi).unwrap();
    let pools = LabelPools::new(&feats.labels);
    let mut r1 = r0.clone();
    let mut bundle = cftlab::heads::CausalBundle::init(cftlab::pipeline::bundle_shape(r0.d, &cfg), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut curve = Vec::new();
    for step in 0..50 {
        let batch: Vec<usize> = (0..16).map(|j| (step * 16 + j) % feats.len()).collect();
        let l = cft_train_step(&batch, &feats, &pools, &r0, &mut r1, &mut bundle, &cfg, &mut rng).unwrap();
        curve.push(l.sft);
    }
    let head: f64 = curve[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = curve[45..].iter().sum::<f64>() / 5.0;
    assert!(tail < head, "loss went from {head} to {tail}");
}

#[test]
fn singleton_label_is_rejected_unless_allowed() {
    let pools = LabelPools::new(&[0, 1, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        pools.partner(0, 0, false, &mut rng),
        Err(Error::SingletonLabel { label: 0, count: 1 })
    ));
    assert_eq!(pools.partner(0, 0, true, &mut rng).unwrap(), 0);
}

#[test]
fn partner_is_same_label_and_never_the_anchor() {
    let labels = [0, 1, 0, 1, 0, 0, 1];
    let pools = LabelPools::new(&labels);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        for (i, &y) in labels.iter().enumerate() {
            let j = pools.partner(i, y, false, &mut rng).unwrap();
            assert_ne!(i, j);
            assert_eq!(labels[j], y);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = injected(40, 8, 0.9);
    let r0 = r0_for(&corpus);
    let a = train(&corpus, &r0, &small_cfg()).unwrap();
    let b = train(&corpus, &r0, &small_cfg()).unwrap();
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.val_history, b.val_history);
    assert_eq!(a.r1.checksum(), b.r1.checksum());
    assert_eq!(a.bundle.params.checksum(), b.bundle.params.checksum());
}

#[test]
fn single_epoch_selects_epoch_one() {
    let corpus = injected(30, 9, 0.9);
    let r0 = r0_for(&corpus);
    let cfg = TrainConfig {
        epochs: 1,
        ..small_cfg()
    };
    assert_eq!(train(&corpus, &r0, &cfg).unwrap().best_epoch, 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let corpus = injected(10, 1, 0.9);
    let r0 = r0_for(&corpus);
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..small_cfg()
        },
        TrainConfig {
            batch_size: 1,
            ..small_cfg()
        },
        TrainConfig {
            k_samples: 0,
            ..small_cfg()
        },
        TrainConfig {
            lr_cmap: Some(0.0),
            ..small_cfg()
        },
    ] {
        assert!(train(&corpus, &r0, &cfg).is_err());
    }
    let empty = Corpus {
        examples: vec![],
        ..corpus
    };
    assert!(train(&empty, &r0, &small_cfg()).is_err());
}

fn trained_fixture() -> (cftlab::pipeline::TrainedCFT, Corpus) {
    let corpus = injected(40, 12, 0.9);
    let r0 = r0_for(&corpus);
    (train(&corpus, &r0, &small_cfg()).unwrap(), corpus)
}

#[test]
fn single_example_prediction_uses_own_phi() {
    let (trained, corpus) = trained_fixture();
    let one = Corpus {
        examples: corpus.examples[..1].to_vec(),
        ..corpus.clone()
    };
    let p = cft_predict(&trained, &one, 7, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let feats = Features::new(&one, &trained.r1, &trained.phi).unwrap();
    let r = trained.r1.encode(&one.examples[0].tokens).unwrap();
    let c = trained.bundle.c_map(&r).unwrap();
    let phi = feats.phi(&trained.r1, &[0]).unwrap();
    let logits = trained.bundle.adjusted_logits(&c, phi.row(0)).unwrap();
    let expect = softmax(&logits).unwrap();
    assert_eq!(p.probs[0].to_vec(), expect);
}

#[test]
fn prediction_is_reproducible_and_normalised() {
    let (trained, corpus) = trained_fixture();
    let a = cft_predict(&trained, &corpus, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let b = cft_predict(&trained, &corpus, 1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    assert_eq!(a, b);
    let feats = Features::new(&corpus, &trained.r1, &trained.phi).unwrap();
    for predictor in [
        Predictor::SftHead,
        Predictor::Adjusted,
        Predictor::Unadjusted,
        Predictor::COnly,
        Predictor::PhiOnly,
    ] {
        let p = predict_all(&trained, &feats, predictor, 5, 16, 3).unwrap();
        for (row, &label) in p.probs.iter().zip(&p.labels) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row[0] + row[1] - 1.0).abs() <= 1e-12);
            assert_eq!(label, u8::from(row[1] > row[0]));
        }
    }
}

#[test]
fn shuffle_average_converges_in_k() {
    let (trained, corpus) = trained_fixture();
    let feats = Features::new(&corpus, &trained.r1, &trained.phi).unwrap();
    let idx: Vec<usize> = (0..6).collect();
    let a = predict_batch(
        &trained,
        &feats,
        &idx,
        Predictor::Adjusted,
        200,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    let b = predict_batch(
        &trained,
        &feats,
        &idx,
        Predictor::Adjusted,
        400,
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x[0] - y[0]).abs() < 0.01 && (x[1] - y[1]).abs() < 0.01);
    }
}

#[test]
fn batched_prediction_depends_only_on_batch_and_seed() {
    let (trained, corpus) = trained_fixture();
    let feats = Features::new(&corpus, &trained.r1, &trained.phi).unwrap();
    let whole = predict_all(&trained, &feats, Predictor::Adjusted, 3, 8, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    rng.set_stream(1);
    let idx: Vec<usize> = (8..16).collect();
    let second = predict_batch(&trained, &feats, &idx, Predictor::Adjusted, 3, &mut rng).unwrap();
    assert_eq!(&whole.probs[8..16], &second[..]);
}

#[test]
fn unshuffled_predictors_ignore_example_order() {
    let (trained, corpus) = trained_fixture();
    let mut reversed = corpus.clone();
    reversed.examples.reverse();
    let fa = Features::new(&corpus, &trained.r1, &trained.phi).unwrap();
    let fb = Features::new(&reversed, &trained.r1, &trained.phi).unwrap();
    for predictor in [
        Predictor::SftHead,
        Predictor::Unadjusted,
        Predictor::COnly,
        Predictor::PhiOnly,
    ] {
        let a = predict_all(&trained, &fa, predictor, 1, 16, 0).unwrap();
        let mut b = predict_all(&trained, &fb, predictor, 1, 16, 0).unwrap();
        b.probs.reverse();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert!((x[0] - y[0]).abs() < 1e-12);
        }
    }
}

#[test]
fn phi_features_match_model_extraction() {
    let corpus = injected(10, 2, 0.9);
    let r0 = r0_for(&corpus);
    for phi in [
        PhiConfig::default(),
        PhiConfig {
            n_patches: 4,
            mode: "concat".parse().unwrap(),
        },
    ] {
        let feats = Features::new(&corpus, &r0, &phi).unwrap();
        let idx: Vec<usize> = (0..corpus.len()).collect();
        let rows = feats.phi(&r0, &idx).unwrap();
        for (i, ex) in corpus.examples.iter().enumerate() {
            let direct = r0.extract_phi(&ex.tokens, &phi).unwrap();
            for (a, b) in rows.row(i).iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
