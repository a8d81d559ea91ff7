mod common;

use common::{prepare, split};
use empathy_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use empathy_core::data::Split;
use empathy_core::embed::{EmbeddingSource, EmbeddingStore, ENCODER_DIM};
use empathy_core::features::{require_targets, FeatureContext, FittedFeatures};
use empathy_core::model::{ModelConfig, MtlNetwork, Target};
use empathy_core::preprocess::CleanConfig;
use empathy_core::train::{predict, train, TrainConfig};
use empathy_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model_config(target: Target, fitted: &FittedFeatures) -> ModelConfig {
    match target {
        Target::Empathy => ModelConfig::empathy(fitted.emotions.len()),
        Target::Distress => ModelConfig::distress(
            fitted.emotions.len(),
            fitted.lexical.as_ref().unwrap().spec.clone(),
        ),
    }
}

fn short() -> TrainConfig {
    TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    }
}

#[test]
fn train_save_load_predict() {
    for target in [Target::Empathy, Target::Distress] {
        let p = prepare(target);
        let net = MtlNetwork::build(
            &model_config(target, &p.fitted),
            &p.fitted.vocabs,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        let out = train(net, &p.train, &p.dev, &short()).unwrap();
        assert!(out.history.epochs.len() <= 15);
        assert!(out.history.epochs.iter().all(|e| e.train.total.is_finite()));

        let before = predict(&out.best, &p.dev, 5).unwrap();
        assert_eq!(before.len(), p.dev.len());
        assert!(before.iter().all(|q| (1.0..=7.0).contains(&q.score)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emtk");
        let ck = Checkpoint::new(out.best, p.fitted.clone()).unwrap();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.target(), target);
        let after = predict(&back.network, &p.dev, 64).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.score.to_bits(), b.score.to_bits());
        }
    }
}

#[test]
fn training_is_deterministic() {
    let p = prepare(Target::Distress);
    let run = || {
        let net = MtlNetwork::build(
            &model_config(Target::Distress, &p.fitted),
            &p.fitted.vocabs,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        train(net, &p.train, &p.dev, &short()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.to_csv(), b.history.to_csv());
    let pa = predict(&a.best, &p.dev, 8).unwrap();
    let pb = predict(&b.best, &p.dev, 8).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn unlabeled_rows_predict_but_do_not_train() {
    let p = prepare(Target::Empathy);
    let clean = CleanConfig::default();
    let unlabeled = split("unlabeled.tsv", Split::Test);
    let store = common::pseudo_store(&[&unlabeled], &clean, 7);
    let ctx = FeatureContext {
        clean: &clean,
        embeddings: &store,
        lexical: None,
    };
    let rows = p.fitted.transform(&unlabeled, &ctx).unwrap();
    assert!(rows.iter().all(|r| r.target.is_none()));
    assert!(require_targets(&rows).is_err());
    let net = MtlNetwork::build(
        &model_config(Target::Empathy, &p.fitted),
        &p.fitted.vocabs,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    assert_eq!(predict(&net, &rows, 2).unwrap().len(), unlabeled.len());
    assert!(train(net, &rows, &p.dev, &short()).is_err());
}

#[test]
fn missing_embedding_names_the_ids() {
    let clean = CleanConfig::default();
    let train_set = split("train.tsv", Split::Train);
    let store = EmbeddingStore::new(ENCODER_DIM, EmbeddingSource::Encoder);
    let ctx = FeatureContext {
        clean: &clean,
        embeddings: &store,
        lexical: None,
    };
    let fitted = FittedFeatures::fit(Target::Empathy, &train_set, &ctx);
    let err = match fitted {
        Ok(f) => f.transform(&train_set, &ctx).unwrap_err(),
        Err(e) => e,
    };
    assert!(matches!(err, Error::Missing(_)), "{err}");
    assert!(err.to_string().contains(&train_set.records[0].id), "{err}");
}

#[test]
fn feature_rows_round_trip_through_tsv() {
    let p = prepare(Target::Distress);
    let text = p.fitted.write_rows(&p.dev).unwrap();
    let back = p.fitted.read_rows(&text, "dev.tsv".as_ref()).unwrap();
    assert_eq!(back.len(), p.dev.len());
    for (a, b) in p.dev.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.target, b.target);
        assert_eq!(a.input.categorical, b.input.categorical);
    }
}
