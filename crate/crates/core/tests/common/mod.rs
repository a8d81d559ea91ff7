#![allow(dead_code)]

use std::path::{Path, PathBuf};

use empathy_core::data::{load_tsv, ColumnMapping, Dataset, Split};
use empathy_core::embed::{pseudo_embed, EmbeddingSource, EmbeddingStore, ENCODER_DIM};
use empathy_core::features::{FeatureContext, FeatureRow, FittedFeatures};
use empathy_core::lexicon::{
    load_categories, load_nrc_eil, load_nrc_vad, FeatureSpec, LexicalExtractor,
};
use empathy_core::model::Target;
use empathy_core::preprocess::{clean_text, CleanConfig};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn split(name: &str, split: Split) -> Dataset {
    load_tsv(fixture(name), &ColumnMapping::default(), split).unwrap()
}

pub fn pseudo_store(sets: &[&Dataset], clean: &CleanConfig, seed: u64) -> EmbeddingStore {
    let mut store = EmbeddingStore::new(ENCODER_DIM, EmbeddingSource::Pseudo);
    for d in sets {
        for r in &d.records {
            let v = pseudo_embed(&clean_text(&r.essay, clean), ENCODER_DIM, seed);
            store.insert(r.id.clone(), v).unwrap();
        }
    }
    store
}

pub fn extractor() -> LexicalExtractor {
    let mut intensity = load_nrc_eil(&fixture("nrc_eil.tsv")).unwrap();
    intensity.extend(load_nrc_vad(&fixture("nrc_vad.tsv")).unwrap());
    let spec = FeatureSpec::distress_default();
    let cats = load_categories(&fixture("empath"), &spec.empath).unwrap();
    LexicalExtractor::new(spec, &intensity, cats).unwrap()
}

pub struct Prepared {
    pub fitted: FittedFeatures,
    pub train: Vec<FeatureRow>,
    pub dev: Vec<FeatureRow>,
}

pub fn prepare(target: Target) -> Prepared {
    let clean = CleanConfig::default();
    let train = split("train.tsv", Split::Train);
    let dev = split("dev.tsv", Split::Dev);
    let store = pseudo_store(&[&train, &dev], &clean, 7);
    let ex = extractor();
    let ctx = FeatureContext {
        clean: &clean,
        embeddings: &store,
        lexical: (target == Target::Distress).then_some(&ex),
    };
    let fitted = FittedFeatures::fit(target, &train, &ctx).unwrap();
    Prepared {
        train: fitted.transform(&train, &ctx).unwrap(),
        dev: fitted.transform(&dev, &ctx).unwrap(),
        fitted,
    }
}
