use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use empathy_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use empathy_core::data::{load_tsv, Dataset, Split};
use empathy_core::embed::{pseudo_embed, read_store, write_store, EmbeddingSource, EmbeddingStore};
use empathy_core::eval::{class_metrics, ClassMetrics, CorrelationReport};
use empathy_core::features::{essay_tokens, FeatureContext, FeatureRow, FittedFeatures};
use empathy_core::lexicon::{
    load_categories, load_nrc_eil, load_nrc_vad, FeatureSpec, LexicalExtractor,
};
use empathy_core::model::{ModelConfig, MtlNetwork, Target};
use empathy_core::preprocess::{clean_text, CleanConfig};
use empathy_core::train::{predict, train, Prediction};
use empathy_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;

const FEATURIZE_STATE: &str = "featurize.json";
const CHECKPOINT: &str = "model.emtk";
const HISTORY: &str = "history.csv";
const PREDICTIONS: &str = "predictions.tsv";
const PSEUDO_STORE: &str = "embeddings.emb1";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(())
}

fn read(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?)
}

fn clean_config(cfg: &RunConfig, max_len: usize) -> Result<CleanConfig> {
    Ok(CleanConfig::from_files(
        cfg.paths.contractions.as_deref(),
        cfg.paths.acronyms.as_deref(),
        max_len,
        &cfg.preprocess.pad_token,
    )?)
}

fn extractor(cfg: &RunConfig) -> Result<Option<LexicalExtractor>> {
    if cfg.target != Target::Distress {
        return Ok(None);
    }
    let p = &cfg.paths;
    let mut intensity = load_nrc_eil(cfg.require(&p.nrc_eil, "nrc_eil")?)?;
    intensity.extend(load_nrc_vad(cfg.require(&p.nrc_vad, "nrc_vad")?)?);
    let spec = FeatureSpec::distress_default();
    let categories = load_categories(cfg.require(&p.empath_dir, "empath_dir")?, &spec.empath)?;
    Ok(Some(LexicalExtractor::new(spec, &intensity, categories)?))
}

/// The EMB1 store from `paths.embeddings`, or pseudo-embeddings of the
/// cleaned essays in `sets`.
fn embeddings(cfg: &RunConfig, clean: &CleanConfig, sets: &[&Dataset]) -> Result<EmbeddingStore> {
    if let Some(path) = &cfg.paths.embeddings {
        return read_store(path).with_context(|| format!("reading {}", path.display()));
    }
    let mut store = EmbeddingStore::new(cfg.embeddings.dim, EmbeddingSource::Pseudo);
    for d in sets {
        for r in &d.records {
            if store.get(&r.id).is_none() {
                let text = clean_text(&r.essay, clean);
                store.insert(
                    r.id.clone(),
                    pseudo_embed(&text, cfg.embeddings.dim, cfg.seed),
                )?;
            }
        }
    }
    Ok(store)
}

fn load_split(cfg: &RunConfig, path: &Path, split: Split) -> Result<Dataset> {
    Ok(load_tsv(path, &cfg.columns, split)?)
}

fn features_path(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.output_dir.join("features").join(format!("{split}.tsv"))
}

pub fn featurize(cfg: &RunConfig) -> Result<()> {
    cfg.check_inputs()?;
    let train_path = cfg.require(&cfg.paths.train, "train")?;
    let dev_path = cfg.require(&cfg.paths.dev, "dev")?;
    let clean = clean_config(cfg, cfg.preprocess.max_len)?;
    let mut splits = vec![
        load_split(cfg, train_path, Split::Train)?,
        load_split(cfg, dev_path, Split::Dev)?,
    ];
    if let Some(test) = &cfg.paths.test {
        splits.push(load_split(cfg, test, Split::Test)?);
    }
    let store = embeddings(cfg, &clean, &splits.iter().collect::<Vec<_>>())?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
        path: cfg.output_dir.clone(),
        source: e,
    })?;
    if store.source == EmbeddingSource::Pseudo {
        write_store(&store, cfg.output_dir.join(PSEUDO_STORE))?;
    }
    let ex = extractor(cfg)?;
    let ctx = FeatureContext {
        clean: &clean,
        embeddings: &store,
        lexical: ex.as_ref(),
    };
    let fitted = FittedFeatures::fit(cfg.target, &splits[0], &ctx)?;
    for data in &splits {
        let rows = fitted
            .transform(data, &ctx)
            .with_context(|| format!("featurizing the {} split", data.split))?;
        write(&features_path(cfg, data.split), fitted.write_rows(&rows)?)?;
        let mut dump = String::from("id\tcleaned\n");
        for r in &data.records {
            let (cleaned, _) = essay_tokens(r, &clean);
            writeln!(dump, "{}\t{cleaned}", r.id).ok();
        }
        write(
            &cfg.output_dir
                .join("cleaned")
                .join(format!("{}.tsv", data.split)),
            dump,
        )?;
        println!("{}: {} feature rows", data.split, rows.len());
    }
    write(
        &cfg.output_dir.join(FEATURIZE_STATE),
        serde_json::to_string_pretty(&fitted)? + "\n",
    )?;
    Ok(())
}

fn load_fitted(cfg: &RunConfig) -> Result<FittedFeatures> {
    let path = cfg.output_dir.join(FEATURIZE_STATE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} not found; run `featurize` first",
            path.display()
        ))
        .into());
    }
    let mut fitted: FittedFeatures = serde_json::from_str(&read(&path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    fitted.vocabs.reindex();
    if fitted.target != cfg.target {
        return Err(Error::ModeMismatch {
            found: fitted.target.to_string(),
            requested: cfg.target.to_string(),
        }
        .into());
    }
    Ok(fitted)
}

fn load_rows(cfg: &RunConfig, fitted: &FittedFeatures, split: Split) -> Result<Vec<FeatureRow>> {
    let path = features_path(cfg, split);
    Ok(fitted.read_rows(&read(&path)?, &path)?)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let fitted = load_fitted(cfg)?;
    let train_rows = load_rows(cfg, &fitted, Split::Train)?;
    let dev_rows = load_rows(cfg, &fitted, Split::Dev)?;
    let model_cfg = ModelConfig {
        mode: cfg.target,
        text_dim: fitted.text_dim,
        emotion_classes: fitted.emotions.len(),
        features: fitted.lexical.as_ref().map(|l| l.spec.clone()),
        ..cfg.model.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let network = MtlNetwork::build(&model_cfg, &fitted.vocabs, &mut rng)?;
    println!(
        "{} model: {} trainable parameters, {} train / {} dev rows",
        cfg.target,
        network.param_count(),
        train_rows.len(),
        dev_rows.len()
    );
    let outcome = train(network, &train_rows, &dev_rows, &cfg.train)?;
    write(&cfg.output_dir.join(HISTORY), outcome.history.to_csv())?;
    let h = &outcome.history;
    let best = &h.epochs[h.best_epoch.saturating_sub(1)];
    save_checkpoint(
        &Checkpoint::new(outcome.best, fitted)?,
        cfg.output_dir.join(CHECKPOINT),
    )?;
    println!(
        "{} epochs{}; best epoch {} (dev loss {:.5}, dev mse {:.5})",
        h.epochs.len(),
        if h.stopped_early { " (early stop)" } else { "" },
        h.best_epoch,
        best.dev.total,
        best.dev.reg_mse
    );
    Ok(())
}

pub fn predict_cmd(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    cfg.check_inputs()?;
    let ck_path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT));
    if !ck_path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found", ck_path.display())).into());
    }
    let ck = load_checkpoint(&ck_path)?;
    ck.expect_target(cfg.target)?;
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => cfg.require(&cfg.paths.test, "test")?.to_path_buf(),
    };
    let data = load_split(cfg, &input, Split::Test)?;
    let clean = clean_config(cfg, ck.features.max_len)?;
    let store = embeddings(cfg, &clean, &[&data])?;
    let ex = extractor(cfg)?;
    let ctx = FeatureContext {
        clean: &clean,
        embeddings: &store,
        lexical: ex.as_ref(),
    };
    let rows = ck.features.transform(&data, &ctx)?;
    let preds = predict(&ck.network, &rows, 256)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(PREDICTIONS));
    write(&out, format_predictions(&preds, &ck))?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn format_predictions(preds: &[Prediction], ck: &Checkpoint) -> String {
    let mut s = String::from("id\tscore\tbin_prob\temotion\n");
    for p in preds {
        let emotion = ck.features.emotions.class(p.emotion()).unwrap_or_default();
        writeln!(s, "{}\t{}\t{}\t{emotion}", p.id, p.score, p.bin_prob).ok();
    }
    s
}

struct PredictionRow {
    score: f64,
    bin_prob: Option<f64>,
    emotion: Option<String>,
}

fn read_predictions(path: &Path) -> Result<HashMap<String, PredictionRow>> {
    let text = read(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    if header.first() != Some(&"id") || header.get(1) != Some(&"score") {
        return Err(Error::Row {
            path: path.into(),
            row: 0,
            column: "header".into(),
            message: "expected `id<TAB>score[<TAB>bin_prob<TAB>emotion]`".into(),
        }
        .into());
    }
    let mut out = HashMap::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |column: &str, message: String| Error::Row {
            path: path.into(),
            row: i + 1,
            column: column.into(),
            message,
        };
        if f.len() != header.len() {
            return Err(bad(
                "*",
                format!("expected {} fields, got {}", header.len(), f.len()),
            )
            .into());
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(header[k], format!("not a number: `{}`", f[k])))
        };
        let row = PredictionRow {
            score: num(1)?,
            bin_prob: if f.len() > 2 { Some(num(2)?) } else { None },
            emotion: f.get(3).map(|s| s.to_string()),
        };
        if out.insert(f[0].to_string(), row).is_some() {
            return Err(bad("id", format!("duplicate id `{}`", f[0])).into());
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct HeadReport {
    bin: Option<ClassMetrics>,
    emotion: Option<ClassMetrics>,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    correlation: CorrelationReport,
    empathy: Option<HeadReport>,
    distress: Option<HeadReport>,
}

struct Aligned {
    pred: Vec<f64>,
    gold: Vec<f64>,
    heads: HeadReport,
}

fn align(
    preds: &HashMap<String, PredictionRow>,
    gold: &Dataset,
    target: Target,
) -> Result<Aligned> {
    let mut pred = Vec::new();
    let mut gold_scores = Vec::new();
    let mut bins = (Vec::new(), Vec::new());
    let mut emotions = (Vec::new(), Vec::new());
    for r in &gold.records {
        let p = preds
            .get(&r.id)
            .ok_or_else(|| Error::Missing(format!("no {target} prediction for id `{}`", r.id)))?;
        let (score, bin) = match target {
            Target::Empathy => (r.empathy, r.empathy_bin),
            Target::Distress => (r.distress, r.distress_bin),
        };
        let score = score
            .ok_or_else(|| Error::Missing(format!("gold file has no {target} for `{}`", r.id)))?;
        pred.push(p.score);
        gold_scores.push(score);
        if let (Some(prob), Some(b)) = (p.bin_prob, bin) {
            bins.0.push(usize::from(prob >= 0.5));
            bins.1.push(usize::from(b));
        }
        if let (Some(e), Some(g)) = (&p.emotion, &r.emotion) {
            emotions.0.push(e.clone());
            emotions.1.push(g.clone());
        }
    }
    if pred.len() != preds.len() {
        return Err(Error::Domain(format!(
            "{} {target} predictions but {} gold rows",
            preds.len(),
            pred.len()
        ))
        .into());
    }
    let bin = if bins.0.len() == pred.len() {
        Some(class_metrics(&bins.0, &bins.1, 2)?)
    } else {
        None
    };
    let emotion = if emotions.0.len() == pred.len() {
        let mut classes: Vec<&String> = emotions.0.iter().chain(&emotions.1).collect();
        classes.sort();
        classes.dedup();
        let idx = |v: &[String]| -> Vec<usize> {
            v.iter()
                .map(|e| classes.iter().position(|c| *c == e).unwrap_or(0))
                .collect()
        };
        Some(class_metrics(
            &idx(&emotions.0),
            &idx(&emotions.1),
            classes.len(),
        )?)
    } else {
        None
    };
    Ok(Aligned {
        pred,
        gold: gold_scores,
        heads: HeadReport { bin, emotion },
    })
}

pub fn evaluate_cmd(
    cfg: Option<&RunConfig>,
    empathy: Option<&Path>,
    distress: Option<&Path>,
    gold: &Path,
    out: Option<&Path>,
) -> Result<()> {
    if empathy.is_none() && distress.is_none() {
        return Err(Error::Config("pass --empathy and/or --distress predictions".into()).into());
    }
    for p in [empathy, distress, Some(gold)].into_iter().flatten() {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())).into());
        }
    }
    let columns = cfg.map(|c| c.columns.clone()).unwrap_or_default();
    let gold = load_tsv(gold, &columns, Split::Test)?;
    let aligned = |path: Option<&Path>, t: Target| -> Result<Option<Aligned>> {
        path.map(|p| align(&read_predictions(p)?, &gold, t))
            .transpose()
    };
    let e = aligned(empathy, Target::Empathy)?;
    let d = aligned(distress, Target::Distress)?;
    let pair = |a: &Option<Aligned>| a.as_ref().map(|a| (a.pred.clone(), a.gold.clone()));
    let (pe, pd) = (pair(&e), pair(&d));
    let correlation = CorrelationReport::compute(
        pe.as_ref().map(|(p, g)| (p.as_slice(), g.as_slice())),
        pd.as_ref().map(|(p, g)| (p.as_slice(), g.as_slice())),
    )?;
    print!("{}", correlation.to_table());
    let report = EvaluationReport {
        correlation,
        empathy: e.map(|a| a.heads),
        distress: d.map(|a| a.heads),
    };
    let out = match (out, cfg) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(c)) => c.output_dir.join("report.json"),
        (None, None) => PathBuf::from("report.json"),
    };
    write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(())
}
