//! Turns corpus records into model inputs: cleaned text, embeddings,
//! encoded demographics, standardized scores and lexical features.
//!
//! Everything fitted here is fitted on the training split only and travels
//! with the checkpoint.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fit_vocab, Dataset, DemographicVocabs, EssayRecord, LabelSet};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::lexicon::{FeatureSpec, LexicalExtractor, Standardizer};
use crate::model::{ModelInput, Target, TaskTarget};
use crate::preprocess::{clean_text, tokenize_and_pad, CleanConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalStats {
    pub spec: FeatureSpec,
    pub standardizer: Standardizer,
}

/// Train-fitted preprocessing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFeatures {
    pub target: Target,
    pub text_dim: usize,
    pub max_len: usize,
    pub vocabs: DemographicVocabs,
    pub emotions: LabelSet,
    pub scores: Standardizer,
    pub lexical: Option<LexicalStats>,
}

/// Shared inputs for fitting and transforming.
#[derive(Clone, Copy)]
pub struct FeatureContext<'a> {
    pub clean: &'a CleanConfig,
    pub embeddings: &'a EmbeddingStore,
    /// Required for the distress target.
    pub lexical: Option<&'a LexicalExtractor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub input: ModelInput,
    /// Absent for unlabeled rows.
    pub target: Option<TaskTarget>,
}

/// Cleaned essay text; lexical lookups use the lowercased, truncated tokens.
pub fn essay_tokens(record: &EssayRecord, clean: &CleanConfig) -> (String, Vec<String>) {
    let cleaned = clean_text(&record.essay, clean);
    let seq = tokenize_and_pad(&cleaned, clean);
    let tokens = seq.real_tokens().iter().map(|t| t.to_lowercase()).collect();
    (cleaned, tokens)
}

fn raw_lexical(data: &Dataset, clean: &CleanConfig, extractor: &LexicalExtractor) -> Vec<Vec<f64>> {
    data.records
        .iter()
        .map(|r| extractor.extract(&essay_tokens(r, clean).1))
        .collect()
}

fn extractor_for<'a>(
    target: Target,
    ctx: &FeatureContext<'a>,
) -> Result<Option<&'a LexicalExtractor>> {
    match (target, ctx.lexical) {
        (Target::Distress, None) => Err(Error::Config(
            "distress target requires NRC and Empath lexicons".into(),
        )),
        (Target::Distress, Some(x)) => Ok(Some(x)),
        (Target::Empathy, _) => Ok(None),
    }
}

impl FittedFeatures {
    pub fn fit(target: Target, train: &Dataset, ctx: &FeatureContext<'_>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Degenerate("empty training split".into()));
        }
        let vocabs = fit_vocab(train)?;
        let emotions = LabelSet::fit(train)?;
        let score_rows: Vec<Vec<f64>> = train
            .records
            .iter()
            .map(|r| r.psych_scores().to_vec())
            .collect();
        let scores = Standardizer::fit(&score_rows)?;
        let lexical = match extractor_for(target, ctx)? {
            Some(extractor) => Some(LexicalStats {
                spec: extractor.spec().clone(),
                standardizer: Standardizer::fit(&raw_lexical(train, ctx.clean, extractor))?,
            }),
            None => None,
        };
        Ok(Self {
            target,
            text_dim: ctx.embeddings.dim(),
            max_len: ctx.clean.max_len,
            vocabs,
            emotions,
            scores,
            lexical,
        })
    }

    /// Feature names of the lexical block, NRC then Empath.
    pub fn lexical_names(&self) -> Vec<String> {
        self.lexical
            .as_ref()
            .map(|l| l.spec.nrc.iter().chain(&l.spec.empath).cloned().collect())
            .unwrap_or_default()
    }

    fn target_of(&self, record: &EssayRecord) -> Result<Option<TaskTarget>> {
        let (score, bin) = match self.target {
            Target::Empathy => (record.empathy, record.empathy_bin),
            Target::Distress => (record.distress, record.distress_bin),
        };
        let (Some(score), Some(bin), Some(emotion)) = (score, bin, record.emotion.as_deref())
        else {
            return Ok(None);
        };
        let emotion = self.emotions.index_of(emotion).ok_or_else(|| {
            Error::Domain(format!(
                "row `{}`: emotion `{emotion}` not seen in training",
                record.id
            ))
        })?;
        Ok(Some(TaskTarget {
            score,
            bin: f64::from(bin),
            emotion,
        }))
    }

    pub fn transform(&self, data: &Dataset, ctx: &FeatureContext<'_>) -> Result<Vec<FeatureRow>> {
        if ctx.embeddings.dim() != self.text_dim {
            return Err(Error::shape(
                "embedding store dimension",
                self.text_dim,
                ctx.embeddings.dim(),
            ));
        }
        let missing: Vec<&str> = data
            .records
            .iter()
            .filter(|r| ctx.embeddings.get(&r.id).is_none())
            .map(|r| r.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Missing(format!(
                "no embedding for {} id(s): {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        let lexical = match (&self.lexical, extractor_for(self.target, ctx)?) {
            (Some(stats), Some(extractor)) => {
                if extractor.spec() != &stats.spec {
                    return Err(Error::Config(
                        "lexical feature spec differs from the fitted one".into(),
                    ));
                }
                let mut rows = Vec::with_capacity(data.len());
                for raw in raw_lexical(data, ctx.clean, extractor) {
                    rows.push(Some(stats.standardizer.transform(&raw)?));
                }
                rows
            }
            (None, None) => vec![None; data.len()],
            _ => return Err(Error::Config("lexical state does not match target".into())),
        };
        data.records
            .iter()
            .zip(lexical)
            .map(|(r, lexical)| {
                Ok(FeatureRow {
                    id: r.id.clone(),
                    input: ModelInput {
                        text: ctx.embeddings.get_f64(&r.id).unwrap_or_default(),
                        categorical: self.vocabs.encode(r)?,
                        scores: self.scores.transform(&r.psych_scores())?,
                        lexical,
                    },
                    target: self.target_of(r)?,
                })
            })
            .collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["id".to_string()];
        h.extend((0..self.text_dim).map(|i| format!("text_{i}")));
        h.extend(["gender", "education", "race", "age"].map(|c| format!("cat_{c}")));
        h.extend((0..self.scores.width()).map(|i| format!("score_{i}")));
        h.extend(self.lexical_names().iter().map(|n| format!("lex_{n}")));
        h.extend(["target_score", "target_bin", "target_emotion"].map(String::from));
        h
    }

    /// Feature rows as TSV. Values use shortest round-trip formatting, so
    /// reading them back is exact.
    pub fn write_rows(&self, rows: &[FeatureRow]) -> Result<String> {
        let mut out = self.header().join("\t");
        out.push('\n');
        for row in rows {
            out.push_str(&row.id);
            for v in &row.input.text {
                // text comes from 32-bit storage
                write!(out, "\t{}", *v as f32).ok();
            }
            for v in row.input.categorical {
                write!(out, "\t{v}").ok();
            }
            for v in row
                .input
                .scores
                .iter()
                .chain(row.input.lexical.iter().flatten())
            {
                write!(out, "\t{v}").ok();
            }
            match row.target {
                Some(t) => {
                    let emotion = self.emotions.class(t.emotion).unwrap_or_default();
                    write!(out, "\t{}\t{}\t{emotion}", t.score, t.bin).ok();
                }
                None => out.push_str("\t\t\t"),
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn read_rows(&self, text: &str, path: &Path) -> Result<Vec<FeatureRow>> {
        let header = self.header();
        let mut lines = text.lines();
        let first = lines.next().unwrap_or_default();
        if first.split('\t').collect::<Vec<_>>() != header {
            return Err(Error::Config(format!(
                "{}: feature header does not match the fitted feature set",
                path.display()
            )));
        }
        let n_lex = self.lexical_names().len();
        let col_index: HashMap<usize, &str> = header
            .iter()
            .enumerate()
            .map(|(i, h)| (i, h.as_str()))
            .collect();
        let mut rows = Vec::new();
        for (li, line) in lines.enumerate() {
            let row_no = li + 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != header.len() {
                return Err(Error::Row {
                    path: path.into(),
                    row: row_no,
                    column: "*".into(),
                    message: format!("expected {} fields, got {}", header.len(), fields.len()),
                });
            }
            let bad = |c: usize, msg: String| Error::Row {
                path: path.into(),
                row: row_no,
                column: col_index[&c].to_string(),
                message: msg,
            };
            let num = |c: usize| -> Result<f64> {
                fields[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(c, format!("not a finite number: `{}`", fields[c])))
            };
            let mut c = 1;
            let mut take = |k: usize| -> Result<Vec<f64>> {
                let v = (c..c + k).map(&num).collect::<Result<Vec<_>>>()?;
                c += k;
                Ok(v)
            };
            let text = take(self.text_dim)?
                .into_iter()
                .map(|v| f64::from(v as f32))
                .collect();
            let cats = take(4)?;
            let scores = take(self.scores.width())?;
            let lexical = if self.lexical.is_some() {
                Some(take(n_lex)?)
            } else {
                None
            };
            let mut categorical = [0usize; 4];
            let sizes = self.vocabs.sizes();
            for (k, v) in cats.iter().enumerate() {
                let col = 1 + self.text_dim + k;
                if v.fract() != 0.0 || *v < 0.0 || *v as usize >= sizes[k] {
                    return Err(bad(
                        col,
                        format!("category index {v} out of range 0..{}", sizes[k]),
                    ));
                }
                categorical[k] = *v as usize;
            }
            let t0 = header.len() - 3;
            let target = if fields[t0].is_empty() {
                None
            } else {
                let emotion = self
                    .emotions
                    .index_of(fields[t0 + 2])
                    .ok_or_else(|| bad(t0 + 2, format!("unknown emotion `{}`", fields[t0 + 2])))?;
                Some(TaskTarget {
                    score: num(t0)?,
                    bin: num(t0 + 1)?,
                    emotion,
                })
            };
            rows.push(FeatureRow {
                id: fields[0].to_string(),
                input: ModelInput {
                    text,
                    categorical,
                    scores,
                    lexical,
                },
                target,
            });
        }
        Ok(rows)
    }
}

/// Targets of every row, or an error naming the first unlabeled one.
pub fn require_targets(rows: &[FeatureRow]) -> Result<Vec<TaskTarget>> {
    rows.iter()
        .map(|r| {
            r.target
                .ok_or_else(|| Error::Missing(format!("row `{}` has no gold labels", r.id)))
        })
        .collect()
}
