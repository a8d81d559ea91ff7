//! NRC intensity / VAD and Empath-style category lexicons, essay-level
//! lexical features, standardization and feature ranking.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::pearson_r;

pub const VAD_DIMENSIONS: [&str; 3] = ["valence", "arousal", "dominance"];

/// Word -> real-valued score for one dimension (an emotion, or V/A/D).
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityLexicon {
    pub dimension: String,
    scores: HashMap<String, f64>,
}

impl IntensityLexicon {
    pub fn new(dimension: impl Into<String>, scores: HashMap<String, f64>) -> Result<Self> {
        let dimension = dimension.into();
        if let Some((w, s)) = scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::Domain(format!(
                "lexicon `{dimension}`: non-finite score {s} for `{w}`"
            )));
        }
        Ok(Self { dimension, scores })
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.scores.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Named word set.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryLexicon {
    pub category: String,
    words: HashSet<String>,
}

impl CategoryLexicon {
    pub fn new(category: impl Into<String>, words: HashSet<String>) -> Result<Self> {
        let category = category.into();
        if words.is_empty() {
            return Err(Error::Domain(format!("category `{category}` has no words")));
        }
        Ok(Self { category, words })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_score(raw: &str, path: &Path, line: usize) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            Error::Config(format!(
                "{}: line {line}: cannot parse score `{raw}`",
                path.display()
            ))
        })
}

/// Loads an NRC emotion intensity file (`word<TAB>emotion<TAB>score`),
/// returning one lexicon per emotion. A non-numeric first line is treated
/// as a header.
pub fn load_nrc_eil(path: &Path) -> Result<BTreeMap<String, IntensityLexicon>> {
    let text = read_text(path)?;
    let mut by_dim: BTreeMap<String, HashMap<String, f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!(
                "{}: line {}: expected word<TAB>emotion<TAB>score",
                path.display(),
                i + 1
            )));
        }
        let score = match parse_score(fields[2], path, i + 1) {
            Ok(s) => s,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(e),
        };
        by_dim
            .entry(fields[1].trim().to_string())
            .or_default()
            .insert(fields[0].trim().to_string(), score);
    }
    by_dim
        .into_iter()
        .map(|(dim, scores)| Ok((dim.clone(), IntensityLexicon::new(dim, scores)?)))
        .collect()
}

/// Loads an NRC VAD file (`word<TAB>valence<TAB>arousal<TAB>dominance`).
pub fn load_nrc_vad(path: &Path) -> Result<BTreeMap<String, IntensityLexicon>> {
    let text = read_text(path)?;
    let mut maps: [HashMap<String, f64>; 3] = Default::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Config(format!(
                "{}: line {}: expected word<TAB>valence<TAB>arousal<TAB>dominance",
                path.display(),
                i + 1
            )));
        }
        let scores = match fields[1..]
            .iter()
            .map(|f| parse_score(f, path, i + 1))
            .collect::<Result<Vec<_>>>()
        {
            Ok(s) => s,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(e),
        };
        for (map, score) in maps.iter_mut().zip(scores) {
            map.insert(fields[0].trim().to_string(), score);
        }
    }
    VAD_DIMENSIONS
        .iter()
        .zip(maps)
        .map(|(dim, scores)| Ok((dim.to_string(), IntensityLexicon::new(*dim, scores)?)))
        .collect()
}

/// Loads one category file (one word per line); the category is named after
/// the file stem.
pub fn load_category(path: &Path) -> Result<CategoryLexicon> {
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad category file name {}", path.display())))?;
    let words = read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|w| !w.is_empty() && !w.starts_with('#'))
        .map(String::from)
        .collect();
    CategoryLexicon::new(name, words)
}

/// Loads `<dir>/<name>.txt` for each requested category, in order.
pub fn load_categories(dir: &Path, names: &[String]) -> Result<Vec<CategoryLexicon>> {
    names
        .iter()
        .map(|n| load_category(&dir.join(format!("{n}.txt"))))
        .collect()
}

/// Ordered names of the lexical inputs of one model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub nrc: Vec<String>,
    pub empath: Vec<String>,
}

impl FeatureSpec {
    /// Distress feature set, ordered by training-set correlation.
    pub fn distress_default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            nrc: own(&[
                "fear",
                "sadness",
                "disgust",
                "arousal",
                "anger",
                "dominance",
            ]),
            empath: own(&[
                "suffering",
                "death",
                "torment",
                "hate",
                "negative_emotion",
                "sadness",
                "aggression",
                "fight",
                "help",
                "pain",
                "kill",
                "horror",
                "violence",
                "war",
                "ugliness",
            ]),
        }
    }

    pub fn width(&self) -> usize {
        self.nrc.len() + self.empath.len()
    }
}

/// Lexicons resolved against a [`FeatureSpec`], ready to score essays.
#[derive(Debug, Clone)]
pub struct LexicalExtractor {
    spec: FeatureSpec,
    nrc: Vec<IntensityLexicon>,
    empath: Vec<CategoryLexicon>,
}

impl LexicalExtractor {
    /// `intensity` holds every available intensity dimension (EIL emotions
    /// and VAD dimensions) keyed by name.
    pub fn new(
        spec: FeatureSpec,
        intensity: &BTreeMap<String, IntensityLexicon>,
        categories: Vec<CategoryLexicon>,
    ) -> Result<Self> {
        let nrc = spec
            .nrc
            .iter()
            .map(|name| {
                intensity.get(name).cloned().ok_or_else(|| {
                    Error::Config(format!(
                        "no intensity lexicon for `{name}` (available: {})",
                        intensity.keys().cloned().collect::<Vec<_>>().join(", ")
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut by_name: HashMap<String, CategoryLexicon> = categories
            .into_iter()
            .map(|c| (c.category.clone(), c))
            .collect();
        let empath = spec
            .empath
            .iter()
            .map(|name| {
                by_name
                    .remove(name)
                    .ok_or_else(|| Error::Config(format!("no category lexicon for `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, nrc, empath })
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    /// NRC sums followed by Empath percentages, in spec order.
    pub fn extract(&self, tokens: &[String]) -> Vec<f64> {
        self.nrc
            .iter()
            .map(|lex| nrc_score(tokens, lex))
            .chain(self.empath.iter().map(|lex| empath_score(tokens, lex)))
            .collect()
    }
}

/// Sum of lexicon scores over the tokens; out-of-lexicon tokens add 0.
pub fn nrc_score(tokens: &[String], lex: &IntensityLexicon) -> f64 {
    tokens.iter().filter_map(|t| lex.get(t)).sum()
}

/// Percentage of tokens belonging to the category; 0 for no tokens.
pub fn empath_score(tokens: &[String], lex: &CategoryLexicon) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    let hits = tokens.iter().filter(|t| lex.contains(t)).count();
    100.0 * hits as f64 / tokens.len() as f64
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose variance was zero at fit time (their std is set to 1).
    pub zero_variance: Vec<usize>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Domain(format!(
                "standardizer needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let width = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::shape("standardizer fit", width, r.len()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for row in rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in rows {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut zero_variance = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    warn!("feature {j} has zero variance; std set to 1");
                    zero_variance.push(j);
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean,
            std,
            zero_variance,
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width() {
            return Err(Error::shape(
                "standardizer transform",
                self.width(),
                x.len(),
            ));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.width() {
            return Err(Error::shape("standardizer inverse", self.width(), z.len()));
        }
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub name: String,
    pub r: f64,
    /// Constant feature; `r` is reported as 0.
    pub degenerate: bool,
}

/// Sorts candidate features by descending Pearson r against `labels`.
pub fn rank_features(
    names: &[String],
    columns: &[Vec<f64>],
    labels: &[f64],
) -> Result<Vec<FeatureCorrelation>> {
    if names.len() != columns.len() {
        return Err(Error::shape(
            "rank_features names",
            columns.len(),
            names.len(),
        ));
    }
    if labels.len() < 3 {
        return Err(Error::Degenerate(format!(
            "rank_features needs at least 3 rows, got {}",
            labels.len()
        )));
    }
    let mut out = names
        .iter()
        .zip(columns)
        .map(|(name, col)| match pearson_r(col, labels) {
            Ok(r) => Ok(FeatureCorrelation {
                name: name.clone(),
                r,
                degenerate: false,
            }),
            Err(Error::Degenerate(_)) if col.len() == labels.len() => Ok(FeatureCorrelation {
                name: name.clone(),
                r: 0.0,
                degenerate: true,
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.r.total_cmp(&a.r));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn sad_happy() -> IntensityLexicon {
        IntensityLexicon::new(
            "mood",
            [("sad".to_string(), 0.8), ("happy".to_string(), 0.3)].into(),
        )
        .unwrap()
    }

    fn category(words: &[&str]) -> CategoryLexicon {
        CategoryLexicon::new("cat", words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn nrc_sums_scores() {
        let lex = sad_happy();
        assert!((nrc_score(&toks(&["sad", "happy", "sad"]), &lex) - 1.9).abs() < 1e-12);
        assert_eq!(nrc_score(&[], &lex), 0.0);
        assert_eq!(nrc_score(&toks(&["dog", "cat"]), &lex), 0.0);
        // exact match only
        assert_eq!(nrc_score(&toks(&["Sad"]), &lex), 0.0);
    }

    #[test]
    fn empath_percentages() {
        let lex = category(&["pain", "hurt"]);
        let ten = toks(&["pain", "a", "b", "c", "hurt", "d", "e", "f", "g", "h"]);
        assert_eq!(empath_score(&ten, &lex), 20.0);
        assert_eq!(empath_score(&toks(&["x", "y"]), &lex), 0.0);
        assert_eq!(empath_score(&toks(&["pain"; 5]), &lex), 100.0);
        assert_eq!(empath_score(&[], &lex), 0.0);
    }

    #[test]
    fn empty_category_rejected() {
        assert!(CategoryLexicon::new("x", HashSet::new()).is_err());
    }

    #[test]
    fn standardizer_values() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert!((s.std[0] - 0.816_496_580_927_726).abs() < 1e-12);
        assert_eq!(s.zero_variance, vec![1]);
        assert_eq!(s.transform(&[2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        let z = s.transform(&[1.0, 5.0]).unwrap();
        assert!((z[0] - (-1.0 / (2.0f64 / 3.0).sqrt())).abs() < 1e-12);
        assert!((z[0] + 1.224_744_871_391_589).abs() < 1e-12);
        assert!(Standardizer::fit(&rows[..1]).is_err());
        assert!(s.transform(&[1.0]).is_err());
    }

    #[test]
    fn ranking_orders_by_r() {
        let labels = vec![1.0, 2.0, 3.0, 4.0];
        let names = toks(&["neg", "same", "flat", "noisy"]);
        let cols = vec![
            labels.iter().map(|x| -x).collect(),
            labels.clone(),
            vec![1.0; 4],
            vec![1.0, 3.0, 2.0, 4.0],
        ];
        let ranked = rank_features(&names, &cols, &labels).unwrap();
        let order: Vec<&str> = ranked.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(order, ["same", "noisy", "flat", "neg"]);
        assert!((ranked[0].r - 1.0).abs() < 1e-12);
        assert!((ranked[3].r + 1.0).abs() < 1e-12);
        assert!(ranked[2].degenerate && ranked[2].r == 0.0);
        assert!(rank_features(&names[..1], &cols[..1], &labels[..2]).is_err());
    }

    #[test]
    fn loads_lexicon_files() {
        let dir = tempfile::tempdir().unwrap();
        let eil = dir.path().join("eil.txt");
        std::fs::write(&eil, "word\temotion\temotion-intensity-score\nterror\tfear\t0.9\nsob\tsadness\t0.7\nscared\tfear\t0.6\n").unwrap();
        let vad = dir.path().join("vad.txt");
        std::fs::write(
            &vad,
            "Word\tValence\tArousal\tDominance\nterror\t0.1\t0.9\t0.3\n",
        )
        .unwrap();
        let cat = dir.path().join("pain.txt");
        std::fs::write(&cat, "pain\nhurt\n").unwrap();

        let mut dims = load_nrc_eil(&eil).unwrap();
        assert_eq!(dims["fear"].get("terror"), Some(0.9));
        assert_eq!(dims["fear"].len(), 2);
        dims.extend(load_nrc_vad(&vad).unwrap());
        assert_eq!(dims["arousal"].get("terror"), Some(0.9));

        let cats = load_categories(dir.path(), &["pain".to_string()]).unwrap();
        let spec = FeatureSpec {
            nrc: toks(&["fear", "arousal"]),
            empath: toks(&["pain"]),
        };
        let ex = LexicalExtractor::new(spec, &dims, cats).unwrap();
        let f = ex.extract(&toks(&["terror", "pain", "scared", "ok"]));
        assert_eq!(f.len(), 3);
        assert!((f[0] - 1.5).abs() < 1e-12);
        assert!((f[1] - 0.9).abs() < 1e-12);
        assert_eq!(f[2], 25.0);

        let missing = FeatureSpec {
            nrc: toks(&["joy"]),
            empath: vec![],
        };
        assert!(LexicalExtractor::new(missing, &dims, vec![]).is_err());

        std::fs::write(&eil, "terror\tfear\n").unwrap();
        assert!(load_nrc_eil(&eil).is_err());
    }

    #[test]
    fn distress_spec_has_expected_width() {
        let spec = FeatureSpec::distress_default();
        assert_eq!((spec.nrc.len(), spec.empath.len()), (6, 15));
        assert_eq!(&spec.nrc[..2], &["fear", "sadness"]);
    }

    proptest! {
        #[test]
        fn nrc_is_additive(a in proptest::collection::vec("sad|happy|dog", 0..20),
                           b in proptest::collection::vec("sad|happy|dog", 0..20)) {
            let lex = sad_happy();
            let joined: Vec<String> = a.iter().chain(&b).cloned().collect();
            let lhs = nrc_score(&joined, &lex);
            let rhs = nrc_score(&a, &lex) + nrc_score(&b, &lex);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn empath_invariant_under_duplication(a in proptest::collection::vec("pain|hurt|dog|cat", 1..30)) {
            let lex = category(&["pain", "hurt"]);
            let doubled: Vec<String> = a.iter().flat_map(|t| [t.clone(), t.clone()]).collect();
            prop_assert!((empath_score(&a, &lex) - empath_score(&doubled, &lex)).abs() < 1e-12);
        }

        #[test]
        fn standardizer_round_trip(rows in proptest::collection::vec(
            proptest::collection::vec(-1e3f64..1e3, 3), 2..20)) {
            let s = Standardizer::fit(&rows).unwrap();
            for row in &rows {
                let back = s.inverse_transform(&s.transform(row).unwrap()).unwrap();
                for (x, y) in row.iter().zip(&back) {
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                }
            }
        }
    }
}
