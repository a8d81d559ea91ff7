//! Corpus records, label semantics, categorical vocabularies and TSV ingestion.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores at or above this value are "high" empathy/distress.
pub const BIN_THRESHOLD: f64 = 4.0;

pub const PERSONALITY_TRAITS: [&str; 5] = [
    "conscientiousness",
    "openness",
    "extraversion",
    "agreeableness",
    "stability",
];

pub const IRI_SUBSCALES: [&str; 4] = [
    "fantasy",
    "perspective_taking",
    "empathic_concern",
    "personal_distress",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One labeled corpus row.
///
/// Label fields are optional so that prediction-only files (no gold columns)
/// load through the same path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub id: String,
    pub essay: String,
    pub gender: String,
    pub education: String,
    pub race: String,
    pub age: u32,
    pub income: f64,
    /// Conscientiousness, openness, extraversion, agreeableness, stability.
    pub personality: [f64; 5],
    /// Fantasy, perspective taking, empathic concern, personal distress.
    pub iri: [f64; 4],
    pub empathy: Option<f64>,
    pub distress: Option<f64>,
    pub empathy_bin: Option<u8>,
    pub distress_bin: Option<u8>,
    pub emotion: Option<String>,
}

impl EssayRecord {
    /// The nine psychological scores in canonical order (personality, then IRI).
    pub fn psych_scores(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..5].copy_from_slice(&self.personality);
        out[5..].copy_from_slice(&self.iri);
        out
    }
}

/// Logical field -> TSV header name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub id: String,
    pub essay: String,
    pub gender: String,
    pub education: String,
    pub race: String,
    pub age: String,
    pub income: String,
    pub personality: [String; 5],
    pub iri: [String; 4],
    pub empathy: String,
    pub distress: String,
    pub empathy_bin: String,
    pub distress_bin: String,
    pub emotion: String,
}

impl Default for ColumnMapping {
    /// Header names used by the shared-task release (including its spellings).
    fn default() -> Self {
        Self {
            id: "message_id".into(),
            essay: "essay".into(),
            gender: "gender".into(),
            education: "education".into(),
            race: "race".into(),
            age: "age".into(),
            income: "income".into(),
            personality: [
                "personality_conscientiousness".into(),
                "personality_openess".into(),
                "personality_extraversion".into(),
                "personality_agreeableness".into(),
                "personality_stability".into(),
            ],
            iri: [
                "iri_fantasy".into(),
                "iri_perspective_taking".into(),
                "iri_empathatic_concern".into(),
                "iri_personal_distress".into(),
            ],
            empathy: "empathy".into(),
            distress: "distress".into(),
            empathy_bin: "empathy_bin".into(),
            distress_bin: "distress_bin".into(),
            emotion: "emotion".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<EssayRecord>,
    pub split: Split,
    pub mapping: ColumnMapping,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Age interval used as a categorical feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgeBucket {
    Le25,
    From26To40,
    From41To60,
    Ge61,
}

impl AgeBucket {
    pub fn token(self) -> &'static str {
        match self {
            AgeBucket::Le25 => "AGE_LE25",
            AgeBucket::From26To40 => "AGE_26_40",
            AgeBucket::From41To60 => "AGE_41_60",
            AgeBucket::Ge61 => "AGE_GE61",
        }
    }

    pub fn lower_bound(self) -> i64 {
        match self {
            AgeBucket::Le25 => 0,
            AgeBucket::From26To40 => 26,
            AgeBucket::From41To60 => 41,
            AgeBucket::Ge61 => 61,
        }
    }
}

/// Maps an age in years to its bucket. 25 falls in the lowest bucket.
pub fn bucket_age(age: i64) -> Result<AgeBucket> {
    match age {
        a if a < 0 => Err(Error::Domain(format!("negative age {a}"))),
        0..=25 => Ok(AgeBucket::Le25),
        26..=40 => Ok(AgeBucket::From26To40),
        41..=60 => Ok(AgeBucket::From41To60),
        _ => Ok(AgeBucket::Ge61),
    }
}

pub const UNKNOWN_TOKEN: &str = "<UNK>";

/// Token vocabulary with a reserved unknown slot at index 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalVocab {
    /// Index 0 is always [`UNKNOWN_TOKEN`].
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl CategoricalVocab {
    /// Builds a vocab in first-occurrence order.
    pub fn fit<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut vocab = Self {
            tokens: vec![UNKNOWN_TOKEN.to_string()],
            index: HashMap::new(),
        };
        for tok in tokens {
            if !vocab.index.contains_key(tok) {
                vocab.index.insert(tok.to_string(), vocab.tokens.len());
                vocab.tokens.push(tok.to_string());
            }
        }
        vocab
    }

    /// Index of `token`, or 0 for anything not seen at fit time.
    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    /// Token at `index`; `None` for the unknown slot and out-of-range indices.
    pub fn decode(&self, index: usize) -> Option<&str> {
        if index == 0 {
            return None;
        }
        self.tokens.get(index).map(String::as_str)
    }

    /// Number of slots including the unknown slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }
}

/// Vocabularies for the four demographic inputs, in model input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicVocabs {
    pub gender: CategoricalVocab,
    pub education: CategoricalVocab,
    pub race: CategoricalVocab,
    pub age: CategoricalVocab,
}

impl DemographicVocabs {
    pub fn sizes(&self) -> [usize; 4] {
        [
            self.gender.len(),
            self.education.len(),
            self.race.len(),
            self.age.len(),
        ]
    }

    pub fn encode(&self, record: &EssayRecord) -> Result<[usize; 4]> {
        let age = bucket_age(i64::from(record.age))?;
        Ok([
            self.gender.encode(&record.gender),
            self.education.encode(&record.education),
            self.race.encode(&record.race),
            self.age.encode(age.token()),
        ])
    }

    pub fn reindex(&mut self) {
        self.gender.reindex();
        self.education.reindex();
        self.race.reindex();
        self.age.reindex();
    }
}

pub fn fit_vocab(train: &Dataset) -> Result<DemographicVocabs> {
    if train.is_empty() {
        return Err(Error::Domain(
            "cannot fit vocabularies on an empty training set".into(),
        ));
    }
    let ages = train
        .records
        .iter()
        .map(|r| bucket_age(i64::from(r.age)).map(AgeBucket::token))
        .collect::<Result<Vec<_>>>()?;
    Ok(DemographicVocabs {
        gender: CategoricalVocab::fit(train.records.iter().map(|r| r.gender.as_str())),
        education: CategoricalVocab::fit(train.records.iter().map(|r| r.education.as_str())),
        race: CategoricalVocab::fit(train.records.iter().map(|r| r.race.as_str())),
        age: CategoricalVocab::fit(ages),
    })
}

/// Emotion classes observed in training, sorted; no unknown slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    classes: Vec<String>,
}

impl LabelSet {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let mut classes: Vec<String> = train
            .records
            .iter()
            .filter_map(|r| r.emotion.clone())
            .collect();
        classes.sort();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 emotion classes in training data, found {}",
                classes.len()
            )));
        }
        Ok(Self { classes })
    }

    pub fn from_classes(classes: Vec<String>) -> Self {
        Self { classes }
    }

    pub fn index_of(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub fn class(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }
}

fn bin_of(score: f64) -> u8 {
    u8::from(score >= BIN_THRESHOLD)
}

/// Reads a tab-separated corpus file with a header row.
///
/// Label columns may be absent entirely (prediction-only input); when a bin
/// column is absent but its score is present, the bin is derived from the
/// 4.0 threshold. A stored bin that disagrees with its score is logged and
/// kept.
pub fn load_tsv(path: impl AsRef<Path>, mapping: &ColumnMapping, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tsv(file, path, mapping, split)
}

pub(crate) fn read_tsv<R: std::io::Read>(
    reader: R,
    path: &Path,
    mapping: &ColumnMapping,
    split: Split,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Config(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| {
            Error::Config(format!(
                "{}: missing column `{name}` (header: {})",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };

    let id_col = require(&mapping.id)?;
    let essay_col = require(&mapping.essay)?;
    let gender_col = require(&mapping.gender)?;
    let education_col = require(&mapping.education)?;
    let race_col = require(&mapping.race)?;
    let age_col = require(&mapping.age)?;
    let income_col = require(&mapping.income)?;
    let personality_cols = mapping
        .personality
        .iter()
        .map(|c| require(c))
        .collect::<Result<Vec<_>>>()?;
    let iri_cols = mapping
        .iri
        .iter()
        .map(|c| require(c))
        .collect::<Result<Vec<_>>>()?;
    let empathy_col = find(&mapping.empathy);
    let distress_col = find(&mapping.distress);
    let empathy_bin_col = find(&mapping.empathy_bin);
    let distress_bin_col = find(&mapping.distress_bin);
    let emotion_col = find(&mapping.emotion);

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::Row {
            path: path.to_path_buf(),
            row: row_no,
            column: String::new(),
            message: e.to_string(),
        })?;
        let cell = |col: usize| row.get(col).unwrap_or("").trim();
        let row_err = |col: usize, message: String| Error::Row {
            path: path.to_path_buf(),
            row: row_no,
            column: headers.get(col).unwrap_or("").to_string(),
            message,
        };
        let number = |col: usize| -> Result<f64> {
            let raw = cell(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(row_err(
                    col,
                    format!("cannot parse `{raw}` as a finite number"),
                )),
            }
        };
        let opt_number = |col: Option<usize>| -> Result<Option<f64>> {
            match col {
                Some(c) if !cell(c).is_empty() => number(c).map(Some),
                _ => Ok(None),
            }
        };

        let age = number(age_col)?;
        if age < 0.0 || age.fract() != 0.0 || age > f64::from(u32::MAX) {
            return Err(row_err(
                age_col,
                format!("age `{age}` is not a non-negative integer"),
            ));
        }
        let mut personality = [0.0; 5];
        for (slot, &col) in personality.iter_mut().zip(&personality_cols) {
            *slot = number(col)?;
        }
        let mut iri = [0.0; 4];
        for (slot, &col) in iri.iter_mut().zip(&iri_cols) {
            *slot = number(col)?;
        }

        let empathy = opt_number(empathy_col)?;
        let distress = opt_number(distress_col)?;
        let parse_bin = |col: Option<usize>, score: Option<f64>| -> Result<Option<u8>> {
            let stored = match opt_number(col)? {
                None => None,
                Some(v) if v == 0.0 || v == 1.0 => Some(v as u8),
                Some(v) => {
                    return Err(row_err(
                        col.unwrap_or(0),
                        format!("bin value `{v}` is not 0 or 1"),
                    ))
                }
            };
            match (stored, score) {
                (Some(b), Some(s)) if b != bin_of(s) => {
                    warn!(
                        "{}: row {row_no}: stored bin {b} disagrees with score {s} (threshold {BIN_THRESHOLD}); keeping stored value",
                        path.display()
                    );
                    Ok(Some(b))
                }
                (Some(b), _) => Ok(Some(b)),
                (None, Some(s)) => Ok(Some(bin_of(s))),
                (None, None) => Ok(None),
            }
        };
        let empathy_bin = parse_bin(empathy_bin_col, empathy)?;
        let distress_bin = parse_bin(distress_bin_col, distress)?;
        let emotion = emotion_col
            .map(|c| cell(c).to_string())
            .filter(|s| !s.is_empty());

        records.push(EssayRecord {
            id: cell(id_col).to_string(),
            essay: row.get(essay_col).unwrap_or("").to_string(),
            gender: cell(gender_col).to_string(),
            education: cell(education_col).to_string(),
            race: cell(race_col).to_string(),
            age: age as u32,
            income: number(income_col)?,
            personality,
            iri,
            empathy,
            distress,
            empathy_bin,
            distress_bin,
            emotion,
        });
    }

    Ok(Dataset {
        records,
        split,
        mapping: mapping.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "message_id\tessay\tgender\teducation\trace\tage\tincome\t\
personality_conscientiousness\tpersonality_openess\tpersonality_extraversion\t\
personality_agreeableness\tpersonality_stability\tiri_fantasy\tiri_perspective_taking\t\
iri_empathatic_concern\tiri_personal_distress\tempathy\tdistress\tempathy_bin\tdistress_bin\temotion";

    fn parse(text: &str) -> Result<Dataset> {
        read_tsv(
            text.as_bytes(),
            Path::new("mem.tsv"),
            &ColumnMapping::default(),
            Split::Train,
        )
    }

    fn row(id: &str, gender: &str, age: &str, empathy: &str, bin: &str) -> String {
        format!(
            "{id}\tsome essay text\t{gender}\t4\t1\t{age}\t40000\t4\t5\t3\t6\t5.5\t3\t4\t5\t2\t{empathy}\t2.5\t{bin}\t0\tsadness"
        )
    }

    fn dataset(genders: &[&str]) -> Dataset {
        let mut text = String::from(HEADER);
        for (i, g) in genders.iter().enumerate() {
            text.push('\n');
            text.push_str(&row(&format!("r{i}"), g, "30", "3.0", "0"));
        }
        parse(&text).unwrap()
    }

    #[test]
    fn header_only_file_is_empty() {
        let ds = parse(HEADER).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn loads_rows_in_order() {
        let text = format!(
            "{HEADER}\n{}\n{}",
            row("a", "1", "18", "4.0", "1"),
            row("b", "2", "61", "1.5", "0")
        );
        let ds = parse(&text).unwrap();
        assert_eq!(ds.len(), 2);
        let a = &ds.records[0];
        assert_eq!(a.id, "a");
        assert_eq!(a.empathy, Some(4.0));
        assert_eq!(a.empathy_bin, Some(1));
        assert_eq!(a.personality, [4.0, 5.0, 3.0, 6.0, 5.5]);
        assert_eq!(a.iri, [3.0, 4.0, 5.0, 2.0]);
        assert_eq!(a.emotion.as_deref(), Some("sadness"));
        assert_eq!(ds.records[1].id, "b");
        assert_eq!(ds.records[1].age, 61);
    }

    #[test]
    fn missing_column_is_a_config_error() {
        let text = HEADER.replace("\tincome", "\tsalary");
        assert!(matches!(parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn bad_number_reports_row_and_column() {
        let text = format!(
            "{HEADER}\n{}\n{}",
            row("a", "1", "18", "4.0", "1"),
            row("b", "1", "18", "high", "1")
        );
        match parse(&text) {
            Err(Error::Row { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "empathy");
            }
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn contradicting_bin_keeps_stored_value() {
        let text = format!("{HEADER}\n{}", row("a", "1", "18", "4.5", "0"));
        let ds = parse(&text).unwrap();
        assert_eq!(ds.records[0].empathy_bin, Some(0));
    }

    #[test]
    fn label_columns_are_optional() {
        let header: Vec<&str> = HEADER.split('\t').take(16).collect();
        let line: Vec<String> = row("a", "1", "18", "4.5", "0")
            .split('\t')
            .take(16)
            .map(String::from)
            .collect();
        let ds = parse(&format!("{}\n{}", header.join("\t"), line.join("\t"))).unwrap();
        let r = &ds.records[0];
        assert_eq!(
            (r.empathy, r.empathy_bin, r.emotion.clone()),
            (None, None, None)
        );
    }

    #[test]
    fn age_buckets() {
        assert_eq!(bucket_age(18).unwrap().token(), "AGE_LE25");
        assert_eq!(bucket_age(25).unwrap().token(), "AGE_LE25");
        assert_eq!(bucket_age(26).unwrap().token(), "AGE_26_40");
        assert_eq!(bucket_age(40).unwrap().token(), "AGE_26_40");
        assert_eq!(bucket_age(41).unwrap().token(), "AGE_41_60");
        assert_eq!(bucket_age(60).unwrap().token(), "AGE_41_60");
        assert_eq!(bucket_age(61).unwrap().token(), "AGE_GE61");
        assert!(matches!(bucket_age(-1), Err(Error::Domain(_))));
    }

    #[test]
    fn vocab_first_occurrence_order() {
        let vocabs = fit_vocab(&dataset(&["A", "B", "A"])).unwrap();
        assert_eq!(vocabs.gender.tokens(), &["<UNK>", "A", "B"]);
        assert_eq!(vocabs.gender.encode("A"), 1);
        assert_eq!(vocabs.gender.encode("B"), 2);
        assert_eq!(vocabs.gender.encode("C"), 0);
        assert!(vocabs.age.len() <= 5);
    }

    #[test]
    fn fit_vocab_rejects_empty() {
        assert!(fit_vocab(&parse(HEADER).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn bucket_age_is_monotone(a in 0i64..150, b in 0i64..150) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(bucket_age(lo).unwrap().lower_bound() <= bucket_age(hi).unwrap().lower_bound());
        }

        #[test]
        fn vocab_round_trip(tokens in proptest::collection::vec("[a-z]{1,4}", 1..20)) {
            let vocab = CategoricalVocab::fit(tokens.iter().map(String::as_str));
            for i in 1..vocab.len() {
                prop_assert_eq!(vocab.encode(vocab.decode(i).unwrap()), i);
            }
            prop_assert!(vocab.decode(0).is_none());
        }
    }
}
