//! Essay cleaning, normalization, tokenization and padding.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::{Captures, Regex};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 200;
pub const DEFAULT_PAD_TOKEN: &str = "<pad>";

const DEFAULT_CONTRACTIONS: &str = include_str!("../data/contractions.tsv");
const DEFAULT_ACRONYMS: &str = include_str!("../data/acronyms.tsv");

// Bound on re-running the pipeline until it reaches a fixed point.
const MAX_PASSES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CleanConfig {
    /// Lowercased contraction -> expansion.
    contractions: HashMap<String, String>,
    /// Case-sensitive acronym -> expansion.
    acronyms: HashMap<String, String>,
    pub max_len: usize,
    pub pad_token: String,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self::new(
            parse_map(DEFAULT_CONTRACTIONS, "<builtin contractions>").expect("builtin map"),
            parse_map(DEFAULT_ACRONYMS, "<builtin acronyms>").expect("builtin map"),
            DEFAULT_MAX_LEN,
            DEFAULT_PAD_TOKEN,
        )
        .expect("builtin clean config")
    }
}

impl CleanConfig {
    pub fn new(
        contractions: Vec<(String, String)>,
        acronyms: Vec<(String, String)>,
        max_len: usize,
        pad_token: &str,
    ) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let contractions: HashMap<String, String> = contractions
            .into_iter()
            .map(|(k, v)| (k.replace('\u{2019}', "'").to_lowercase(), v))
            .collect();
        let acronyms: HashMap<String, String> = acronyms.into_iter().collect();
        for (key, expansion) in contractions.iter().chain(&acronyms) {
            for tok in expansion.split_whitespace() {
                if contractions.contains_key(&tok.to_lowercase()) || acronyms.contains_key(tok) {
                    return Err(Error::Config(format!(
                        "expansion of `{key}` contains map key `{tok}`"
                    )));
                }
            }
        }
        Ok(Self {
            contractions,
            acronyms,
            max_len,
            pad_token: pad_token.to_string(),
        })
    }

    /// Builds a config from key<TAB>value map files.
    pub fn from_files(
        contractions: Option<&Path>,
        acronyms: Option<&Path>,
        max_len: usize,
        pad_token: &str,
    ) -> Result<Self> {
        let contractions = match contractions {
            Some(p) => load_map(p)?,
            None => parse_map(DEFAULT_CONTRACTIONS, "<builtin contractions>")?,
        };
        let acronyms = match acronyms {
            Some(p) => load_map(p)?,
            None => parse_map(DEFAULT_ACRONYMS, "<builtin acronyms>")?,
        };
        Self::new(contractions, acronyms, max_len, pad_token)
    }

    pub fn contraction_count(&self) -> usize {
        self.contractions.len()
    }
}

/// Reads a key<TAB>value file; `#` lines and blank lines are skipped.
pub fn load_map(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_map(&text, &path.display().to_string())
}

fn parse_map(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('\t').ok_or_else(|| {
            Error::Config(format!("{source}: line {}: expected key<TAB>value", i + 1))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn contraction_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"'?\p{L}+(?:'\p{L}+)*").unwrap())
}

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{L}+").unwrap())
}

/// Carries the case pattern of `original` over to `expansion`.
fn match_case(original: &str, expansion: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return expansion.to_uppercase();
    }
    if letters.first().is_some_and(|c| c.is_uppercase()) {
        let mut chars = expansion.chars();
        if let Some(first) = chars.next() {
            return first.to_uppercase().chain(chars).collect();
        }
    }
    expansion.to_string()
}

fn single_pass(raw: &str, cfg: &CleanConfig) -> String {
    let text = raw.replace('\u{2019}', "'");

    let text = contraction_re().replace_all(&text, |caps: &Captures| {
        let tok = &caps[0];
        match cfg.contractions.get(&tok.to_lowercase()) {
            Some(exp) => match_case(tok, exp),
            None => tok.to_string(),
        }
    });

    let text = word_re().replace_all(&text, |caps: &Captures| {
        let tok = &caps[0];
        cfg.acronyms
            .get(tok)
            .cloned()
            .unwrap_or_else(|| tok.to_string())
    });

    let text: String = text.nfd().filter(|c| !is_combining_mark(*c)).collect();

    let text: String = text
        .chars()
        .map(|c| {
            if c.is_ascii_alphabetic() || c.is_whitespace() {
                c
            } else {
                // punctuation, symbols, digits and anything non-ASCII
                ' '
            }
        })
        .collect();

    text.split_whitespace()
        .filter(|tok| tok.chars().count() > 1)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Cleans one essay. Case is preserved.
///
/// Steps, in order: contraction expansion, acronym expansion, accent
/// stripping, punctuation/special-character removal, digit removal,
/// single-character token removal, whitespace collapse. Removed characters
/// become token separators. The steps are re-applied until the text stops
/// changing, since stripping can expose a map key (e.g. `ÚSA` -> `USA`).
pub fn clean_text(raw: &str, cfg: &CleanConfig) -> String {
    let mut current = single_pass(raw, cfg);
    for _ in 1..MAX_PASSES {
        let next = single_pass(&current, cfg);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

/// Fixed-length token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    tokens: Vec<String>,
    attention_len: usize,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens before padding.
    pub fn real_tokens(&self) -> &[String] {
        &self.tokens[..self.attention_len]
    }

    pub fn attention_len(&self) -> usize {
        self.attention_len
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whitespace tokenization, truncated or right-padded to `cfg.max_len`.
pub fn tokenize_and_pad(cleaned: &str, cfg: &CleanConfig) -> TokenSeq {
    let mut tokens: Vec<String> = cleaned
        .split_whitespace()
        .take(cfg.max_len)
        .map(String::from)
        .collect();
    let attention_len = tokens.len();
    tokens.resize(cfg.max_len, cfg.pad_token.clone());
    TokenSeq {
        tokens,
        attention_len,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let cfg = CleanConfig::default();
        assert_eq!(clean_text("It's 2 cats!!", &cfg), "It is cats");
    }

    #[test]
    fn empty_input() {
        let cfg = CleanConfig::default();
        assert_eq!(clean_text("", &cfg), "");
    }

    #[test]
    fn strips_accents() {
        let cfg = CleanConfig::default();
        assert_eq!(clean_text("café", &cfg), "cafe");
        assert_eq!(clean_text("Naïve résumé", &cfg), "Naive resume");
    }

    #[test]
    fn contractions_keep_case() {
        let cfg = CleanConfig::default();
        assert_eq!(clean_text("I DON'T know", &cfg), "DO NOT know");
        assert_eq!(clean_text("Don\u{2019}t go", &cfg), "Do not go");
        assert_eq!(clean_text("they're here", &cfg), "they are here");
    }

    #[test]
    fn acronyms_exact_match() {
        let cfg = CleanConfig::default();
        assert_eq!(
            clean_text("the USA and us", &cfg),
            "the United States of America and us"
        );
    }

    #[test]
    fn accent_exposed_key_is_expanded() {
        let cfg = CleanConfig::default();
        let once = clean_text("ÚSA", &cfg);
        assert_eq!(once, "United States of America");
        assert_eq!(clean_text(&once, &cfg), once);
    }

    #[test]
    fn punctuation_separates_tokens() {
        let cfg = CleanConfig::default();
        assert_eq!(
            clean_text("well-known  fact... 42x", &cfg),
            "well known fact"
        );
        assert_eq!(clean_text("John's dog", &cfg), "John dog");
    }

    #[test]
    fn default_contraction_list_size() {
        assert!(CleanConfig::default().contraction_count() >= 120);
    }

    #[test]
    fn rejects_cyclic_maps() {
        let err = CleanConfig::new(
            vec![("don't".into(), "do not".into())],
            vec![("not".into(), "NOT".into())],
            10,
            "<pad>",
        );
        assert!(err.is_err());
        assert!(CleanConfig::new(vec![], vec![], 0, "<pad>").is_err());
    }

    #[test]
    fn pads_short_sequences() {
        let cfg = CleanConfig::default();
        let seq = tokenize_and_pad("It is cats", &cfg);
        assert_eq!(seq.len(), 200);
        assert_eq!(seq.attention_len(), 3);
        assert_eq!(seq.real_tokens(), &["It", "is", "cats"]);
        assert!(seq.tokens()[3..].iter().all(|t| t == "<pad>"));
    }

    #[test]
    fn truncates_long_sequences() {
        let cfg = CleanConfig::default();
        let text: Vec<String> = (0..250)
            .map(|i| format!("w{}", "x".repeat(i % 5 + 1)))
            .collect();
        let seq = tokenize_and_pad(&text.join(" "), &cfg);
        assert_eq!(seq.len(), 200);
        assert_eq!(seq.attention_len(), 200);
        assert_eq!(seq.tokens()[199], text[199]);
    }

    #[test]
    fn empty_sequence_is_all_padding() {
        let cfg = CleanConfig::default();
        let seq = tokenize_and_pad("", &cfg);
        assert_eq!(seq.len(), 200);
        assert_eq!(seq.attention_len(), 0);
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(s in "[a-zA-Z0-9 '’.,!?éÚüçñ-]{0,60}|(USA|it's|I'm|Café|ÚSA| |!){0,12}") {
            let cfg = CleanConfig::default();
            let once = clean_text(&s, &cfg);
            prop_assert_eq!(clean_text(&once, &cfg), once.clone());
            prop_assert!(!once.contains("  "));
            prop_assert!(!once.chars().any(|c| c.is_ascii_digit()));
            prop_assert!(once.split(' ').all(|t| once.is_empty() || t.len() > 1));
        }

        #[test]
        fn padded_length_is_constant(s in "[a-z ]{0,400}", max_len in 1usize..50) {
            let cfg = CleanConfig::new(vec![], vec![], max_len, "<pad>").unwrap();
            let seq = tokenize_and_pad(&s, &cfg);
            prop_assert_eq!(seq.len(), max_len);
            prop_assert!(seq.attention_len() <= max_len);
        }
    }
}
