//! Run configuration: one TOML file, every key overridable by a
//! `--dotted.key value` flag.

use std::path::{Path, PathBuf};

use empathy_core::data::ColumnMapping;
use empathy_core::model::{ModelConfig, Target};
use empathy_core::train::TrainConfig;
use empathy_core::Error;
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: Target,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub embeddings: EmbeddingOptions,
    #[serde(default)]
    pub preprocess: PreprocessOptions,
    /// Layer sizes and regularization; mode, class count and lexical spec
    /// are set from the data.
    #[serde(default)]
    pub model: ModelConfig,
    /// `train.seed` is replaced by the top-level `seed`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub columns: ColumnMapping,
}

fn default_seed() -> u64 {
    42
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// EMB1 store covering every essay id.
    pub embeddings: Option<PathBuf>,
    pub nrc_eil: Option<PathBuf>,
    pub nrc_vad: Option<PathBuf>,
    /// Directory of `<category>.txt` word lists.
    pub empath_dir: Option<PathBuf>,
    pub contractions: Option<PathBuf>,
    pub acronyms: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingOptions {
    /// Use seeded pseudo-embeddings instead of an EMB1 store.
    pub pseudo: bool,
    pub dim: usize,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        Self {
            pseudo: false,
            dim: empathy_core::embed::ENCODER_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessOptions {
    pub max_len: usize,
    pub pad_token: String,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            max_len: 200,
            pad_token: "<pad>".into(),
        }
    }
}

/// Splits `--a.b value` / `--a.b=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected a --key override, got `{arg}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("override --{key} has no value")))?;
                (key.to_string(), v.clone())
            }
        };
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(Error::Config(format!("bad override key `{key}`")));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Interprets a flag value as a TOML literal (number, bool, array), falling
/// back to a plain string.
fn literal(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_dotted(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), Error> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or(key);
    let mut table = root;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_str_with(
        text: &str,
        overrides: &[(String, String)],
        seed: Option<u64>,
    ) -> Result<Self, Error> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        for (k, v) in overrides {
            set_dotted(&mut table, k, literal(v))?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(
        path: &Path,
        overrides: &[(String, String)],
        seed: Option<u64>,
    ) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_str_with(&text, overrides, seed)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let p = &mut self.paths;
        for slot in [
            &mut p.train,
            &mut p.dev,
            &mut p.test,
            &mut p.embeddings,
            &mut p.nrc_eil,
            &mut p.nrc_vad,
            &mut p.empath_dir,
            &mut p.contractions,
            &mut p.acronyms,
        ]
        .into_iter()
        .flatten()
        {
            fix(slot);
        }
    }

    /// Errors unless `path` is configured and exists.
    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, Error> {
        let p = path
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`paths.{key}` is not set")))?;
        if !p.exists() {
            return Err(Error::Config(format!(
                "`paths.{key}` does not exist: {}",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Checks that every configured input exists, plus the lexicons the
    /// target needs.
    pub fn check_inputs(&self) -> Result<(), Error> {
        let p = &self.paths;
        let optional = [
            (&p.test, "test"),
            (&p.embeddings, "embeddings"),
            (&p.contractions, "contractions"),
            (&p.acronyms, "acronyms"),
        ];
        for (path, key) in optional {
            if path.is_some() {
                self.require(path, key)?;
            }
        }
        if self.target == Target::Distress {
            self.require(&p.nrc_eil, "nrc_eil")?;
            self.require(&p.nrc_vad, "nrc_vad")?;
            self.require(&p.empath_dir, "empath_dir")?;
        }
        if p.embeddings.is_none() && !self.embeddings.pseudo {
            return Err(Error::Config(
                "set `paths.embeddings` or `embeddings.pseudo = true`".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "target = \"empathy\"\n[train]\nepochs = 7\n";

    fn args(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_both_spellings() {
        let o = parse_overrides(&args(&["--train.epochs", "3", "--model.dropout=0.1"])).unwrap();
        let cfg = RunConfig::from_str_with(BASE, &o, Some(9)).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model.dropout, 0.1);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn string_and_nested_overrides() {
        let o = parse_overrides(&args(&[
            "--target",
            "distress",
            "--columns.essay",
            "text",
            "--paths.train=data/train.tsv",
        ]))
        .unwrap();
        let cfg = RunConfig::from_str_with(BASE, &o, None).unwrap();
        assert_eq!(cfg.target, Target::Distress);
        assert_eq!(cfg.columns.essay, "text");
        assert_eq!(
            cfg.paths.train.as_deref(),
            Some(Path::new("data/train.tsv"))
        );
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        assert!(parse_overrides(&args(&["--train.epochs"])).is_err());
        assert!(parse_overrides(&args(&["epochs", "3"])).is_err());
        let unknown = parse_overrides(&args(&["--train.epoch", "3"])).unwrap();
        assert!(RunConfig::from_str_with(BASE, &unknown, None).is_err());
        assert!(RunConfig::from_str_with("target = \"joy\"", &[], None).is_err());
        let bad = parse_overrides(&args(&["--train.plateau_patience", "30"])).unwrap();
        assert!(RunConfig::from_str_with(BASE, &bad, None).is_err());
    }
}
