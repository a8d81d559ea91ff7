//! EMTK1 checkpoints.
//!
//! ```text
//! "EMTK" | u32 version (=1) | u32 JSON byte length | JSON header
//! all tensors as f32 little-endian, in manifest order
//! ```
//!
//! The JSON header carries the model config, the fitted feature state
//! (vocabularies, emotion classes, feature spec, standardizers) and the
//! tensor manifest (`name`, `shape`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::Cursor;
use crate::error::{Error, Result};
use crate::features::FittedFeatures;
use crate::model::{ModelConfig, MtlNetwork, Target};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EMTK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    features: FittedFeatures,
    tensors: Vec<ManifestEntry>,
}

/// A trained network plus everything needed to featurize new data for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: MtlNetwork,
    pub features: FittedFeatures,
}

impl Checkpoint {
    pub fn new(network: MtlNetwork, features: FittedFeatures) -> Result<Self> {
        if network.config().mode != features.target {
            return Err(Error::ModeMismatch {
                found: network.config().mode.to_string(),
                requested: features.target.to_string(),
            });
        }
        if network.vocab_sizes() != features.vocabs.sizes() {
            return Err(Error::shape(
                "checkpoint vocabularies",
                format!("{:?}", network.vocab_sizes()),
                format!("{:?}", features.vocabs.sizes()),
            ));
        }
        if network.config().text_dim != features.text_dim {
            return Err(Error::shape(
                "checkpoint text dimension",
                network.config().text_dim,
                features.text_dim,
            ));
        }
        Ok(Self { network, features })
    }

    pub fn target(&self) -> Target {
        self.network.config().mode
    }

    /// Errors unless this checkpoint was trained for `requested`.
    pub fn expect_target(&self, requested: Target) -> Result<()> {
        if self.target() != requested {
            return Err(Error::ModeMismatch {
                found: self.target().to_string(),
                requested: requested.to_string(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let tensors = self.network.tensors();
        let header = Header {
            config: self.network.config().clone(),
            features: self.features.clone(),
            tensors: tensors
                .iter()
                .map(|(name, t)| ManifestEntry {
                    name: name.clone(),
                    shape: [t.rows(), t.cols()],
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let json_len = u32::try_from(json.len())
            .map_err(|_| Error::Domain("checkpoint header exceeds u32".into()))?;
        let mut buf = Vec::with_capacity(12 + json.len() + 4 * self.network.param_count());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&json_len.to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in tensors {
            for &v in t.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected EMTK"));
        }
        let version = cur.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                4,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let json_len = cur.u32("header length")? as usize;
        let json_offset = cur.pos as u64;
        let header: Header = serde_json::from_slice(cur.take(json_len, "header")?)
            .map_err(|e| Error::format(json_offset, format!("bad checkpoint header: {e}")))?;

        let mut network = MtlNetwork::build_with_sizes(
            &header.config,
            header.features.vocabs.sizes(),
            &mut rand::rngs::mock::StepRng::new(0, 0),
        )?;
        let expected: Vec<ManifestEntry> = network
            .tensors()
            .iter()
            .map(|(name, t)| ManifestEntry {
                name: name.clone(),
                shape: [t.rows(), t.cols()],
            })
            .collect();
        if expected.len() != header.tensors.len() {
            return Err(Error::shape(
                "checkpoint tensor count",
                expected.len(),
                header.tensors.len(),
            ));
        }
        for (e, got) in expected.iter().zip(&header.tensors) {
            if e != got {
                return Err(Error::shape(
                    format!("checkpoint tensor `{}`", e.name),
                    format!("{} {:?}", e.name, e.shape),
                    format!("{} {:?}", got.name, got.shape),
                ));
            }
        }
        for t in network.tensors_mut() {
            let offset = cur.pos as u64;
            let raw = cur.take(4 * t.len(), "tensor data")?;
            for (v, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !x.is_finite() {
                    return Err(Error::format(offset, "non-finite tensor value"));
                }
                *v = f64::from(x);
            }
        }
        if cur.pos != bytes.len() {
            return Err(Error::format(
                cur.pos as u64,
                format!("{} trailing bytes", bytes.len() - cur.pos),
            ));
        }
        let mut features = header.features;
        features.vocabs.reindex();
        Checkpoint::new(network, features)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.encode()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes)
}
