//! Essay embeddings: mean pooling, the EMB1 binary store, and a seeded
//! pseudo-embedding generator standing in for the frozen encoder offline.
//!
//! EMB1 layout (all integers little-endian):
//!
//! ```text
//! "EMB1" | u32 version (=1) | u32 count | u32 dim
//! u32 byte length | JSON array of `count` id strings
//! count * dim f32 values, rows in id order
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
pub const EMB_VERSION: u32 = 1;
pub const ENCODER_DIM: usize = 768;

/// Elementwise mean of equally sized vectors.
pub fn mean_pool(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Domain("mean_pool of an empty list".into()))?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Domain(format!(
                "mean_pool over ragged vectors ({} vs {dim})",
                v.len()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    Encoder,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    index: HashMap<String, usize>,
    pub source: EmbeddingSource,
}

impl EmbeddingStore {
    pub fn new(dim: usize, source: EmbeddingSource) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
            source,
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::shape(
                format!("embedding `{id}`"),
                self.dim,
                vector.len(),
            ));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "embedding `{id}` has non-finite values"
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Domain(format!("duplicate embedding id `{id}`")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.vectors[i].as_slice())
    }

    /// Vector promoted to working precision.
    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
    }
}

pub fn write_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode_store(store, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn encode_store<W: Write>(store: &EmbeddingStore, out: &mut W) -> Result<()> {
    let ids = serde_json::to_vec(&store.ids)?;
    let u32_of = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::Domain(format!("{what} {n} exceeds u32")))
    };
    let mut buf = Vec::with_capacity(20 + ids.len() + 4 * store.dim * store.len());
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&EMB_VERSION.to_le_bytes());
    buf.extend_from_slice(&u32_of(store.len(), "count")?.to_le_bytes());
    buf.extend_from_slice(&u32_of(store.dim, "dim")?.to_le_bytes());
    buf.extend_from_slice(&u32_of(ids.len(), "id block length")?.to_le_bytes());
    buf.extend_from_slice(&ids);
    for v in &store.vectors {
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.write_all(&buf)
        .map_err(|e| Error::io("<embedding output>", e))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_store(&bytes)
}

pub(crate) struct Cursor<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != EMB_MAGIC {
        return Err(Error::format(0, "bad magic, expected EMB1"));
    }
    let version = cur.u32("version")?;
    if version != EMB_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = cur.u32("count")? as usize;
    let dim = cur.u32("dim")? as usize;
    let id_len = cur.u32("id block length")? as usize;
    let id_offset = cur.pos as u64;
    let ids: Vec<String> = serde_json::from_slice(cur.take(id_len, "id block")?)
        .map_err(|e| Error::format(id_offset, format!("bad id block: {e}")))?;
    if ids.len() != count {
        return Err(Error::format(
            id_offset,
            format!("header count {count} but {} ids", ids.len()),
        ));
    }
    let mut store = EmbeddingStore::new(dim, EmbeddingSource::Encoder);
    for id in ids {
        let row_offset = cur.pos as u64;
        let raw = cur.take(4 * dim, "embedding row")?;
        let vector = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(id, vector).map_err(|e| match e {
            Error::Format { .. } => e,
            other => Error::format(row_offset, other.to_string()),
        })?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            cur.pos as u64,
            format!("{} trailing bytes", bytes.len() - cur.pos),
        ));
    }
    Ok(store)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic stand-in embedding with values in [-1, 1].
pub fn pseudo_embed(text: &str, dim: usize, seed: u64) -> Vec<f32> {
    let key = fnv1a(text.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| rng.gen_range(-1.0f32..=1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(3, EmbeddingSource::Pseudo);
        s.insert("a", vec![0.1, -2.5, 3.0e-7]).unwrap();
        s.insert("b", vec![f32::MAX, f32::MIN_POSITIVE, -0.0])
            .unwrap();
        s.insert("ünï", vec![1.0, 2.0, 3.0]).unwrap();
        s
    }

    fn encoded(store: &EmbeddingStore) -> Vec<u8> {
        let mut buf = Vec::new();
        encode_store(store, &mut buf).unwrap();
        buf
    }

    #[test]
    fn mean_pool_examples() {
        assert_eq!(
            mean_pool(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(),
            vec![1.0, 1.0]
        );
        assert_eq!(mean_pool(&[vec![3.5, -1.0]]).unwrap(), vec![3.5, -1.0]);
        assert_eq!(
            mean_pool(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![4.0, 4.0]]).unwrap(),
            vec![2.0, 2.0]
        );
        assert!(mean_pool(&[]).is_err());
        assert!(mean_pool(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let store = sample_store();
        let back = decode_store(&encoded(&store)).unwrap();
        assert_eq!(back.ids(), store.ids());
        assert_eq!(back.dim(), 3);
        for id in store.ids() {
            let a: Vec<u32> = store.get(id).unwrap().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.get(id).unwrap().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encoded(&sample_store());
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = encoded(&sample_store());
        bytes[0] = b'X';
        assert!(matches!(
            decode_store(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = encoded(&sample_store());
        bytes[4] = 2;
        assert!(matches!(
            decode_store(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn rejects_missing_row() {
        let mut one = EmbeddingStore::new(2, EmbeddingSource::Pseudo);
        one.insert("x", vec![1.0, 2.0]).unwrap();
        let mut bytes = encoded(&one);
        // claim two rows with two ids, but only one row of data
        let ids = br#"["x","y"]"#;
        let mut patched = Vec::new();
        patched.extend_from_slice(&bytes[..8]);
        patched.extend_from_slice(&2u32.to_le_bytes());
        patched.extend_from_slice(&bytes[12..16]);
        patched.extend_from_slice(&(ids.len() as u32).to_le_bytes());
        patched.extend_from_slice(ids);
        patched.extend_from_slice(&bytes[bytes.len() - 8..]);
        match decode_store(&patched) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset as usize, patched.len());
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation, got {other:?}"),
        }
        bytes.truncate(bytes.len() - 1);
        assert!(decode_store(&bytes).is_err());
    }

    #[test]
    fn rejects_count_mismatch() {
        let bytes = encoded(&sample_store());
        let mut patched = bytes.clone();
        patched[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_store(&patched), Err(Error::Format { .. })));
    }

    #[test]
    fn insert_checks() {
        let mut s = EmbeddingStore::new(2, EmbeddingSource::Pseudo);
        assert!(s.insert("a", vec![1.0]).is_err());
        assert!(s.insert("a", vec![f32::NAN, 1.0]).is_err());
        s.insert("a", vec![1.0, 1.0]).unwrap();
        assert!(s.insert("a", vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn pseudo_embedding_properties() {
        let a = pseudo_embed("It is cats", 4, 7);
        assert_eq!(a.len(), 4);
        assert_eq!(a, pseudo_embed("It is cats", 4, 7));
        assert_ne!(a, pseudo_embed("It is cats", 4, 8));
        assert_ne!(a, pseudo_embed("It is dogs", 4, 7));
        let big = pseudo_embed("some essay", 768, 1);
        assert!(big.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    proptest! {
        #[test]
        fn mean_pool_permutation_and_scaling(
            rows in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 1..8),
            c in -4.0f64..4.0,
        ) {
            let pooled = mean_pool(&rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let pooled_rev = mean_pool(&rev).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| c * x).collect()).collect();
            let pooled_scaled = mean_pool(&scaled).unwrap();
            for j in 0..3 {
                prop_assert!((pooled[j] - pooled_rev[j]).abs() < 1e-12);
                prop_assert!((pooled_scaled[j] - c * pooled[j]).abs() < 1e-12);
            }
        }

        #[test]
        fn store_round_trip(vals in proptest::collection::vec(proptest::num::f32::NORMAL, 0..40)) {
            let dim = 4;
            let mut s = EmbeddingStore::new(dim, EmbeddingSource::Encoder);
            for (i, chunk) in vals.chunks_exact(dim).enumerate() {
                s.insert(format!("id{i}"), chunk.to_vec()).unwrap();
            }
            let back = decode_store(&encoded(&s)).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
