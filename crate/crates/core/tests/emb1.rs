//! EMB1 as written by an external exporter: bytes assembled by hand here,
//! then read back through the library.

use empathy_core::embed::{read_store, write_store, EmbeddingSource, EmbeddingStore};
use empathy_core::Error;

fn exporter_bytes(ids: &[&str], dim: u32, rows: &[Vec<f32>]) -> Vec<u8> {
    let json = serde_json::to_vec(ids).unwrap();
    let mut b = b"EMB1".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend((ids.len() as u32).to_le_bytes());
    b.extend(dim.to_le_bytes());
    b.extend((json.len() as u32).to_le_bytes());
    b.extend(json);
    for r in rows {
        for x in r {
            b.extend(x.to_le_bytes());
        }
    }
    b
}

#[test]
fn reads_exporter_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.emb1");
    let rows = vec![vec![0.5, -1.25, 3.0], vec![1e-7, 0.0, -0.0]];
    std::fs::write(&path, exporter_bytes(&["r1", "ünï"], 3, &rows)).unwrap();
    let store = read_store(&path).unwrap();
    assert_eq!(store.dim(), 3);
    assert_eq!(store.ids(), ["r1", "ünï"]);
    assert_eq!(store.get("r1").unwrap(), &rows[0][..]);
    assert_eq!(store.get("ünï").unwrap(), &rows[1][..]);
    assert!(store.get("r3").is_none());
}

#[test]
fn written_store_matches_exporter_layout() {
    let mut store = EmbeddingStore::new(2, EmbeddingSource::Encoder);
    store.insert("a", vec![1.0, 2.0]).unwrap();
    store.insert("b", vec![-3.5, 0.25]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.emb1");
    write_store(&store, &path).unwrap();
    let expected = exporter_bytes(&["a", "b"], 2, &[vec![1.0, 2.0], vec![-3.5, 0.25]]);
    assert_eq!(std::fs::read(&path).unwrap(), expected);
}

#[test]
fn malformed_files_are_format_errors() {
    let good = exporter_bytes(&["x"], 2, &[vec![1.0, 2.0]]);
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("truncated", good[..good.len() - 1].to_vec()),
        ("trailing", [good.clone(), vec![0]].concat()),
        ("magic", [b"EMB2".to_vec(), good[4..].to_vec()].concat()),
        ("count", exporter_bytes(&["x", "y"], 2, &[vec![1.0, 2.0]])),
        (
            "duplicate",
            exporter_bytes(&["x", "x"], 1, &[vec![1.0], vec![2.0]]),
        ),
    ];
    for (name, bytes) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        let err = read_store(&path).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{name}: {err}");
    }
    let missing = read_store(dir.path().join("absent")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}
