use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn empathy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_empathy"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn config(dir: &Path, target: &str, extra: &str) -> String {
    let f = fixtures();
    let p = |n: &str| f.join(n).display().to_string();
    let text = format!(
        "target = \"{target}\"\n{extra}\n[paths]\ntrain = \"{}\"\ndev = \"{}\"\ntest = \"{}\"\n\
nrc_eil = \"{}\"\nnrc_vad = \"{}\"\nempath_dir = \"{}\"\n[embeddings]\npseudo = true\n",
        p("train.tsv"),
        p("dev.tsv"),
        p("test.tsv"),
        p("nrc_eil.tsv"),
        p("nrc_vad.tsv"),
        p("empath"),
    );
    let path = dir.join(format!("{target}.toml"));
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", stderr(&out));
    out
}

#[test]
fn full_run_and_mode_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "empathy", "");
    ok(empathy(&["featurize", "--config", &cfg]));
    ok(empathy(&["train", "--config", &cfg, "--train.epochs=30"]));
    let out_dir = dir.path().join("out");
    let history = std::fs::read_to_string(out_dir.join("history.csv")).unwrap();
    let rows = history.lines().count() - 1;
    assert!((1..=30).contains(&rows), "{rows} history rows");

    ok(empathy(&["predict", "--config", &cfg]));
    let preds = std::fs::read_to_string(out_dir.join("predictions.tsv")).unwrap();
    assert_eq!(
        preds.lines().next().unwrap(),
        "id\tscore\tbin_prob\temotion"
    );
    assert_eq!(preds.lines().count(), 13);

    let wrong = empathy(&["predict", "--config", &cfg, "--target", "distress"]);
    assert_eq!(code(&wrong), 2, "{}", stderr(&wrong));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "empathy", "");
    for args in [
        vec!["train", "--config", cfg.as_str(), "--train.epoch", "3"],
        vec!["train", "--config", cfg.as_str(), "--train.epochs"],
        vec!["featurize", "--config", "/nonexistent/run.toml"],
        vec!["frobnicate"],
    ] {
        let out = empathy(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
    }
    let bad = config(dir.path(), "distress", "[train]\nplateau_patience = 40");
    assert_eq!(code(&empathy(&["featurize", "--config", &bad])), 2);
}

#[test]
fn missing_embedding_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("partial.emb1");
    // one id, not covering the corpus
    let json = br#"["nobody"]"#;
    let mut b = b"EMB1".to_vec();
    for n in [1u32, 1, 768, json.len() as u32] {
        b.extend(n.to_le_bytes());
    }
    b.extend(json);
    b.extend(vec![0u8; 4 * 768]);
    std::fs::write(&store, b).unwrap();
    let cfg = config(dir.path(), "empathy", "");
    let text = std::fs::read_to_string(&cfg)
        .unwrap()
        .replace("pseudo = true", "pseudo = false")
        .replace(
            "[paths]\n",
            &format!("[paths]\nembeddings = \"{}\"\n", store.display()),
        );
    std::fs::write(&cfg, text).unwrap();
    let out = empathy(&["featurize", "--config", &cfg]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("tr_000"), "{}", stderr(&out));
}

fn gold_predictions(gold: &Path, column: usize, keep: usize) -> String {
    let text = std::fs::read_to_string(gold).unwrap();
    let mut out = String::from("id\tscore\tbin_prob\temotion\n");
    for line in text.lines().skip(1).take(keep) {
        let f: Vec<&str> = line.split('\t').collect();
        out.push_str(&format!("{}\t{}\t0.5\t{}\n", f[0], f[column], f[18]));
    }
    out
}

#[test]
fn evaluate_identical_predictions_gives_r_one() {
    let dir = tempfile::tempdir().unwrap();
    let gold = fixtures().join("dev.tsv");
    let e = dir.path().join("e.tsv");
    let d = dir.path().join("d.tsv");
    std::fs::write(&e, gold_predictions(&gold, 16, usize::MAX)).unwrap();
    std::fs::write(&d, gold_predictions(&gold, 17, usize::MAX)).unwrap();
    let report = dir.path().join("r.json");
    let out = ok(empathy(&[
        "evaluate",
        "--empathy",
        e.to_str().unwrap(),
        "--distress",
        d.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]));
    assert!(!out.stdout.is_empty());
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for k in ["r_empathy", "r_distress"] {
        let r = json["correlation"][k].as_f64().unwrap();
        assert!((r - 1.0).abs() < 1e-12, "{k} = {r}");
    }
}

#[test]
fn evaluate_on_two_rows_fails() {
    let dir = tempfile::tempdir().unwrap();
    let gold_src = std::fs::read_to_string(fixtures().join("dev.tsv")).unwrap();
    let gold = dir.path().join("gold.tsv");
    std::fs::write(
        &gold,
        gold_src.lines().take(3).collect::<Vec<_>>().join("\n") + "\n",
    )
    .unwrap();
    let e = dir.path().join("e.tsv");
    std::fs::write(&e, gold_predictions(&gold, 16, 2)).unwrap();
    let out = empathy(&[
        "evaluate",
        "--empathy",
        e.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
