use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_dualchain");

const SMALL: &[&str] = &[
    "--set",
    "k=8",
    "--set",
    "n_k=2",
    "--set",
    "d_g=8",
    "--set",
    "n_b=30",
    "--set",
    "eval_every=2",
];

const TEXT: &[&str] = &[
    "--set",
    "model=cdcplus",
    "--set",
    "d_a=4",
    "--set",
    "aspects=3",
    "--set",
    "n_1=5",
    "--set",
    "desc_len=8",
];

/// Writes a 30-entity graph with descriptions for 34 entities; e30..e33
/// appear only in `zs.txt`.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rels = ["likes", "near", "owns"];
    let mut kg = Vec::new();
    while kg.len() < 150 {
        let t = format!(
            "e{}\t{}\te{}\n",
            rng.random_range(0..30),
            rels[rng.random_range(0..3)],
            rng.random_range(0..30)
        );
        if !kg.contains(&t) {
            kg.push(t);
        }
    }
    let w = |name: &str, body: String| fs::write(dir.path().join(name), body).unwrap();
    w("train.txt", kg[..120].concat());
    w("valid.txt", kg[120..135].concat());
    w("test.txt", kg[135..].concat());
    w(
        "zs.txt",
        "e30\tlikes\te1\ne2\tnear\te31\ne32\tlikes\te33\ne4\tnear\te5\n".into(),
    );
    let words = ["red", "blue", "cat", "dog", "city", "river", "old", "new"];
    let mut vecs = String::new();
    for word in words {
        vecs.push_str(word);
        for _ in 0..6 {
            vecs.push_str(&format!(" {:.3}", rng.random_range(-1.0..1.0)));
        }
        vecs.push('\n');
    }
    w("words.txt", vecs);
    let descs: String = (0..34)
        .map(|i| {
            let text: Vec<&str> = (0..8).map(|_| words[rng.random_range(0..words.len())]).collect();
            format!("e{i}\t{}\n", text.join(" "))
        })
        .collect();
    w("desc.txt", descs);
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn train(dir: &Path, extra: &[&str], out: &str) -> PathBuf {
    let mut args = vec![
        "train",
        "--train",
        "train.txt",
        "--valid",
        "valid.txt",
        "--test",
        "test.txt",
        "--epochs",
        "4",
        "--out",
        out,
    ];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(dir, &args);
    dir.join(out)
}

#[test]
fn train_eval_predict_export() {
    let tmp = fixture();
    let dir = tmp.path();
    train(dir, &[], "m.ckpt");

    let history = fs::read_to_string(dir.join("m.ckpt.history.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1]["valid"]["hits10"].is_number());
    assert!(lines[0].get("valid").is_none());

    let report: serde_json::Value = serde_json::from_str(&ok(
        dir,
        &[
            "eval",
            "--checkpoint",
            "m.ckpt",
            "--train",
            "train.txt",
            "--valid",
            "valid.txt",
            "--test",
            "test.txt",
        ],
    ))
    .unwrap();
    assert_eq!(report["head"]["n"], 15);
    let h10 = report["averaged"]["hits10"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&h10));

    let pred = ok(
        dir,
        &[
            "predict",
            "--checkpoint",
            "m.ckpt",
            "--query",
            "e1 likes ?",
            "--top-k",
            "3",
        ],
    );
    let rows: Vec<(&str, f64)> = pred
        .lines()
        .map(|l| {
            let (e, s) = l.split_once('\t').unwrap();
            (e, s.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1));

    ok(
        dir,
        &["export-embeddings", "--checkpoint", "m.ckpt", "--out", "emb.tsv"],
    );
    let tsv = fs::read_to_string(dir.join("emb.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert!(lines.next().unwrap().starts_with("# k=8"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 30 + 3);
    assert!(body.iter().all(|l| l.split('\t').count() == 9));
}

#[test]
fn seeded_training_is_reproducible() {
    let tmp = fixture();
    let dir = tmp.path();
    train(dir, &["--seed", "7"], "a.ckpt");
    train(dir, &["--seed", "7"], "b.ckpt");
    assert_eq!(
        fs::read(dir.join("a.ckpt")).unwrap(),
        fs::read(dir.join("b.ckpt")).unwrap()
    );
}

#[test]
fn toml_config_and_overrides_layer() {
    let tmp = fixture();
    let dir = tmp.path();
    fs::write(
        dir.join("run.toml"),
        "k = 6\nn_k = 2\nd_g = 8\nn_b = 40\nepochs = 2\neval_every = 1\ntrain_path = \"train.txt\"\nvalid_path = \"valid.txt\"\n",
    )
    .unwrap();
    ok(
        dir,
        &["train", "--config", "run.toml", "--set", "k=9", "--out", "c.ckpt"],
    );
    ok(dir, &["export-embeddings", "--checkpoint", "c.ckpt", "--out", "e.tsv"]);
    assert!(fs::read_to_string(dir.join("e.tsv")).unwrap().starts_with("# k=9"));
}

#[test]
fn description_model_and_zero_shot() {
    let tmp = fixture();
    let dir = tmp.path();
    let mut extra = vec!["--descriptions", "desc.txt", "--word-vectors", "words.txt"];
    extra.extend_from_slice(TEXT);
    train(dir, &extra, "p.ckpt");

    let base = [
        "--checkpoint",
        "p.ckpt",
        "--train",
        "train.txt",
        "--valid",
        "valid.txt",
        "--descriptions",
        "desc.txt",
    ];
    let mut args = vec!["eval", "--test", "test.txt"];
    args.extend_from_slice(&base);
    let report: serde_json::Value = serde_json::from_str(&ok(dir, &args)).unwrap();
    assert_eq!(report["tail"]["n"], 15);

    let mut args = vec!["eval", "--test", "zs.txt", "--zero-shot", "--report", "zs.json"];
    args.extend_from_slice(&base);
    ok(dir, &args);
    let zs: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("zs.json")).unwrap()).unwrap();
    let sizes: Vec<u64> = zs["parts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["size"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes, vec![1, 1, 1]);
    assert_eq!(zs["excluded"], 1);
    assert!(zs["weighted_hits10"].is_number());

    // Unseen entities are rejected by the ordinary evaluation.
    let mut args = vec!["eval", "--test", "zs.txt"];
    args.extend_from_slice(&base);
    let out = run(dir, &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[unknown-name]"));

    let out = run(dir, &["predict", "--checkpoint", "p.ckpt", "--query", "? near e3"]);
    assert_eq!(out.status.code(), Some(2));
    ok(
        dir,
        &[
            "predict",
            "--checkpoint",
            "p.ckpt",
            "--query",
            "? near e3",
            "--descriptions",
            "desc.txt",
        ],
    );
}

#[test]
fn errors_are_one_line_with_exit_codes() {
    let tmp = fixture();
    let dir = tmp.path();
    let cases: &[(&[&str], &str)] = &[
        (&["train", "--train", "train.txt", "--set", "k=abc"], "error[config]"),
        (&["train", "--train", "train.txt", "--set", "bogus=1"], "error[config]"),
        (&["train", "--train", "missing.txt"], "error[io]"),
        (&["train", "--preset", "nope"], "error[config]"),
        (
            &["eval", "--checkpoint", "missing.ckpt", "--test", "test.txt"],
            "error[io]",
        ),
        (&["predict"], "error[usage]"),
    ];
    for (args, prefix) in cases {
        let out = run(dir, args);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {err}");
        assert!(err.starts_with(prefix), "{args:?}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
    }

    fs::write(dir.join("bad.ckpt"), b"not a checkpoint").unwrap();
    let out = run(
        dir,
        &["export-embeddings", "--checkpoint", "bad.ckpt", "--out", "x.tsv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[format]"));

    let m = train(dir, &[], "m.ckpt");
    let out = run(
        dir,
        &["predict", "--checkpoint", m.to_str().unwrap(), "--query", "e1 hates ?"],
    );
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[unknown-name]"));
}

#[test]
fn non_finite_training_exits_three() {
    let tmp = fixture();
    let dir = tmp.path();
    let out = run(
        dir,
        &[
            "train",
            "--train",
            "train.txt",
            "--epochs",
            "3",
            "--set",
            "lr0=1e30",
            "--set",
            "n_b=30",
            "--set",
            "k=8",
            "--set",
            "n_k=2",
            "--set",
            "d_g=8",
            "--set",
            "norm_projection=false",
            "--set",
            "optimizer=sgd",
            "--out",
            "x.ckpt",
        ],
    );
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(3), "{err}");
    assert!(err.contains("error[non-finite-loss]"), "{err}");
}
