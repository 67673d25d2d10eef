use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;
use stan_core::container::save_corpus;
use stan_core::corpus::Corpus;
use stan_core::{FeatureSequence, LabelSequence, Sample};

fn stan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stan")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = stan(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 8] = [
    "--set",
    "corpus.train_samples=24",
    "--set",
    "corpus.test_samples=6",
    "--set",
    "train.max_epochs=2",
    "--set",
    "train.patience=1",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            files.extend(walk(&path));
        } else {
            files.push(path);
        }
    }
    files
}

#[test]
fn pipeline_runs_and_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    ok(&with_small(&["gen-data", "--out", p(&data), "--seed", "4"]));
    assert!(data.join("manifest.json").exists());
    assert!(data.join("resolved_config.toml").exists());
    let before = tree_bytes(&data);

    ok(&with_small(&["train", "--data", p(&data), "--out", p(&model), "--seed", "4"]));
    let log = fs::read_to_string(model.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let ckpt = model.join("model.ckpt");
    let ckpt_before = fs::read(&ckpt).unwrap();

    let e = dir.path().join("eval");
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&e), "--condition", "noisy"]);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(e.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["ser"].is_number());

    let t = dir.path().join("trace");
    ok(&[
        "trace", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&t), "--condition", "profile", "--profile",
        "sweep:0:3", "--profile", "sweep:3:0", "--limit", "2",
    ]);
    let csvs = walk(&t).into_iter().filter(|f| f.extension().is_some_and(|x| x == "csv")).count();
    assert_eq!(csvs, 2);
    let first = fs::read_to_string(walk(&t).into_iter().find(|f| f.extension().is_some_and(|x| x == "csv")).unwrap()).unwrap();
    assert!(first.starts_with("frame,sigma_1,sigma_2,attn_1,attn_2\n"));

    let g = dir.path().join("graft");
    ok(&["graft", "--front", p(&ckpt), "--body", p(&ckpt), "--out", p(&g)]);
    assert!(g.join("model.ckpt").exists());

    assert_eq!(tree_bytes(&data), before);
    assert_eq!(fs::read(&ckpt).unwrap(), ckpt_before);
}

#[test]
fn clean_and_zero_sigma_metrics_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m");
    ok(&with_small(&["train", "--out", p(&model), "--seed", "2"]));
    let ckpt = model.join("model.ckpt");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&with_small(&["eval", "--checkpoint", p(&ckpt), "--out", p(&a), "--seed", "2", "--condition", "clean"]));
    ok(&with_small(&[
        "eval", "--checkpoint", p(&ckpt), "--out", p(&b), "--seed", "2", "--condition", "noisy", "--sigma-max", "0",
    ]));
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
}

#[test]
fn count_params_lists_the_digit_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["count-params", "--out", p(dir.path())]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["Single Audio", "Double Audio STAN", "Triple Audio STAN", "Double Audio Concat", "Triple Audio Concat"] {
        assert!(text.contains(name), "{text}");
    }
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&fs::read(dir.path().join("params.json")).unwrap()).unwrap();
    let digits: Vec<_> = rows.iter().filter(|r| r["table"] == "digits").collect();
    assert_eq!(digits.len(), 5);
    for r in digits {
        assert!(r["diff_percent"].as_f64().unwrap().abs() < 1.0, "{r}");
    }
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).display().to_string();

    assert_eq!(stan(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(stan(&["train", "--out", &out("x"), "--bogus-flag"]).status.code(), Some(2));

    assert_eq!(stan(&["train", "--out", &out("c"), "--set", "train.patience=500"]).status.code(), Some(3));
    assert_eq!(stan(&["gen-data", "--out", &out("c2"), "--set", "corpus.colour=1"]).status.code(), Some(3));

    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(stan(&["eval", "--checkpoint", p(&junk), "--out", &out("f")]).status.code(), Some(4));

    // Every sample needs more frames than it has.
    let data = dir.path().join("infeasible");
    let sample = |id| Sample {
        id,
        features: FeatureSequence::new(Array2::zeros((2, 3))),
        labels: LabelSequence(vec![1, 1]),
    };
    let corpus = Corpus {
        feature_dim: 3,
        vocabulary_size: 2,
        train: (0..4).map(sample).collect(),
        test: vec![sample(4)],
        normalization: None,
    };
    save_corpus(&data, &corpus).unwrap();
    let res = stan(&["train", "--out", &out("i"), "--data", p(&data)]);
    assert_eq!(res.status.code(), Some(5), "{}", String::from_utf8_lossy(&res.stderr));

    let res = stan(&with_small(&["train", "--out", &out("n"), "--set", "train.optimizer.learning_rate=1e300"]));
    assert_eq!(res.status.code(), Some(6), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn graft_dimension_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&with_small(&["train", "--out", p(&a)]));
    ok(&with_small(&[
        "train", "--out", p(&b), "--set", "corpus.feature_dim=12", "--set", "model.architecture=single",
    ]));
    let res = stan(&["graft", "--front", p(&a.join("model.ckpt")), "--body", p(&b.join("model.ckpt")), "--out", p(&dir.path().join("g"))]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("39") && err.contains("12"), "{err}");
}

#[test]
fn snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["noise-preview", "--out", p(&first), "--seed", "9", "--set", "preview.length=50"]);
    let second = dir.path().join("second");
    ok(&["noise-preview", "--out", p(&second), "--config", p(&first.join("resolved_config.toml"))]);
    assert_eq!(tree_bytes(&first), tree_bytes(&second));
    let csv = fs::read_to_string(first.join("schedule.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
}
