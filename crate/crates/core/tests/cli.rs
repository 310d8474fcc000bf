//! End-to-end runs of the `ots` binary.

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ots::dataio::{write_feature_pairs, FeaturePair, SceneDataset};
use ots::numcore::Matrix;
use ots::ofam::{ofam, FeatureMap, ScoreMap};

fn ots(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ots"))
        .args(args)
        .output()
        .expect("spawn ots")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn random_pairs(n: usize, seed: u64) -> Vec<FeaturePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let f = Matrix::from_fn(8, 25, |_, _| rng.random_range(-1.0..1.0));
            let s = Matrix::from_fn(6, 25, |j, _| if j == 5 { 0.0 } else { rng.random_range(0..4) as f64 });
            FeaturePair {
                features: FeatureMap::new(f).unwrap(),
                scores: ScoreMap::new(s).unwrap(),
                label: i % 3,
            }
        })
        .collect()
}

#[test]
fn analyze_preset_prints_anchor_rows() {
    let out = ots(&["analyze", "--preset", "paper"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for needle in ["180.3", "337.6", "211.0", "70.5", "675.2", "314.6", "GRAM"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
}

#[test]
fn analyze_single_layer_csv() {
    let out = ots(&["analyze", "--oab", "1024:2", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let row = text.lines().find(|l| l.starts_with("\"OAB(")).expect("oab row");
    assert!(row.ends_with(",0.4,70.5"), "{row}");
}

#[test]
fn analyze_rejects_non_integral_width() {
    // 1024 / (2 * 3) is not a whole number of channels.
    assert_eq!(ots(&["analyze", "--oab", "1024:3"]).status.code(), Some(2));
}

#[test]
fn analyze_without_layers_is_usage_error() {
    assert_eq!(ots(&["analyze"]).status.code(), Some(2));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(ots(&["analyze", "--bogus"]).status.code(), Some(2));
}

#[test]
fn ofam_command_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.otsf");
    let output = dir.path().join("features.otsf");
    let pairs = random_pairs(10, 3);
    write_feature_pairs(&input, &pairs).unwrap();

    let out = ots(&["ofam", "--input", path_str(&input), "--output", path_str(&output)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("wrote 10 samples"));

    let data = SceneDataset::load(&output).unwrap();
    assert_eq!(data.len(), 10);
    for (i, p) in pairs.iter().enumerate() {
        let want = ofam(&p.features, &p.scores).unwrap();
        let got = data.sample(i);
        assert_eq!(got.matrix().as_slice(), want.matrix().as_slice(), "sample {i}");
        assert_eq!(got.present(), want.present());
        assert!(!got.present()[5]);
        assert_eq!(data.label(i), p.label);
    }
}

#[test]
fn truncated_input_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pairs.otsf");
    write_feature_pairs(&input, &random_pairs(2, 4)).unwrap();
    let bytes = std::fs::read(&input).unwrap();
    std::fs::write(&input, &bytes[..bytes.len() - 7]).unwrap();
    let output = dir.path().join("out.otsf");
    let out = ots(&["ofam", "--input", path_str(&input), "--output", path_str(&output)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset"));
}

#[test]
fn missing_dataset_is_usage_error() {
    let out = ots(&["train", "--data", "/nonexistent/data.otsf", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(ots(&["train", "--epochs", "1"]).status.code(), Some(2));
}

fn small_train(dir: &Path, tag: &str) -> (String, String) {
    let ckpt = dir.join(format!("{tag}.otsf"));
    let report = dir.join(format!("{tag}.csv"));
    let out = ots(&[
        "train",
        "--synthetic",
        "small",
        "--train-samples",
        "90",
        "--eval-samples",
        "30",
        "--epochs",
        "3",
        "--batch-size",
        "16",
        "--c-out",
        "16",
        "--checkpoint",
        path_str(&ckpt),
        "--report",
        path_str(&report),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    (stdout(&out), std::fs::read_to_string(&report).unwrap())
}

#[test]
fn train_is_reproducible_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (text_a, report_a) = small_train(dir.path(), "a");
    let (_, report_b) = small_train(dir.path(), "b");
    assert_eq!(report_a, report_b);
    assert_eq!(report_a.lines().count(), 4);
    assert!(text_a.contains("Overall"));

    let ckpt = dir.path().join("a.otsf");
    let out = ots(&[
        "eval",
        "--checkpoint",
        path_str(&ckpt),
        "--synthetic",
        "small",
        "--train-samples",
        "90",
        "--eval-samples",
        "30",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.starts_with("Class"));
    assert!(table.contains("Mean") && table.contains("Overall"));
    // Same held-out split as training, so the overall line must agree.
    let overall = |t: &str| t.lines().find(|l| l.starts_with("Overall")).map(str::to_owned);
    assert_eq!(overall(&table), overall(&text_a));
}

#[test]
fn gradcheck_passes_and_fails_on_threshold() {
    let out = ots(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("ok"));
    assert_eq!(ots(&["gradcheck", "--threshold", "1e-300"]).status.code(), Some(4));
}
