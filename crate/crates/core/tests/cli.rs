use std::path::Path;
use std::process::{Command, Output};

use bdff::dataset::{Manifest, Split};
use bdff::train::TrainConfig;

fn bdff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bdff"))
        .args(args)
        .args(["--log-level", "warn", "--threads", "1"])
        .output()
        .expect("spawn bdff")
}

fn ok(args: &[&str]) -> Output {
    let out = bdff(args);
    assert!(
        out.status.success(),
        "bdff {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dataset_train_infer_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    ok(&["gen-dataset", "--seed", "3", "--count", "3", "--test-count", "1", "--size", "64", "--out", s(&data)]);
    let manifest = Manifest::load(&data).unwrap();
    let test_id = manifest.test[0].clone();
    assert_eq!(manifest.samples.iter().filter(|e| e.split == Split::Train).count(), 3);
    assert!(data.join("config.json").is_file());

    let cfg = TrainConfig {
        steps_per_epoch: 2,
        validation_samples: 1,
        ..Default::default()
    };
    let cfg_path = dir.path().join("train.json");
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    ok(&["train", "--config", s(&cfg_path), "--net", "focus", "--epochs", "1", "--data", s(&data), "--out", s(&run)]);
    for sub in ["checkpoints/focus.ckpt", "reports/focus_loss.csv", "reports/focus_train.json", "config.json"] {
        assert!(run.join(sub).is_file(), "missing {sub}");
    }
    let curve = std::fs::read_to_string(run.join("reports/focus_loss.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2);

    let pred = dir.path().join("pred");
    ok(&["infer", "--net", "focus", "--run", s(&run), "--data", s(&data), "--sample", &test_id, "--out", s(&pred)]);
    let produced = walk(&pred);
    assert!(produced.iter().any(|f| f.ends_with(".pfm")), "{produced:?}");
    assert!(produced.iter().any(|f| f.ends_with(".png")), "{produced:?}");

    let eval = dir.path().join("eval");
    ok(&["eval", "--nets", "focus", "--data", s(&data), "--run", s(&run), "--timing-runs", "1", "--out", s(&eval)]);
    let files: Vec<String> = walk(&eval);
    assert!(files.iter().any(|f| f.ends_with(".json") && !f.ends_with("config.json")), "{files:?}");
    assert!(files.iter().any(|f| f.ends_with(".csv")), "{files:?}");

    let dff = dir.path().join("dff");
    ok(&["dff-baseline", "--data", s(&data), "--sample", &test_id, "--out", s(&dff)]);
    assert!(walk(&dff).iter().any(|f| f.ends_with(".pfm")));
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = vec![];
    let mut todo = vec![dir.to_path_buf()];
    while let Some(d) = todo.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                todo.push(p);
            } else {
                out.push(p.to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-dataset", "--seed", "4", "--count", "1", "--test-count", "1", "--size", "32", "--out", s(&data)]);
    let out = bdff(&["eval", "--nets", "focus", "--data", s(&data), "--run", s(&dir.path().join("nothing")), "--out", s(&dir.path().join("eval"))]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).trim().is_empty());
}

#[test]
fn usage_errors_exit_with_code_2() {
    let out = bdff(&["train", "--net", "resnet", "--data", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bdff(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen-dataset", "train", "infer", "eval", "refocus", "edof", "dff-baseline", "grad-check"] {
        assert!(text.contains(sub), "{sub}");
    }
}
