use std::collections::BTreeMap;

use bdff::dataset::{generate_dataset, load_split, sample_patch, DatasetConfig, Split};
use bdff::eval::{compare_models, evaluate_model};
use bdff::infer::load_model;
use bdff::networks::{init_model, NetKind, WidthConfig};
use bdff::nn::adam::{AdamConfig, AdamState};
use bdff::nn::Checkpoint;
use bdff::train::{as_refs, batch_inputs, patch_target, train_step};

fn small_dataset(dir: &std::path::Path, train: usize, test: usize) -> bdff::dataset::Manifest {
    let cfg = DatasetConfig {
        seed: 21,
        train_count: train,
        test_count: test,
        width: 64,
        height: 64,
        ..Default::default()
    };
    generate_dataset(&cfg, dir).unwrap()
}

#[test]
fn one_small_step_lowers_the_batch_objective() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 3, 0);
    let samples = load_split(&manifest, Split::Train).unwrap();
    let mut rng = bdff::rng::stream(5, 1);
    let mut decreases = 0;
    for i in 0..20 {
        let mut model = init_model(NetKind::Edof, &WidthConfig::default(), 100 + i).unwrap();
        let patches: Vec<_> = (0..2)
            .map(|k| sample_patch(&samples[(i as usize + k) % samples.len()], patch_target(NetKind::Edof), 32, &mut rng).unwrap())
            .collect();
        let (inputs, y) = batch_inputs(NetKind::Edof, &patches).unwrap();
        let mut step = AdamState::new(AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        });
        let mut probe = AdamState::new(AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        });
        let before = train_step(&mut model, &mut step, &as_refs(&inputs), &y, 0).unwrap().loss;
        let after = train_step(&mut model, &mut probe, &as_refs(&inputs), &y, 1).unwrap().loss;
        if after < before {
            decreases += 1;
        }
    }
    assert!(decreases >= 18, "{decreases} of 20 steps decreased the objective");
}

#[test]
fn identical_checkpoints_score_identically() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(&dir.path().join("data"), 0, 2);
    let test = load_split(&manifest, Split::Test).unwrap();
    let width = WidthConfig::default();
    let mut model = init_model(NetKind::Focus, &width, 8).unwrap();
    // one Train-mode pass populates the batch-norm running statistics
    let patch = sample_patch(&test[0], patch_target(NetKind::Focus), 32, &mut bdff::rng::stream(8, 0)).unwrap();
    let (inputs, y) = batch_inputs(NetKind::Focus, &[patch]).unwrap();
    let mut frozen = AdamState::new(AdamConfig {
        lr: 0.0,
        ..AdamConfig::default()
    });
    train_step(&mut model, &mut frozen, &as_refs(&inputs), &y, 0).unwrap();
    let path = dir.path().join("focus.ckpt");
    Checkpoint::from_model(&model, None).write(&path).unwrap();

    let a = load_model(NetKind::Focus, &width, &path).unwrap();
    let b = load_model(NetKind::Focus, &width, &path).unwrap();
    assert_eq!(
        evaluate_model(NetKind::Focus, &a, &test).unwrap(),
        evaluate_model(NetKind::Focus, &b, &test).unwrap()
    );
    let report = |m| {
        let models = BTreeMap::from([(NetKind::Focus, m)]);
        compare_models(&models, &test, "h", 1).unwrap().rows[0].mae
    };
    assert_eq!(report(a), report(b));
}

#[test]
fn comparing_nothing_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_dataset(dir.path(), 0, 1);
    let test = load_split(&manifest, Split::Test).unwrap();
    let models = BTreeMap::from([(NetKind::Edof, init_model(NetKind::Edof, &WidthConfig::default(), 1).unwrap())]);
    assert!(compare_models(&models, &test, "h", 1).is_err());
    assert!(compare_models(&BTreeMap::new(), &[], "h", 1).is_err());
}
