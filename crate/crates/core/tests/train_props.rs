//! Training-loop and report properties.

use proptest::prelude::*;

use ranklab::metrics::pairwise_accuracy;
use ranklab::scorer::{Activation, MlpScorer};
use ranklab::train::ablate::Spread;
use ranklab::train::{load_splits, train, train_from, ExperimentConfig};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        n_contents: 10,
        epochs: 3,
        batch_size: 16,
        lr: 1e-2,
        lambda: 0.0,
        ..ExperimentConfig::default()
    }
}

#[test]
fn output_bias_shift_leaves_the_trajectory_unchanged() {
    let cfg = small();
    let (train_set, _) = load_splits(&cfg).unwrap();
    let widths = [train_set.feature_len(), 32, 32, 1];
    let base = MlpScorer::init(&widths, Activation::Tanh, 0).unwrap();
    let mut shifted = base.clone();
    let last = shifted.params_mut().last_mut().unwrap();
    last[0] += 2.5;

    let mos = train_set.mos();
    let trajectory = |model| {
        let mut accs = Vec::new();
        let mut losses = Vec::new();
        let mut m = model;
        for epoch in 1..=cfg.epochs {
            let run = ExperimentConfig { epochs: 1, seed: epoch as u64, ..cfg.clone() };
            let out = train_from(&run, &train_set, m).unwrap();
            m = out.model;
            losses.extend(out.history.steps.iter().map(|s| s.pairwise));
            let preds = m
                .predict_all(train_set.samples.iter().map(|s| s.features.as_slice()))
                .unwrap();
            accs.push(pairwise_accuracy(&mos, &preds).unwrap());
        }
        (accs, losses)
    };
    let (acc_a, loss_a) = trajectory(base);
    let (acc_b, loss_b) = trajectory(shifted);
    assert_eq!(acc_a, acc_b);
    for (a, b) in loss_a.iter().zip(&loss_b) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn same_seed_same_weights() {
    let cfg = small();
    let (train_set, _) = load_splits(&cfg).unwrap();
    let a = train(&cfg, &train_set).unwrap();
    let b = train(&cfg, &train_set).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.history, b.history);
}

proptest! {
    #[test]
    fn median_ignores_seed_order(mut values in prop::collection::vec(-1.0f64..1.0, 1..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let before = Spread::of(&values).unwrap();
        values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(before, Spread::of(&values).unwrap());
    }
}

#[test]
fn default_data_training_pairs_are_separated() {
    // reference architecture and loss on the default data, 30 epochs
    let cfg = ExperimentConfig {
        lr: 1e-2,
        ..ExperimentConfig::default()
    };
    let (train_set, _) = load_splits(&cfg).unwrap();
    let model = train(&cfg, &train_set).unwrap().model;
    let preds = model
        .predict_all(train_set.samples.iter().map(|s| s.features.as_slice()))
        .unwrap();
    let acc = pairwise_accuracy(&train_set.mos(), &preds).unwrap();
    assert!(acc > 0.95, "{acc}");
}
