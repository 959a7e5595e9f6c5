use ducknet::data::synth::synth_dataset;
use ducknet::net::{DuckNet, NetSpec, TrainConfig, Trainer};
use ducknet::Error;

fn config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 3,
        epochs,
        input_size: (16, 16),
        seed,
        ..TrainConfig::default()
    }
}

fn spec() -> NetSpec {
    NetSpec::new(2, (16, 16)).with_depth(2)
}

#[test]
fn empty_training_set_is_a_data_error() {
    let mut net = DuckNet::<f32>::new(spec(), 0).unwrap();
    let err = Trainer::new(&mut net, config(1, 0)).unwrap().fit(&[], &[]).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut net = DuckNet::<f32>::new(spec(), 0).unwrap();
    for cfg in [
        TrainConfig {
            epochs: 0,
            ..config(1, 0)
        },
        TrainConfig {
            batch_size: 0,
            ..config(1, 0)
        },
        TrainConfig {
            lr: 0.0,
            ..config(1, 0)
        },
        TrainConfig {
            lr: f64::NAN,
            ..config(1, 0)
        },
    ] {
        assert!(matches!(Trainer::new(&mut net, cfg).err(), Some(Error::Config(_))));
    }
}

#[test]
fn batch_larger_than_dataset_and_ragged_last_batch() {
    let samples = synth_dataset(2, 5, (16, 16));
    let mut net = DuckNet::<f32>::new(spec(), 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 8,
        ..config(2, 0)
    };
    let out = Trainer::new(&mut net, cfg).unwrap().fit(&samples, &[]).unwrap();
    assert_eq!(out.history.epochs.len(), 2);
    // batch 3 over 5 samples leaves a batch of 2
    let mut net = DuckNet::<f32>::new(spec(), 0).unwrap();
    let out = Trainer::new(&mut net, config(1, 0))
        .unwrap()
        .fit(&samples, &[])
        .unwrap();
    assert!(out.history.epochs[0].train_loss.is_finite());
}

#[test]
fn training_is_reproducible_and_best_tracks_history() {
    let samples = synth_dataset(3, 6, (16, 16));
    let (train, val) = samples.split_at(4);
    let run = || {
        let mut net = DuckNet::<f32>::new(spec(), 9).unwrap();
        Trainer::new(&mut net, config(3, 9)).unwrap().fit(train, val).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.to_text(), b.history.to_text());
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());
    assert_eq!(a.last.to_bytes(), b.last.to_bytes());
    let best = a
        .history
        .epochs
        .iter()
        .fold(f64::NEG_INFINITY, |m, r| m.max(r.val_dice));
    assert_eq!(a.best_val_dice, best);
    assert_eq!(a.history.epochs[a.best_epoch - 1].val_dice, best);
    assert!(a.last.optimizer_entries().count() > 0);
}

#[test]
fn different_seeds_give_different_runs() {
    let samples = synth_dataset(3, 4, (16, 16));
    let run = |seed| {
        let mut net = DuckNet::<f32>::new(spec(), seed).unwrap();
        Trainer::new(&mut net, config(1, seed))
            .unwrap()
            .fit(&samples, &[])
            .unwrap()
    };
    assert_ne!(run(1).history.to_text(), run(2).history.to_text());
}

#[test]
fn fitting_a_tiny_set_lowers_the_loss() {
    let samples = synth_dataset(4, 4, (16, 16));
    let mut net = DuckNet::<f32>::new(spec(), 0).unwrap();
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 4,
        augment: false,
        ..config(30, 0)
    };
    let out = Trainer::new(&mut net, cfg).unwrap().fit(&samples, &[]).unwrap();
    let first = out.history.epochs[0].train_loss;
    let last = out.history.epochs.last().unwrap().train_loss;
    assert!(last < first, "loss {first} -> {last}");
}
