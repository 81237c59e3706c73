//! Training loop, early stopping and checkpoint/resume behaviour on a small encoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ssmnet::encoder::ChannelPlan;
use ssmnet::loss::LossConfig;
use ssmnet::optim::{split_corpus, train, TrainConfig, TrainTrack, Trainer};
use ssmnet::ssm::ground_truth_ssm;
use ssmnet::synthgen::{gen_track, random_structure, SynthConfig};
use ssmnet::Error;

const PLAN: ChannelPlan = ChannelPlan { c1: 4, c2: 4, c3: 8 };

fn corpus(n: usize, seed: u64) -> Vec<TrainTrack> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
            let cfg = SynthConfig {
                structure: random_structure(&mut rng),
                beats_per_section: 4,
                noise: 0.2,
                seed: seed * 1000 + i as u64,
                ..SynthConfig::default()
            };
            let t = gen_track(&cfg).unwrap();
            let gt = ground_truth_ssm(&t.annotation, &t.beats).unwrap();
            TrainTrack::new(format!("t{i}"), t.patches().unwrap(), gt).unwrap()
        })
        .collect()
}

fn config() -> TrainConfig {
    TrainConfig {
        channel_plan: PLAN,
        learning_rate: 2e-3,
        batch_tracks: 3,
        max_epochs: 3,
        validation_fraction: 0.2,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn split_is_seeded_disjoint_and_complete() {
    let (train, val) = split_corpus(24, 0.1, 7).unwrap();
    assert_eq!(val.len(), 3);
    assert_eq!(train.len(), 21);
    let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..24).collect::<Vec<_>>());
    assert_eq!(split_corpus(24, 0.1, 7).unwrap(), (train, val));
    assert_ne!(split_corpus(24, 0.1, 8).unwrap().1, split_corpus(24, 0.1, 7).unwrap().1);
    assert!(split_corpus(1, 0.1, 0).is_err());
}

#[test]
fn steps_per_epoch_cover_the_training_tracks() {
    // 12 tracks, 3 held out at 0.2, 9 left in batches of 6 → 2 steps
    let data = corpus(12, 1);
    let cfg = TrainConfig { batch_tracks: 6, max_epochs: 1, ..config() };
    let mut trainer = Trainer::new(cfg, LossConfig::mean()).unwrap();
    let r = trainer.run_epoch(&data).unwrap();
    assert_eq!(r.steps, 2);
    assert_eq!(r.epoch, 1);
    assert!(trainer.is_finished());
    assert_eq!(trainer.optimizer_state().k, 2);
}

#[test]
fn batch_larger_than_training_set_is_a_validation_error() {
    let data = corpus(6, 2);
    let cfg = TrainConfig { batch_tracks: 6, ..config() };
    let mut trainer = Trainer::new(cfg, LossConfig::mean()).unwrap();
    assert!(matches!(trainer.run_epoch(&data), Err(Error::Validation { .. })));
}

#[test]
fn training_is_deterministic() {
    let data = corpus(8, 3);
    let (a, ha) = train(&data, config(), LossConfig::mean()).unwrap();
    let (b, hb) = train(&data, config(), LossConfig::mean()).unwrap();
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let losses = |h: &ssmnet::optim::TrainHistory| h.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect::<Vec<_>>();
    assert_eq!(losses(&ha), losses(&hb));
}

#[test]
fn training_reduces_validation_loss() {
    let data = corpus(8, 4);
    let cfg = TrainConfig { max_epochs: 4, ..config() };
    let (_, h) = train(&data, cfg, LossConfig::mean()).unwrap();
    let initial = h.initial_val_loss.unwrap();
    assert!(h.best_val_loss().unwrap() < initial, "{h:?}");
}

#[test]
fn zero_patience_stops_at_the_first_non_improving_epoch() {
    let data = corpus(8, 5);
    // a huge step size makes the loss go up right away
    let cfg = TrainConfig { learning_rate: 5.0, patience: 0, max_epochs: 10, ..config() };
    let mut trainer = Trainer::new(cfg, LossConfig::mean()).unwrap();
    let initial = ssmnet::encoder::init_params::<f32>(PLAN, cfg.seed).unwrap();
    trainer.run(&data).unwrap();
    let h = trainer.history().clone();
    let first_bad = h
        .epochs
        .iter()
        .scan(h.initial_val_loss.unwrap(), |best, e| {
            let bad = e.val_loss >= *best;
            *best = best.min(e.val_loss);
            Some(bad)
        })
        .position(|bad| bad)
        .expect("some epoch fails to improve");
    assert_eq!(h.epochs.len(), first_bad + 1);
    assert!(h.stopped_early);
    let (best, h) = trainer.into_result();
    match h.best_epoch {
        None => assert_eq!(best, initial),
        Some(e) => assert_eq!(h.epochs[e - 1].val_loss, h.best_val_loss().unwrap()),
    }
}

#[test]
fn best_parameters_are_returned_not_the_last() {
    let data = corpus(8, 6);
    let cfg = TrainConfig { max_epochs: 4, patience: 10, ..config() };
    let mut trainer = Trainer::new(cfg, LossConfig::mean()).unwrap();
    trainer.run(&data).unwrap();
    let h = trainer.history().clone();
    let best_val = h.best_val_loss().unwrap();
    let recomputed = {
        let (_, val) = split_corpus(data.len(), cfg.validation_fraction, cfg.seed).unwrap();
        trainer.mean_loss(trainer.best_params(), &data, &val).unwrap()
    };
    assert!((recomputed - best_val).abs() < 1e-9, "{recomputed} vs {best_val}");
    if let Some(e) = h.best_epoch {
        assert!(h.epochs.iter().all(|r| r.val_loss >= h.epochs[e - 1].val_loss));
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let data = corpus(8, 7);
    let cfg = TrainConfig { max_epochs: 4, ..config() };
    let mut straight = Trainer::new(cfg, LossConfig::mean()).unwrap();
    straight.run(&data).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ssmc");
    let mut first = Trainer::new(cfg, LossConfig::mean()).unwrap();
    first.run_epoch(&data).unwrap();
    first.run_epoch(&data).unwrap();
    first.save_checkpoint(&path).unwrap();
    drop(first);
    let mut resumed = Trainer::resume(&path, cfg).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    resumed.run(&data).unwrap();

    assert_eq!(resumed.epochs_done(), straight.epochs_done());
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(resumed.params().values()), bits(straight.params().values()));
    assert_eq!(bits(resumed.best_params().values()), bits(straight.best_params().values()));
    assert_eq!(resumed.optimizer_state(), straight.optimizer_state());
    let epochs = |t: &Trainer| t.history().epochs.iter().map(|e| (e.epoch, e.train_loss, e.val_loss)).collect::<Vec<_>>();
    assert_eq!(epochs(&resumed), epochs(&straight));
    assert_eq!(resumed.history().events, vec!["resumed after epoch 2".to_string()]);
}

#[test]
fn resume_checks_the_plan_and_accepts_new_budgets() {
    let data = corpus(6, 8);
    let cfg = TrainConfig { max_epochs: 1, batch_tracks: 2, ..config() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ssmc");
    let mut t = Trainer::new(cfg, LossConfig::mean()).unwrap();
    t.run(&data).unwrap();
    t.save_checkpoint(&path).unwrap();

    let other = TrainConfig { channel_plan: ChannelPlan { c1: 8, c2: 8, c3: 8 }, ..cfg };
    assert!(matches!(Trainer::resume(&path, other), Err(Error::Incompatible(_))));

    let more = TrainConfig { max_epochs: 3, learning_rate: 1e-3, ..cfg };
    let mut r = Trainer::resume(&path, more).unwrap();
    assert!(!r.is_finished());
    r.run(&data).unwrap();
    assert_eq!(r.epochs_done(), 3);
    assert_eq!(r.history().epochs[1].learning_rate, 1e-3);
    assert!(r.history().events.iter().any(|e| e.contains("learning rate")));
}

#[test]
fn resume_from_a_missing_file_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let err = Trainer::resume(dir.path().join("absent.ssmc"), config()).unwrap_err();
    assert!(matches!(err, Error::NotFound(_)), "{err:?}");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let data = corpus(6, 9);
    let mut t = Trainer::new(TrainConfig { max_epochs: 1, batch_tracks: 2, ..config() }, LossConfig::mean()).unwrap();
    t.run(&data).unwrap();
    let bytes = t.checkpoint_bytes().unwrap();
    assert!(Trainer::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Trainer::from_checkpoint_bytes(&bad), Err(Error::Format(_))));
    let mut wrong_version = bytes;
    wrong_version[4] = 9;
    assert!(matches!(Trainer::from_checkpoint_bytes(&wrong_version), Err(Error::Version { .. })));
}

#[test]
fn too_short_tracks_are_refused() {
    let t = gen_track(&SynthConfig { structure: "AB".into(), beats_per_section: 4, ..SynthConfig::default() }).unwrap();
    let patches = t.patches().unwrap();
    let gt = ground_truth_ssm(&t.annotation, &t.beats).unwrap();
    let short = patches.select(&[0, 1, 2, 3]);
    assert!(matches!(TrainTrack::new("x", short, gt.clone()), Err(Error::Validation { .. })));
    assert!(TrainTrack::new("y", patches.select(&[0, 1, 2, 3, 4, 5]), gt).is_err());
}
