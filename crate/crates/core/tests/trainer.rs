use std::fs;
use std::path::Path;

use wound_unet::checkpoint::load_checkpoint_with;
use wound_unet::config::TrainConfig;
use wound_unet::data::{Dataset, Sample};
use wound_unet::error::Error;
use wound_unet::loss::cross_entropy;
use wound_unet::metrics::dice;
use wound_unet::model::{forward, Arch, ModelParams};
use wound_unet::nn::{AdamConfig, AdamState};
use wound_unet::synth::{save_synth, synth_generate, to_dataset};
use wound_unet::train::{
    assemble_batch, evaluate, predict, predict_batch, train_arch, train_step, EpochLog,
};

/// Full-resolution network with very few filters.
fn small() -> Arch {
    Arch {
        input_size: 128,
        in_channels: 3,
        down: vec![4, 4, 4, 4, 4],
        head: vec![4],
        hidden: vec![8],
        classes: 4,
    }
}

fn config(dir: &Path, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 1e-2,
        seed: 13,
        checkpoint_path: dir.join("model.wunt"),
        ..TrainConfig::default()
    }
}

fn dataset(n: usize, seed: u64) -> Dataset {
    to_dataset(&synth_generate(n, seed).unwrap()).unwrap()
}

fn without_seconds(log: &[EpochLog]) -> Vec<(usize, u64, u64, u64)> {
    log.iter()
        .map(|e| (e.epoch, e.cls_loss.to_bits(), e.seg_loss.to_bits(), e.total_loss.to_bits()))
        .collect()
}

#[test]
fn one_epoch_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), 1);
    let mut seen = Vec::new();
    let out = train_arch(&cfg, &dataset(2, 1), small(), |e| seen.push(*e)).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(seen, out.log);
    assert_eq!(out.best.epoch, 1);
    assert_eq!(out.best.adam.step, 2);
    let loaded = load_checkpoint_with(&cfg.checkpoint_path, &small()).unwrap();
    assert_eq!(loaded, out.best);
    assert_eq!(loaded.params, out.last_params);
    assert!(!dir.path().join("model.wunt.tmp").exists());
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset(2, 4);
    let cfg = config(dir.path(), 3);
    let ra = train_arch(&cfg, &ds, small(), |_| {}).unwrap();
    let first = fs::read(&cfg.checkpoint_path).unwrap();
    let rb = train_arch(&cfg, &ds, small(), |_| {}).unwrap();
    assert_eq!(without_seconds(&ra.log), without_seconds(&rb.log));
    assert_eq!(first, fs::read(&cfg.checkpoint_path).unwrap());
    let mut other = cfg.clone();
    other.seed = 14;
    let rc = train_arch(&other, &ds, small(), |_| {}).unwrap();
    assert_ne!(without_seconds(&ra.log), without_seconds(&rc.log));
}

#[test]
fn best_checkpoint_is_log_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_arch(&config(dir.path(), 5), &dataset(2, 5), small(), |_| {}).unwrap();
    let (arg, min) = out
        .log
        .iter()
        .map(|e| (e.epoch, e.total_loss))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    assert_eq!(out.best.best_total_loss, min);
    assert_eq!(out.best.epoch as usize, arg);
    for e in &out.log {
        assert_eq!(e.total_loss, e.cls_loss + e.seg_loss);
        assert!(e.seconds >= 0.0);
    }
}

#[test]
fn zero_segmentation_weight_leaves_decoder_untouched() {
    let ds = dataset(1, 6);
    let (images, masks, labels) = assemble_batch(&ds, &[0, 1, 2, 3]).unwrap();
    let mut params = ModelParams::<f32>::init(small(), 3).unwrap();
    let before = params.clone();
    let mut adam = AdamState::new(params.tensors(), AdamConfig::default());
    for _ in 0..2 {
        train_step(&mut params, &mut adam, &images, &masks, &labels, 0.0).unwrap();
    }
    for ((name, new), (_, old)) in params.iter().zip(before.iter()) {
        let decoder = name.starts_with("up") || name.starts_with("out.");
        if decoder {
            assert_eq!(new, old, "{name} moved");
        } else if name.ends_with("weight") {
            assert_ne!(new, old, "{name} frozen");
        }
    }
}

#[test]
fn initial_classification_loss_is_near_uniform() {
    let ds = dataset(2, 8);
    let (images, _, labels) = assemble_batch(&ds, &(0..8).collect::<Vec<_>>()).unwrap();
    let mut total = 0.0;
    for seed in 0..10 {
        let params = ModelParams::<f32>::init(Arch::standard(), seed).unwrap();
        let (out, _) = forward(&params, &images).unwrap();
        total += cross_entropy(&out.class_logits, &labels).unwrap().0;
    }
    let mean = total / 10.0;
    assert!((mean - 4f64.ln()).abs() <= 0.3, "mean initial CE {mean}");
}

#[test]
fn non_finite_input_aborts_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = dataset(2, 9);
    ds.samples[0].image.data_mut()[5] = f32::NAN;
    let mut cfg = config(dir.path(), 2);
    cfg.batch_size = 8;
    match train_arch(&cfg, &ds, small(), |_| {}).unwrap_err() {
        Error::NonFiniteParams { epoch, batch } => assert_eq!((epoch, batch), (1, 1)),
        e => panic!("{e:?}"),
    }
}

#[test]
fn empty_training_split_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(Vec::<Sample>::new());
    assert!(train_arch(&config(dir.path(), 1), &ds, small(), |_| {}).is_err());
}

#[test]
fn predict_and_evaluate_share_postprocessing() {
    let dir = tempfile::tempdir().unwrap();
    let items = synth_generate(1, 10).unwrap();
    save_synth(&items, dir.path()).unwrap();
    let ds = to_dataset(&items).unwrap();
    let mut params = ModelParams::<f32>::init(small(), 21).unwrap();
    // A few steps away from initialisation.
    let (images, masks, labels) = assemble_batch(&ds, &[0, 1, 2, 3]).unwrap();
    let mut adam = AdamState::new(params.tensors(), AdamConfig { lr: 1e-2, ..Default::default() });
    for _ in 0..3 {
        train_step(&mut params, &mut adam, &images, &masks, &labels, 1.0).unwrap();
    }

    let batch = predict_batch(&params, &images, 0.5).unwrap();
    for (i, b) in batch.iter().enumerate() {
        let class = wound_unet::data::ClassMap::NAMES[items[i].label];
        let image = dir.path().join(format!("images/{class}_000.png"));
        let out = dir.path().join(format!("pred{i}.png"));
        let single = predict(&params, &image, 0.5, &out).unwrap();
        assert_eq!(&single, b);
        let png = wound_unet::data::load_gray(&out).unwrap();
        let bits: Vec<bool> = png.pixels().map(|p| p.0[0] == 255).collect();
        assert_eq!(bits, b.mask);
        assert!(png.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));

        let report = evaluate(&params, &ds, &[i], 0.5).unwrap();
        let truth: Vec<bool> = ds.samples[i].mask.data().iter().map(|&v| v == 1.0).collect();
        assert_eq!(report.dice_mean, dice(&b.mask, &truth).unwrap());
        assert_eq!(report.accuracy, (b.label == items[i].label) as u8 as f64);
    }

    let low = predict_batch(&params, &images, 0.3).unwrap();
    let high = predict_batch(&params, &images, 0.7).unwrap();
    for ((l, m), h) in low.iter().zip(&batch).zip(&high) {
        for ((&a, &b), &c) in l.mask.iter().zip(&m.mask).zip(&h.mask) {
            assert!(c <= b && b <= a);
        }
    }
}
