//! Training loop, evaluation and single-image prediction.

use std::path::Path;
use std::time::Instant;

use image::{GrayImage, Luma};

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::TrainConfig;
use crate::data::{load_rgb, resize_image, ClassMap, Dataset, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::loss::{bce_with_logits, cross_entropy, sigmoid, softmax_rows, LossValue};
use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::model::{backward, forward, Arch, ModelParams};
use crate::nn::{AdamConfig, AdamState};
use crate::tensor::{Rng, Tensor};

/// Stream offsets so that one config seed drives independent generators.
const SPLIT_STREAM: u64 = 0x5350_4c49_5400_0000;
const SHUFFLE_STREAM: u64 = 0x5348_5546_0000_0000;

pub fn split_seed(seed: u64) -> u64 {
    seed ^ SPLIT_STREAM
}

fn shuffle_seed(seed: u64) -> u64 {
    seed ^ SHUFFLE_STREAM
}

/// Per-epoch means over the training split, weighted by sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub cls_loss: f64,
    pub seg_loss: f64,
    pub total_loss: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,cls_loss,seg_loss,total_loss,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:.3}",
            self.epoch, self.cls_loss, self.seg_loss, self.total_loss, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the epoch with the lowest mean total loss.
    pub best: Checkpoint,
    /// State after the last epoch.
    pub last_params: ModelParams<f32>,
    pub log: Vec<EpochLog>,
}

/// Stacks samples `indices` into an image batch, a mask batch and labels.
pub fn assemble_batch(
    dataset: &Dataset,
    indices: &[usize],
) -> Result<(Tensor<f32>, Tensor<f32>, Vec<usize>)> {
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut images = Vec::with_capacity(indices.len() * 3 * plane);
    let mut masks = Vec::with_capacity(indices.len() * plane);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = dataset
            .samples
            .get(i)
            .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
        images.extend_from_slice(s.image.data());
        masks.extend_from_slice(s.mask.data());
        labels.push(s.label);
    }
    let n = indices.len();
    Ok((
        Tensor::from_vec(&[n, 3, IMAGE_SIZE, IMAGE_SIZE], images)?,
        Tensor::from_vec(&[n, 1, IMAGE_SIZE, IMAGE_SIZE], masks)?,
        labels,
    ))
}

/// One optimisation step on a batch. `seg_weight` scales the segmentation
/// loss gradient.
pub fn train_step(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    images: &Tensor<f32>,
    masks: &Tensor<f32>,
    labels: &[usize],
    seg_weight: f32,
) -> Result<LossValue> {
    let (out, cache) = forward(params, images)?;
    let (cls, g_cls) = cross_entropy(&out.class_logits, labels)?;
    let (seg, g_seg) = bce_with_logits(&out.mask_logits, masks)?;
    let loss = LossValue::new(cls, seg);
    if !loss.is_finite() {
        return Ok(loss);
    }
    let g_seg = if seg_weight == 1.0 {
        g_seg
    } else {
        g_seg.map(|g| g * seg_weight)
    };
    let grads = backward(params, &cache, &g_cls, &g_seg)?;
    adam.step(params.tensors_mut(), grads.tensors())?;
    Ok(loss)
}

/// Trains the standard network on `dataset.train`, overwriting
/// `config.checkpoint_path` whenever the epoch mean total loss improves.
/// `on_epoch` sees every log entry as it is produced.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    train_arch(config, dataset, Arch::standard(), on_epoch)
}

pub fn train_arch(
    config: &TrainConfig,
    dataset: &Dataset,
    arch: Arch,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut params = ModelParams::<f32>::init(arch, config.seed)?;
    let adam_config = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(params.tensors(), adam_config);
    let mut rng = Rng::new(shuffle_seed(config.seed));
    let mut order = dataset.train.clone();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        let (mut cls_sum, mut seg_sum) = (0.0, 0.0);
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let (images, masks, labels) = assemble_batch(dataset, chunk)?;
            let loss = train_step(&mut params, &mut adam, &images, &masks, &labels, 1.0)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch + 1,
                    cls: loss.classification_loss,
                    seg: loss.segmentation_loss,
                });
            }
            if !params.all_finite() {
                return Err(Error::NonFiniteParams {
                    epoch,
                    batch: batch + 1,
                });
            }
            cls_sum += loss.classification_loss * chunk.len() as f64;
            seg_sum += loss.segmentation_loss * chunk.len() as f64;
        }
        let n = order.len() as f64;
        let mean = LossValue::new(cls_sum / n, seg_sum / n);
        let entry = EpochLog {
            epoch,
            cls_loss: mean.classification_loss,
            seg_loss: mean.segmentation_loss,
            total_loss: mean.total,
            seconds: start.elapsed().as_secs_f64(),
        };
        if best.as_ref().is_none_or(|b| entry.total_loss < b.best_total_loss) {
            let ckpt = Checkpoint {
                config: config.clone(),
                epoch: epoch as u32,
                best_total_loss: entry.total_loss,
                params: params.clone(),
                adam: adam.clone(),
            };
            save_checkpoint(&ckpt, &config.checkpoint_path)?;
            best = Some(ckpt);
        }
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        last_params: params,
        log,
    })
}

/// Post-processed output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
    /// Row-major `128 x 128`, `true` where the mask probability reaches the
    /// threshold.
    pub mask: Vec<bool>,
}

/// Forward pass plus argmax, sigmoid and thresholding. Shared by
/// [`evaluate`] and [`predict`].
pub fn predict_batch(
    params: &ModelParams<f32>,
    images: &Tensor<f32>,
    threshold: f64,
) -> Result<Vec<Prediction>> {
    let (out, _) = forward(params, images)?;
    let probs = softmax_rows(&out.class_logits)?;
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    Ok(probs
        .into_iter()
        .zip(out.mask_logits.data().chunks_exact(plane))
        .map(|(p, logits)| {
            let label = argmax(&p);
            let mask = logits
                .iter()
                .map(|&x| sigmoid(x as f64) >= threshold)
                .collect();
            Prediction {
                label,
                probabilities: p,
                mask,
            }
        })
        .collect())
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inference batch size used by [`evaluate`].
const EVAL_BATCH: usize = 8;

pub fn evaluate(
    params: &ModelParams<f32>,
    dataset: &Dataset,
    indices: &[usize],
    threshold: f64,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let mut acc = MetricsAccumulator::new(params.arch().classes);
    for chunk in indices.chunks(EVAL_BATCH) {
        let (images, _, labels) = assemble_batch(dataset, chunk)?;
        let preds = predict_batch(params, &images, threshold)?;
        for ((pred, &i), &label) in preds.iter().zip(chunk).zip(&labels) {
            let truth: Vec<bool> = dataset.samples[i].mask.data().iter().map(|&v| v == 1.0).collect();
            acc.push(pred.label, label, &pred.mask, &truth)?;
        }
    }
    acc.finish()
}

/// Classifies and segments the image at `image_path`, writing the mask as a
/// 0/255 grayscale PNG to `mask_out`.
pub fn predict(
    params: &ModelParams<f32>,
    image_path: &Path,
    threshold: f64,
    mask_out: &Path,
) -> Result<Prediction> {
    let image = resize_image(&load_rgb(image_path)?)?;
    let pred = predict_batch(params, &image, threshold)?
        .pop()
        .expect("one image in, one prediction out");
    write_mask_png(&pred.mask, mask_out)?;
    Ok(pred)
}

pub fn write_mask_png(mask: &[bool], path: &Path) -> Result<()> {
    let side = IMAGE_SIZE as u32;
    let img = GrayImage::from_fn(side, side, |x, y| {
        Luma([if mask[(y * side + x) as usize] { 255 } else { 0 }])
    });
    crate::synth::write_png(path, |p| img.save_with_format(p, image::ImageFormat::Png))
}

/// JSON document printed by the `predict` command.
pub fn prediction_json(pred: &Prediction, mask_path: &Path) -> Result<serde_json::Value> {
    let names = ClassMap::NAMES;
    let probabilities: serde_json::Map<String, serde_json::Value> = names
        .iter()
        .zip(&pred.probabilities)
        .map(|(n, &p)| (n.to_string(), serde_json::json!(p)))
        .collect();
    Ok(serde_json::json!({
        "class": ClassMap.name(pred.label)?,
        "probabilities": probabilities,
        "mask": mask_path.display().to_string(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn csv_row_has_five_fields() {
        let e = EpochLog {
            epoch: 3,
            cls_loss: 0.5,
            seg_loss: 0.25,
            total_loss: 0.75,
            seconds: 1.23456,
        };
        assert_eq!(e.csv_row(), "3,0.5,0.25,0.75,1.235");
        assert_eq!(EpochLog::CSV_HEADER.split(',').count(), 5);
    }
}
