//! Thresholding and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Classification and segmentation scores, all in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Unweighted mean of per-class one-vs-rest F1.
    pub f1_classification: f64,
    /// Mean of per-image Dice.
    pub dice_mean: f64,
    /// Pixel counts pooled over all images.
    pub precision_seg: f64,
    pub recall_seg: f64,
    pub f1_seg: f64,
}

/// `1` where `probs >= threshold`, else `0`.
pub fn threshold_mask<T: Real>(probs: &Tensor<T>, threshold: T) -> Tensor<T> {
    probs.map(|p| if p >= threshold { T::one() } else { T::zero() })
}

/// Reads a 0/1 tensor as booleans.
pub fn binary_values<T: Real>(mask: &Tensor<T>) -> Result<Vec<bool>> {
    mask.data()
        .iter()
        .map(|&v| {
            if v == T::one() {
                Ok(true)
            } else if v == T::zero() {
                Ok(false)
            } else {
                Err(Error::invalid(format!("mask value {v} is not binary")))
            }
        })
        .collect()
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "confusion: {} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// [`confusion`] on two same-shaped binary tensors.
pub fn confusion_tensors<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "confusion: {} vs {}",
            pred.shape(),
            truth.shape()
        )));
    }
    confusion(&binary_values(pred)?, &binary_values(truth)?)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1; any empty denominator yields 0.
///
/// F1 is evaluated as `2tp / (2tp + fp + fn)`, the same quantity as the
/// harmonic mean of precision and recall.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if c.tp == 0 {
        0.0
    } else {
        ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
    };
    (precision, recall, f1)
}

/// Overlap `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(pred: &[bool], truth: &[bool]) -> Result<f64> {
    let c = confusion(pred, truth)?;
    let den = 2 * c.tp + c.fp + c.fn_;
    Ok(if den == 0 {
        1.0
    } else {
        ratio(2 * c.tp, den)
    })
}

fn check_labels(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("metric over an empty label set"));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_labels(pred, truth)?;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Unweighted mean over `num_classes` of one-vs-rest F1.
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    check_labels(pred, truth)?;
    if num_classes == 0 {
        return Err(Error::invalid("macro_f1 needs at least one class"));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    let mut sum = 0.0;
    for class in 0..num_classes {
        let p: Vec<bool> = pred.iter().map(|&l| l == class).collect();
        let t: Vec<bool> = truth.iter().map(|&l| l == class).collect();
        sum += precision_recall_f1(&confusion(&p, &t)?).2;
    }
    Ok(sum / num_classes as f64)
}

/// Sequential fold of per-sample results into a [`MetricsReport`].
#[derive(Clone, Debug, Default)]
pub struct MetricsAccumulator {
    num_classes: usize,
    predicted: Vec<usize>,
    truth: Vec<usize>,
    dice_sum: f64,
    pixels: ConfusionCounts,
}

impl MetricsAccumulator {
    pub fn new(num_classes: usize) -> Self {
        MetricsAccumulator {
            num_classes,
            ..Default::default()
        }
    }

    pub fn push(
        &mut self,
        predicted_label: usize,
        true_label: usize,
        pred_mask: &[bool],
        true_mask: &[bool],
    ) -> Result<()> {
        let counts = confusion(pred_mask, true_mask)?;
        self.dice_sum += dice(pred_mask, true_mask)?;
        self.pixels.merge(&counts);
        self.predicted.push(predicted_label);
        self.truth.push(true_label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn pixel_counts(&self) -> ConfusionCounts {
        self.pixels
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        let accuracy = accuracy(&self.predicted, &self.truth)?;
        let f1_classification = macro_f1(&self.predicted, &self.truth, self.num_classes)?;
        let (precision_seg, recall_seg, f1_seg) = precision_recall_f1(&self.pixels);
        Ok(MetricsReport {
            accuracy,
            f1_classification,
            dice_mean: self.dice_sum / self.len() as f64,
            precision_seg,
            recall_seg,
            f1_seg,
        })
    }
}
