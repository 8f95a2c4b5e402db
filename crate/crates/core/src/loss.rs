//! Training objectives with analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Both head losses and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValue {
    pub classification_loss: f64,
    pub segmentation_loss: f64,
    pub total: f64,
}

impl LossValue {
    pub fn new(classification_loss: f64, segmentation_loss: f64) -> Self {
        LossValue {
            classification_loss,
            segmentation_loss,
            total: total_loss(classification_loss, segmentation_loss),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.classification_loss.is_finite() && self.segmentation_loss.is_finite()
    }
}

pub fn total_loss(cls: f64, seg: f64) -> f64 {
    cls + seg
}

/// Row-wise softmax of `[B, C]` logits, computed in f64.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let (_, classes) = logits.shape().matrix()?;
    Ok(logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect())
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (batch, classes) = logits.shape().matrix()?;
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "cross_entropy: {} labels for batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let inv_b = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(batch * classes);
    for (row, &label) in logits.data().chunks_exact(classes).zip(labels) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = z.ln();
        loss += log_z - (row[label].as_f64() - max);
        for (c, v) in row.iter().enumerate() {
            let p = (v.as_f64() - max - log_z).exp();
            let target = if c == label { 1.0 } else { 0.0 };
            grad.push(T::lit((p - target) * inv_b));
        }
    }
    Ok((loss * inv_b, Tensor::from_vec(logits.dims(), grad)?))
}

/// Per-element binary cross-entropy on a logit, in its overflow-free form.
pub fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid binary cross-entropy over every element and its gradient.
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if logits.dims() != target.dims() {
        return Err(Error::shape(format!(
            "bce_with_logits: logits {} vs target {}",
            logits.shape(),
            target.shape()
        )));
    }
    if target.data().iter().any(|&y| y != T::zero() && y != T::one()) {
        return Err(Error::invalid("bce_with_logits: target must be binary"));
    }
    let inv_n = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&x, &y) in logits.data().iter().zip(target.data()) {
        let (x, y) = (x.as_f64(), y.as_f64());
        loss += bce_term(x, y);
        grad.push(T::lit((sigmoid(x) - y) * inv_n));
    }
    Ok((loss * inv_n, Tensor::from_vec(logits.dims(), grad)?))
}
