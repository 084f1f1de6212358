//! Identity and part-segmentation losses with gradients w.r.t. logits.
//!
//! All reductions accumulate in f64. Segmentation logits are laid out
//! class-major (`K × H × W`), matching [`crate::data::Tensor3`].

use serde::Serialize;

use crate::data::LabelMap;
use crate::error::{Error, Result};

/// `(loss, d loss / d logits)`.
pub type LossGrad = (f64, Vec<f64>);

fn log_sum_exp(logits: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let max = logits.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.map(|z| (z - max).exp()).sum();
    (max, sum.ln() + max)
}

/// Cross-entropy of one logit vector against `label`, with gradient
/// `softmax − onehot`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<LossGrad> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let (_, lse) = log_sum_exp(logits.iter().copied());
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Plain sum of per-part identity losses (PCB).
pub fn pcb_id_loss(part_losses: &[f64]) -> f64 {
    let mut total = 0.0;
    for &l in part_losses {
        total += l;
    }
    total
}

/// Sum of per-part identity losses over visible parts only.
pub fn visibility_id_loss(part_losses: &[f64], visible: &[bool]) -> Result<f64> {
    if part_losses.len() != visible.len() {
        return Err(Error::DimMismatch(format!(
            "{} part losses vs {} visibility flags",
            part_losses.len(),
            visible.len()
        )));
    }
    let mut total = 0.0;
    for (&l, &v) in part_losses.iter().zip(visible) {
        if v {
            total += l;
        }
    }
    Ok(total)
}

fn check_seg_shape(logits: &[f64], labels: &LabelMap) -> Result<()> {
    let expected = labels.classes() * labels.num_pixels();
    if logits.len() != expected {
        return Err(Error::DimMismatch(format!(
            "segmentation logits have {} values, label map needs {} ({} classes × {}×{})",
            logits.len(),
            expected,
            labels.classes(),
            labels.height(),
            labels.width()
        )));
    }
    Ok(())
}

/// Per-pixel cross-entropy; writes `softmax − onehot` for every pixel into `grad`.
fn pixel_xent(logits: &[f64], labels: &LabelMap, grad: &mut [f64]) -> Vec<f64> {
    let n = labels.num_pixels();
    let k = labels.classes();
    let mut losses = Vec::with_capacity(n);
    for (i, &label) in labels.labels().iter().enumerate() {
        let column = (0..k).map(|c| logits[c * n + i]);
        let (_, lse) = log_sum_exp(column);
        for c in 0..k {
            grad[c * n + i] = (logits[c * n + i] - lse).exp();
        }
        grad[label as usize * n + i] -= 1.0;
        losses.push(lse - logits[label as usize * n + i]);
    }
    losses
}

/// Size-normalised segmentation loss: mean pixel cross-entropy inside each
/// class present in `labels`, averaged over the present classes.
pub fn ps_loss_balanced(logits: &[f64], labels: &LabelMap) -> Result<LossGrad> {
    check_seg_shape(logits, labels)?;
    let n = labels.num_pixels();
    let k = labels.classes();
    let mut grad = vec![0.0; logits.len()];
    let losses = pixel_xent(logits, labels, &mut grad);

    let mut count = vec![0usize; k];
    let mut sum = vec![0.0f64; k];
    for (&label, &l) in labels.labels().iter().zip(&losses) {
        count[label as usize] += 1;
        sum[label as usize] += l;
    }
    let present = count.iter().filter(|&&c| c > 0).count();
    let mut loss = 0.0;
    for (s, &c) in sum.iter().zip(&count) {
        if c > 0 {
            loss += s / c as f64;
        }
    }
    loss /= present as f64;

    for (i, &label) in labels.labels().iter().enumerate() {
        let scale = 1.0 / (present as f64 * count[label as usize] as f64);
        for c in 0..k {
            grad[c * n + i] *= scale;
        }
    }
    Ok((loss, grad))
}

/// Mean pixel cross-entropy over the whole map.
pub fn ps_loss_simple(logits: &[f64], labels: &LabelMap) -> Result<LossGrad> {
    check_seg_shape(logits, labels)?;
    let mut grad = vec![0.0; logits.len()];
    let losses = pixel_xent(logits, labels, &mut grad);
    let n = losses.len() as f64;
    let mut loss = 0.0;
    for l in &losses {
        loss += l;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub id_source: f64,
    pub ps_source: f64,
    pub ps_target: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Multi-task objective: source identity loss plus weighted source and
/// target segmentation losses.
pub fn total_loss(id_source: f64, ps_source: f64, ps_target: f64, lambda1: f64, lambda2: f64) -> LossReport {
    LossReport {
        total: id_source + lambda1 * ps_source + lambda2 * ps_target,
        id_source,
        ps_source,
        ps_target,
        lambda1,
        lambda2,
    }
}
