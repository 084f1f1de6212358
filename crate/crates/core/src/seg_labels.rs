//! Densepose part labels fused to the 8 segmentation classes, plus
//! segmentation metrics.
//!
//! Input classes (15): 0 background, 1 torso, 2 right hand, 3 left hand,
//! 4 left foot, 5 right foot, 6 right upper leg, 7 left upper leg,
//! 8 right lower leg, 9 left lower leg, 10 left upper arm, 11 right upper arm,
//! 12 left lower arm, 13 right lower arm, 14 head.
//!
//! Output classes (8): 0 background, 1 torso, 2 upper arm, 3 lower arm,
//! 4 upper leg, 5 lower leg, 6 foot, 7 head.

use crate::data::LabelMap;
use crate::error::{Error, Result};

pub const DENSEPOSE_CLASSES: usize = 15;
pub const FUSED_CLASSES: usize = 8;

pub const DENSEPOSE_NAMES: [&str; DENSEPOSE_CLASSES] = [
    "background",
    "torso",
    "right hand",
    "left hand",
    "left foot",
    "right foot",
    "right upper leg",
    "left upper leg",
    "right lower leg",
    "left lower leg",
    "left upper arm",
    "right upper arm",
    "left lower arm",
    "right lower arm",
    "head",
];

pub const FUSED_NAMES: [&str; FUSED_CLASSES] = [
    "background",
    "torso",
    "upper arm",
    "lower arm",
    "upper leg",
    "lower leg",
    "foot",
    "head",
];

/// Hands go to lower arm; left and right sides merge.
pub const FUSION_TABLE: [u8; DENSEPOSE_CLASSES] = [0, 1, 3, 3, 6, 6, 4, 4, 5, 5, 2, 2, 3, 3, 7];

pub fn fuse_densepose(map: &LabelMap) -> Result<LabelMap> {
    if map.classes() != DENSEPOSE_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "expected a {DENSEPOSE_CLASSES}-class map, got {} classes",
            map.classes()
        )));
    }
    let labels = map
        .labels()
        .iter()
        .map(|&l| FUSION_TABLE[l as usize])
        .collect();
    LabelMap::new(map.height(), map.width(), FUSED_CLASSES, labels)
}

/// `input -> output` lines for auditing the table.
pub fn fusion_table_text() -> String {
    FUSION_TABLE
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            format!(
                "{i:>2} {:<16} -> {o} {}\n",
                DENSEPOSE_NAMES[i], FUSED_NAMES[o as usize]
            )
        })
        .collect()
}

fn same_shape(pred: &LabelMap, truth: &LabelMap) -> Result<()> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::DimMismatch(format!(
            "prediction {}×{} vs truth {}×{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    Ok(())
}

pub fn pixel_accuracy(pred: &LabelMap, truth: &LabelMap) -> Result<f64> {
    same_shape(pred, truth)?;
    let hits = pred
        .labels()
        .iter()
        .zip(truth.labels())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / pred.num_pixels() as f64)
}

/// Mean IoU over the classes whose union is non-empty.
pub fn miou(pred: &LabelMap, truth: &LabelMap, classes: usize) -> Result<f64> {
    same_shape(pred, truth)?;
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (&a, &b) in pred.labels().iter().zip(truth.labels()) {
        let (a, b) = (a as usize, b as usize);
        for l in [a, b] {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
        }
        if a == b {
            inter[a] += 1;
            union[a] += 1;
        } else {
            union[a] += 1;
            union[b] += 1;
        }
    }
    let (sum, n) = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .fold((0.0, 0usize), |(s, n), (&i, &u)| (s + i as f64 / u as f64, n + 1));
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
