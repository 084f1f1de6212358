//! Per-part embedding layers and identity classifiers.
//!
//! Parameters are stored as one flat f32 vector; all arithmetic runs in f64.
//! Per part the layout is `[W_embed (d×C), b_embed (d), W_cls (M×d), b_cls (M)]`.
//! [`id_objective`] works directly on an f64 copy of that vector, which is what
//! the finite-difference checks perturb.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::losses::{softmax_xent, visibility_id_loss};
use crate::pooling::PartFeatureSet;
use crate::retrieval::EmbeddingSet;

pub const DEFAULT_EMBED_DIM: usize = 256;
const CLASSIFIER_INIT_STD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub parts: usize,
    pub in_dim: usize,
    pub embed_dim: usize,
    pub num_ids: usize,
}

impl HeadShape {
    fn per_part(&self) -> usize {
        let (c, d, m) = (self.in_dim, self.embed_dim, self.num_ids);
        d * c + d + m * d + m
    }

    pub fn num_params(&self) -> usize {
        self.parts * self.per_part()
    }

    fn offsets(&self, p: usize) -> PartOffsets {
        let (c, d, m) = (self.in_dim, self.embed_dim, self.num_ids);
        let base = p * self.per_part();
        PartOffsets {
            embed_w: base,
            embed_b: base + d * c,
            cls_w: base + d * c + d,
            cls_b: base + d * c + d + m * d,
            end: base + self.per_part(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PartOffsets {
    embed_w: usize,
    embed_b: usize,
    cls_w: usize,
    cls_b: usize,
    end: usize,
}

/// Borrowed view of one affine layer `y = W x + b`, W row-major `out × in`.
#[derive(Debug, Clone, Copy)]
pub struct Linear<'a> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: &'a [f32],
    pub bias: &'a [f32],
}

impl Linear<'_> {
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        affine(
            self.weight.iter().map(|&w| w as f64),
            self.bias.iter().map(|&b| b as f64),
            x,
        )
    }
}

fn affine(
    mut weight: impl Iterator<Item = f64>,
    bias: impl Iterator<Item = f64>,
    x: &[f64],
) -> Vec<f64> {
    bias.map(|b| {
        let mut acc = b;
        for &xi in x {
            acc += weight.next().expect("weight sized out × in") * xi;
        }
        acc
    })
    .collect()
}

/// Embedding layers `f_p` and classifiers `W_p` for all parts.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadStack {
    shape: HeadShape,
    params: Vec<f32>,
}

impl HeadStack {
    pub fn from_params(shape: HeadShape, params: Vec<f32>) -> Result<Self> {
        if shape.parts == 0 || shape.in_dim == 0 || shape.embed_dim == 0 || shape.num_ids == 0 {
            return Err(Error::InvalidShape(format!("{shape:?}")));
        }
        if params.len() != shape.num_params() {
            return Err(Error::LengthMismatch {
                expected: shape.num_params(),
                found: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, params })
    }

    /// Seeded initialisation with zero biases. Embedding weights are
    /// uniform(±1/√C); classifier weights are N(0, 0.001²).
    pub fn init(shape: HeadShape, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0f32; shape.num_params()];
        let bound = 1.0 / (shape.in_dim as f64).sqrt();
        let normal = Normal::new(0.0, CLASSIFIER_INIT_STD).expect("valid std");
        for p in 0..shape.parts {
            let o = shape.offsets(p);
            for w in &mut params[o.embed_w..o.embed_b] {
                *w = rng.random_range(-bound..bound) as f32;
            }
            for w in &mut params[o.cls_w..o.cls_b] {
                *w = normal.sample(&mut rng) as f32;
            }
        }
        Self::from_params(shape, params)
    }

    /// Embeddings equal to the pooled features (W = I, b = 0) with a single
    /// all-zero classifier. Used when no trained heads are available.
    pub fn identity(parts: usize, dim: usize) -> Result<Self> {
        let shape = HeadShape {
            parts,
            in_dim: dim,
            embed_dim: dim,
            num_ids: 1,
        };
        let mut params = vec![0.0f32; shape.num_params()];
        for p in 0..parts {
            let o = shape.offsets(p);
            for i in 0..dim {
                params[o.embed_w + i * dim + i] = 1.0;
            }
        }
        Self::from_params(shape, params)
    }

    pub fn shape(&self) -> HeadShape {
        self.shape
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_f64(&self) -> Vec<f64> {
        self.params.iter().map(|&v| v as f64).collect()
    }

    pub fn embedding(&self, p: usize) -> Linear<'_> {
        let o = self.shape.offsets(p);
        Linear {
            in_dim: self.shape.in_dim,
            out_dim: self.shape.embed_dim,
            weight: &self.params[o.embed_w..o.embed_b],
            bias: &self.params[o.embed_b..o.cls_w],
        }
    }

    pub fn classifier(&self, p: usize) -> Linear<'_> {
        let o = self.shape.offsets(p);
        Linear {
            in_dim: self.shape.embed_dim,
            out_dim: self.shape.num_ids,
            weight: &self.params[o.cls_w..o.cls_b],
            bias: &self.params[o.cls_b..o.end],
        }
    }

    fn check_feats(&self, feats: &PartFeatureSet) -> Result<()> {
        if feats.num_parts() != self.shape.parts || feats.dim() != self.shape.in_dim {
            return Err(Error::DimMismatch(format!(
                "features {}×{} vs heads {}×{}",
                feats.num_parts(),
                feats.dim(),
                self.shape.parts,
                self.shape.in_dim
            )));
        }
        Ok(())
    }

    /// `e_p = f_p(g_p)` for every part, invisible ones included (`f_p(0) = b_p`).
    pub fn embed(&self, feats: &PartFeatureSet) -> Result<EmbeddingSet> {
        self.check_feats(feats)?;
        let mut values = Vec::with_capacity(self.shape.parts * self.shape.embed_dim);
        for (p, g) in feats.parts().enumerate() {
            let g: Vec<f64> = g.iter().map(|&v| v as f64).collect();
            values.extend(self.embedding(p).forward(&g).into_iter().map(|v| v as f32));
        }
        EmbeddingSet::new(self.shape.embed_dim, values, feats.visible().to_vec())
    }

    /// Classifier outputs, one row of M logits per part.
    pub fn logits(&self, emb: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
        if emb.num_parts() != self.shape.parts || emb.dim() != self.shape.embed_dim {
            return Err(Error::DimMismatch(format!(
                "embeddings {}×{} vs heads {}×{}",
                emb.num_parts(),
                emb.dim(),
                self.shape.parts,
                self.shape.embed_dim
            )));
        }
        Ok((0..self.shape.parts)
            .map(|p| {
                let e: Vec<f64> = emb.part(p).iter().map(|&v| v as f64).collect();
                self.classifier(p).forward(&e)
            })
            .collect())
    }

    /// Identity prediction: argmax of logits summed over visible parts (all
    /// parts if none is visible).
    pub fn predict(&self, feats: &PartFeatureSet) -> Result<usize> {
        let emb = self.embed(feats)?;
        let logits = self.logits(&emb)?;
        let any = feats.visible().iter().any(|&v| v);
        let mut score = vec![0.0f64; self.shape.num_ids];
        for (row, &vis) in logits.iter().zip(feats.visible()) {
            if vis || !any {
                for (s, z) in score.iter_mut().zip(row) {
                    *s += z;
                }
            }
        }
        Ok(score
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("num_ids > 0"))
    }

    /// Visibility-aware identity loss and its gradient w.r.t. the flat parameters.
    pub fn id_loss_and_grad(&self, feats: &PartFeatureSet, label: usize) -> Result<ObjectiveGrad> {
        self.check_feats(feats)?;
        id_objective(&self.shape, &self.params_f64(), feats, label)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let s = self.shape;
        let mut tensors = Vec::new();
        for p in 0..s.parts {
            let o = s.offsets(p);
            for (name, range, rows, cols) in [
                ("embed", o.embed_w..o.embed_b, s.embed_dim, s.in_dim),
                ("embed_bias", o.embed_b..o.cls_w, 1, s.embed_dim),
                ("cls", o.cls_w..o.cls_b, s.num_ids, s.embed_dim),
                ("cls_bias", o.cls_b..o.end, 1, s.num_ids),
            ] {
                let file = format!("{name}.{p}.etns");
                fs::write(dir.join(&file), write_matrix(rows, cols, &self.params[range]))?;
                tensors.push(TensorEntry {
                    name: format!("{name}.{p}"),
                    file,
                    shape: [rows, cols],
                });
            }
        }
        let index = CheckpointIndex { shape: s, tensors };
        fs::write(dir.join(CHECKPOINT_INDEX), serde_json::to_string_pretty(&index)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: CheckpointIndex = serde_json::from_str(&fs::read_to_string(dir.join(CHECKPOINT_INDEX))?)?;
        let s = index.shape;
        if index.tensors.len() != 4 * s.parts {
            return Err(Error::Parse(format!(
                "checkpoint lists {} tensors, expected {}",
                index.tensors.len(),
                4 * s.parts
            )));
        }
        let mut params = Vec::with_capacity(s.num_params());
        for t in &index.tensors {
            let (rows, cols, values) = read_matrix(&fs::read(dir.join(&t.file))?)?;
            if [rows, cols] != t.shape {
                return Err(Error::DimMismatch(format!(
                    "{}: file is {rows}×{cols}, index says {:?}",
                    t.name, t.shape
                )));
            }
            params.extend(values);
        }
        Self::from_params(s, params)
    }
}

pub const CHECKPOINT_INDEX: &str = "heads.json";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointIndex {
    #[serde(flatten)]
    shape: HeadShape,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: [usize; 2],
}

/// `(loss, gradient)` with the gradient laid out like the flat parameters.
pub type ObjectiveGrad = (f64, Vec<f64>);

/// Visibility-aware identity loss of one sample for f64 parameters `params`
/// (same layout as [`HeadStack::params`]). Invisible parts contribute neither
/// loss nor gradient.
pub fn id_objective(
    shape: &HeadShape,
    params: &[f64],
    feats: &PartFeatureSet,
    label: usize,
) -> Result<ObjectiveGrad> {
    if params.len() != shape.num_params() {
        return Err(Error::LengthMismatch {
            expected: shape.num_params(),
            found: params.len(),
        });
    }
    let (c, d, m) = (shape.in_dim, shape.embed_dim, shape.num_ids);
    let mut grad = vec![0.0f64; params.len()];
    let mut part_losses = vec![0.0f64; shape.parts];
    for p in 0..shape.parts {
        if !feats.visible()[p] {
            continue;
        }
        let o = shape.offsets(p);
        let g: Vec<f64> = feats.part(p).iter().map(|&v| v as f64).collect();
        let e = affine(
            params[o.embed_w..o.embed_b].iter().copied(),
            params[o.embed_b..o.cls_w].iter().copied(),
            &g,
        );
        let z = affine(
            params[o.cls_w..o.cls_b].iter().copied(),
            params[o.cls_b..o.end].iter().copied(),
            &e,
        );
        let (loss, dz) = softmax_xent(&z, label)?;
        part_losses[p] = loss;

        let mut de = vec![0.0f64; d];
        for (k, &dzk) in dz.iter().enumerate() {
            grad[o.cls_b + k] = dzk;
            for j in 0..d {
                grad[o.cls_w + k * d + j] = dzk * e[j];
                de[j] += params[o.cls_w + k * d + j] * dzk;
            }
        }
        for (j, &dej) in de.iter().enumerate() {
            grad[o.embed_b + j] = dej;
            for i in 0..c {
                grad[o.embed_w + j * c + i] = dej * g[i];
            }
        }
        debug_assert_eq!(o.end - o.cls_b, m);
    }
    let loss = visibility_id_loss(&part_losses, feats.visible())?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// One SGD step with momentum and L2 weight decay:
/// `d = g + wd·p; v ← μ·v + d; p ← p − lr·v`.
pub fn sgd_step(params: &mut [f32], grads: &[f64], velocity: &mut [f64], cfg: &SgdConfig) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::DimMismatch(format!(
            "{} params, {} grads, {} velocity",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let d = g + cfg.weight_decay * *p as f64;
        *v = cfg.momentum * *v + d;
        *p = (*p as f64 - cfg.lr * *v) as f32;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub steps: usize,
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainLog {
    /// Mean visibility-aware loss per sample, before each step.
    pub losses: Vec<f64>,
    /// Total loss divided by the total number of visible parts, before each step.
    pub loss_per_visible_part: Vec<f64>,
    /// Training accuracy before each step.
    pub accuracies: Vec<f64>,
    pub final_accuracy: f64,
}

fn accuracy(stack: &HeadStack, data: &[(PartFeatureSet, usize)]) -> Result<f64> {
    let mut correct = 0usize;
    for (f, label) in data {
        if stack.predict(f)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Full-batch SGD on frozen part features: each step averages the loss and
/// gradient over the whole dataset in a fixed order.
pub fn train_toy(
    data: &[(PartFeatureSet, usize)],
    mut stack: HeadStack,
    schedule: &TrainSchedule,
) -> Result<(HeadStack, TrainLog)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.len() as f64;
    let visible_parts: usize = data.iter().map(|(f, _)| f.num_visible()).sum();
    let mut velocity = vec![0.0f64; stack.params.len()];
    let mut log = TrainLog::default();
    for _ in 0..schedule.steps {
        let mut total = 0.0;
        let mut grad = vec![0.0f64; stack.params.len()];
        for (f, label) in data {
            let (l, g) = stack.id_loss_and_grad(f, *label)?;
            total += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        log.losses.push(total / n);
        log.loss_per_visible_part
            .push(total / visible_parts.max(1) as f64);
        log.accuracies.push(accuracy(&stack, data)?);
        sgd_step(&mut stack.params, &grad, &mut velocity, &schedule.sgd)?;
    }
    log.final_accuracy = accuracy(&stack, data)?;
    Ok((stack, log))
}
