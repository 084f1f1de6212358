//! Central finite-difference checks of every analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::LabelMap;
use crate::error::Result;
use crate::heads::{id_objective, HeadShape};
use crate::losses::{ps_loss_balanced, ps_loss_simple, softmax_xent};
use crate::pooling::PartFeatureSet;

pub const FD_STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, 1e−12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied())
        .max(norm(&mut b.iter().copied()))
        .max(1e-12);
    diff / scale
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn suite(
    name: &'static str,
    trials: usize,
    rng: &mut ChaCha8Rng,
    mut trial: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Result<SuiteReport> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        worst = worst.max(trial(rng)?);
    }
    Ok(SuiteReport {
        name,
        trials,
        max_rel_err: worst,
        tolerance: TOLERANCE,
        passed: worst < TOLERANCE,
    })
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn random_label_map(rng: &mut ChaCha8Rng) -> LabelMap {
    let (h, w, k) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(2..5));
    let labels = (0..h * w).map(|_| rng.random_range(0..k) as u8).collect();
    LabelMap::new(h, w, k, labels).expect("labels drawn below k")
}

pub fn check_softmax_xent(trials: usize, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    suite("softmax_xent", trials, rng, |rng| {
        let m = rng.random_range(2..10);
        let z = uniform(rng, m, 5.0);
        let label = rng.random_range(0..m);
        let (_, grad) = softmax_xent(&z, label)?;
        let fd = central_difference(|x| softmax_xent(x, label).unwrap().0, &z, FD_STEP);
        Ok(relative_error(&grad, &fd))
    })
}

pub fn check_ps_balanced(trials: usize, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    suite("ps_loss_balanced", trials, rng, |rng| {
        let labels = random_label_map(rng);
        let z = uniform(rng, labels.classes() * labels.num_pixels(), 3.0);
        let (_, grad) = ps_loss_balanced(&z, &labels)?;
        let fd = central_difference(|x| ps_loss_balanced(x, &labels).unwrap().0, &z, FD_STEP);
        Ok(relative_error(&grad, &fd))
    })
}

pub fn check_ps_simple(trials: usize, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    suite("ps_loss_simple", trials, rng, |rng| {
        let labels = random_label_map(rng);
        let z = uniform(rng, labels.classes() * labels.num_pixels(), 3.0);
        let (_, grad) = ps_loss_simple(&z, &labels)?;
        let fd = central_difference(|x| ps_loss_simple(x, &labels).unwrap().0, &z, FD_STEP);
        Ok(relative_error(&grad, &fd))
    })
}

/// Identity loss through embeddings and classifiers, w.r.t. every parameter.
/// At least one part is always visible.
pub fn check_heads(trials: usize, rng: &mut ChaCha8Rng) -> Result<SuiteReport> {
    suite("heads_id_loss", trials, rng, |rng| {
        let shape = HeadShape {
            parts: rng.random_range(1..4),
            in_dim: rng.random_range(1..5),
            embed_dim: rng.random_range(1..4),
            num_ids: rng.random_range(2..5),
        };
        let forced = rng.random_range(0..shape.parts);
        let visible: Vec<bool> = (0..shape.parts)
            .map(|p| p == forced || rng.random_bool(0.6))
            .collect();
        let mut values = Vec::with_capacity(shape.parts * shape.in_dim);
        for &vis in &visible {
            for _ in 0..shape.in_dim {
                values.push(if vis { rng.random_range(-1.0f32..1.0) } else { 0.0 });
            }
        }
        let feats = PartFeatureSet::new(shape.in_dim, values, visible)?;
        let label = rng.random_range(0..shape.num_ids);
        let params = uniform(rng, shape.num_params(), 1.0);
        let (_, grad) = id_objective(&shape, &params, &feats, label)?;
        let fd = central_difference(
            |x| id_objective(&shape, x, &feats, label).unwrap().0,
            &params,
            FD_STEP,
        );
        Ok(relative_error(&grad, &fd))
    })
}

/// All suites, each drawing from its own stream derived from `seed`.
pub fn run_all(seed: u64, trials: usize) -> Result<Vec<SuiteReport>> {
    let runners: [fn(usize, &mut ChaCha8Rng) -> Result<SuiteReport>; 4] =
        [check_softmax_xent, check_heads, check_ps_balanced, check_ps_simple];
    runners
        .iter()
        .enumerate()
        .map(|(i, run)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            run(trials, &mut rng)
        })
        .collect()
}
