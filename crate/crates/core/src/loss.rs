//! Training losses returning their value and the gradient with respect to
//! the predictions.

use alloc::vec;
use alloc::vec::Vec;

use crate::cloud::{dist, Point3};
use crate::error::{Error, Result};
use crate::spatial::NeighborIndex;

/// Unit vector from `b` toward `a` scaled by `s`; zero when the points coincide.
#[inline]
fn unit_scaled(a: &Point3, b: &Point3, s: f64) -> Point3 {
    let d = dist(a, b);
    if d == 0.0 {
        return [0.0; 3];
    }
    let f = s / d;
    [(a[0] - b[0]) * f, (a[1] - b[1]) * f, (a[2] - b[2]) * f]
}

/// Mean Euclidean distance between `pred[i]` and `target[i]`.
pub fn loss_aligned(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    if pred.len() != target.len() {
        return Err(Error::SizeMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let inv = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            value += dist(p, t);
            unit_scaled(p, t, inv)
        })
        .collect();
    Ok((value * inv, grads))
}

/// Mean squared distance between `pred[i]` and `target[i]`.
pub fn loss_mse(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    if pred.len() != target.len() {
        return Err(Error::SizeMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let inv = 1.0 / pred.len() as f64;
    let mut value = 0.0;
    let grads = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
            value += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            [2.0 * inv * d[0], 2.0 * inv * d[1], 2.0 * inv * d[2]]
        })
        .collect();
    Ok((value * inv, grads))
}

/// Both directed nearest-neighbor sums with their subgradients:
/// `(Σ_p min_t, grad, Σ_t min_p, grad)`.
fn directed_with_grads(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>, f64, Vec<Point3>)> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let t_index = NeighborIndex::new(target);
    let mut forward = 0.0;
    let mut g_forward = vec![[0.0; 3]; pred.len()];
    for (i, p) in pred.iter().enumerate() {
        let n = t_index.nearest(p).expect("non-empty");
        let t = &target[n.index];
        forward += dist(p, t);
        g_forward[i] = unit_scaled(p, t, 1.0);
    }
    let p_index = NeighborIndex::new(pred);
    let mut backward = 0.0;
    let mut g_backward = vec![[0.0; 3]; pred.len()];
    for t in target {
        let n = p_index.nearest(t).expect("non-empty");
        let p = &pred[n.index];
        backward += dist(p, t);
        let g = unit_scaled(p, t, 1.0);
        for c in 0..3 {
            g_backward[n.index][c] += g[c];
        }
    }
    Ok((forward, g_forward, backward, g_backward))
}

/// Augmented Chamfer on sampled sets: the larger directed sum. The gradient
/// follows the realized branch (the prediction-to-target side on ties).
pub fn loss_aug_chamfer_sample(pred: &[Point3], target_sample: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    let (f, gf, b, gb) = directed_with_grads(pred, target_sample)?;
    Ok(if f >= b { (f, gf) } else { (b, gb) })
}

/// Chamfer on sampled sets: the sum of both directed sums.
pub fn loss_chamfer_sample(pred: &[Point3], target_sample: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    let (f, mut gf, b, gb) = directed_with_grads(pred, target_sample)?;
    for (a, g) in gf.iter_mut().zip(&gb) {
        for c in 0..3 {
            a[c] += g[c];
        }
    }
    Ok((f + b, gf))
}
