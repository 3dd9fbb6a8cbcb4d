//! Stateless functions: softmax, smooth-L1 and cross-entropy, each with its gradient.

use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Transition point of the smooth-L1 loss.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Numerically stable softmax over a flat vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    super::attention::softmax_inplace(&mut y);
    y
}

/// Row-wise softmax of a matrix.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for i in 0..y.rows() {
        super::attention::softmax_inplace(y.row_mut(i));
    }
    y
}

/// Given `y = softmax(x)` and `dL/dy`, returns `dL/dx`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| yi * (di - dot)).collect()
}

pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        let g = softmax_backward(y.row(i), dy.row(i));
        dx.row_mut(i).copy_from_slice(&g);
    }
    dx
}

/// Mean smooth-L1 (Huber with `beta = 1`) over all elements.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(dim_err("smooth_l1", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = (p - t).abs();
            if d < SMOOTH_L1_BETA {
                0.5 * d * d / SMOOTH_L1_BETA
            } else {
                d - 0.5 * SMOOTH_L1_BETA
            }
        })
        .sum();
    Ok(s / pred.len() as f64)
}

/// Gradient of [`smooth_l1`] with respect to `pred`.
pub fn smooth_l1_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            let g = if d.abs() < SMOOTH_L1_BETA { d / SMOOTH_L1_BETA } else { d.signum() };
            g / n
        })
        .collect()
}

/// `-ln(max(p[target], 1e-12))`.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    let p = *probs.get(target).ok_or(Error::IndexOutOfRange { index: target, len: probs.len() })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of [`cross_entropy`] with respect to the probability vector.
pub fn cross_entropy_grad(probs: &[f64], target: usize) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    if probs[target] > PROB_FLOOR {
        g[target] = -1.0 / probs[target];
    }
    g
}
