//! Per-sample MSE losses on the per-step network outputs, with their gradients.

use crate::error::{Error, Result};
use crate::network::LossKind;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult<T> {
    pub loss: f64,
    /// Gradient on every per-step output, same shape as the outputs.
    pub grads: Vec<Vec<T>>,
}

pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

fn check<T>(outputs: &[Vec<T>], label: usize) -> Result<usize> {
    let classes = outputs.first().map(Vec::len).ok_or_else(|| Error::shape("no output steps"))?;
    if outputs.iter().any(|o| o.len() != classes) {
        return Err(Error::shape("ragged outputs"));
    }
    if label >= classes {
        return Err(Error::shape(format!("label {label} out of range for {classes} classes")));
    }
    Ok(classes)
}

fn mean_output<T: Real>(outputs: &[Vec<T>]) -> Vec<f64> {
    let inv = 1.0 / outputs.len() as f64;
    let mut m = vec![0.0; outputs[0].len()];
    for o in outputs {
        for (a, &v) in m.iter_mut().zip(o) {
            *a += v.as_f64() * inv;
        }
    }
    m
}

/// `||Y - mean_t o_t||^2`; the gradient `-(2/T)(Y - mean)` is shared by every step.
fn loss_on_mean<T: Real>(outputs: &[Vec<T>], label: usize) -> Result<LossResult<T>> {
    let classes = check(outputs, label)?;
    let y = one_hot(label, classes);
    let m = mean_output(outputs);
    let loss = y.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale = -2.0 / outputs.len() as f64;
    let g: Vec<T> = y.iter().zip(&m).map(|(a, b)| T::of(scale * (a - b))).collect();
    Ok(LossResult { loss, grads: vec![g; outputs.len()] })
}

pub fn loss_snn_rate_mse<T: Real>(outputs: &[Vec<T>], label: usize) -> Result<LossResult<T>> {
    loss_on_mean(outputs, label)
}

pub fn loss_rate_inspired<T: Real>(readouts: &[Vec<T>], label: usize) -> Result<LossResult<T>> {
    loss_on_mean(readouts, label)
}

/// `||Y - r_T||^2`.
pub fn loss_last_step<T: Real>(readouts: &[Vec<T>], label: usize) -> Result<LossResult<T>> {
    let classes = check(readouts, label)?;
    let y = one_hot(label, classes);
    let last = readouts.last().unwrap();
    let loss = y.iter().zip(last).map(|(a, b)| (a - b.as_f64()).powi(2)).sum();
    let mut grads = vec![vec![T::zero(); classes]; readouts.len()];
    grads[readouts.len() - 1] = y.iter().zip(last).map(|(a, b)| T::of(-2.0 * (a - b.as_f64()))).collect();
    Ok(LossResult { loss, grads })
}

/// `(1/T) sum_t ||Y - r_t||^2`.
pub fn loss_per_step<T: Real>(readouts: &[Vec<T>], label: usize) -> Result<LossResult<T>> {
    let classes = check(readouts, label)?;
    let y = one_hot(label, classes);
    let inv = 1.0 / readouts.len() as f64;
    let mut loss = 0.0;
    let grads = readouts
        .iter()
        .map(|r| {
            loss += inv * y.iter().zip(r).map(|(a, b)| (a - b.as_f64()).powi(2)).sum::<f64>();
            y.iter().zip(r).map(|(a, b)| T::of(-2.0 * inv * (a - b.as_f64()))).collect()
        })
        .collect();
    Ok(LossResult { loss, grads })
}

pub fn compute_loss<T: Real>(kind: LossKind, outputs: &[Vec<T>], label: usize) -> Result<LossResult<T>> {
    match kind {
        LossKind::SnnRateMse => loss_snn_rate_mse(outputs, label),
        LossKind::LastStep => loss_last_step(outputs, label),
        LossKind::PerStep => loss_per_step(outputs, label),
        LossKind::RateInspired => loss_rate_inspired(outputs, label),
    }
}

/// Class scores used for prediction: the final readout under the last-step loss,
/// the mean over steps otherwise.
pub fn aggregate<T: Real>(kind: LossKind, outputs: &[Vec<T>]) -> Vec<f64> {
    match kind {
        LossKind::LastStep => outputs.last().map(|o| o.iter().map(|v| v.as_f64()).collect()).unwrap_or_default(),
        _ if outputs.is_empty() => Vec::new(),
        _ => mean_output(outputs),
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict<T: Real>(kind: LossKind, outputs: &[Vec<T>]) -> usize {
    argmax(&aggregate(kind, outputs))
}
