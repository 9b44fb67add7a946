//! Training losses on per-pixel class logits.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-6;
pub const DICE_WEIGHT: f64 = 0.7;
pub const CE_WEIGHT: f64 = 0.3;

/// Flattens `logits` to `N×k` and builds the matching one-hot constant.
fn prepare(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<(Var, Var, usize, usize)> {
    let shape = tape.value(logits).shape().to_vec();
    let k = *shape.last().expect("non-empty shape");
    let n = tape.value(logits).len() / k;
    if labels.len() != n {
        return Err(TensorError::dim(format!("{} labels for {n} pixels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::contract(format!("label {bad} outside 0..{k}")));
    }
    let flat = tape.reshape(logits, &[n, k])?;
    let mut onehot = Tensor::zeros(&[n, k]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * k + l] = 1.0;
    }
    let onehot = tape.constant(onehot)?;
    Ok((flat, onehot, n, k))
}

/// `1 − mean_c (2·Σ p·y + ε) / (Σ p + Σ y + ε)` over softmax probabilities.
pub fn dice_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (flat, onehot, _, k) = prepare(tape, logits, labels)?;
    let p = tape.softmax_lastdim(flat)?;
    let py = tape.mul(p, onehot)?;
    let inter = tape.sum_rows(py)?;
    let num = tape.affine(inter, 2.0, DICE_EPS)?;
    let psum = tape.sum_rows(p)?;
    let ysum = tape.sum_rows(onehot)?;
    let den = tape.add(psum, ysum)?;
    let den = tape.affine(den, 1.0, DICE_EPS)?;
    let dice = tape.div(num, den)?;
    let total = tape.sum(dice)?;
    tape.affine(total, -1.0 / k as f64, 1.0)
}

/// Mean negative log-probability of the true class.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (flat, onehot, n, _) = prepare(tape, logits, labels)?;
    let logp = tape.log_softmax_lastdim(flat)?;
    let picked = tape.mul(logp, onehot)?;
    let total = tape.sum(picked)?;
    tape.scale(total, -1.0 / n as f64)
}

/// `0.7·dice + 0.3·ce`.
pub fn combined_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let d = dice_loss(tape, logits, labels)?;
    let c = ce_loss(tape, logits, labels)?;
    let d = tape.scale(d, DICE_WEIGHT)?;
    let c = tape.scale(c, CE_WEIGHT)?;
    tape.add(d, c)
}
