use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let p = softmax(logits.row(i));
        out.row_mut(i).copy_from_slice(&p);
    }
    out
}

/// Mean cross-entropy of `probabilities` against class indices, and its
/// gradient w.r.t. the logits that produced them: `(p - onehot) / batch`.
pub fn cross_entropy_loss(probabilities: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
    let (rows, classes) = probabilities.shape();
    if targets.len() != rows {
        return Err(Error::Shape(format!("{} targets for {rows} rows", targets.len())));
    }
    if rows == 0 {
        return Err(Error::Empty("cross-entropy batch"));
    }
    let batch = rows as f64;
    let mut loss = 0.0;
    let mut grad = probabilities.clone();
    for (i, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::LabelOutOfRange { label: t, classes });
        }
        // Clamp keeps the loss finite if a probability underflows to zero.
        loss -= probabilities.get(i, t).max(f64::MIN_POSITIVE).ln();
        let row = grad.row_mut(i);
        row[t] -= 1.0;
        row.iter_mut().for_each(|v| *v /= batch);
    }
    Ok((loss / batch, grad))
}

/// Per-sample sum of squared differences, averaged over the batch, and its
/// gradient w.r.t. `prediction`: `2 (prediction - target) / batch`.
pub fn mse_loss(prediction: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if prediction.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    if prediction.rows() == 0 {
        return Err(Error::Empty("mse batch"));
    }
    let batch = prediction.rows() as f64;
    let diff = prediction.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / batch;
    Ok((loss, diff.scale(2.0 / batch)))
}
