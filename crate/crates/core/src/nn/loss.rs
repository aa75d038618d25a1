use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Row-wise softmax, computed with the max-shift for stability.
pub fn softmax(logits: &Tensor2D) -> Tensor2D {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn loss_and_grad(logits: &Tensor2D, labels: &[usize]) -> Result<(f64, Tensor2D)> {
    let classes = logits.cols();
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let n = logits.rows() as f64;
    let mut grad = Tensor2D::zeros(logits.rows(), classes);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        total += log_sum - row[y];
        let g = grad.row_mut(i);
        for (k, (gk, zk)) in g.iter_mut().zip(row).enumerate() {
            let p = (zk - log_sum).exp();
            *gk = if k == y { p - 1.0 } else { p } / n;
        }
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross-entropy loss".into()));
    }
    grad.ensure_finite("logit gradient")?;
    Ok((loss, grad))
}
