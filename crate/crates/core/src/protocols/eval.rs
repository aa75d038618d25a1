use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerStack, Tensor2D};

/// Global and per-label accuracy, as fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub global: f64,
    pub per_label: Vec<f64>,
}

/// Index of the largest entry; ties resolve to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate_predictions(predictions: &[usize], labels: &[usize], num_labels: usize) -> Result<Evaluation> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut correct = vec![0usize; num_labels];
    let mut total = vec![0usize; num_labels];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_labels {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: num_labels,
            });
        }
        total[y] += 1;
        correct[y] += usize::from(p == y);
    }
    if let Some(missing) = total.iter().position(|&n| n == 0) {
        return Err(Error::Metric(format!("label {missing} is absent from the eval set")));
    }
    let per_label = correct
        .iter()
        .zip(&total)
        .map(|(&c, &n)| c as f64 / n as f64)
        .collect();
    Ok(Evaluation {
        global: correct.iter().sum::<usize>() as f64 / labels.len() as f64,
        per_label,
    })
}

pub(crate) fn predict_argmax(logits: &Tensor2D) -> Vec<usize> {
    (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
}

pub fn evaluate(model: &LayerStack, eval: &Dataset) -> Result<Evaluation> {
    let logits = model.predict(eval.features())?;
    evaluate_predictions(&predict_argmax(&logits), eval.labels(), eval.num_labels())
}
