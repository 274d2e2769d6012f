use crate::error::{Error, Result};
use crate::linalg::argmax;

/// Probabilities are clipped to `[CLIP, 1 − CLIP]` before taking logs.
pub const CLIP: f64 = 1e-15;

fn check(predicted: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if predicted.len() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions vs {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (p, &l) in predicted.iter().zip(labels) {
        if l >= p.len() {
            return Err(Error::LengthMismatch(format!("label {l} outside a {}-class prediction", p.len())));
        }
    }
    Ok(())
}

/// Mean negative log-probability of the true class.
pub fn log_loss(predicted: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check(predicted, labels)?;
    let total: f64 = predicted
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].clamp(CLIP, 1.0 - CLIP).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Fraction of rows whose argmax (lowest index on ties) is the true class.
pub fn accuracy(predicted: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check(predicted, labels)?;
    Ok(correct(predicted, labels) as f64 / labels.len() as f64)
}

pub(crate) fn correct(predicted: &[Vec<f64>], labels: &[usize]) -> usize {
    predicted.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count()
}

/// `counts[true][predicted]` under the argmax rule.
pub fn confusion_matrix(predicted: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (p, &l) in predicted.iter().zip(labels) {
        m[l][argmax(p)] += 1;
    }
    m
}
