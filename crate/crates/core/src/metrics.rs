//! Binary classification scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    /// F1 of the positive class (label 1).
    #[default]
    Positive,
    /// Unweighted mean of the per-class F1 scores.
    Macro,
}

fn check(preds: &[u8], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Input("cannot score an empty prediction set".into()));
    }
    if preds.iter().chain(labels).any(|&v| v > 1) {
        return Err(Error::Input("labels must be 0 or 1".into()));
    }
    Ok(())
}

fn class_f1(preds: &[u8], labels: &[u8], class: u8) -> f64 {
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fne) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Positive-class F1; 0 when precision and recall are both 0.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check(preds, labels)?;
    Ok(class_f1(preds, labels, 1))
}

pub fn macro_f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check(preds, labels)?;
    Ok(0.5 * (class_f1(preds, labels, 0) + class_f1(preds, labels, 1)))
}

pub fn score(mode: F1Mode, preds: &[u8], labels: &[u8]) -> Result<f64> {
    match mode {
        F1Mode::Positive => f1(preds, labels),
        F1Mode::Macro => macro_f1(preds, labels),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
