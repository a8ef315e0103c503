//! Test metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Misclassification,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Misclassification => "misclassification",
        }
    }

    pub fn evaluate(self, pred: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        match self {
            Metric::Rmse => metric_rmse(pred, y),
            Metric::Misclassification => metric_misclassification(pred, y),
        }
    }
}

fn check_lengths(pred: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Domain("metric of an empty prediction vector".into()));
    }
    if pred.len() != y.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), y.len())));
    }
    Ok(())
}

/// `sqrt(mean((pred − y)²))`.
pub fn metric_rmse(pred: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_lengths(pred, y)?;
    Ok(((pred - y).norm_squared() / pred.len() as f64).sqrt())
}

/// Fraction of points where `sign(pred) ≠ y`, with `sign(0) = +1`.
pub fn metric_misclassification(pred: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_lengths(pred, y)?;
    if let Some(bad) = y.iter().find(|&&t| t != 1.0 && t != -1.0) {
        return Err(Error::Domain(format!("misclassification needs ±1 labels, found {bad}")));
    }
    let wrong = pred
        .iter()
        .zip(y.iter())
        .filter(|(&h, &t)| (if h >= 0.0 { 1.0 } else { -1.0 }) != t)
        .count();
    Ok(wrong as f64 / pred.len() as f64)
}
