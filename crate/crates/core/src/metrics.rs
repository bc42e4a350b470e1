//! Sign classification and binary confusion metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sign threshold; an output of exactly zero maps to `+1`.
pub fn classify(outputs: &[f64]) -> Vec<f64> {
    outputs
        .iter()
        .map(|&f| if f >= 0.0 { 1.0 } else { -1.0 })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

impl MetricsReport {
    pub fn count(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Positive class is `+1`. Labels and predictions must be `+-1`.
pub fn compute_metrics(preds: &[f64], labels: &[f64]) -> Result<MetricsReport> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(labels) {
        if (p != 1.0 && p != -1.0) || (y != 1.0 && y != -1.0) {
            return Err(Error::Validation(format!("non-binary pair ({p}, {y})")));
        }
        match (p > 0.0, y > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut undefined = false;
    let mut ratio = |a: usize, b: usize| {
        if b == 0 {
            undefined = true;
            0.0
        } else {
            a as f64 / b as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        precision,
        recall,
        f1,
        tp,
        fp,
        tn,
        fn_,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_tie_break() {
        assert_eq!(classify(&[0.3, -0.7, 0.0]), vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn confusion_arithmetic() {
        let p = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let y = [1.0, 1.0, -1.0, 1.0, -1.0, -1.0];
        let m = compute_metrics(&p, &y).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 2));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.accuracy - 4.0 / 6.0).abs() < 1e-15);
        assert!(!m.undefined);
    }

    #[test]
    fn all_positive_and_degenerate() {
        let m = compute_metrics(&[1.0; 4], &[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.accuracy, 0.5);
        let z = compute_metrics(&[-1.0; 2], &[-1.0; 2]).unwrap();
        assert!(z.undefined);
        assert_eq!(z.f1, 0.0);
        assert!(compute_metrics(&[], &[]).is_err());
    }
}
