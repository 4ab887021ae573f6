//! Binary classification metrics for the clickbait (positive) class.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Mean squared error of the raw probabilities against the labels.
    pub mse: f64,
}

/// Thresholds `preds` (`p ≥ threshold` is clickbait) against `labels` and
/// derives the usual scores. Precision or recall with a zero denominator is
/// reported as 0.
pub fn compute_metrics(preds: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("compute_metrics"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut sq = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 0) => tn += 1,
            (false, 1) => fn_ += 1,
            (_, other) => return Err(Error::InvalidLabel(f64::from(other))),
        }
        sq += (p - f64::from(y)).powi(2);
    }
    let ratio = |num: usize, den: usize, what: &str| {
        if den == 0 {
            log::warn!("{what} is undefined (no {what} denominator); reporting 0");
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fn_, "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let n = preds.len();
    Ok(MetricsReport {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        f1,
        accuracy: (tp + tn) as f64 / n as f64,
        mse: sq / n as f64,
    })
}

impl MetricsReport {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `{counts: {tp, fp, tn, fn}, precision, recall, f1, accuracy, mse}`.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "counts": { "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn_ },
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "mse": self.mse,
        })
    }

    /// Aligned plain-text rendering with six decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, v) in [
            ("tp", self.tp),
            ("fp", self.fp),
            ("tn", self.tn),
            ("fn", self.fn_),
        ] {
            out.push_str(&format!("{name:<10} {v:>10}\n"));
        }
        for (name, v) in [
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("accuracy", self.accuracy),
            ("mse", self.mse),
        ] {
            out.push_str(&format!("{name:<10} {v:>10.6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = compute_metrics(&[0.99, 0.01, 0.97, 0.02], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!((m.f1, m.accuracy), (1.0, 1.0));
    }

    #[test]
    fn confusion_fixture() {
        // tp=2, fp=1, fn=1, tn=6
        let preds = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
        let m = compute_metrics(&preds, &labels, 0.5).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_, m.tn), (2, 1, 1, 6));
        assert_eq!(m.precision, 2.0 / 3.0);
        assert_eq!(m.recall, 2.0 / 3.0);
        assert_eq!(m.f1, 2.0 / 3.0);
        assert_eq!(m.accuracy, 0.8);
        assert_eq!(m.total(), 10);
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = compute_metrics(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(m.tp, 1);
    }

    #[test]
    fn degenerate_denominators_give_zero() {
        let m = compute_metrics(&[0.1, 0.2], &[0, 0], 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            compute_metrics(&[0.1], &[0, 1], 0.5),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            compute_metrics(&[], &[], 0.5),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            compute_metrics(&[0.1], &[2], 0.5),
            Err(Error::InvalidLabel(_))
        ));
    }

    #[test]
    fn json_schema_and_text_agree() {
        let m = compute_metrics(&[0.9, 0.3, 0.6, 0.45], &[1, 1, 0, 0], 0.5).unwrap();
        let j = m.to_json();
        assert_eq!(j["counts"]["fn"], 1);
        let text = m.to_text();
        for key in ["precision", "recall", "f1", "accuracy", "mse"] {
            let shown = text
                .lines()
                .find(|l| l.split_whitespace().next() == Some(key))
                .and_then(|l| l.split_whitespace().nth(1))
                .unwrap();
            assert_eq!(shown, format!("{:.6}", j[key].as_f64().unwrap()));
        }
    }
}
