use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One next-event prediction next to the observed event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub true_type: usize,
    pub predicted_type: usize,
    pub true_tau: f64,
    pub predicted_tau: f64,
}

fn require_records(records: &[PredictionRecord], what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} needs at least one record")));
    }
    Ok(())
}

/// Per-class F1 averaged with weights proportional to true-class support.
pub fn weighted_f1(records: &[PredictionRecord]) -> Result<f64> {
    require_records(records, "weighted_f1")?;
    let k = records
        .iter()
        .map(|r| r.true_type.max(r.predicted_type) + 1)
        .max()
        .unwrap_or(0);
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut support = vec![0usize; k];
    for r in records {
        support[r.true_type] += 1;
        predicted[r.predicted_type] += 1;
        if r.true_type == r.predicted_type {
            tp[r.true_type] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..k {
        if support[c] == 0 || tp[c] == 0 {
            continue;
        }
        // 2 tp / (2 tp + fp + fn), which equals the harmonic mean of precision and recall.
        let f1 = 2.0 * tp[c] as f64 / (predicted[c] + support[c]) as f64;
        total += support[c] as f64 * f1;
    }
    Ok(total / records.len() as f64)
}

/// Mean absolute error between true and predicted inter-arrival times.
pub fn mae(records: &[PredictionRecord]) -> Result<f64> {
    require_records(records, "mae")?;
    let sum: f64 = records
        .iter()
        .map(|r| (r.true_tau - r.predicted_tau).abs())
        .sum();
    Ok(sum / records.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn recs(labels: &[usize], preds: &[usize]) -> Vec<PredictionRecord> {
        labels
            .iter()
            .zip(preds)
            .map(|(&t, &p)| PredictionRecord {
                true_type: t,
                predicted_type: p,
                true_tau: 0.0,
                predicted_tau: 0.0,
            })
            .collect()
    }

    #[test]
    fn f1_examples() {
        assert_eq!(weighted_f1(&recs(&[0, 1, 2], &[0, 1, 2])).unwrap(), 1.0);
        let f = weighted_f1(&recs(&[0, 0, 1, 1], &[0, 1, 1, 1])).unwrap();
        assert_relative_eq!(f, 0.5 * (2.0 / 3.0) + 0.5 * 0.8, epsilon = 1e-15);
        assert_relative_eq!(f, 0.7333, epsilon = 1e-4);
        // A class that is predicted but never true has zero support.
        let f = weighted_f1(&recs(&[0, 0], &[0, 2])).unwrap();
        assert_relative_eq!(f, 2.0 / 3.0, epsilon = 1e-15);
        assert!(weighted_f1(&[]).is_err());
    }

    #[test]
    fn mae_examples() {
        let r = |t, p| PredictionRecord {
            true_type: 0,
            predicted_type: 0,
            true_tau: t,
            predicted_tau: p,
        };
        assert_eq!(mae(&[r(1.0, 1.0)]).unwrap(), 0.0);
        assert_eq!(mae(&[r(1.0, 1.5), r(2.0, 2.0)]).unwrap(), 0.25);
        assert_eq!(mae(&[r(2.0, 2.0), r(1.0, 1.5)]).unwrap(), 0.25);
        assert!(mae(&[]).is_err());
    }
}
