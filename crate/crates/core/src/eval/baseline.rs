use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::metrics::PredictionRecord;
use crate::error::{Error, Result};
use crate::events::Dataset;

/// History-free reference: marginal type frequencies plus one homogeneous
/// Poisson rate for the merged stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBaseline {
    /// Add-one smoothed type frequencies.
    pub type_probs: Vec<f64>,
    /// Total events per unit time.
    pub rate: f64,
}

impl FrequencyBaseline {
    pub fn fit(train: &Dataset) -> Result<Self> {
        let n = train.num_events();
        let horizon = train.total_horizon();
        if n == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidDataset(
                "frequency baseline needs events and a positive total horizon".into(),
            ));
        }
        let k = train.num_types;
        let type_probs = train
            .type_counts()
            .iter()
            .map(|&c| (c as f64 + 1.0) / (n + k) as f64)
            .collect();
        Ok(Self {
            type_probs,
            rate: n as f64 / horizon,
        })
    }

    /// Most frequent type, lowest index on ties.
    pub fn predicted_type(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.type_probs.iter().enumerate() {
            if *p > self.type_probs[best] {
                best = k;
            }
        }
        best
    }

    /// Median of the exponential inter-arrival law.
    pub fn predicted_tau(&self) -> f64 {
        LN_2 / self.rate
    }

    /// Mean per-event `-log(P(k) * rate * exp(-rate * tau))`.
    pub fn nll(&self, data: &Dataset) -> Result<f64> {
        let n = data.num_events();
        if n == 0 {
            return Err(Error::InvalidDataset("no events to score".into()));
        }
        let log_rate = self.rate.ln();
        let mut total = 0.0;
        for seq in &data.sequences {
            for (ev, tau) in seq.events.iter().zip(seq.inter_arrivals()) {
                total -= self.type_probs[ev.type_id].ln() + log_rate - self.rate * tau;
            }
        }
        Ok(total / n as f64)
    }

    pub fn predictions(&self, data: &Dataset) -> Vec<PredictionRecord> {
        let (k, tau) = (self.predicted_type(), self.predicted_tau());
        data.sequences
            .iter()
            .flat_map(|seq| {
                seq.events
                    .iter()
                    .zip(seq.inter_arrivals())
                    .map(move |(ev, t)| PredictionRecord {
                        true_type: ev.type_id,
                        predicted_type: k,
                        true_tau: t,
                        predicted_tau: tau,
                    })
            })
            .collect()
    }
}
