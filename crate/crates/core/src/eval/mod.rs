//! Prediction metrics, influence extraction and ground-truth comparison.

mod baseline;
mod heatmap;
mod influence;
mod metrics;
mod pca;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use baseline::FrequencyBaseline;
pub use heatmap::{heatmap_export, matrix_csv, matrix_svg, parse_matrix_csv};
pub use influence::{
    influence_matrix, spearman, truth_alignment, Alignment, InfluenceMatrix, TruthMode,
};
pub use metrics::{mae, weighted_f1, PredictionRecord};
pub use pca::pca_reduce_1d;

use crate::error::{Error, Result};
use crate::events::Dataset;
use crate::model::{DecoderKind, Model};
use crate::train::evaluate_nll;

/// One prediction per event, each made from the events before it.
pub fn predict_dataset(model: &Model, data: &Dataset) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::with_capacity(data.num_events());
    for seq in &data.sequences {
        let preds = model.predict_sequence(seq)?;
        for ((ev, tau), p) in seq.events.iter().zip(seq.inter_arrivals()).zip(preds) {
            out.push(PredictionRecord {
                true_type: ev.type_id,
                predicted_type: p.type_id,
                true_tau: tau,
                predicted_tau: p.tau,
            });
        }
    }
    Ok(out)
}

/// Test-set metrics. `f1` and `mae` are `None` for models without next-event prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: Option<f64>,
    pub mae: Option<f64>,
    pub nll: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn evaluate_model(model: &Model, data: &Dataset) -> Result<MetricsReport> {
    if data.num_types != model.config().num_types {
        return Err(Error::Incompatible(format!(
            "model has K={} but data has K={}",
            model.config().num_types,
            data.num_types
        )));
    }
    let nll = evaluate_nll(model, data)?;
    if model.config().decoder != DecoderKind::Density {
        return Ok(MetricsReport {
            f1: None,
            mae: None,
            nll,
        });
    }
    let records = predict_dataset(model, data)?;
    Ok(MetricsReport {
        f1: Some(weighted_f1(&records)?),
        mae: Some(mae(&records)?),
        nll,
    })
}

pub fn evaluate_baseline(baseline: &FrequencyBaseline, data: &Dataset) -> Result<MetricsReport> {
    let records = baseline.predictions(data);
    Ok(MetricsReport {
        f1: Some(weighted_f1(&records)?),
        mae: Some(mae(&records)?),
        nll: baseline.nll(data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::events::{Event, EventSequence};
    use crate::model::ModelConfig;

    /// A model whose encoder output is ignored: every prediction is the
    /// categorical law softmax(type bias), independent of history.
    fn constant_model(logits: &[f64]) -> Model {
        let k = logits.len();
        let cfg = ModelConfig {
            d_type: 2,
            d_time: 1,
            d_hidden: 2,
            num_components: 1,
            ..ModelConfig::new(k)
        };
        let mut m = Model::new(cfg, 0).unwrap();
        let store = m.params_mut();
        let w = store.find("dec.type.w").unwrap();
        store.value_mut(w).fill(0.0);
        let b = store.find("dec.type.b").unwrap();
        *store.value_mut(b) = Tensor::column(logits.to_vec());
        m
    }

    #[test]
    fn forced_model_reaches_bayes_f1() {
        // Toy: types drawn i.i.d. with probabilities p; the Bayes predictor always picks argmax p.
        let p = [0.5, 0.3, 0.2];
        let logits: Vec<f64> = p.iter().map(|x: &f64| x.ln()).collect();
        let model = constant_model(&logits);
        // Sequences realizing the law exactly: 10 events with counts 5/3/2.
        let types = [0, 1, 0, 2, 0, 1, 0, 2, 1, 0];
        let events: Vec<Event> = types
            .iter()
            .enumerate()
            .map(|(i, &k)| Event::new(k, i as f64 + 1.0))
            .collect();
        let data = Dataset::new(3, vec![EventSequence::new("t", events, 11.0, 3).unwrap()]).unwrap();
        let report = evaluate_model(&model, &data).unwrap();

        // Brute force over the outcome distribution: expected confusion counts under "always 0".
        let mut bayes = 0.0;
        for c in 0..3 {
            let tp = if c == 0 { p[0] } else { 0.0 };
            let predicted = if c == 0 { 1.0 } else { 0.0 };
            let f1 = if tp > 0.0 { 2.0 * tp / (predicted + p[c]) } else { 0.0 };
            bayes += p[c] * f1;
        }
        assert!((report.f1.unwrap() - bayes).abs() < 1e-12);
    }

    #[test]
    fn metrics_json_shape() {
        let r = MetricsReport {
            f1: Some(0.5),
            mae: Some(1.0),
            nll: 2.0,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["f1"], 0.5);
        assert_eq!(v["mae"], 1.0);
        assert_eq!(v["nll"], 2.0);
    }

    #[test]
    fn mismatched_types_rejected() {
        let model = constant_model(&[0.0, 0.0]);
        let data = Dataset::new(3, vec![]).unwrap();
        assert!(matches!(evaluate_model(&model, &data), Err(Error::Incompatible(_))));
    }
}
