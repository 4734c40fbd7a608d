//! Mini-batch Adam training with early stopping on validation NLL.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::events::Dataset;
use crate::model::{Model, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            grad_clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "patience must be in 1..=max_epochs ({}), got {}",
                self.max_epochs, self.patience
            ));
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad(format!(
                "grad_clip_norm must be positive, got {}",
                self.grad_clip_norm
            ));
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let err = |e: &dyn std::fmt::Display| {
            Error::InvalidConfig(format!("bad value {value:?} for {key}: {e}"))
        };
        match key {
            "lr" => self.lr = value.parse().map_err(|e| err(&e))?,
            "batch_size" => self.batch_size = value.parse().map_err(|e| err(&e))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|e| err(&e))?,
            "patience" => self.patience = value.parse().map_err(|e| err(&e))?,
            "grad_clip_norm" => self.grad_clip_norm = value.parse().map_err(|e| err(&e))?,
            "seed" => self.seed = value.parse().map_err(|e| err(&e))?,
            _ => return Err(Error::InvalidConfig(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }
}

/// Per-event NLLs after one epoch; epoch 0 is the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub valid_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation NLL seen.
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_valid_nll(&self) -> f64 {
        self.history[self.best.epoch].valid_nll
    }

    pub fn initial(&self) -> EpochRecord {
        self.history[0]
    }
}

/// Mean NLL per event over `data`.
pub fn evaluate_nll(model: &Model, data: &Dataset) -> Result<f64> {
    let events = data.num_events();
    if events == 0 {
        return Err(Error::InvalidDataset(
            "cannot evaluate NLL on a dataset without events".into(),
        ));
    }
    let mut total = 0.0;
    for seq in &data.sequences {
        total += model.sequence_nll_value(seq)?;
    }
    Ok(total / events as f64)
}

fn check_types(model: &ModelConfig, data: &Dataset, which: &str) -> Result<()> {
    if data.num_types != model.num_types {
        return Err(Error::Incompatible(format!(
            "{which} data has K={} but the model has K={}",
            data.num_types, model.num_types
        )));
    }
    Ok(())
}

/// Trains a freshly initialized model (seeded by `train_cfg.seed`).
pub fn train(
    model_cfg: ModelConfig,
    train_data: &Dataset,
    valid_data: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let model = Model::new(model_cfg, train_cfg.seed)?;
    train_model(model, train_data, valid_data, train_cfg)
}

/// Trains `model` in place of a fresh initialization.
pub fn train_model(
    mut model: Model,
    train_data: &Dataset,
    valid_data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_types(model.config(), train_data, "training")?;
    check_types(model.config(), valid_data, "validation")?;
    if train_data.num_events() == 0 {
        return Err(Error::InvalidDataset("training data has no events".into()));
    }

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.params());
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_nll: evaluate_nll(&model, train_data)?,
        valid_nll: evaluate_nll(&model, valid_data)?,
    }];
    let mut best = Checkpoint::new(model.clone(), 0);
    let mut best_valid = history[0].valid_nll;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let (mut epoch_loss, mut epoch_events) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let events: usize = batch.iter().map(|&i| train_data.sequences[i].len()).sum();
            let denom = events.max(1) as f64;
            model.params_mut().zero_grad();
            let mut batch_loss = 0.0;
            for &i in batch {
                let tape = Tape::new();
                let nll = model
                    .sequence_nll(&tape, &train_data.sequences[i])
                    .map_err(|e| diverged(epoch, step, e))?;
                batch_loss += nll.item();
                let grads = tape.backward(nll.scale(1.0 / denom))?;
                grads.accumulate_into(model.params_mut());
            }
            let norm = model.params_mut().clip_grad_norm(cfg.grad_clip_norm);
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    message: format!("loss {batch_loss}, gradient norm {norm}"),
                });
            }
            adam_step(model.params_mut(), &mut state, &adam);
            epoch_loss += batch_loss;
            epoch_events += events;
        }

        let valid_nll = evaluate_nll(&model, valid_data).map_err(|e| diverged(epoch, step, e))?;
        history.push(EpochRecord {
            epoch,
            train_nll: epoch_loss / epoch_events.max(1) as f64,
            valid_nll,
        });
        if valid_nll < best_valid {
            best_valid = valid_nll;
            best = Checkpoint::new(model.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { best, history })
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op_id, op } => Error::Diverged {
            epoch,
            step,
            message: format!("non-finite value produced by op #{op_id} ({op})"),
        },
        other => other,
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_nll,valid_nll\n");
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_nll, r.valid_nll).expect("string write");
    }
    out
}

pub fn save_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::{simulate_dataset, Preset};

    fn small_cfg(k: usize) -> ModelConfig {
        ModelConfig {
            d_type: 4,
            d_time: 2,
            d_hidden: 6,
            num_components: 2,
            ..ModelConfig::new(k)
        }
    }

    fn data(seed: u64, n: usize) -> Dataset {
        simulate_dataset(&Preset::Haw5.params(), n, 20.0, seed).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig {
            lr: 0.0,
            max_epochs: 2,
            patience: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (tr, va) = (data(1, 8), data(2, 4));
        let init = Model::new(small_cfg(5), cfg.seed).unwrap();
        let out = train(small_cfg(5), &tr, &va, &cfg).unwrap();
        assert_eq!(out.best.model.params(), init.params());
        for r in &out.history {
            assert_eq!(r.valid_nll, out.history[0].valid_nll);
        }
    }

    #[test]
    fn training_is_deterministic_and_improves() {
        let cfg = TrainConfig {
            lr: 1e-2,
            max_epochs: 4,
            patience: 4,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let (tr, va) = (data(3, 16), data(4, 6));
        let a = train(small_cfg(5), &tr, &va, &cfg).unwrap();
        let b = train(small_cfg(5), &tr, &va, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.best_valid_nll() < a.initial().valid_nll);
    }

    #[test]
    fn rejects_mismatched_types_and_bad_config() {
        let (tr, va) = (data(1, 2), data(2, 2));
        let err = train(small_cfg(4), &tr, &va, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Incompatible(_)));
        let bad = TrainConfig {
            patience: 300,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn evaluate_rejects_empty_data() {
        let model = Model::new(small_cfg(5), 0).unwrap();
        let empty = Dataset::new(5, vec![]).unwrap();
        assert!(evaluate_nll(&model, &empty).is_err());
    }

    #[test]
    fn history_csv_format() {
        let h = [EpochRecord {
            epoch: 0,
            train_nll: 1.5,
            valid_nll: 2.0,
        }];
        assert_eq!(history_csv(&h), "epoch,train_nll,valid_nll\n0,1.5,2\n");
    }
}
