//! Local embedding, type-wise recurrent encoding, and per-type decoding.
//!
//! In local mode every context type `k` embeds each event `(k_i, dt_i)` as
//! `z^k(k_i) || tanh(w_k * log(1 + dt_i) + b_k)` and one shared GRU runs over
//! that stream once per context, giving `h^k`. Type `k`'s next-event law is
//! decoded from `h^k` alone. Global mode uses a single embedding table and a
//! single encoding `h` that every per-type decoder reads.

mod config;
mod decoder;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::events::{Event, EventSequence};

pub use config::{DecoderKind, Mode, ModelConfig};
pub use decoder::NextEventDistribution;

/// Lower bound on mixture scales.
pub const SCALE_FLOOR: f64 = 1e-3;
/// Inter-arrival times are clamped to this before taking logs.
pub const TAU_FLOOR: f64 = 1e-9;

/// History summary after some prefix of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEncodings {
    pub mode: Mode,
    /// `K x d_hidden` in local mode, `1 x d_hidden` in global mode.
    pub states: Tensor,
}

impl HistoryEncodings {
    /// The encoding read by type `k`'s decoder.
    pub fn for_type(&self, k: usize) -> &[f64] {
        match self.mode {
            Mode::Local => self.states.row_slice(k),
            Mode::Global => self.states.row_slice(0),
        }
    }
}

/// One next-event prediction: the argmax type and the predicted inter-arrival time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub type_id: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ids {
    type_table: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    gru_w_in: ParamId,
    gru_w_hid: ParamId,
    gru_b_in: ParamId,
    gru_b_hid: ParamId,
    decoder: DecoderIds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DecoderIds {
    Density {
        type_w: ParamId,
        type_b: ParamId,
        mix_w: ParamId,
        mix_b: ParamId,
    },
    Intensity {
        w_h: ParamId,
        w_t: ParamId,
        w_l: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    ids: Ids,
}

/// Parameter names and shapes for a configuration, in registration order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(&'static str, usize, usize)> {
    let k = cfg.num_types;
    let c = cfg.channels();
    let h = cfg.d_hidden;
    let mut layout = vec![
        ("embed.type", c * k, cfg.d_type),
        ("embed.time.w", c, cfg.d_time),
        ("embed.time.b", c, cfg.d_time),
        ("gru.w_in", cfg.d_input(), 3 * h),
        ("gru.w_hid", h, 3 * h),
        ("gru.b_in", 1, 3 * h),
        ("gru.b_hid", 1, 3 * h),
    ];
    match cfg.decoder {
        DecoderKind::Density => layout.extend([
            ("dec.type.w", k, h),
            ("dec.type.b", k, 1),
            ("dec.mix.w", k * h, 3 * cfg.num_components),
            ("dec.mix.b", k, 3 * cfg.num_components),
        ]),
        DecoderKind::Intensity => layout.extend([
            ("dec.mlp.w_h", k * h, cfg.d_mlp),
            ("dec.mlp.w_t", k, cfg.d_mlp),
            ("dec.mlp.w_l", k, cfg.d_mlp),
            ("dec.mlp.b1", k, cfg.d_mlp),
            ("dec.mlp.w2", k, cfg.d_mlp),
            ("dec.mlp.b2", k, 1),
        ]),
    }
    layout
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
    )
}

/// `n x n` orthonormal matrix from Gram-Schmidt on a Gaussian draw (QR's Q factor).
fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for q in &cols {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    cols
}

fn init_tensor(rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize, cfg: &ModelConfig) -> Tensor {
    let h = cfg.d_hidden;
    match name {
        "embed.type" => uniform(rng, rows, cols, cfg.d_type),
        "embed.time.w" => uniform(rng, rows, cols, 1),
        "gru.w_in" => uniform(rng, rows, cols, cfg.d_input()),
        "gru.w_hid" => {
            let mut t = Tensor::zeros(rows, cols);
            for gate in 0..3 {
                let q = orthogonal(rng, h);
                for (r, row) in q.iter().enumerate() {
                    t.row_slice_mut(r)[gate * h..(gate + 1) * h].copy_from_slice(row);
                }
            }
            t
        }
        "dec.type.w" | "dec.mix.w" => uniform(rng, rows, cols, h),
        "dec.mlp.w_h" | "dec.mlp.w_t" | "dec.mlp.w_l" => uniform(rng, rows, cols, h + 2),
        "dec.mlp.w2" => uniform(rng, rows, cols, cfg.d_mlp),
        _ => Tensor::zeros(rows, cols),
    }
}

impl Model {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, rows, cols) in param_layout(&config) {
            let t = init_tensor(&mut rng, name, rows, cols, &config);
            store.add(name, t);
        }
        Self::from_store(config, store)
    }

    /// Wraps an existing parameter store, checking names and shapes against the config.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != store.len() {
            return Err(Error::Incompatible(format!(
                "expected {} parameters, found {}",
                layout.len(),
                store.len()
            )));
        }
        for ((name, rows, cols), p) in layout.iter().zip(store.iter()) {
            if p.name != *name {
                return Err(Error::Incompatible(format!(
                    "expected parameter {name}, found {}",
                    p.name
                )));
            }
            if p.value.shape() != [*rows, *cols] {
                return Err(Error::Incompatible(format!(
                    "parameter {name} has shape {:?}, expected [{rows}, {cols}]",
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| store.find(n).expect("layout checked");
        let decoder = match config.decoder {
            DecoderKind::Density => DecoderIds::Density {
                type_w: id("dec.type.w"),
                type_b: id("dec.type.b"),
                mix_w: id("dec.mix.w"),
                mix_b: id("dec.mix.b"),
            },
            DecoderKind::Intensity => DecoderIds::Intensity {
                w_h: id("dec.mlp.w_h"),
                w_t: id("dec.mlp.w_t"),
                w_l: id("dec.mlp.w_l"),
                b1: id("dec.mlp.b1"),
                w2: id("dec.mlp.w2"),
                b2: id("dec.mlp.b2"),
            },
        };
        let ids = Ids {
            type_table: id("embed.type"),
            time_w: id("embed.time.w"),
            time_b: id("embed.time.b"),
            gru_w_in: id("gru.w_in"),
            gru_w_hid: id("gru.w_hid"),
            gru_b_in: id("gru.b_in"),
            gru_b_hid: id("gru.b_hid"),
            decoder,
        };
        Ok(Self { config, store, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn into_params(self) -> ParamStore {
        self.store
    }

    fn p<'t>(&self, tape: &'t Tape, id: ParamId) -> Var<'t> {
        tape.param(&self.store, id)
    }

    fn check_type(&self, k: usize) -> Result<()> {
        if k >= self.config.num_types {
            return Err(Error::InvalidArgument(format!(
                "type {k} out of range for K={}",
                self.config.num_types
            )));
        }
        Ok(())
    }

    /// Embeddings of event `(k_i, dt)` in every channel: `C x (d_type + d_time)`.
    fn embed<'t>(&self, tape: &'t Tape, k_i: usize, dt: f64) -> Var<'t> {
        let k = self.config.num_types;
        let rows: Vec<usize> = (0..self.config.channels()).map(|c| c * k + k_i).collect();
        let type_part = self.p(tape, self.ids.type_table).gather_rows(&rows);
        let feature = dt.max(0.0).ln_1p();
        let time_part = self
            .p(tape, self.ids.time_w)
            .scale(feature)
            .add(self.p(tape, self.ids.time_b))
            .tanh();
        type_part.concat(time_part)
    }

    /// One GRU update applied row-wise to all channels.
    fn gru_step<'t>(&self, tape: &'t Tape, x: Var<'t>, h: Var<'t>) -> Var<'t> {
        let d = self.config.d_hidden;
        let gx = x
            .matmul(self.p(tape, self.ids.gru_w_in))
            .add_row(self.p(tape, self.ids.gru_b_in));
        let gh = h
            .matmul(self.p(tape, self.ids.gru_w_hid))
            .add_row(self.p(tape, self.ids.gru_b_hid));
        let z = (gx.slice(0, d) + gh.slice(0, d)).sigmoid();
        let r = (gx.slice(d, 2 * d) + gh.slice(d, 2 * d)).sigmoid();
        let n = (gx.slice(2 * d, 3 * d) + r * gh.slice(2 * d, 3 * d)).tanh();
        // (1 - z) * n + z * h
        n + z * (h - n)
    }

    fn initial_state<'t>(&self, tape: &'t Tape) -> Var<'t> {
        tape.leaf(Tensor::zeros(self.config.channels(), self.config.d_hidden))
    }

    /// `K x d_hidden` decoder input: local states as-is, the global state repeated per type.
    fn decoder_input<'t>(&self, state: Var<'t>) -> Var<'t> {
        match self.config.mode {
            Mode::Local => state,
            Mode::Global => state.gather_rows(&vec![0; self.config.num_types]),
        }
    }

    /// Runs the encoder over `events`, returning the state after each prefix (including the empty one).
    fn encode_prefixes<'t>(&self, tape: &'t Tape, events: &[Event]) -> Vec<Var<'t>> {
        let mut states = Vec::with_capacity(events.len() + 1);
        let mut h = self.initial_state(tape);
        states.push(h);
        let mut last = 0.0;
        for ev in events {
            let x = self.embed(tape, ev.type_id, ev.time - last);
            h = self.gru_step(tape, x, h);
            states.push(h);
            last = ev.time;
        }
        states
    }

    /// `z^{k_context}(k_i) || z_t^{k_context}(dt)`. In global mode `k_context` is ignored.
    pub fn embed_event(&self, k_context: usize, k_i: usize, dt: f64) -> Result<Vec<f64>> {
        self.check_type(k_context)?;
        self.check_type(k_i)?;
        if !(dt >= 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be >= 0, got {dt}")));
        }
        let tape = Tape::new();
        let e = self.embed(&tape, k_i, dt).value();
        let row = match self.config.mode {
            Mode::Local => k_context,
            Mode::Global => 0,
        };
        Ok(e.row_slice(row).to_vec())
    }

    /// History encodings after all of `events`.
    pub fn encode_history(&self, events: &[Event]) -> HistoryEncodings {
        let tape = Tape::new();
        let states = self.encode_prefixes(&tape, events);
        HistoryEncodings {
            mode: self.config.mode,
            states: states.last().expect("initial state present").value(),
        }
    }

    /// Negative log-likelihood of one sequence, recorded on `tape`.
    pub fn sequence_nll<'t>(&self, tape: &'t Tape, seq: &EventSequence) -> Result<Var<'t>> {
        let states = self.encode_prefixes(tape, &seq.events);
        let taus = seq.inter_arrivals();
        let loss = match self.config.decoder {
            DecoderKind::Density => {
                let mut total: Option<Var<'t>> = None;
                for (i, ev) in seq.events.iter().enumerate() {
                    let d = self.decoder_input(states[i]);
                    let ll = self.density_log_lik(tape, d, ev.type_id, taus[i]);
                    total = Some(match total {
                        Some(t) => t - ll,
                        None => ll.neg(),
                    });
                }
                total.unwrap_or_else(|| tape.constant(0.0))
            }
            DecoderKind::Intensity => {
                let mut total: Option<Var<'t>> = None;
                let mut push = |v: Var<'t>| {
                    total = Some(match total {
                        Some(t) => t + v,
                        None => v,
                    })
                };
                for (i, ev) in seq.events.iter().enumerate() {
                    let d = self.decoder_input(states[i]);
                    let pre = self.intensity_pre(tape, d);
                    let lam = self.intensities(tape, pre, taus[i]);
                    push(lam.gather_rows(&[ev.type_id]).log().neg());
                    push(self.compensator(tape, pre, taus[i]));
                }
                let tail = seq.horizon - seq.last_time();
                if tail > 0.0 {
                    let d = self.decoder_input(*states.last().expect("initial state present"));
                    let pre = self.intensity_pre(tape, d);
                    push(self.compensator(tape, pre, tail));
                }
                total.unwrap_or_else(|| tape.constant(0.0))
            }
        };
        tape.check_finite()?;
        Ok(loss)
    }

    /// NLL value of one sequence (no gradient).
    pub fn sequence_nll_value(&self, seq: &EventSequence) -> Result<f64> {
        let tape = Tape::new();
        Ok(self.sequence_nll(&tape, seq)?.item())
    }

    /// Predicted type and inter-arrival time for every event of `seq`, each from the events before it.
    pub fn predict_sequence(&self, seq: &EventSequence) -> Result<Vec<Prediction>> {
        self.require_density("next-event prediction")?;
        let tape = Tape::new();
        let states = self.encode_prefixes(&tape, &seq.events);
        seq.events
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let dist = self.density_distribution(&tape, self.decoder_input(states[i]));
                Ok(Prediction {
                    type_id: dist.predicted_type(),
                    tau: dist.predicted_tau(),
                })
            })
            .collect()
    }

    /// Predicted next type and absolute time after `history`.
    pub fn predict_next(&self, history: &[Event]) -> Result<(usize, f64)> {
        let dist = self.decode_density(&self.encode_history(history))?;
        let last = history.last().map_or(0.0, |e| e.time);
        Ok((dist.predicted_type(), last + dist.predicted_tau()))
    }

    fn require_density(&self, what: &str) -> Result<()> {
        if self.config.decoder != DecoderKind::Density {
            return Err(Error::Unsupported(format!(
                "{what} requires the density decoder"
            )));
        }
        Ok(())
    }

    fn encodings_var<'t>(&self, tape: &'t Tape, enc: &HistoryEncodings) -> Result<Var<'t>> {
        let expected = [self.config.channels(), self.config.d_hidden];
        if enc.mode != self.config.mode || enc.states.shape() != expected {
            return Err(Error::InvalidArgument(format!(
                "encodings of shape {:?} ({}) do not match model ({:?}, {})",
                enc.states.shape(),
                enc.mode,
                expected,
                self.config.mode
            )));
        }
        Ok(self.decoder_input(tape.leaf(enc.states.clone())))
    }

    /// Next-event distribution under the density decoder.
    pub fn decode_density(&self, enc: &HistoryEncodings) -> Result<NextEventDistribution> {
        self.require_density("decode_density")?;
        let tape = Tape::new();
        let d = self.encodings_var(&tape, enc)?;
        Ok(self.density_distribution(&tape, d))
    }

    /// Per-type intensities `t_elapsed` after the last event, under the intensity decoder.
    pub fn decode_intensity(&self, enc: &HistoryEncodings, t_elapsed: f64) -> Result<Vec<f64>> {
        if self.config.decoder != DecoderKind::Intensity {
            return Err(Error::Unsupported(
                "decode_intensity requires the intensity decoder".into(),
            ));
        }
        if !(t_elapsed >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t_elapsed must be >= 0, got {t_elapsed}"
            )));
        }
        let tape = Tape::new();
        let d = self.encodings_var(&tape, enc)?;
        let pre = self.intensity_pre(&tape, d);
        Ok(self.intensities(&tape, pre, t_elapsed).value().into_data())
    }

    /// Local type embeddings `table[k][x]` (type `x` in the space of type `k`); `None` in global mode.
    pub fn local_embeddings(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        if self.config.mode != Mode::Local {
            return None;
        }
        let k = self.config.num_types;
        let table = self.store.value(self.ids.type_table);
        Some(
            (0..k)
                .map(|ctx| (0..k).map(|x| table.row_slice(ctx * k + x).to_vec()).collect())
                .collect(),
        )
    }
}
