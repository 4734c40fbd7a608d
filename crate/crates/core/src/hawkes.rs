//! Multivariate Hawkes processes with exponential kernels.
//!
//! The intensity of type `k` given history `{(k_i, t_i)}` is
//!
//! ```text
//! lambda_k(t) = mu_k + sum_{t_i < t} alpha[k][k_i] * exp(-beta[k][k_i] * (t - t_i))
//! ```
//!
//! `alpha[k][j]` is the excitation that an event of type `j` adds to type `k`.
//! Simulation uses Ogata's thinning with the bound recomputed after every
//! candidate; log-likelihoods use the closed-form compensator.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Dataset, Event, EventSequence};

const POWER_ITERATIONS: usize = 50;
const POWER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    #[serde(rename = "K")]
    num_types: usize,
    mu: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

impl HawkesParams {
    /// Validates shapes, signs and stability.
    pub fn new(mu: Vec<f64>, alpha: Vec<Vec<f64>>, beta: Vec<Vec<f64>>) -> Result<Self> {
        let params = Self {
            num_types: mu.len(),
            mu,
            alpha,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Vec<f64>] {
        &self.beta
    }

    fn validate(&self) -> Result<()> {
        let k = self.num_types;
        if k == 0 {
            return Err(Error::InvalidParams("K must be >= 1".into()));
        }
        if self.mu.len() != k {
            return Err(Error::InvalidParams(format!(
                "mu has {} entries, expected {k}",
                self.mu.len()
            )));
        }
        for (name, m) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if m.len() != k || m.iter().any(|row| row.len() != k) {
                return Err(Error::InvalidParams(format!("{name} must be {k}x{k}")));
            }
        }
        if let Some(v) = self.mu.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParams(format!("mu entries must be >= 0, got {v}")));
        }
        for (i, row) in self.alpha.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !(v.is_finite() && *v >= 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "alpha[{i}][{j}] must be >= 0, got {v}"
                    )));
                }
            }
        }
        for (i, row) in self.beta.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(Error::InvalidParams(format!(
                        "beta[{i}][{j}] must be > 0, got {v}"
                    )));
                }
            }
        }
        let radius = self.spectral_radius();
        if radius >= 1.0 {
            return Err(Error::Unstable { radius });
        }
        Ok(())
    }

    /// Branching matrix `alpha / beta`, entrywise.
    pub fn branching_matrix(&self) -> Vec<Vec<f64>> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| a.iter().zip(b).map(|(a, b)| a / b).collect())
            .collect()
    }

    /// Upper estimate of the spectral radius of the branching matrix.
    ///
    /// Power iteration on `G + I` keeps the iterate strictly positive, so the
    /// Collatz-Wielandt ratios `min_i (Gx)_i / x_i <= rho <= max_i (Gx)_i / x_i`
    /// bracket the Perron root. The upper end of the bracket is returned.
    pub fn spectral_radius(&self) -> f64 {
        let g = self.branching_matrix();
        let k = self.num_types;
        let mut x = vec![1.0; k];
        let mut upper = f64::INFINITY;
        for _ in 0..POWER_ITERATIONS {
            let gx = mat_vec(&g, &x);
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for (a, b) in gx.iter().zip(&x) {
                let r = a / b;
                lo = lo.min(r);
                hi = hi.max(r);
            }
            upper = hi;
            if hi - lo < POWER_TOLERANCE {
                break;
            }
            let mut next: Vec<f64> = gx.iter().zip(&x).map(|(a, b)| a + b).collect();
            let norm = next.iter().cloned().fold(0.0, f64::max);
            next.iter_mut().for_each(|v| *v /= norm);
            x = next;
        }
        upper
    }

    /// Long-run event rate per type, `(I - G)^{-1} mu`.
    pub fn stationary_rate(&self) -> Result<Vec<f64>> {
        let g = self.branching_matrix();
        let k = self.num_types;
        let mut a: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 1.0 - g[i][j] } else { -g[i][j] })
                    .collect()
            })
            .collect();
        let mut b = self.mu.clone();
        solve_in_place(&mut a, &mut b).ok_or(Error::Unstable {
            radius: self.spectral_radius(),
        })?;
        Ok(b)
    }

    /// Direct evaluation of the intensity of type `k` at time `t`.
    pub fn intensity_at(&self, history: &[Event], k: usize, t: f64) -> Result<f64> {
        if k >= self.num_types {
            return Err(Error::InvalidArgument(format!(
                "type {k} out of range for K={}",
                self.num_types
            )));
        }
        if let Some(last) = history.last() {
            if t <= last.time {
                return Err(Error::InvalidArgument(format!(
                    "t={t} is not after the last history event at {}",
                    last.time
                )));
            }
        }
        let excitation: f64 = history
            .iter()
            .map(|ev| {
                self.alpha[k][ev.type_id] * (-self.beta[k][ev.type_id] * (t - ev.time)).exp()
            })
            .sum();
        Ok(self.mu[k] + excitation)
    }

    /// Integral of `sum_k lambda_k` over `[0, horizon]` given the events of `seq` before it.
    pub fn compensator(&self, seq: &EventSequence, horizon: f64) -> f64 {
        let k = self.num_types;
        let base: f64 = self.mu.iter().sum::<f64>() * horizon;
        let mut total = base;
        for ev in seq.events.iter().take_while(|e| e.time < horizon) {
            let dt = horizon - ev.time;
            for row in 0..k {
                let (a, b) = (self.alpha[row][ev.type_id], self.beta[row][ev.type_id]);
                total += a / b * (1.0 - (-b * dt).exp());
            }
        }
        total
    }

    /// Negative log-likelihood of one sequence over `[0, seq.horizon]`.
    pub fn sequence_nll(&self, seq: &EventSequence) -> f64 {
        let mut state = ExcitationState::new(self.num_types);
        let mut log_sum = 0.0;
        for ev in &seq.events {
            state.advance(self, ev.time);
            log_sum += state.intensity(self, ev.type_id).ln();
            state.excite(self, ev.type_id);
        }
        self.compensator(seq, seq.horizon) - log_sum
    }

    pub fn nll(&self, data: &Dataset) -> f64 {
        data.sequences.iter().map(|s| self.sequence_nll(s)).sum()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: HawkesParams = serde_json::from_str(text)?;
        if raw.num_types != raw.mu.len() {
            return Err(Error::InvalidParams(format!(
                "K={} but mu has {} entries",
                raw.num_types,
                raw.mu.len()
            )));
        }
        raw.validate()?;
        Ok(raw)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes the ground-truth parameters in the params-file format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Convenience alias used by the CLI and bindings.
pub fn export_truth(params: &HawkesParams, path: impl AsRef<Path>) -> Result<()> {
    params.save(path)
}

/// Decayed excitation per (target, source) pair, advanced event to event.
struct ExcitationState {
    k: usize,
    now: f64,
    excitation: Vec<f64>,
}

impl ExcitationState {
    fn new(k: usize) -> Self {
        Self {
            k,
            now: 0.0,
            excitation: vec![0.0; k * k],
        }
    }

    fn advance(&mut self, params: &HawkesParams, t: f64) {
        let dt = t - self.now;
        if dt > 0.0 {
            for row in 0..self.k {
                for col in 0..self.k {
                    let e = &mut self.excitation[row * self.k + col];
                    if *e != 0.0 {
                        *e *= (-params.beta[row][col] * dt).exp();
                    }
                }
            }
        }
        self.now = t;
    }

    fn intensity(&self, params: &HawkesParams, k: usize) -> f64 {
        params.mu[k] + self.excitation[k * self.k..(k + 1) * self.k].iter().sum::<f64>()
    }

    fn total(&self, params: &HawkesParams) -> f64 {
        (0..self.k).map(|k| self.intensity(params, k)).sum()
    }

    /// Adds the jump caused by an event of type `source` at the current time.
    fn excite(&mut self, params: &HawkesParams, source: usize) {
        for row in 0..self.k {
            self.excitation[row * self.k + source] += params.alpha[row][source];
        }
    }
}

/// Simulates one sequence on `[0, horizon]` (RNG stream 0 of `seed`).
pub fn simulate(params: &HawkesParams, horizon: f64, seed: u64) -> Result<EventSequence> {
    simulate_stream(params, horizon, seed, 0, "s0")
}

/// Simulates `num_seqs` independent sequences; sequence `i` uses RNG stream `i` of `seed`.
pub fn simulate_dataset(
    params: &HawkesParams,
    num_seqs: usize,
    horizon: f64,
    seed: u64,
) -> Result<Dataset> {
    let sequences = (0..num_seqs)
        .map(|i| simulate_stream(params, horizon, seed, i as u64, &format!("s{i}")))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(params.num_types, sequences)
}

fn simulate_stream(
    params: &HawkesParams,
    horizon: f64,
    seed: u64,
    stream: u64,
    seq_id: &str,
) -> Result<EventSequence> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let radius = params.spectral_radius();
    if radius >= 1.0 {
        return Err(Error::Unstable { radius });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let k = params.num_types;
    let mut state = ExcitationState::new(k);
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        // Kernels only decay between events, so the current total bounds
        // every intensity until the next accepted event.
        let bound = state.total(params);
        if bound <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / bound;
        if t > horizon {
            break;
        }
        state.advance(params, t);
        let total = state.total(params);
        assert!(
            total <= bound * (1.0 + 1e-12),
            "thinning bound violated: {total} > {bound}"
        );
        let accept: f64 = rng.random::<f64>() * bound;
        if accept <= total {
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = k - 1;
            for j in 0..k {
                let lam = state.intensity(params, j);
                if pick < lam {
                    chosen = j;
                    break;
                }
                pick -= lam;
            }
            events.push(Event::new(chosen, t));
            state.excite(params, chosen);
        }
    }
    EventSequence::new(seq_id, events, horizon, k)
}

/// Named stand-in configurations for the synthetic benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// K=5 cyclic chain: each type excited by itself and its predecessor.
    Haw5,
    /// K=9 cyclic chain plus diagonal with heterogeneous base rates.
    Haw9,
    /// K=9 with three mutually exciting clusters of three types.
    HawC9,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Haw5, Preset::Haw9, Preset::HawC9];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Haw5 => "haw5",
            Preset::Haw9 => "haw9",
            Preset::HawC9 => "hawc9",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn params(self) -> HawkesParams {
        match self {
            Preset::Haw5 => chain(5, &[0.05; 5], 0.25, 1.0, 0.75, 1.5),
            Preset::Haw9 => chain(
                9,
                &[0.03, 0.05, 0.02, 0.04, 0.03, 0.05, 0.02, 0.04, 0.03],
                0.2,
                1.0,
                0.8,
                1.6,
            ),
            Preset::HawC9 => {
                let k = 9;
                let mu = vec![0.04, 0.02, 0.03, 0.05, 0.03, 0.02, 0.03, 0.04, 0.02];
                let mut alpha = vec![vec![0.0; k]; k];
                let mut beta = vec![vec![1.0; k]; k];
                for i in 0..k {
                    for j in 0..k {
                        if i == j {
                            alpha[i][j] = 0.2;
                        } else if i / 3 == j / 3 {
                            alpha[i][j] = 0.3;
                            beta[i][j] = 1.25;
                        }
                    }
                }
                HawkesParams::new(mu, alpha, beta).expect("preset is stable")
            }
        }
    }
}

/// Cyclic chain: type `k` is excited by itself and by type `k - 1 (mod K)`.
pub fn chain(
    k: usize,
    mu: &[f64],
    self_alpha: f64,
    self_beta: f64,
    pred_alpha: f64,
    pred_beta: f64,
) -> HawkesParams {
    let mut alpha = vec![vec![0.0; k]; k];
    let mut beta = vec![vec![1.0; k]; k];
    for i in 0..k {
        alpha[i][i] = self_alpha;
        beta[i][i] = self_beta;
        let pred = (i + k - 1) % k;
        if pred != i {
            alpha[i][pred] = pred_alpha;
            beta[i][pred] = pred_beta;
        }
    }
    HawkesParams::new(mu.to_vec(), alpha, beta).expect("chain parameters must be stable")
}

fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_in_place(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<()> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * b[c]).sum();
        b[row] = (b[row] - s) / a[row][row];
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(mu: f64, alpha: f64, beta: f64) -> HawkesParams {
        HawkesParams::new(vec![mu], vec![vec![alpha]], vec![vec![beta]]).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let p = scalar(0.2, 0.5, 1.0);
        assert_eq!(p.intensity_at(&[], 0, 3.0).unwrap(), 0.2);
        let h = [Event::new(0, 1.0)];
        assert_relative_eq!(
            p.intensity_at(&h, 0, 1.0 + 2f64.ln()).unwrap(),
            0.45,
            epsilon = 1e-15
        );
        assert!(p.intensity_at(&h, 0, 1.0).is_err());
        assert!(p.intensity_at(&h, 0, 0.5).is_err());
    }

    #[test]
    fn intensity_is_additive_over_history() {
        let p = HawkesParams::new(
            vec![0.1, 0.3],
            vec![vec![0.2, 0.4], vec![0.1, 0.3]],
            vec![vec![1.0, 2.0], vec![1.5, 0.7]],
        )
        .unwrap();
        let h = [Event::new(0, 0.5), Event::new(1, 1.2)];
        for k in 0..2 {
            let t = 2.0;
            let whole = p.intensity_at(&h, k, t).unwrap();
            let parts: f64 = h
                .iter()
                .map(|e| p.intensity_at(std::slice::from_ref(e), k, t).unwrap() - p.mu()[k])
                .sum();
            assert_relative_eq!(whole, p.mu()[k] + parts, epsilon = 1e-14);
        }
    }

    #[test]
    fn stationary_rate_examples() {
        let p = HawkesParams::new(vec![0.2, 0.3], vec![vec![0.0; 2]; 2], vec![vec![1.0; 2]; 2])
            .unwrap();
        assert_eq!(p.stationary_rate().unwrap(), vec![0.2, 0.3]);
        assert_relative_eq!(
            scalar(0.2, 0.5, 1.0).stationary_rate().unwrap()[0],
            0.4,
            epsilon = 1e-12
        );
        let diag = HawkesParams::new(
            vec![0.2, 0.3],
            vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            vec![vec![1.0, 1.0], vec![1.0, 2.0]],
        )
        .unwrap();
        let r = diag.stationary_rate().unwrap();
        assert_relative_eq!(r[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(r[1], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn unstable_and_invalid_params_rejected() {
        assert!(matches!(
            HawkesParams::new(vec![0.1], vec![vec![1.5]], vec![vec![1.0]]),
            Err(Error::Unstable { .. })
        ));
        assert!(HawkesParams::new(vec![0.1], vec![vec![-0.1]], vec![vec![1.0]]).is_err());
        assert!(HawkesParams::new(vec![0.1], vec![vec![0.1]], vec![vec![0.0]]).is_err());
        assert!(HawkesParams::new(vec![-0.1], vec![vec![0.1]], vec![vec![1.0]]).is_err());
    }

    #[test]
    fn spectral_radius_of_cyclic_chain() {
        // Circulant with row sum s has Perron root s.
        let p = chain(5, &[0.1; 5], 0.25, 1.0, 0.75, 1.5);
        assert_relative_eq!(p.spectral_radius(), 0.75, epsilon = 1e-9);
    }

    #[test]
    fn nll_closed_forms() {
        let poisson = scalar(1.0, 0.0, 1.0);
        let seq = EventSequence::new("a", vec![Event::new(0, 0.7)], 2.0, 1).unwrap();
        assert_relative_eq!(poisson.sequence_nll(&seq), 2.0, epsilon = 1e-14);

        let p = Preset::Haw5.params();
        let empty = EventSequence::new("e", vec![], 3.0, 5).unwrap();
        assert_relative_eq!(p.sequence_nll(&empty), 0.25 * 3.0, epsilon = 1e-14);
    }

    #[test]
    fn recursive_nll_matches_direct_sum() {
        let p = Preset::Haw5.params();
        let seq = simulate(&p, 40.0, 3).unwrap();
        let mut direct = p.compensator(&seq, seq.horizon);
        for (i, ev) in seq.events.iter().enumerate() {
            direct -= p.intensity_at(&seq.events[..i], ev.type_id, ev.time).unwrap().ln();
        }
        assert_relative_eq!(p.sequence_nll(&seq), direct, max_relative = 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_valid() {
        let p = Preset::HawC9.params();
        let a = simulate(&p, 50.0, 11).unwrap();
        let b = simulate(&p, 50.0, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.validate(9).is_ok());
        let c = simulate(&p, 50.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dataset_streams_are_independent_of_count() {
        let p = Preset::Haw5.params();
        let small = simulate_dataset(&p, 3, 20.0, 5).unwrap();
        let large = simulate_dataset(&p, 6, 20.0, 5).unwrap();
        assert_eq!(small.sequences[..], large.sequences[..3]);
    }

    #[test]
    fn params_file_round_trip_and_errors() {
        let p = Preset::Haw9.params();
        let back = HawkesParams::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(p, back);

        let negative = r#"{"K":1,"mu":[0.1],"alpha":[[-0.2]],"beta":[[1.0]]}"#;
        assert!(HawkesParams::from_json(negative).is_err());

        let missing = r#"{"K":1,"mu":[0.1],"alpha":[[0.2]]}"#;
        let err = HawkesParams::from_json(missing).unwrap_err().to_string();
        assert!(err.contains("beta"), "{err}");
    }

    #[test]
    fn presets_are_stable() {
        for preset in Preset::ALL {
            let p = preset.params();
            assert!(p.spectral_radius() < 1.0);
            assert!(p.stationary_rate().unwrap().iter().all(|r| *r > 0.0));
            assert_eq!(Preset::from_name(preset.name()), Some(preset));
        }
    }
}
