use std::f64::consts::PI;

use super::{DecoderIds, Model, SCALE_FLOOR, TAU_FLOOR};
use crate::autodiff::{ParamId, Tape, Tensor, Var};

/// Categorical next type plus a log-normal mixture over the inter-arrival time of each type.
#[derive(Debug, Clone, PartialEq)]
pub struct NextEventDistribution {
    pub type_probs: Vec<f64>,
    /// `weights[k][m]`, each row summing to one.
    pub weights: Vec<Vec<f64>>,
    /// Log-scale locations `mu[k][m]`.
    pub locs: Vec<Vec<f64>>,
    /// Log-scale spreads `sigma[k][m] >= SCALE_FLOOR`.
    pub scales: Vec<Vec<f64>>,
}

impl NextEventDistribution {
    pub fn num_types(&self) -> usize {
        self.type_probs.len()
    }

    /// `log p_k(tau)` under type `k`'s mixture.
    pub fn log_time_density(&self, k: usize, tau: f64) -> f64 {
        let lt = tau.max(TAU_FLOOR).ln();
        let terms: Vec<f64> = self.weights[k]
            .iter()
            .zip(&self.locs[k])
            .zip(&self.scales[k])
            .map(|((w, mu), s)| {
                let z = (lt - mu) / s;
                w.ln() - lt - s.ln() - 0.5 * (2.0 * PI).ln() - 0.5 * z * z
            })
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Joint density `P(k) * p_k(tau)`.
    pub fn joint_density(&self, tau: f64, k: usize) -> f64 {
        self.type_probs[k] * self.log_time_density(k, tau).exp()
    }

    /// Most probable next type (lowest index on ties).
    pub fn predicted_type(&self) -> usize {
        let mut best = 0;
        for (k, p) in self.type_probs.iter().enumerate() {
            if *p > self.type_probs[best] {
                best = k;
            }
        }
        best
    }

    /// Probability-weighted mixture of per-component medians `exp(mu)`.
    pub fn predicted_tau(&self) -> f64 {
        self.type_probs
            .iter()
            .zip(self.weights.iter().zip(&self.locs))
            .map(|(p, (w, mu))| p * w.iter().zip(mu).map(|(w, mu)| w * mu.exp()).sum::<f64>())
            .sum()
    }
}

/// `log sum_m pi_m LogNormal(tau; mu_m, sigma_m)` for a `1 x 3M` row of raw decoder outputs.
fn lognormal_mixture_log_pdf<'t>(raw: Var<'t>, m: usize, tau: f64) -> Var<'t> {
    let log_w = raw.slice(0, m).log_softmax();
    let loc = raw.slice(m, 2 * m);
    let scale = raw.slice(2 * m, 3 * m).softplus().add_scalar(SCALE_FLOOR);
    let lt = tau.max(TAU_FLOOR).ln();
    let z = loc.neg().add_scalar(lt).div(scale);
    (log_w - scale.log() - z.square().scale(0.5))
        .add_scalar(-lt - 0.5 * (2.0 * PI).ln())
        .logsumexp()
}

impl Model {
    fn density_ids(&self) -> [ParamId; 4] {
        match self.ids.decoder {
            DecoderIds::Density {
                type_w,
                type_b,
                mix_w,
                mix_b,
            } => [type_w, type_b, mix_w, mix_b],
            DecoderIds::Intensity { .. } => unreachable!("density decoder required"),
        }
    }

    /// Type scores `s_k = w_k . d_k + b_k` as a `1 x K` row.
    fn type_scores<'t>(&self, tape: &'t Tape, d: Var<'t>) -> Var<'t> {
        let [type_w, type_b, ..] = self.density_ids();
        d.mul(self.p(tape, type_w))
            .sum_rows()
            .add(self.p(tape, type_b))
            .reshape(1, self.config.num_types)
    }

    /// `log P(k) + log p_k(tau)` given decoder input `d` (`K x d_hidden`).
    pub(super) fn density_log_lik<'t>(&self, tape: &'t Tape, d: Var<'t>, k: usize, tau: f64) -> Var<'t> {
        let [_, _, mix_w, mix_b] = self.density_ids();
        let h = self.config.d_hidden;
        let m = self.config.num_components;
        let log_p_type = self.type_scores(tape, d).log_softmax().slice(k, k + 1);
        let block: Vec<usize> = (k * h..(k + 1) * h).collect();
        let raw = d
            .gather_rows(&[k])
            .matmul(self.p(tape, mix_w).gather_rows(&block))
            .add(self.p(tape, mix_b).gather_rows(&[k]));
        log_p_type + lognormal_mixture_log_pdf(raw, m, tau)
    }

    pub(super) fn density_distribution<'t>(&self, tape: &'t Tape, d: Var<'t>) -> NextEventDistribution {
        let [_, _, mix_w, mix_b] = self.density_ids();
        let m = self.config.num_components;
        let type_probs = self.type_scores(tape, d).softmax().value().into_data();
        let raw = d.row_matmul(self.p(tape, mix_w)).add(self.p(tape, mix_b));
        let weights = raw.slice(0, m).softmax().value();
        let locs = raw.slice(m, 2 * m).value();
        let scales = raw.slice(2 * m, 3 * m).softplus().add_scalar(SCALE_FLOOR).value();
        let rows = |t: &Tensor| -> Vec<Vec<f64>> {
            (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
        };
        NextEventDistribution {
            type_probs,
            weights: rows(&weights),
            locs: rows(&locs),
            scales: rows(&scales),
        }
    }

    fn intensity_ids(&self) -> [ParamId; 6] {
        match self.ids.decoder {
            DecoderIds::Intensity {
                w_h,
                w_t,
                w_l,
                b1,
                w2,
                b2,
            } => [w_h, w_t, w_l, b1, w2, b2],
            DecoderIds::Density { .. } => unreachable!("intensity decoder required"),
        }
    }

    /// History part of each type's first MLP layer: `K x d_mlp`.
    pub(super) fn intensity_pre<'t>(&self, tape: &'t Tape, d: Var<'t>) -> Var<'t> {
        let [w_h, ..] = self.intensity_ids();
        d.row_matmul(self.p(tape, w_h))
    }

    /// `lambda_k(t) = softplus(MLP_k([d_k ; t, log(1 + t)]))` as a `K x 1` column.
    pub(super) fn intensities<'t>(&self, tape: &'t Tape, pre: Var<'t>, t: f64) -> Var<'t> {
        let [_, w_t, w_l, b1, w2, b2] = self.intensity_ids();
        let hidden = (pre
            + self.p(tape, w_t).scale(t)
            + self.p(tape, w_l).scale(t.ln_1p())
            + self.p(tape, b1))
        .tanh();
        hidden
            .mul(self.p(tape, w2))
            .sum_rows()
            .add(self.p(tape, b2))
            .softplus()
    }

    /// Trapezoid estimate of `int_0^span sum_k lambda_k(s) ds`.
    pub(super) fn compensator<'t>(&self, tape: &'t Tape, pre: Var<'t>, span: f64) -> Var<'t> {
        let g = self.config.compensator_points;
        let step = span / (g - 1) as f64;
        let mut total: Option<Var<'t>> = None;
        for j in 0..g {
            let weight = if j == 0 || j == g - 1 { 0.5 * step } else { step };
            let term = self.intensities(tape, pre, j as f64 * step).sum().scale(weight);
            total = Some(match total {
                Some(acc) => acc + term,
                None => term,
            });
        }
        total.expect("at least two points")
    }
}
