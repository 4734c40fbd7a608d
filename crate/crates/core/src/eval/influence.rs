use serde::{Deserialize, Serialize};

use super::pca::pca_reduce_1d;
use crate::error::{Error, Result};
use crate::hawkes::HawkesParams;
use crate::model::Model;

/// `scores[k][x]`: 1-D PCA projection of type `x`'s embedding in the space of type `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    pub scores: Vec<Vec<f64>>,
    /// Euclidean norms of the same embeddings.
    pub norms: Vec<Vec<f64>>,
}

impl InfluenceMatrix {
    pub fn num_types(&self) -> usize {
        self.scores.len()
    }

    /// Builds the matrix from a local embedding table `table[k][x]`.
    pub fn from_table(table: &[Vec<Vec<f64>>]) -> Result<Self> {
        let scores = table
            .iter()
            .map(|row| pca_reduce_1d(row))
            .collect::<Result<Vec<_>>>()?;
        let norms = table
            .iter()
            .map(|row| {
                row.iter()
                    .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
                    .collect()
            })
            .collect();
        Ok(Self { scores, norms })
    }
}

pub fn influence_matrix(model: &Model) -> Result<InfluenceMatrix> {
    let table = model.local_embeddings().ok_or_else(|| {
        Error::Unsupported(
            "influence extraction needs a local-mode model; global mode has no per-type embedding spaces"
                .into(),
        )
    })?;
    InfluenceMatrix::from_table(&table)
}

/// Ground-truth reference for each row of the influence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// `alpha[k][x]` as is.
    #[default]
    Alpha,
    /// 1-D PCA of the pairs `(alpha[k][x], beta[k][x])` within each row.
    AlphaBetaPca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub truth: TruthMode,
    /// Spearman correlation of `|scores[k][.]|` with the truth row.
    pub per_row: Vec<f64>,
    pub mean_abs: f64,
    /// `|rho|` of the signed scores with the truth row, i.e. the better of both PCA signs.
    pub per_row_sign_flip: Vec<f64>,
    pub mean_abs_sign_flip: f64,
}

/// Average ranks (1-based); ties share the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs equal lengths");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn truth_rows(truth: &HawkesParams, mode: TruthMode) -> Result<Vec<Vec<f64>>> {
    match mode {
        TruthMode::Alpha => Ok(truth.alpha().to_vec()),
        TruthMode::AlphaBetaPca => truth
            .alpha()
            .iter()
            .zip(truth.beta())
            .map(|(a, b)| {
                let pairs: Vec<Vec<f64>> = a.iter().zip(b).map(|(&a, &b)| vec![a, b]).collect();
                pca_reduce_1d(&pairs)
            })
            .collect(),
    }
}

pub fn truth_alignment(
    influence: &InfluenceMatrix,
    truth: &HawkesParams,
    mode: TruthMode,
) -> Result<Alignment> {
    let k = influence.num_types();
    if truth.num_types() != k {
        return Err(Error::Incompatible(format!(
            "influence matrix has K={k} but truth has K={}",
            truth.num_types()
        )));
    }
    let rows = truth_rows(truth, mode)?;
    let mut per_row = Vec::with_capacity(k);
    let mut per_row_sign_flip = Vec::with_capacity(k);
    for (i, t) in rows.iter().enumerate() {
        let scores = &influence.scores[i];
        let magnitude: Vec<f64> = if scores.iter().all(|s| *s == 0.0) {
            influence.norms[i].clone()
        } else {
            scores.iter().map(|s| s.abs()).collect()
        };
        per_row.push(spearman(&magnitude, t));
        per_row_sign_flip.push(spearman(scores, t).abs());
    }
    let mean = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64;
    Ok(Alignment {
        truth: mode,
        mean_abs: mean(&per_row),
        mean_abs_sign_flip: mean(&per_row_sign_flip),
        per_row,
        per_row_sign_flip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hawkes::chain;
    use crate::model::{Mode, ModelConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0, 0.0]), vec![3.5, 2.0, 3.5, 1.0]);
    }

    #[test]
    fn random_rows_rarely_correlate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 2000;
        let big = (0..trials)
            .filter(|_| {
                let a: Vec<f64> = (0..9).map(|_| rng.random()).collect();
                let b: Vec<f64> = (0..9).map(|_| rng.random()).collect();
                spearman(&a, &b).abs() >= 0.7
            })
            .count();
        assert!((big as f64) / (trials as f64) <= 0.05, "{big}");
    }

    #[test]
    fn alignment_of_proportional_rows_is_one() {
        let truth = chain(4, &[0.1; 4], 0.2, 1.0, 0.6, 1.0);
        let scores: Vec<Vec<f64>> = truth
            .alpha()
            .iter()
            .map(|r| r.iter().map(|a| 3.0 * a + 0.01).collect())
            .collect();
        let m = InfluenceMatrix {
            norms: scores.clone(),
            scores,
        };
        let a = truth_alignment(&m, &truth, TruthMode::Alpha).unwrap();
        assert!(a.per_row.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert_eq!(a.mean_abs, 1.0);

        let wrong = chain(3, &[0.1; 3], 0.2, 1.0, 0.6, 1.0);
        assert!(truth_alignment(&m, &wrong, TruthMode::Alpha).is_err());
        let ab = truth_alignment(&m, &truth, TruthMode::AlphaBetaPca).unwrap();
        assert_eq!(ab.per_row.len(), 4);
    }

    #[test]
    fn zero_scores_fall_back_to_norms() {
        let truth = chain(3, &[0.1; 3], 0.2, 1.0, 0.6, 1.0);
        let m = InfluenceMatrix {
            scores: vec![vec![0.0; 3]; 3],
            norms: truth.alpha().to_vec(),
        };
        let a = truth_alignment(&m, &truth, TruthMode::Alpha).unwrap();
        assert!(a.per_row.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn global_model_is_rejected_and_rows_are_independent() {
        let mut cfg = ModelConfig::new(3);
        cfg.mode = Mode::Global;
        let g = Model::new(cfg, 0).unwrap();
        assert!(matches!(influence_matrix(&g), Err(Error::Unsupported(_))));

        let m = Model::new(ModelConfig::new(3), 0).unwrap();
        let mut table = m.local_embeddings().unwrap();
        let base = InfluenceMatrix::from_table(&table).unwrap();
        assert_eq!(base, influence_matrix(&m).unwrap());
        for row in &base.scores {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
        table[1].swap(0, 2);
        let permuted = InfluenceMatrix::from_table(&table).unwrap();
        assert_eq!(permuted.scores[0], base.scores[0]);
        assert_eq!(permuted.scores[2], base.scores[2]);
        assert!((permuted.scores[1][0] - base.scores[1][2]).abs() < 1e-12);
        assert!((permuted.scores[1][2] - base.scores[1][0]).abs() < 1e-12);
    }

    #[test]
    fn scalar_embeddings_project_to_centered_values() {
        let table = vec![vec![vec![1.0], vec![3.0]], vec![vec![-2.0], vec![0.5]]];
        let m = InfluenceMatrix::from_table(&table).unwrap();
        for row in &m.scores {
            assert!((row[0].abs() - row[1].abs()).abs() < 1e-12);
        }
        assert!((m.scores[0][0].abs() - 1.0).abs() < 1e-12);
        assert!((m.scores[1][0].abs() - 1.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_ignores_monotone_transforms(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let ta: Vec<f64> = a.iter().map(|x| x.exp()).collect();
            let tb: Vec<f64> = b.iter().map(|x| 2.0 * x + x * x * x).collect();
            prop_assert!((spearman(&a, &b) - spearman(&ta, &tb)).abs() < 1e-12);
        }
    }
}
