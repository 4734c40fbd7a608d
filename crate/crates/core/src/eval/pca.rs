use crate::error::{Error, Result};

const MAX_ITERS: usize = 200;
const TOL: f64 = 1e-10;
const MAX_SQUARINGS: usize = 64;

fn sym_matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn frobenius(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// Starting direction for power iteration: repeated squaring of the scaled
/// covariance drives it toward the projector onto the top eigenvector, whose
/// largest column is that eigenvector up to scale.
fn squared_start(cov: &[Vec<f64>]) -> Vec<f64> {
    let d = cov.len();
    let mut p: Vec<Vec<f64>> = cov.to_vec();
    for _ in 0..MAX_SQUARINGS {
        let norm = frobenius(&p);
        p.iter_mut().flatten().for_each(|x| *x /= norm);
        let next: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| (0..d).map(|l| p[i][l] * p[l][j]).sum()).collect())
            .collect();
        let next_norm = frobenius(&next);
        let change: f64 = next
            .iter()
            .flatten()
            .zip(p.iter().flatten())
            .map(|(a, b)| (a / next_norm - b).abs())
            .fold(0.0, f64::max);
        p = next;
        if change < TOL {
            break;
        }
    }
    let best = (0..d)
        .max_by(|&a, &b| {
            let na: f64 = p.iter().map(|r| r[a] * r[a]).sum();
            let nb: f64 = p.iter().map(|r| r[b] * r[b]).sum();
            na.total_cmp(&nb)
        })
        .expect("non-empty");
    p.iter().map(|r| r[best]).collect()
}

/// First entry whose magnitude is maximal up to a relative `1e-9`, so that
/// rounding cannot flip the choice between mirrored projections.
pub(crate) fn leading_value(values: &[f64]) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    values
        .iter()
        .copied()
        .find(|v| v.abs() >= max * (1.0 - 1e-9))
        .unwrap_or(0.0)
}

/// Projection of mean-centered `vectors` onto the leading principal axis.
///
/// The sign is fixed so the first projection of largest magnitude is positive.
/// Degenerate inputs with zero spread project to all zeros.
pub fn pca_reduce_1d(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "pca_reduce_1d needs at least 2 vectors, got {n}"
        )));
    }
    let d = vectors[0].len();
    if d == 0 || vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidArgument(
            "pca_reduce_1d needs vectors of one common, non-zero dimension".into(),
        ));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64)
        .collect();
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for v in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += v[i] * v[j];
            }
        }
    }
    cov.iter_mut()
        .flatten()
        .for_each(|x| *x /= (n - 1) as f64);

    let scale = vectors.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    let noise = 64.0 * f64::EPSILON * scale;
    if trace <= d as f64 * noise * noise {
        return Ok(vec![0.0; n]);
    }

    let mut v = squared_start(&cov);
    if normalize(&mut v) == 0.0 {
        v = vec![1.0; d];
        normalize(&mut v);
    }
    for _ in 0..MAX_ITERS {
        let mut next = sym_matvec(&cov, &v);
        if normalize(&mut next) == 0.0 {
            break;
        }
        if next.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() < 0.0 {
            next.iter_mut().for_each(|x| *x = -*x);
        }
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < TOL {
            break;
        }
    }

    let mut proj: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().zip(&v).map(|(x, y)| x * y).sum())
        .collect();
    if leading_value(&proj) < 0.0 {
        proj.iter_mut().for_each(|p| *p = -*p);
    }
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;

    fn eigen_oracle(vectors: &[Vec<f64>]) -> Vec<f64> {
        let (n, d) = (vectors.len(), vectors[0].len());
        let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
        let mean = x.row_mean();
        let c = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let cov = c.transpose() * &c / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let top = eig.eigenvalues.imax();
        let p = &c * eig.eigenvectors.column(top);
        let p: Vec<f64> = p.iter().copied().collect();
        let flip = leading_value(&p) < 0.0;
        p.iter().map(|v| if flip { -v } else { *v }).collect()
    }

    #[test]
    fn collinear_points() {
        let p = pca_reduce_1d(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let s = 2f64.sqrt();
        assert_abs_diff_eq!(p[0].abs(), s, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0] + p[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(pca_reduce_1d(&vec![vec![0.1, 0.7]; 3]).unwrap(), vec![0.0; 3]);
        assert!(pca_reduce_1d(&[vec![1.0]]).is_err());
        let one_d = pca_reduce_1d(&[vec![1.0], vec![4.0], vec![2.0]]).unwrap();
        let expect = [-(1.0 - 7.0 / 3.0), -(4.0 - 7.0 / 3.0), -(2.0 - 7.0 / 3.0)];
        for (a, b) in one_d.iter().zip(expect) {
            assert_abs_diff_eq!(*a, -b, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn matches_eigendecomposition(
            (_n, d, data) in (2usize..12, 1usize..=8)
                .prop_flat_map(|(n, d)| (Just(n), Just(d), prop::collection::vec(-3.0f64..3.0, n * d)))
        ) {
            let vectors: Vec<Vec<f64>> = data.chunks(d).map(<[f64]>::to_vec).collect();
            let ours = pca_reduce_1d(&vectors).unwrap();
            let oracle = eigen_oracle(&vectors);
            for (a, b) in ours.iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-8, "{ours:?} vs {oracle:?}");
            }
        }

        #[test]
        fn rotation_invariant_up_to_sign(
            data in prop::collection::vec(-2.0f64..2.0, 10),
            theta in 0.0f64..6.28,
        ) {
            let vectors: Vec<Vec<f64>> = data.chunks(2).map(<[f64]>::to_vec).collect();
            let (c, s) = (theta.cos(), theta.sin());
            let rotated: Vec<Vec<f64>> =
                vectors.iter().map(|v| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]]).collect();
            let a = pca_reduce_1d(&vectors).unwrap();
            let b = pca_reduce_1d(&rotated).unwrap();
            let same = a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-8);
            let flipped = a.iter().zip(&b).all(|(x, y)| (x + y).abs() < 1e-8);
            prop_assert!(same || flipped, "{a:?} vs {b:?}");
        }

        #[test]
        fn translation_invariant(
            data in prop::collection::vec(-2.0f64..2.0, 12),
            shift in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let vectors: Vec<Vec<f64>> = data.chunks(3).map(<[f64]>::to_vec).collect();
            let moved: Vec<Vec<f64>> =
                vectors.iter().map(|v| v.iter().zip(&shift).map(|(a, b)| a + b).collect()).collect();
            let a = pca_reduce_1d(&vectors).unwrap();
            let b = pca_reduce_1d(&moved).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-8);
            }
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
