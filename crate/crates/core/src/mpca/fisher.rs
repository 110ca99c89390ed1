use ndarray::Array2;

use super::MpcaError;

/// Denominator floor: a feature with zero within-class scatter but distinct
/// class means gets a huge finite score instead of a division by zero.
pub const FISHER_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Per-column Fisher score `sum_c n_c (mu_c - mu)^2 / sum_c n_c var_c`,
/// with population (1/n_c) class variances.
pub fn fisher_scores(features: &Array2<f64>, labels: &[u8]) -> Result<Vec<f64>, MpcaError> {
    let (m, f) = features.dim();
    if labels.len() != m {
        return Err(MpcaError::LabelCount { samples: m, labels: labels.len() });
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = m - n1;
    if n0 == 0 || n1 == 0 {
        return Err(MpcaError::SingleClass);
    }
    let mut scores = Vec::with_capacity(f);
    for col in features.columns() {
        let (mut s0, mut s1) = (0.0, 0.0);
        for (&v, &l) in col.iter().zip(labels) {
            if l == 1 {
                s1 += v;
            } else {
                s0 += v;
            }
        }
        let mu0 = s0 / n0 as f64;
        let mu1 = s1 / n1 as f64;
        let mu = (s0 + s1) / m as f64;
        let (mut v0, mut v1) = (0.0, 0.0);
        for (&v, &l) in col.iter().zip(labels) {
            if l == 1 {
                v1 += (v - mu1) * (v - mu1);
            } else {
                v0 += (v - mu0) * (v - mu0);
            }
        }
        // n_c * var_c is the class sum of squared deviations.
        let between = n0 as f64 * (mu0 - mu).powi(2) + n1 as f64 * (mu1 - mu).powi(2);
        let within = (v0 + v1).max(FISHER_DENOMINATOR_FLOOR);
        scores.push(between / within);
    }
    Ok(scores)
}

/// Feature indices sorted by descending Fisher score (ties by index), plus the scores.
pub fn fisher_rank(features: &Array2<f64>, labels: &[u8]) -> Result<(Vec<usize>, Vec<f64>), MpcaError> {
    let scores = fisher_scores(features, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok((order, scores))
}

/// Columns of `features` taken in `order`, truncated to the first `kappa`.
pub fn select_top(features: &Array2<f64>, order: &[usize], kappa: usize) -> Result<Array2<f64>, MpcaError> {
    let f = features.ncols();
    if kappa == 0 || kappa > f || kappa > order.len() {
        return Err(MpcaError::KappaRange { kappa, features: f });
    }
    if let Some(&bad) = order[..kappa].iter().find(|&&j| j >= f) {
        return Err(MpcaError::KappaRange { kappa: bad, features: f });
    }
    Ok(Array2::from_shape_fn((features.nrows(), kappa), |(r, c)| features[[r, order[c]]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_copy_beats_noise_and_constant_is_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let x = Array2::from_shape_fn((30, 3), |(r, c)| match c {
            0 => rng.random_range(-1.0..1.0),
            1 => f64::from(labels[r]),
            _ => 4.2,
        });
        let (order, scores) = fisher_rank(&x, &labels).unwrap();
        assert_eq!(order, vec![1, 0, 2]);
        assert_eq!(scores[2], 0.0);
    }

    #[test]
    fn matches_direct_formula() {
        // 10 samples, classes of 4 and 6, hand-set columns.
        let labels = [0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        let x = array![
            [1.0, 0.5, 3.0],
            [2.0, -0.5, 3.5],
            [1.5, 0.0, 2.5],
            [2.5, 1.0, 3.0],
            [4.0, 0.2, 1.0],
            [5.0, -0.2, 1.5],
            [4.5, 0.4, 0.5],
            [3.5, 0.0, 1.0],
            [4.0, -0.4, 2.0],
            [5.5, 0.1, 1.2],
        ];
        let scores = fisher_scores(&x, &labels).unwrap();
        for (j, &s) in scores.iter().enumerate() {
            let col: Array1<f64> = x.column(j).to_owned();
            let c0: Vec<f64> = (0..4).map(|i| col[i]).collect();
            let c1: Vec<f64> = (4..10).map(|i| col[i]).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
            };
            let g = mean(col.as_slice().unwrap());
            let num = 4.0 * (mean(&c0) - g).powi(2) + 6.0 * (mean(&c1) - g).powi(2);
            let den = 4.0 * var(&c0) + 6.0 * var(&c1);
            assert!((s - num / den).abs() < 1e-10, "feature {j}: {s} vs {}", num / den);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = Array2::zeros((3, 2));
        assert!(matches!(fisher_scores(&x, &[1, 1, 1]), Err(MpcaError::SingleClass)));
    }

    #[test]
    fn ranking_invariant_to_positive_affine_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<u8> = (0..60).map(|_| rng.random_range(0..=1)).collect();
        let x = Array2::from_shape_fn((60, 12), |(r, c)| {
            f64::from(labels[r]) * c as f64 * 0.1 + rng.random_range(-1.0..1.0)
        });
        let (order, _) = fisher_rank(&x, &labels).unwrap();
        let scales: Vec<(f64, f64)> = (0..12).map(|_| (rng.random_range(0.1..20.0), rng.random_range(-5.0..5.0))).collect();
        let y = Array2::from_shape_fn((60, 12), |(r, c)| scales[c].0 * x[[r, c]] + scales[c].1);
        assert_eq!(fisher_rank(&y, &labels).unwrap().0, order);
    }

    #[test]
    fn select_top_shapes() {
        let x = Array2::from_shape_fn((4, 1000), |(r, c)| (r * 1000 + c) as f64);
        let order: Vec<usize> = (0..1000).rev().collect();
        let top = select_top(&x, &order, 210).unwrap();
        assert_eq!(top.dim(), (4, 210));
        for c in 0..210 {
            assert_eq!(top.column(c), x.column(order[c]));
        }
        let one = select_top(&x, &order, 1).unwrap();
        assert_eq!(one.column(0), x.column(999));
        let all = select_top(&x, &order, 1000).unwrap();
        let mut sums: Vec<f64> = all.row(0).to_vec();
        sums.sort_by(f64::total_cmp);
        assert_eq!(sums, x.row(0).to_vec());
        assert!(matches!(select_top(&x, &order, 1001), Err(MpcaError::KappaRange { .. })));
        assert!(matches!(select_top(&x, &order, 0), Err(MpcaError::KappaRange { .. })));
    }
}
