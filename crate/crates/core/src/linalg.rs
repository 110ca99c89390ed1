//! Small dense linear-algebra helpers bridging `ndarray` and `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Eigen-decomposition of a symmetric matrix, eigenpairs sorted by
/// descending eigenvalue.
///
/// Each eigenvector's sign is fixed so that its largest-magnitude component
/// is positive (the first such component on exact ties).
pub fn symmetric_eigen_desc(matrix: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = matrix.nrows();
    assert_eq!(n, matrix.ncols(), "matrix must be square");
    // Symmetrize to wash out accumulation asymmetry.
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (matrix[[i, j]] + matrix[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 1..n {
            if v[r].abs() > v[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, col]] = sign * v[r];
        }
    }
    (values, vectors)
}

/// Random `rows x cols` matrix with orthonormal columns (`cols <= rows`),
/// drawn by QR of a Gaussian matrix.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    assert!(cols <= rows);
    let g = DMatrix::from_fn(rows, rows, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
}

/// Max absolute deviation of `mᵀm` from the identity.
pub fn orthonormality_error(m: &Array2<f64>) -> f64 {
    let gram = m.t().dot(m);
    let mut worst: f64 = 0.0;
    for ((i, j), v) in gram.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// Per-column z-scoring with statistics from a chosen subset of rows.
/// Columns with zero spread keep scale 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows` of `x` (all rows when `rows` is `None`), using the
    /// population standard deviation.
    pub fn fit(x: &Array2<f64>, rows: Option<&[usize]>) -> Self {
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..x.nrows()).collect();
                &all
            }
        };
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; x.ncols()];
        let mut std = vec![0.0; x.ncols()];
        for (j, (m, s)) in mean.iter_mut().zip(std.iter_mut()).enumerate() {
            *m = rows.iter().map(|&r| x[[r, j]]).sum::<f64>() / n;
            let var = rows.iter().map(|&r| (x[[r, j]] - *m).powi(2)).sum::<f64>() / n;
            *s = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(x.dim(), |(r, j)| (x[[r, j]] - self.mean[j]) / self.std[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigen_sorted_and_sign_fixed() {
        let m = array![[2.0, 0.0, 0.0], [0.0, 5.0, 0.0], [0.0, 0.0, 1.0]];
        let (vals, vecs) = symmetric_eigen_desc(&m);
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 5.0).abs() < 1e-12 && (vals[2] - 1.0).abs() < 1e-12);
        assert!((vecs[[1, 0]] - 1.0).abs() < 1e-12);
        let recon = vecs.dot(&Array2::from_diag(&ndarray::arr1(&vals))).dot(&vecs.t());
        for (a, b) in recon.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_orthonormal(&mut rng, 6, 3);
        assert_eq!(q.dim(), (6, 3));
        assert!(orthonormality_error(&q) < 1e-12);
    }
}
