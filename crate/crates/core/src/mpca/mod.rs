//! Multilinear principal component analysis for third-order tensors.
//!
//! Learns one orthonormal projection per mode so that the projected,
//! mean-centred samples keep as much total scatter as possible:
//!
//! ```text
//! Y_m = (X_m - mean) x_1 U1ᵀ x_2 U2ᵀ x_3 U3ᵀ,   psi = sum_m ||Y_m||_F^2
//! ```
//!
//! Fitting starts from the full-projection solution (top eigenvectors of
//! each centred mode-n scatter matrix) and refines it by alternating
//! projections. Per-mode dimensions come from an explained-variance cutoff
//! on the full-projection eigenvalues unless forced.

mod fisher;
mod io;

pub use fisher::{fisher_rank, fisher_scores, select_top, FISHER_DENOMINATOR_FLOOR};
pub use io::{read_model, write_model};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::symmetric_eigen_desc;
use crate::tensor::{Tensor3, TensorError};

#[derive(Debug, Error)]
pub enum MpcaError {
    #[error("MPCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dims {found:?}, expected {expected:?}")]
    InconsistentDims { index: usize, expected: [usize; 3], found: [usize; 3] },
    #[error("variance fraction must lie in (0, 1], got {0}")]
    BadVarianceFraction(f64),
    #[error("target dims {target:?} must be positive and no larger than input dims {input:?}")]
    TargetDims { target: [usize; 3], input: [usize; 3] },
    #[error("{samples} samples but {labels} labels")]
    LabelCount { samples: usize, labels: usize },
    #[error("Fisher ranking needs both classes present")]
    SingleClass,
    #[error("kappa {kappa} out of range for {features} features")]
    KappaRange { kappa: usize, features: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcaOptions {
    pub variance_fraction: f64,
    pub max_iters: usize,
    /// Overrides the variance-based choice of `(J1, J2, J3)`.
    pub target_dims: Option<[usize; 3]>,
    pub kappa: usize,
}

impl Default for MpcaOptions {
    fn default() -> Self {
        Self { variance_fraction: 0.97, max_iters: 1, target_dims: None, kappa: 210 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcaModel {
    pub input_dims: [usize; 3],
    pub target_dims: [usize; 3],
    pub variance_fraction: f64,
    /// `U^(n)`, each `I_n x J_n` with orthonormal columns.
    pub projections: [Array2<f64>; 3],
    pub mean_tensor: Tensor3,
    /// Full-projection eigenvalues per mode, descending.
    pub eigenvalues: [Vec<f64>; 3],
    /// Captured scatter after initialization and after each refinement pass.
    pub scatter_history: Vec<f64>,
    pub total_scatter: f64,
    /// Fisher ranking of the `J1*J2*J3` flattened features (identity when
    /// fitted without labels).
    pub fisher_order: Vec<usize>,
    pub fisher_scores: Vec<f64>,
    pub kappa: usize,
}

fn validate_samples(samples: &[Tensor3]) -> Result<[usize; 3], MpcaError> {
    if samples.len() < 2 {
        return Err(MpcaError::TooFewSamples(samples.len()));
    }
    let dims = samples[0].dims();
    for (index, s) in samples.iter().enumerate() {
        if s.dims() != dims {
            return Err(MpcaError::InconsistentDims { index, expected: dims, found: s.dims() });
        }
    }
    Ok(dims)
}

fn check_fraction(f: f64) -> Result<(), MpcaError> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(MpcaError::BadVarianceFraction(f));
    }
    Ok(())
}

/// Sum over samples of `Z(n) Z(n)ᵀ` where `Z = X ×_{k≠n} proj_kᵀ`.
/// `None` projections leave that mode untouched.
fn mode_scatter(centered: &[Tensor3], mode: usize, projections: &[Option<&Array2<f64>>; 3]) -> Array2<f64> {
    let size = centered[0].dims()[mode - 1];
    let mut scatter = Array2::zeros((size, size));
    for x in centered {
        let mut z = x.clone();
        for k in 1..=3 {
            if k != mode {
                if let Some(u) = projections[k - 1] {
                    z = z.mode_product(&u.t().to_owned(), k).expect("projection shapes checked");
                }
            }
        }
        let unfolded = z.unfold(mode).expect("valid mode");
        scatter += &unfolded.dot(&unfolded.t());
    }
    scatter
}

fn count_for_fraction(eigenvalues: &[f64], fraction: f64) -> usize {
    if fraction >= 1.0 {
        return eigenvalues.len();
    }
    let clipped: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in clipped.iter().enumerate() {
        acc += v;
        if acc >= fraction * total {
            return i + 1;
        }
    }
    eigenvalues.len()
}

fn centered_samples(samples: &[Tensor3]) -> (Tensor3, Vec<Tensor3>) {
    let mean = Tensor3::mean_of(samples).expect("validated non-empty, same dims");
    let centered = samples.iter().map(|s| s.sub(&mean)).collect();
    (mean, centered)
}

/// Full-projection eigen-decomposition of the centred mode scatter matrices.
fn full_projection(centered: &[Tensor3]) -> [(Vec<f64>, Array2<f64>); 3] {
    std::array::from_fn(|n| symmetric_eigen_desc(&mode_scatter(centered, n + 1, &[None, None, None])))
}

/// Variance-selected `(J1, J2, J3)` for a sample set without fitting a model.
pub fn select_dims(samples: &[Tensor3], variance_fraction: f64) -> Result<[usize; 3], MpcaError> {
    validate_samples(samples)?;
    check_fraction(variance_fraction)?;
    let (_, centered) = centered_samples(samples);
    let eig = full_projection(&centered);
    Ok(std::array::from_fn(|n| count_for_fraction(&eig[n].0, variance_fraction)))
}

fn leading_columns(vectors: &Array2<f64>, count: usize) -> Array2<f64> {
    vectors.slice(ndarray::s![.., ..count]).to_owned()
}

fn captured_scatter(centered: &[Tensor3], projections: &[Array2<f64>; 3]) -> f64 {
    centered.iter().map(|x| project(x, projections).frobenius_sq()).sum()
}

fn project(x: &Tensor3, projections: &[Array2<f64>; 3]) -> Tensor3 {
    let mut y = x.clone();
    for (k, u) in projections.iter().enumerate() {
        y = y.mode_product(&u.t().to_owned(), k + 1).expect("projection shapes checked");
    }
    y
}

/// Fits projections on `samples`; with `labels`, also ranks the projected
/// features by Fisher score.
pub fn fit(samples: &[Tensor3], labels: Option<&[u8]>, options: &MpcaOptions) -> Result<MpcaModel, MpcaError> {
    let input_dims = validate_samples(samples)?;
    check_fraction(options.variance_fraction)?;
    if let Some(target) = options.target_dims {
        if target.iter().zip(&input_dims).any(|(&j, &i)| j == 0 || j > i) {
            return Err(MpcaError::TargetDims { target, input: input_dims });
        }
    }
    if let Some(l) = labels {
        if l.len() != samples.len() {
            return Err(MpcaError::LabelCount { samples: samples.len(), labels: l.len() });
        }
    }
    let (mean_tensor, centered) = centered_samples(samples);
    let total_scatter: f64 = centered.iter().map(Tensor3::frobenius_sq).sum();

    let eig = full_projection(&centered);
    let target_dims: [usize; 3] = options
        .target_dims
        .unwrap_or_else(|| std::array::from_fn(|n| count_for_fraction(&eig[n].0, options.variance_fraction)));
    let mut projections: [Array2<f64>; 3] = std::array::from_fn(|n| leading_columns(&eig[n].1, target_dims[n]));
    let mut scatter_history = vec![captured_scatter(&centered, &projections)];

    for _ in 0..options.max_iters {
        for mode in 1..=3 {
            let others: [Option<&Array2<f64>>; 3] =
                std::array::from_fn(|k| if k + 1 == mode { None } else { Some(&projections[k]) });
            let scatter = mode_scatter(&centered, mode, &others);
            let (_, vectors) = symmetric_eigen_desc(&scatter);
            projections[mode - 1] = leading_columns(&vectors, target_dims[mode - 1]);
        }
        scatter_history.push(captured_scatter(&centered, &projections));
    }

    let feature_count: usize = target_dims.iter().product();
    let mut model = MpcaModel {
        input_dims,
        target_dims,
        variance_fraction: options.variance_fraction,
        projections,
        mean_tensor,
        eigenvalues: eig.map(|(values, _)| values),
        scatter_history,
        total_scatter,
        fisher_order: (0..feature_count).collect(),
        fisher_scores: Vec::new(),
        kappa: options.kappa.min(feature_count),
    };
    if options.kappa > feature_count {
        log::warn!("kappa {} exceeds {} MPCA features; using all of them", options.kappa, feature_count);
    }
    if let Some(labels) = labels {
        let features = model.feature_matrix(samples)?;
        let (order, scores) = fisher_rank(&features, labels)?;
        model.fisher_order = order;
        model.fisher_scores = scores;
    }
    Ok(model)
}

impl MpcaModel {
    pub fn feature_count(&self) -> usize {
        self.target_dims.iter().product()
    }

    /// `(t - mean) x_1 U1ᵀ x_2 U2ᵀ x_3 U3ᵀ`.
    pub fn transform(&self, t: &Tensor3) -> Result<Tensor3, MpcaError> {
        if t.dims() != self.input_dims {
            return Err(MpcaError::InconsistentDims { index: 0, expected: self.input_dims, found: t.dims() });
        }
        Ok(project(&t.sub(&self.mean_tensor), &self.projections))
    }

    /// Maps a latent tensor back to input space (without re-adding the mean).
    pub fn reconstruct_centered(&self, y: &Tensor3) -> Result<Tensor3, MpcaError> {
        let mut x = y.clone();
        for (k, u) in self.projections.iter().enumerate() {
            x = x.mode_product(u, k + 1)?;
        }
        Ok(x)
    }

    /// Flattened latent features of each sample, one row per sample.
    pub fn feature_matrix(&self, samples: &[Tensor3]) -> Result<Array2<f64>, MpcaError> {
        let f = self.feature_count();
        let mut out = Array2::zeros((samples.len(), f));
        for (r, s) in samples.iter().enumerate() {
            let y = self.transform(s)?;
            out.row_mut(r).assign(&ndarray::ArrayView1::from(y.data()));
        }
        Ok(out)
    }

    /// Top-`kappa` Fisher-ranked features of each sample.
    pub fn selected_features(&self, samples: &[Tensor3]) -> Result<Array2<f64>, MpcaError> {
        select_top(&self.feature_matrix(samples)?, &self.fisher_order, self.kappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_error, random_orthonormal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(seed: u64, m: usize, dims: [usize; 3]) -> Vec<Tensor3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Anisotropic per-mode scales give a well-separated spectrum.
        (0..m)
            .map(|_| {
                Tensor3::from_fn(dims, |i, j, k| {
                    rng.random_range(-1.0..1.0) * (1.0 + i as f64) * (1.0 + 0.5 * j as f64) / (1.0 + k as f64)
                })
                .unwrap()
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn full_fraction_is_lossless() {
        let samples = random_samples(1, 12, [4, 3, 5]);
        let opts = MpcaOptions { variance_fraction: 1.0, max_iters: 2, ..Default::default() };
        let model = fit(&samples, None, &opts).unwrap();
        assert_eq!(model.target_dims, [4, 3, 5]);
        for u in &model.projections {
            assert!(orthonormality_error(u) < 1e-8);
        }
        assert!(rel(*model.scatter_history.last().unwrap(), model.total_scatter) < 1e-8);
        for s in &samples {
            let centered = s.sub(&model.mean_tensor);
            let y = model.transform(s).unwrap();
            assert!(rel(y.frobenius_sq(), centered.frobenius_sq()) < 1e-8);
            let back = model.reconstruct_centered(&y).unwrap();
            let err = back.sub(&centered).frobenius_sq().sqrt() / centered.frobenius_sq().sqrt();
            assert!(err < 1e-8);
        }
    }

    #[test]
    fn beats_random_orthonormal_projections() {
        let samples = random_samples(2, 20, [4, 4, 4]);
        let opts = MpcaOptions { target_dims: Some([2, 2, 2]), max_iters: 5, ..Default::default() };
        let model = fit(&samples, None, &opts).unwrap();
        let learned = *model.scatter_history.last().unwrap();
        for w in model.scatter_history.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-12));
        }
        let (_, centered) = centered_samples(&samples);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let p: [Array2<f64>; 3] = std::array::from_fn(|_| random_orthonormal(&mut rng, 4, 2));
            assert!(captured_scatter(&centered, &p) <= learned);
        }
    }

    #[test]
    fn duplicated_samples_give_same_model() {
        let samples = random_samples(3, 10, [4, 3, 3]);
        let doubled: Vec<Tensor3> = samples.iter().chain(samples.iter()).cloned().collect();
        let opts = MpcaOptions { variance_fraction: 0.9, ..Default::default() };
        let a = fit(&samples, None, &opts).unwrap();
        let b = fit(&doubled, None, &opts).unwrap();
        assert_eq!(a.target_dims, b.target_dims);
        for (ua, ub) in a.projections.iter().zip(&b.projections) {
            for (x, y) in ua.iter().zip(ub.iter()) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn transform_properties() {
        let samples = random_samples(4, 15, [5, 4, 3]);
        let model = fit(&samples, None, &MpcaOptions { variance_fraction: 0.8, ..Default::default() }).unwrap();
        let zero = model.transform(&model.mean_tensor).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));

        let transformed: Vec<Tensor3> = samples.iter().map(|s| model.transform(s).unwrap()).collect();
        let mean = Tensor3::mean_of(&transformed).unwrap();
        assert!(mean.data().iter().all(|v| v.abs() < 1e-8));

        // transform(a*t1 + b*t2 + (1-a-b)*mean) = a*transform(t1) + b*transform(t2).
        let (a, b) = (0.3, 0.45);
        let mix = Tensor3::from_fn(model.input_dims, |i, j, k| {
            a * samples[0].get(i, j, k) + b * samples[1].get(i, j, k) + (1.0 - a - b) * model.mean_tensor.get(i, j, k)
        })
        .unwrap();
        let lhs = model.transform(&mix).unwrap();
        for ((l, y1), y2) in lhs.data().iter().zip(transformed[0].data()).zip(transformed[1].data()) {
            assert!((l - (a * y1 + b * y2)).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_errors() {
        let one = random_samples(5, 1, [2, 2, 2]);
        assert!(matches!(fit(&one, None, &MpcaOptions::default()), Err(MpcaError::TooFewSamples(1))));
        let mut mixed = random_samples(5, 3, [2, 2, 2]);
        mixed.push(Tensor3::zeros([2, 2, 3]).unwrap());
        assert!(matches!(fit(&mixed, None, &MpcaOptions::default()), Err(MpcaError::InconsistentDims { index: 3, .. })));
        let ok = random_samples(5, 3, [2, 2, 2]);
        let bad = MpcaOptions { variance_fraction: 0.0, ..Default::default() };
        assert!(matches!(fit(&ok, None, &bad), Err(MpcaError::BadVarianceFraction(_))));
        let bad = MpcaOptions { target_dims: Some([3, 1, 1]), ..Default::default() };
        assert!(matches!(fit(&ok, None, &bad), Err(MpcaError::TargetDims { .. })));
    }

    #[test]
    fn supervised_fit_ranks_discriminative_slot_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let samples: Vec<Tensor3> = labels
            .iter()
            .map(|&l| {
                Tensor3::from_fn([4, 4, 2], |i, j, k| {
                    let signal = if (i, j, k) == (1, 2, 0) { 3.0 * f64::from(l) } else { 0.0 };
                    signal + rng.random_range(-0.5..0.5)
                })
                .unwrap()
            })
            .collect();
        let model = fit(&samples, Some(&labels), &MpcaOptions { variance_fraction: 1.0, kappa: 5, ..Default::default() })
            .unwrap();
        let sel = model.selected_features(&samples).unwrap();
        assert_eq!(sel.dim(), (40, 5));
        let top: Vec<f64> = sel.column(0).to_vec();
        let scores = fisher_scores(&ndarray::Array2::from_shape_vec((40, 1), top).unwrap(), &labels).unwrap();
        assert!(scores[0] > 5.0);
    }
}
