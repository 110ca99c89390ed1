use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::ClassifierError;
use crate::linalg::Standardizer;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmOptions {
    pub c: f64,
    /// Scales each sample's C by `M / (2 M_class)`.
    pub class_weighted: bool,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions { c: 1.0, class_weighted: false, tolerance: 1e-6, max_iterations: 5_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    /// Weights on standardized features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub class_weighted: bool,
    pub scaler: Standardizer,
}

fn check_features(features: &Array2<f64>, labels: &[u8]) -> Result<(), ClassifierError> {
    if features.nrows() != labels.len() {
        return Err(ClassifierError::LengthMismatch { expected: features.nrows(), found: labels.len() });
    }
    if let Some(((r, c), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ClassifierError::NonFinite { row: r, col: c });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(ClassifierError::BadLabel(l));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(ClassifierError::SingleClass);
    }
    Ok(())
}

pub(crate) fn signs(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

pub(crate) fn sample_costs(labels: &[u8], c: f64, class_weighted: bool) -> Vec<f64> {
    if !class_weighted {
        return vec![c; labels.len()];
    }
    let m = labels.len() as f64;
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    labels
        .iter()
        .map(|&l| {
            let count = if l == 1 { positives } else { m - positives };
            c * m / (2.0 * count)
        })
        .collect()
}

/// `½‖w‖² + Σ C_i max(0, 1 − y_i (w·x_i + b))` on already-standardized rows.
pub fn primal_objective(x: &Array2<f64>, y: &[f64], costs: &[f64], w: &[f64], b: f64) -> f64 {
    let w = ArrayView1::from(w);
    let mut total = 0.5 * w.dot(&w);
    for (i, row) in x.rows().into_iter().enumerate() {
        total += costs[i] * (1.0 - y[i] * (row.dot(&w) + b)).max(0.0);
    }
    total
}

/// Dual coordinate-pair solver with second-order working-set selection.
/// Returns the dual variables.
fn smo(gram: &Array2<f64>, y: &[f64], costs: &[f64], tolerance: f64, max_iterations: usize) -> Vec<f64> {
    let m = y.len();
    let mut alpha = vec![0.0; m];
    let mut grad = vec![-1.0; m];
    let q = |i: usize, j: usize| y[i] * y[j] * gram[[i, j]];
    for _ in 0..max_iterations {
        let up = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] < costs[t]) || (y[t] < 0.0 && a[t] > 0.0);
        let low = |t: usize, a: &[f64]| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < costs[t]);
        let mut g_max = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..m {
            if up(t, &alpha) && -y[t] * grad[t] > g_max {
                g_max = -y[t] * grad[t];
                i = t;
            }
        }
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            for t in 0..m {
                if !low(t, &alpha) {
                    continue;
                }
                g_max2 = g_max2.max(y[t] * grad[t]);
                let diff = g_max + y[t] * grad[t];
                if diff > 0.0 {
                    let quad = (gram[[i, i]] + gram[[t, t]] - 2.0 * gram[[i, t]]).max(TAU);
                    let gain = -diff * diff / quad;
                    if gain < best {
                        best = gain;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || g_max + g_max2 < tolerance {
            break;
        }
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (costs[i], costs[j]);
        if y[i] != y[j] {
            let quad = (gram[[i, i]] + gram[[j, j]] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (gram[[i, i]] + gram[[j, j]] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..m {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }
    alpha
}

/// Exact minimizer of the hinge term over the bias for fixed margins `s`.
/// The loss is piecewise linear with kinks at `y_k − s_k`; the midpoint of
/// the optimal kink interval is returned.
fn best_bias(s: &[f64], y: &[f64], costs: &[f64]) -> f64 {
    let loss = |b: f64| -> f64 { s.iter().zip(y).zip(costs).map(|((&si, &yi), &ci)| ci * (1.0 - yi * (si + b)).max(0.0)).sum() };
    let mut kinks: Vec<f64> = s.iter().zip(y).map(|(&si, &yi)| yi - si).collect();
    kinks.sort_by(f64::total_cmp);
    let values: Vec<f64> = kinks.iter().map(|&b| loss(b)).collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1e-300);
    let lo = kinks[values.iter().position(|&v| v - min <= tol).expect("non-empty")];
    let hi = kinks[values.iter().rposition(|&v| v - min <= tol).expect("non-empty")];
    0.5 * (lo + hi)
}

/// Soft-margin linear SVM on internally standardized features.
pub fn train_linear(features: &Array2<f64>, labels: &[u8], c: f64) -> Result<LinearClassifier, ClassifierError> {
    train_linear_with(features, labels, &SvmOptions { c, ..Default::default() })
}

pub fn train_linear_with(features: &Array2<f64>, labels: &[u8], opts: &SvmOptions) -> Result<LinearClassifier, ClassifierError> {
    if !(opts.c > 0.0 && opts.c.is_finite()) {
        return Err(ClassifierError::BadC(opts.c));
    }
    check_features(features, labels)?;
    let scaler = Standardizer::fit(features, None);
    let x = scaler.transform(features);
    let y = signs(labels);
    let costs = sample_costs(labels, opts.c, opts.class_weighted);
    let gram = x.dot(&x.t());
    let alpha = smo(&gram, &y, &costs, opts.tolerance, opts.max_iterations);
    let coef = Array1::from_shape_fn(y.len(), |i| alpha[i] * y[i]);
    let w = x.t().dot(&coef);
    let s = x.dot(&w);
    let bias = best_bias(s.as_slice().expect("contiguous"), &y, &costs);
    Ok(LinearClassifier { weights: w.to_vec(), bias, c: opts.c, class_weighted: opts.class_weighted, scaler })
}

impl LinearClassifier {
    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    /// `w·scale(x) + b`; positive means class 1.
    pub fn decision_score(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        if x.len() != self.weights.len() {
            return Err(ClassifierError::LengthMismatch { expected: self.weights.len(), found: x.len() });
        }
        let mut s = self.bias;
        for (j, (&v, &w)) in x.iter().zip(&self.weights).enumerate() {
            s += w * (v - self.scaler.mean[j]) / self.scaler.std[j];
        }
        Ok(s)
    }

    pub fn decision_scores(&self, features: &Array2<f64>) -> Result<Vec<f64>, ClassifierError> {
        features.rows().into_iter().map(|r| self.decision_score(&r.to_vec())).collect()
    }

    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<u8>, ClassifierError> {
        Ok(self.decision_scores(features)?.iter().map(|&s| u8::from(s > 0.0)).collect())
    }

    /// Primal objective on the given (raw) training data.
    pub fn objective(&self, features: &Array2<f64>, labels: &[u8]) -> f64 {
        let x = self.scaler.transform(features);
        primal_objective(&x, &signs(labels), &sample_costs(labels, self.c, self.class_weighted), &self.weights, self.bias)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("classifier serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        serde_json::from_str(text).map_err(|e| ClassifierError::Format(e.to_string()))
    }
}
