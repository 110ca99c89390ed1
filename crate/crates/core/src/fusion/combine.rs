use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::tensor::Tensor3;

/// Raw tensors joined along the temporal mode before MPCA.
pub fn early_concat(a: &Tensor3, b: &Tensor3) -> Result<Tensor3, FusionError> {
    a.concat_mode3(b).ok_or(FusionError::ShapeMismatch { a: a.dims(), b: b.dims() })
}

/// Latent tensors joined along mode 3 after MPCA.
pub fn intermediate_concat(ya: &Tensor3, yb: &Tensor3) -> Result<Tensor3, FusionError> {
    early_concat(ya, yb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LateCombination {
    /// Each branch standardized by its training-score mean and std.
    #[default]
    ZScore,
    RawMean,
}

/// Training-set location and spread of one branch's decision scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    pub std: f64,
}

impl ScoreStats {
    /// Population statistics; a zero spread becomes 1.
    pub fn fit(scores: &[f64]) -> Self {
        let n = scores.len().max(1) as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        ScoreStats { mean, std: if var > 0.0 { var.sqrt() } else { 1.0 } }
    }

    pub const IDENTITY: ScoreStats = ScoreStats { mean: 0.0, std: 1.0 };
}

/// Weighted combination of per-branch decision scores.
pub fn late_fuse(
    scores: &[Vec<f64>],
    stats: &[ScoreStats],
    weights: &[f64],
    combination: LateCombination,
) -> Result<Vec<f64>, FusionError> {
    if scores.is_empty() || weights.len() != scores.len() || stats.len() != scores.len() {
        return Err(FusionError::Plan(format!(
            "{} branches, {} weights, {} score statistics",
            scores.len(),
            weights.len(),
            stats.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(FusionError::BadWeights);
    }
    let n = scores[0].len();
    for (branch, s) in scores.iter().enumerate() {
        if s.len() != n {
            return Err(FusionError::LengthMismatch { branch, expected: n, found: s.len() });
        }
    }
    let mut fused = vec![0.0; n];
    for ((s, st), &w) in scores.iter().zip(stats).zip(weights) {
        let st = match combination {
            LateCombination::ZScore => *st,
            LateCombination::RawMean => ScoreStats::IDENTITY,
        };
        for (f, v) in fused.iter_mut().zip(s) {
            *f += w * (v - st.mean) / st.std;
        }
    }
    Ok(fused)
}
