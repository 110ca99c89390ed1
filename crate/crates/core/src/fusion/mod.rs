//! Fusion strategies and plan execution.

mod branch;
mod combine;
mod run;

pub use branch::{fit_branch, BranchKind, BranchSummary, TrainedBranch};
pub use combine::{early_concat, intermediate_concat, late_fuse, LateCombination, ScoreStats};
pub use run::{
    evaluate_outcome, evaluate_scores, run_plan, FusionConfig, MeanStd, PlanEvaluation, PlanOutcome, PlanScores,
    SegmentMetrics,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierError;
use crate::metrics::MetricsError;
use crate::modality::Modality;
use crate::mpca::MpcaError;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid fusion plan: {0}")]
    Plan(String),
    #[error("subject {subject} has no {modality} data")]
    MissingModality { subject: String, modality: Modality },
    #[error("cannot concatenate {a:?} with {b:?}")]
    ShapeMismatch { a: [usize; 3], b: [usize; 3] },
    #[error("branch {branch} has {found} scores, expected {expected}")]
    LengthMismatch { branch: usize, expected: usize, found: usize },
    #[error("late-fusion weights must be nonnegative, finite and not all zero")]
    BadWeights,
    #[error("no training subjects")]
    EmptyTraining,
    #[error(transparent)]
    Mpca(#[from] MpcaError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Early,
    Intermediate,
    Late,
    HybridEarly,
    HybridIntermediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub strategy: Strategy,
    pub modalities: Vec<Modality>,
    /// One weight per branch; equal weights when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub late_weights: Option<Vec<f64>>,
}

impl FusionPlan {
    pub fn new(strategy: Strategy, modalities: &[Modality]) -> Self {
        FusionPlan { strategy, modalities: modalities.to_vec(), late_weights: None }
    }

    /// The tri-modal default: intermediate imaging fusion plus a
    /// late tabular branch.
    pub fn hybrid_default() -> Self {
        Self::new(Strategy::HybridIntermediate, &[Modality::ShortAxis, Modality::FourChamber, Modality::Ehr])
    }

    /// Checks the plan and expands it into independent branches.
    pub fn branches(&self) -> Result<Vec<BranchKind>, FusionError> {
        let ms = &self.modalities;
        if ms.is_empty() {
            return Err(FusionError::Plan("no modalities".into()));
        }
        for (i, m) in ms.iter().enumerate() {
            if ms[..i].contains(m) {
                return Err(FusionError::Plan(format!("{m} listed twice")));
            }
        }
        let imaging: Vec<Modality> = ms.iter().copied().filter(|m| m.is_imaging()).collect();
        let has_ehr = ms.contains(&Modality::Ehr);
        let pair = |early: bool| -> Result<BranchKind, FusionError> {
            match imaging.as_slice() {
                [a] => Ok(BranchKind::Imaging(*a)),
                [a, b] if early => Ok(BranchKind::Early(*a, *b)),
                [a, b] => Ok(BranchKind::Intermediate(*a, *b)),
                _ => Err(FusionError::Plan("need one or two imaging modalities".into())),
            }
        };
        let branches = match self.strategy {
            Strategy::Early | Strategy::Intermediate => {
                if has_ehr {
                    return Err(FusionError::Plan("ehr can only join through a late branch".into()));
                }
                vec![pair(self.strategy == Strategy::Early)?]
            }
            Strategy::Late => ms
                .iter()
                .map(|&m| if m.is_imaging() { BranchKind::Imaging(m) } else { BranchKind::Tabular })
                .collect(),
            Strategy::HybridEarly | Strategy::HybridIntermediate => {
                if !has_ehr || imaging.len() != 2 {
                    return Err(FusionError::Plan("hybrid fusion needs two imaging modalities and ehr".into()));
                }
                vec![pair(self.strategy == Strategy::HybridEarly)?, BranchKind::Tabular]
            }
        };
        if let Some(w) = &self.late_weights {
            if w.len() != branches.len() {
                return Err(FusionError::Plan(format!("{} late weights for {} branches", w.len(), branches.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(FusionError::BadWeights);
            }
            if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(FusionError::Plan("late weights must sum to 1".into()));
            }
        }
        Ok(branches)
    }

    pub fn weights(&self) -> Result<Vec<f64>, FusionError> {
        let n = self.branches()?.len();
        Ok(self.late_weights.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]))
    }

    /// Short label such as `hybrid_intermediate[SA+FC+EHR]`.
    pub fn label(&self) -> String {
        let strategy = serde_json::to_value(self.strategy).ok().and_then(|v| v.as_str().map(str::to_string));
        let names: Vec<&str> = self.modalities.iter().map(|m| m.abbrev()).collect();
        format!("{}[{}]", strategy.unwrap_or_default(), names.join("+"))
    }

    pub fn uses_imaging(&self) -> bool {
        self.modalities.iter().any(|m| m.is_imaging())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Modality::*;

    #[test]
    fn plans_expand_into_branches() {
        let hybrid = FusionPlan::hybrid_default().branches().unwrap();
        assert_eq!(hybrid, vec![BranchKind::Intermediate(ShortAxis, FourChamber), BranchKind::Tabular]);
        let late = FusionPlan::new(Strategy::Late, &[ShortAxis, Ehr]).branches().unwrap();
        assert_eq!(late, vec![BranchKind::Imaging(ShortAxis), BranchKind::Tabular]);
        let single = FusionPlan::new(Strategy::Early, &[FourChamber]).branches().unwrap();
        assert_eq!(single, vec![BranchKind::Imaging(FourChamber)]);
        assert_eq!(FusionPlan::hybrid_default().label(), "hybrid_intermediate[SA+FC+EHR]");
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(FusionPlan::new(Strategy::Early, &[ShortAxis, Ehr]).branches().is_err());
        assert!(FusionPlan::new(Strategy::HybridEarly, &[ShortAxis, Ehr]).branches().is_err());
        assert!(FusionPlan::new(Strategy::Late, &[]).branches().is_err());
        assert!(FusionPlan::new(Strategy::Late, &[Ehr, Ehr]).branches().is_err());
        let mut p = FusionPlan::new(Strategy::Late, &[ShortAxis, Ehr]);
        p.late_weights = Some(vec![0.0, 0.0]);
        assert!(matches!(p.branches(), Err(FusionError::BadWeights)));
        p.late_weights = Some(vec![0.5]);
        assert!(p.branches().is_err());
        p.late_weights = Some(vec![0.25, 0.75]);
        assert_eq!(p.weights().unwrap(), vec![0.25, 0.75]);
    }
}
