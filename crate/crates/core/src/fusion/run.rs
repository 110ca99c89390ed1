use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::branch::{fit_branch, TrainedBranch};
use super::combine::{late_fuse, LateCombination, ScoreStats};
use super::{FusionError, FusionPlan};
use crate::classifier::GridSearchOptions;
use crate::data::StudyTable;
use crate::metrics::{auroc, Confusion, EvalReport, PlattScaler};
use crate::mpca::MpcaOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub mpca: MpcaOptions,
    pub cv: GridSearchOptions,
    pub combination: LateCombination,
    /// Redo the Fisher ranking inside each CV fold.
    pub fisher_in_folds: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            mpca: MpcaOptions::default(),
            cv: GridSearchOptions::default(),
            combination: LateCombination::ZScore,
            fisher_in_folds: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: FusionPlan,
    pub branches: Vec<TrainedBranch>,
    pub weights: Vec<f64>,
    pub train_indices: Vec<usize>,
    /// Fused out-of-fold scores of the training subjects.
    pub train_scores: Vec<f64>,
    pub test_indices: Vec<usize>,
    pub test_branch_scores: Vec<Vec<f64>>,
    pub test_scores: Vec<f64>,
}

/// Trains every branch of `plan` on `train` and scores `test`. Only
/// training labels are read.
pub fn run_plan(
    plan: &FusionPlan,
    table: &StudyTable,
    train: &[usize],
    test: &[usize],
    tabular_columns: &[usize],
    cfg: &FusionConfig,
) -> Result<PlanOutcome, FusionError> {
    let kinds = plan.branches()?;
    let weights = plan.weights()?;
    let branches: Vec<TrainedBranch> = kinds
        .par_iter()
        .map(|&kind| fit_branch(kind, table, train, tabular_columns, cfg))
        .collect::<Result<_, _>>()?;
    let stats: Vec<ScoreStats> = branches.iter().map(|b| b.train_stats).collect();
    let train_branch: Vec<Vec<f64>> = branches.iter().map(|b| b.train_scores.clone()).collect();
    let train_scores = late_fuse(&train_branch, &stats, &weights, cfg.combination)?;
    let test_branch_scores: Vec<Vec<f64>> =
        branches.par_iter().map(|b| b.scores(table, test)).collect::<Result<_, _>>()?;
    let test_scores = late_fuse(&test_branch_scores, &stats, &weights, cfg.combination)?;
    Ok(PlanOutcome {
        plan: plan.clone(),
        branches,
        weights,
        train_indices: train.to_vec(),
        train_scores,
        test_indices: test.to_vec(),
        test_branch_scores,
        test_scores,
    })
}

/// Fused scores only, enough to evaluate a trained plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanScores {
    pub plan: String,
    pub train_indices: Vec<usize>,
    pub train_scores: Vec<f64>,
    pub test_indices: Vec<usize>,
    pub test_scores: Vec<f64>,
}

impl PlanOutcome {
    pub fn scores(&self) -> PlanScores {
        PlanScores {
            plan: self.plan.label(),
            train_indices: self.train_indices.clone(),
            train_scores: self.train_scores.clone(),
            test_indices: self.test_indices.clone(),
            test_scores: self.test_scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMetrics {
    pub segment: usize,
    pub n: usize,
    /// Absent when the segment holds a single class.
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 with fewer than two segments.
    pub std: f64,
}

impl MeanStd {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub plan: String,
    pub overall: EvalReport,
    pub segments: Vec<SegmentMetrics>,
    pub segment_auroc: MeanStd,
    pub segment_accuracy: MeanStd,
    pub segment_mcc: MeanStd,
    pub platt: PlattScaler,
}

/// Reveals test labels and computes pooled and per-segment metrics. Risks
/// for the decision curve come from a logistic map fit on training scores.
pub fn evaluate_outcome(
    outcome: &PlanOutcome,
    table: &StudyTable,
    thresholds: &[f64],
) -> Result<PlanEvaluation, FusionError> {
    evaluate_scores(&outcome.scores(), table, thresholds)
}

pub fn evaluate_scores(outcome: &PlanScores, table: &StudyTable, thresholds: &[f64]) -> Result<PlanEvaluation, FusionError> {
    let train_labels = table.labels_of(&outcome.train_indices);
    let platt = PlattScaler::fit(&outcome.train_scores, &train_labels)?;
    let labels = table.reveal_labels(&outcome.test_indices);
    let risks = platt.risks(&outcome.test_scores);
    let overall = EvalReport::compute(&outcome.test_scores, &risks, &labels, thresholds)?;

    let position: HashMap<usize, usize> = outcome.test_indices.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut segments = Vec::new();
    for (segment, members) in table.test_segments().iter().enumerate() {
        let pos: Vec<usize> = members.iter().filter_map(|i| position.get(i).copied()).collect();
        if pos.is_empty() {
            continue;
        }
        let s: Vec<f64> = pos.iter().map(|&p| outcome.test_scores[p]).collect();
        let l: Vec<u8> = pos.iter().map(|&p| labels[p]).collect();
        let confusion = Confusion::from_scores(&s, &l, 0.0)?;
        let auc = auroc(&s, &l).ok();
        if auc.is_none() {
            log::warn!("test segment {segment} holds one class; AUROC skipped");
        }
        segments.push(SegmentMetrics {
            segment,
            n: pos.len(),
            auroc: auc,
            accuracy: confusion.accuracy(),
            mcc: confusion.mcc(),
        });
    }
    let aurocs: Vec<f64> = segments.iter().filter_map(|s| s.auroc).collect();
    let accs: Vec<f64> = segments.iter().map(|s| s.accuracy).collect();
    let mccs: Vec<f64> = segments.iter().map(|s| s.mcc).collect();
    Ok(PlanEvaluation {
        plan: outcome.plan.clone(),
        overall,
        segment_auroc: MeanStd::of(&aurocs),
        segment_accuracy: MeanStd::of(&accs),
        segment_mcc: MeanStd::of(&mccs),
        segments,
        platt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{chronological_split, clean_tabular, generate_synthetic, load_study, CleaningConfig, LoadOptions, SyntheticSpec};
    use crate::fusion::{BranchKind, Strategy};
    use crate::metrics::default_thresholds;
    use crate::modality::Modality::*;

    fn study() -> StudyTable {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { n_subjects: 60, dims: [10, 10, 4], ..Default::default() };
        generate_synthetic(&spec, dir.path()).unwrap();
        let (mut t, _) = load_study(dir.path(), &LoadOptions::default()).unwrap();
        chronological_split(&mut t, 0.7, 2).unwrap();
        clean_tabular(&mut t, &CleaningConfig::default()).unwrap();
        t
    }

    fn fast() -> FusionConfig {
        FusionConfig {
            mpca: MpcaOptions { kappa: 20, ..Default::default() },
            cv: GridSearchOptions { folds: 3, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn single_modality_plans_agree() {
        let t = study();
        let (train, test) = (t.train_indices(), t.test_indices());
        let cols: Vec<usize> = (0..t.feature_names.len()).collect();
        let early = run_plan(&FusionPlan::new(Strategy::Early, &[ShortAxis]), &t, &train, &test, &cols, &fast()).unwrap();
        let late = run_plan(&FusionPlan::new(Strategy::Late, &[ShortAxis]), &t, &train, &test, &cols, &fast()).unwrap();
        assert_eq!(early.test_scores, late.test_scores);
        assert_eq!(early.branches[0].kind, BranchKind::Imaging(ShortAxis));
    }

    #[test]
    fn hybrid_has_two_branches_and_never_peeks_at_test_labels() {
        let t = study();
        let (train, test) = (t.train_indices(), t.test_indices());
        let cols: Vec<usize> = (0..10).collect();
        t.clear_access_log();
        let out = run_plan(&FusionPlan::hybrid_default(), &t, &train, &test, &cols, &fast()).unwrap();
        assert_eq!(out.branches.len(), 2);
        assert_eq!(out.branches[0].mpca.len(), 2);
        assert_eq!(out.branches[0].mpca[0].target_dims, out.branches[0].mpca[1].target_dims);
        assert_eq!(out.test_scores.len(), test.len());
        assert!(!t.access_log().is_empty());
        let eval = evaluate_outcome(&out, &t, &default_thresholds()).unwrap();
        assert!(!t.test_label_read_before_reveal());
        assert_eq!(eval.overall.n, test.len());
        assert_eq!(eval.segments.len(), 2);
    }

    #[test]
    fn missing_modality_is_reported() {
        let mut t = study();
        let victim = t.train_indices()[0];
        t.subjects[victim].tensors.remove(&FourChamber);
        let (train, test) = (t.train_indices(), t.test_indices());
        let err = run_plan(&FusionPlan::new(Strategy::Late, &[FourChamber]), &t, &train, &test, &[], &fast());
        assert!(matches!(err, Err(FusionError::MissingModality { modality: FourChamber, .. })));
    }
}
