//! Discrimination metrics and clinical-utility curves.

mod dca;

pub use dca::{dca, default_thresholds, DcaPoint, PlattScaler};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("AUROC needs both classes; got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("threshold probability {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("risk {0} at index {1} outside [0, 1]")]
    InvalidRisk(f64, usize),
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::BadLabel(l));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite(i));
    }
    Ok(())
}

/// Area under the ROC curve in its Mann–Whitney form: the probability that a
/// random positive scores above a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the U statistic, accumulated in integers: each positive earns 2
    // per negative strictly below it and 1 per tied negative.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_tied, mut neg_tied) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos_tied += 1;
            } else {
                neg_tied += 1;
            }
            j += 1;
        }
        twice_u += pos_tied * (2 * negatives_below + neg_tied);
        negatives_below += neg_tied;
        i = j;
    }
    Ok(twice_u as f64 / (2 * positives as u128 * negatives as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fnn: u64,
}

impl Confusion {
    /// Predicts class 1 where `score > threshold`.
    pub fn from_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricsError> {
        check_inputs(scores, labels)?;
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s > threshold, l == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fnn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fnn
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / n as f64
    }

    /// Matthews correlation coefficient; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fnn) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fnn as f64);
        let denom = (tp + fp) * (tp + fnn) * (tn + fp) * (tn + fnn);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fnn) / denom.sqrt()
    }
}

pub fn mcc(confusion: &Confusion) -> f64 {
    confusion.mcc()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub auroc: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub confusion: Confusion,
    pub dca_curve: Vec<DcaPoint>,
}

impl EvalReport {
    /// Scores are raw decision values (class 1 iff `> 0`); `risks` are the
    /// same subjects' scores mapped to probabilities for the decision curve.
    pub fn compute(
        scores: &[f64],
        risks: &[f64],
        labels: &[u8],
        thresholds: &[f64],
    ) -> Result<Self, MetricsError> {
        let confusion = Confusion::from_scores(scores, labels, 0.0)?;
        Ok(EvalReport {
            n: labels.len(),
            auroc: auroc(scores, labels)?,
            accuracy: confusion.accuracy(),
            mcc: confusion.mcc(),
            confusion,
            dca_curve: dca(risks, labels, thresholds)?,
        })
    }
}
