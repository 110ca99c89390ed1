//! Decision curve analysis and the score-to-risk mapping it needs.

use serde::{Deserialize, Serialize};

use super::{check_inputs, MetricsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcaPoint {
    pub threshold: f64,
    pub net_benefit_model: f64,
    pub net_benefit_treat_all: f64,
    pub net_benefit_treat_none: f64,
}

/// Threshold probabilities 0.01, 0.02, ..., 0.99.
pub fn default_thresholds() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Net benefit of treating subjects whose risk is at least `pt`, against the
/// treat-all and treat-none policies, at each threshold probability.
pub fn dca(risks: &[f64], labels: &[u8], thresholds: &[f64]) -> Result<Vec<DcaPoint>, MetricsError> {
    check_inputs(risks, labels)?;
    if let Some(i) = risks.iter().position(|r| !(0.0..=1.0).contains(r)) {
        return Err(MetricsError::InvalidRisk(risks[i], i));
    }
    if let Some(&pt) = thresholds.iter().find(|&&pt| !(pt > 0.0 && pt < 1.0)) {
        return Err(MetricsError::InvalidThreshold(pt));
    }
    let n = labels.len() as f64;
    let prevalence = labels.iter().filter(|&&l| l == 1).count() as f64 / n;
    Ok(thresholds
        .iter()
        .map(|&pt| {
            let odds = pt / (1.0 - pt);
            let (mut tp, mut fp) = (0u64, 0u64);
            for (&r, &l) in risks.iter().zip(labels) {
                if r >= pt {
                    if l == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            DcaPoint {
                threshold: pt,
                net_benefit_model: tp as f64 / n - fp as f64 / n * odds,
                net_benefit_treat_all: prevalence - (1.0 - prevalence) * odds,
                net_benefit_treat_none: 0.0,
            }
        })
        .collect())
}

/// Logistic calibration `P(y = 1 | s) = 1 / (1 + exp(a * s + b))` fit by
/// regularized maximum likelihood with Platt's smoothed targets, using the
/// Newton method with backtracking of Lin, Lin and Weng.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattScaler {
    pub a: f64,
    pub b: f64,
}

impl PlattScaler {
    pub fn fit(scores: &[f64], labels: &[u8]) -> Result<Self, MetricsError> {
        check_inputs(scores, labels)?;
        let prior1 = labels.iter().filter(|&&l| l == 1).count() as f64;
        let prior0 = labels.len() as f64 - prior1;
        if prior1 == 0.0 || prior0 == 0.0 {
            return Err(MetricsError::SingleClass { positives: prior1 as usize, negatives: prior0 as usize });
        }
        let hi = (prior1 + 1.0) / (prior1 + 2.0);
        let lo = 1.0 / (prior0 + 2.0);
        let targets: Vec<f64> = labels.iter().map(|&l| if l == 1 { hi } else { lo }).collect();
        let objective = |a: f64, b: f64| -> f64 {
            scores
                .iter()
                .zip(&targets)
                .map(|(&s, &t)| {
                    let f = s * a + b;
                    if f >= 0.0 {
                        t * f + (-f).exp().ln_1p()
                    } else {
                        (t - 1.0) * f + f.exp().ln_1p()
                    }
                })
                .sum()
        };
        let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
        let mut fval = objective(a, b);
        const SIGMA: f64 = 1e-12;
        for _ in 0..100 {
            let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
            for (&s, &t) in scores.iter().zip(&targets) {
                let f = s * a + b;
                let (p, q) = if f >= 0.0 {
                    let e = (-f).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = f.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                let d2 = p * q;
                h11 += s * s * d2;
                h22 += d2;
                h21 += s * d2;
                let d1 = t - p;
                g1 += s * d1;
                g2 += d1;
            }
            if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
                break;
            }
            let det = h11 * h22 - h21 * h21;
            let da = -(h22 * g1 - h21 * g2) / det;
            let db = -(-h21 * g1 + h11 * g2) / det;
            let gd = g1 * da + g2 * db;
            let mut step = 1.0;
            let mut moved = false;
            while step >= 1e-10 {
                let (na, nb) = (a + step * da, b + step * db);
                let nf = objective(na, nb);
                if nf < fval + 1e-4 * step * gd {
                    a = na;
                    b = nb;
                    fval = nf;
                    moved = true;
                    break;
                }
                step /= 2.0;
            }
            if !moved {
                break;
            }
        }
        Ok(PlattScaler { a, b })
    }

    pub fn risk(&self, score: f64) -> f64 {
        let f = self.a * score + self.b;
        if f >= 0.0 {
            let e = (-f).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + f.exp())
        }
    }

    pub fn risks(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.risk(s)).collect()
    }
}
