//! Uncertainty-quantile filtering of training samples.
//!
//! All landmark uncertainty scores of the training subjects are split into
//! `Q` equal-frequency bins. Bins are then retired one at a time starting
//! from the most uncertain; a subject is dropped as soon as any of its
//! landmarks falls in a retired bin. After each retirement the caller's
//! evaluator scores the remaining subset on validation data, and the loop
//! stops once the score has failed to improve for `patience` consecutive
//! retirements.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::registration::LandmarkSet;
use super::PreprocessError;
use crate::modality::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuantilePooling {
    /// One set of bins over landmarks from every modality.
    #[default]
    Pooled,
    /// Separate bins per modality; retiring bin `b` retires it in each.
    PerModality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub quantiles: usize,
    pub min_improvement: f64,
    pub patience: usize,
    pub pooling: QuantilePooling,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { quantiles: 50, min_improvement: 1e-4, patience: 2, pooling: QuantilePooling::Pooled }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub auroc: f64,
    pub removed_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub quantiles: usize,
    /// Number of retired bins in the returned (best) subset.
    pub removed_bins: usize,
    pub total_samples: usize,
    pub removed_subject_ids: Vec<String>,
    pub retained_subject_ids: Vec<String>,
    pub baseline_auroc: f64,
    pub best_auroc: f64,
    /// One entry per retirement attempted, starting at iteration 1.
    pub validation_auroc_trace: Vec<TracePoint>,
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Q={} quantiles: removed {} bins, {} of {} samples dropped; validation AUROC {:.4} -> {:.4}",
            self.quantiles,
            self.removed_bins,
            self.removed_subject_ids.len(),
            self.total_samples,
            self.baseline_auroc,
            self.best_auroc
        )
    }
}

#[derive(Debug, Clone)]
struct Entry<'a> {
    uncertainty: f64,
    subject: &'a str,
    modality: Modality,
    landmark: usize,
}

/// Assigns each landmark of each subject to a quantile bin `0..q`; bin
/// `q - 1` holds the most uncertain landmarks. Ties in uncertainty are broken
/// by `(subject_id, modality, landmark_id)`.
pub fn assign_quantiles<'a>(
    landmarks: &'a [LandmarkSet],
    q: usize,
    pooling: QuantilePooling,
) -> Result<BTreeMap<&'a str, usize>, PreprocessError> {
    let mut groups: BTreeMap<Option<Modality>, Vec<Entry<'a>>> = BTreeMap::new();
    for set in landmarks {
        set.validate()?;
        let key = match pooling {
            QuantilePooling::Pooled => None,
            QuantilePooling::PerModality => Some(set.modality),
        };
        let group = groups.entry(key).or_default();
        for (landmark, &uncertainty) in set.uncertainties.iter().enumerate() {
            group.push(Entry { uncertainty, subject: &set.subject_id, modality: set.modality, landmark });
        }
    }
    // Each subject's bin is the highest bin any of its landmarks falls into.
    let mut worst: BTreeMap<&'a str, usize> = BTreeMap::new();
    for entries in groups.values_mut() {
        if q > entries.len() {
            return Err(PreprocessError::TooManyQuantiles { quantiles: q, landmarks: entries.len() });
        }
        entries.sort_by(|a, b| {
            a.uncertainty
                .total_cmp(&b.uncertainty)
                .then_with(|| a.subject.cmp(b.subject))
                .then_with(|| a.modality.cmp(&b.modality))
                .then_with(|| a.landmark.cmp(&b.landmark))
        });
        let n = entries.len();
        for (pos, e) in entries.iter().enumerate() {
            let bin = pos * q / n;
            let w = worst.entry(e.subject).or_insert(0);
            *w = (*w).max(bin);
        }
    }
    Ok(worst)
}

pub type EvalError = Box<dyn std::error::Error + Send + Sync>;

/// Runs the iterative filter. `eval` receives the sorted ids of the
/// candidate training subset and returns its validation AUROC.
pub fn filter_training_samples<F>(
    landmarks: &[LandmarkSet],
    config: &FilterConfig,
    mut eval: F,
) -> Result<FilterReport, PreprocessError>
where
    F: FnMut(&[String]) -> Result<f64, EvalError>,
{
    let q = config.quantiles;
    if q < 2 {
        return Err(PreprocessError::TooFewQuantiles(q));
    }
    check_complete(landmarks)?;
    let worst = assign_quantiles(landmarks, q, config.pooling)?;
    let subjects: Vec<&str> = worst.keys().copied().collect();
    let subset = |retired_bins: usize| -> (Vec<String>, Vec<String>) {
        let cutoff = q - retired_bins;
        let (mut keep, mut drop) = (Vec::new(), Vec::new());
        for s in &subjects {
            if worst[s] >= cutoff {
                drop.push(s.to_string());
            } else {
                keep.push(s.to_string());
            }
        }
        (keep, drop)
    };

    let (all, _) = subset(0);
    let baseline = eval(&all).map_err(|e| PreprocessError::Evaluation(e.to_string()))?;
    let mut best = (0usize, baseline);
    let mut stalls = 0;
    let mut trace = Vec::new();
    for rho in 1..=q {
        let (keep, drop) = subset(rho);
        if keep.is_empty() {
            break;
        }
        let auroc = eval(&keep).map_err(|e| PreprocessError::Evaluation(e.to_string()))?;
        trace.push(TracePoint { iteration: rho, auroc, removed_samples: drop.len() });
        log::debug!("filter iteration {rho}: removed {} samples, AUROC {auroc:.4}", drop.len());
        if auroc - best.1 >= config.min_improvement {
            best = (rho, auroc);
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= config.patience {
                break;
            }
        }
    }
    let (retained, removed) = subset(best.0);
    let report = FilterReport {
        quantiles: q,
        removed_bins: best.0,
        total_samples: subjects.len(),
        removed_subject_ids: removed,
        retained_subject_ids: retained,
        baseline_auroc: baseline,
        best_auroc: best.1,
        validation_auroc_trace: trace,
    };
    log::info!("{report}");
    Ok(report)
}

fn check_complete(landmarks: &[LandmarkSet]) -> Result<(), PreprocessError> {
    let mut per_subject: BTreeMap<&str, BTreeSet<Modality>> = BTreeMap::new();
    for set in landmarks {
        if !per_subject.entry(&set.subject_id).or_default().insert(set.modality) {
            return Err(PreprocessError::DuplicateLandmarks(set.subject_id.clone(), set.modality));
        }
    }
    let all: BTreeSet<Modality> = landmarks.iter().map(|s| s.modality).collect();
    for (subject, mods) in &per_subject {
        if *mods != all {
            let missing = all.difference(mods).next().copied().expect("non-empty difference");
            return Err(PreprocessError::MissingLandmarks(subject.to_string(), missing));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn landmark(id: &str, modality: Modality, u: [f64; 3]) -> LandmarkSet {
        LandmarkSet {
            subject_id: id.to_string(),
            modality,
            points: [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]],
            uncertainties: u,
        }
    }

    #[test]
    fn equal_uncertainties_tie_break_deterministically() {
        let sets: Vec<_> = (0..40)
            .flat_map(|i| {
                let id = format!("s{i:02}");
                [landmark(&id, Modality::ShortAxis, [1.0; 3]), landmark(&id, Modality::FourChamber, [1.0; 3])]
            })
            .collect();
        let bins = assign_quantiles(&sets, 50, QuantilePooling::Pooled).unwrap();
        // 240 landmarks sorted by subject id: the last subject owns the top bin.
        assert_eq!(bins["s39"], 49);
        assert!(bins["s00"] < 2);

        let run = || {
            filter_training_samples(&sets, &FilterConfig::default(), |keep| Ok(keep.len() as f64 * 1e-3))
                .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.removed_bins, 0);
        assert_eq!(a.validation_auroc_trace.len(), 2);
        let first = a.validation_auroc_trace[0];
        assert_eq!(first.removed_samples, 1);
    }

    #[test]
    fn errors() {
        let sets = vec![landmark("a", Modality::ShortAxis, [0.1, 0.2, 0.3])];
        let cfg = FilterConfig { quantiles: 4, ..Default::default() };
        assert!(matches!(
            filter_training_samples(&sets, &cfg, |_| Ok(0.5)),
            Err(PreprocessError::TooManyQuantiles { .. })
        ));
        let cfg = FilterConfig { quantiles: 1, ..Default::default() };
        assert!(matches!(filter_training_samples(&sets, &cfg, |_| Ok(0.5)), Err(PreprocessError::TooFewQuantiles(1))));
        let cfg = FilterConfig { quantiles: 2, ..Default::default() };
        let failing = filter_training_samples(&sets, &cfg, |_| Err("boom".into()));
        assert!(matches!(failing, Err(PreprocessError::Evaluation(ref m)) if m == "boom"));

        let incomplete = vec![
            landmark("a", Modality::ShortAxis, [0.1; 3]),
            landmark("a", Modality::FourChamber, [0.1; 3]),
            landmark("b", Modality::ShortAxis, [0.1; 3]),
        ];
        assert!(matches!(
            filter_training_samples(&incomplete, &cfg, |_| Ok(0.5)),
            Err(PreprocessError::MissingLandmarks(ref s, Modality::FourChamber)) if s == "b"
        ));
    }

    #[test]
    fn removal_is_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sets: Vec<_> = (0..30)
            .map(|i| landmark(&format!("s{i}"), Modality::ShortAxis, std::array::from_fn(|_| rng.random())))
            .collect();
        let mut seen: Vec<Vec<String>> = Vec::new();
        let cfg = FilterConfig { quantiles: 10, patience: 100, ..Default::default() };
        let report = filter_training_samples(&sets, &cfg, |keep| {
            seen.push(keep.to_vec());
            Ok(1.0 - keep.len() as f64 / 100.0)
        })
        .unwrap();
        for pair in seen.windows(2) {
            assert!(pair[1].iter().all(|id| pair[0].contains(id)));
        }
        assert!(report.removed_bins <= 10);
        let input: BTreeSet<_> = sets.iter().map(|s| s.subject_id.clone()).collect();
        assert!(report.retained_subject_ids.iter().all(|id| input.contains(id)));
        assert_eq!(report.retained_subject_ids.len() + report.removed_subject_ids.len(), 30);
    }

    #[test]
    fn per_modality_bins_are_independent() {
        let sets = vec![
            landmark("a", Modality::ShortAxis, [0.1, 0.2, 0.3]),
            landmark("a", Modality::FourChamber, [10.0, 11.0, 12.0]),
            landmark("b", Modality::ShortAxis, [5.0, 6.0, 7.0]),
            landmark("b", Modality::FourChamber, [0.1, 0.2, 0.3]),
        ];
        let pooled = assign_quantiles(&sets, 2, QuantilePooling::Pooled).unwrap();
        assert_eq!((pooled["a"], pooled["b"]), (1, 1));
        let split = assign_quantiles(&sets, 2, QuantilePooling::PerModality).unwrap();
        assert_eq!((split["a"], split["b"]), (1, 1));
        let split3 = assign_quantiles(&sets, 3, QuantilePooling::PerModality).unwrap();
        assert_eq!((split3["a"], split3["b"]), (2, 2));
    }

    /// The most uncertain decile carries shuffled labels; filtering must drop
    /// exactly those subjects and improve validation AUROC.
    #[test]
    fn filtering_recovers_from_corrupted_decile() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clean: Vec<u8> = xs.iter().map(|&x| u8::from(x > 0.0)).collect();
        let mut labels = clean.clone();
        let corrupted: Vec<usize> = (0..n / 10).collect();
        let mut shuffled: Vec<u8> = corrupted.iter().map(|&i| labels[i]).collect();
        shuffled.shuffle(&mut rng);
        for (&i, l) in corrupted.iter().zip(shuffled) {
            labels[i] = 1 - l;
        }
        let sets: Vec<_> = (0..n)
            .map(|i| {
                let base = if i < n / 10 { 5.0 } else { 0.0 };
                let u = std::array::from_fn(|_| base + rng.random::<f64>());
                landmark(&format!("s{i:03}"), Modality::ShortAxis, u)
            })
            .collect();
        // Validation grid scored by a 1-nearest-neighbour rule over the candidate subset.
        let val_x: Vec<f64> = (0..100).map(|i| -1.0 + 0.02 * i as f64 + 0.01).collect();
        let val_y: Vec<u8> = val_x.iter().map(|&x| u8::from(x > 0.0)).collect();
        let eval = |keep: &[String]| -> Result<f64, EvalError> {
            let idx: Vec<usize> = keep.iter().map(|s| s[1..].parse().unwrap()).collect();
            let scores: Vec<f64> = val_x
                .iter()
                .map(|&x| {
                    let nearest = idx
                        .iter()
                        .min_by(|&&a, &&b| (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs()))
                        .unwrap();
                    f64::from(labels[*nearest])
                })
                .collect();
            Ok(auroc(&scores, &val_y)?)
        };
        let report = filter_training_samples(&sets, &FilterConfig { quantiles: 10, ..Default::default() }, eval).unwrap();
        assert!(report.removed_bins >= 1);
        assert!(report.best_auroc > report.baseline_auroc);
        assert!(report.removed_subject_ids.iter().all(|s| s[1..].parse::<usize>().unwrap() < n / 10));
    }
}
