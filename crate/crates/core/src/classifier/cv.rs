use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{train_linear_with, SvmOptions};
use super::ClassifierError;
use crate::metrics::auroc;

pub const DEFAULT_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

/// Picks feature columns from a fold's training portion.
pub type ColumnSelector<'a> = dyn Fn(&Array2<f64>, &[u8]) -> Vec<usize> + Sync + 'a;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchOptions {
    pub grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub class_weighted: bool,
}

impl Default for GridSearchOptions {
    fn default() -> Self {
        GridSearchOptions { grid: DEFAULT_GRID.to_vec(), folds: 10, seed: 0, class_weighted: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGridResult {
    pub grid: Vec<f64>,
    pub mean_auroc: Vec<f64>,
    /// `fold_auroc[c][fold]`.
    pub fold_auroc: Vec<Vec<f64>>,
    pub chosen_c: f64,
    /// Held-out decision score of every sample at the chosen C.
    #[serde(default)]
    pub oof_scores: Vec<f64>,
}

/// Fold index per sample. Each class is shuffled and dealt round-robin, so
/// every fold holds both classes when each class has at least `k` members.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Result<Vec<usize>, ClassifierError> {
    if k < 2 {
        return Err(ClassifierError::Folds(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(ClassifierError::TooFewPerClass { class, count: members.len(), folds: k });
        }
        members.shuffle(&mut rng);
        for (r, &i) in members.iter().enumerate() {
            assignment[i] = (r + offset) % k;
        }
        // Continue dealing where the previous class stopped to balance fold sizes.
        offset = (offset + members.len()) % k;
    }
    Ok(assignment)
}

/// Validation AUROC of one fold and the held-out scores in fold order.
fn fold_auroc(
    features: &Array2<f64>,
    labels: &[u8],
    assignment: &[usize],
    fold: usize,
    svm: &SvmOptions,
    selector: Option<&ColumnSelector<'_>>,
) -> Result<(f64, Vec<f64>), ClassifierError> {
    let train: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] != fold).collect();
    let val: Vec<usize> = (0..labels.len()).filter(|&i| assignment[i] == fold).collect();
    let mut x_train = features.select(Axis(0), &train);
    let mut x_val = features.select(Axis(0), &val);
    let y_train: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    let y_val: Vec<u8> = val.iter().map(|&i| labels[i]).collect();
    if let Some(select) = selector {
        let cols = select(&x_train, &y_train);
        x_train = x_train.select(Axis(1), &cols);
        x_val = x_val.select(Axis(1), &cols);
    }
    let clf = train_linear_with(&x_train, &y_train, svm)?;
    let scores = clf.decision_scores(&x_val)?;
    Ok((auroc(&scores, &y_val)?, scores))
}

/// Mean validation AUROC per C over stratified folds. The best mean wins;
/// ties go to the smaller C.
pub fn grid_search_cv(
    features: &Array2<f64>,
    labels: &[u8],
    opts: &GridSearchOptions,
    selector: Option<&ColumnSelector<'_>>,
) -> Result<CvGridResult, ClassifierError> {
    if opts.grid.is_empty() {
        return Err(ClassifierError::EmptyGrid);
    }
    if features.nrows() != labels.len() {
        return Err(ClassifierError::LengthMismatch { expected: features.nrows(), found: labels.len() });
    }
    let assignment = stratified_folds(labels, opts.folds, opts.seed)?;
    let jobs: Vec<(usize, usize)> = (0..opts.grid.len()).flat_map(|c| (0..opts.folds).map(move |f| (c, f))).collect();
    let results: Vec<(f64, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(c, fold)| {
            let svm = SvmOptions { c: opts.grid[c], class_weighted: opts.class_weighted, ..Default::default() };
            fold_auroc(features, labels, &assignment, fold, &svm, selector)
        })
        .collect::<Result<_, _>>()?;
    let fold_auroc: Vec<Vec<f64>> = results.chunks(opts.folds).map(|c| c.iter().map(|r| r.0).collect()).collect();
    let mean_auroc: Vec<f64> = fold_auroc.iter().map(|f| f.iter().sum::<f64>() / f.len() as f64).collect();
    let mut order: Vec<usize> = (0..opts.grid.len()).collect();
    order.sort_by(|&a, &b| opts.grid[a].total_cmp(&opts.grid[b]));
    let mut best = order[0];
    for &i in &order[1..] {
        if mean_auroc[i] > mean_auroc[best] {
            best = i;
        }
    }
    let mut oof_scores = vec![0.0; labels.len()];
    for (fold, (_, scores)) in results[best * opts.folds..(best + 1) * opts.folds].iter().enumerate() {
        let members = (0..labels.len()).filter(|&i| assignment[i] == fold);
        for (i, s) in members.zip(scores) {
            oof_scores[i] = *s;
        }
    }
    Ok(CvGridResult { chosen_c: opts.grid[best], grid: opts.grid.clone(), mean_auroc, fold_auroc, oof_scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::train_linear;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dataset(seed: u64, m: usize) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..m).map(|_| rng.random_range(0..=1)).collect();
        let x = Array2::from_shape_fn((m, 3), |(i, j)| f64::from(labels[i]) * (j as f64) * 0.5 + rng.random_range(-1.0..1.0));
        (x, labels)
    }

    /// Shared nuisance: x1 = y + n, x2 = n with large n. The class-mean
    /// direction (what a tiny C converges to) barely separates; x1 − x2 does.
    fn underfit_dataset(seed: u64, m: usize) -> (Array2<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<u8> = (0..m).map(|i| (i % 2) as u8).collect();
        let mut x = Array2::zeros((m, 2));
        for i in 0..m {
            let n: f64 = 3.0 * rng.sample::<f64, _>(StandardNormal);
            x[[i, 0]] = f64::from(labels[i]) + n + 0.05 * rng.sample::<f64, _>(StandardNormal);
            x[[i, 1]] = n;
        }
        (x, labels)
    }

    #[test]
    fn folds_partition_and_stratify() {
        let (_, labels) = dataset(1, 103);
        let a = stratified_folds(&labels, 10, 5).unwrap();
        assert_eq!(a.len(), 103);
        let mut sizes = [0usize; 10];
        for f in 0..10 {
            let members: Vec<u8> = (0..103).filter(|&i| a[i] == f).map(|i| labels[i]).collect();
            sizes[f] = members.len();
            assert!(members.contains(&0) && members.contains(&1));
        }
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(stratified_folds(&labels, 10, 5).unwrap(), a);
        assert!(matches!(stratified_folds(&[0, 0, 1], 2, 0), Err(ClassifierError::TooFewPerClass { class: 1, .. })));
    }

    #[test]
    fn single_value_grid_and_default_grid_shape() {
        let (x, labels) = dataset(2, 80);
        let one = GridSearchOptions { grid: vec![0.3], ..Default::default() };
        assert_eq!(grid_search_cv(&x, &labels, &one, None).unwrap().chosen_c, 0.3);
        let full = grid_search_cv(&x, &labels, &GridSearchOptions::default(), None).unwrap();
        assert_eq!(full.mean_auroc.len(), 4);
        assert_eq!(full.fold_auroc.iter().map(Vec::len).collect::<Vec<_>>(), vec![10; 4]);
        assert_eq!(grid_search_cv(&x, &labels, &GridSearchOptions::default(), None).unwrap(), full);
    }

    #[test]
    fn tiny_c_underfits_and_is_not_chosen() {
        let (x, labels) = underfit_dataset(3, 200);
        let opts = GridSearchOptions::default();
        let result = grid_search_cv(&x, &labels, &opts, None).unwrap();
        assert!(result.chosen_c > 0.001, "{result:?}");

        // Refit oracle: recompute every fold score directly.
        let assignment = stratified_folds(&labels, 10, opts.seed).unwrap();
        for (ci, &c) in opts.grid.iter().enumerate() {
            let mut total = 0.0;
            for fold in 0..10 {
                let tr: Vec<usize> = (0..200).filter(|&i| assignment[i] != fold).collect();
                let va: Vec<usize> = (0..200).filter(|&i| assignment[i] == fold).collect();
                let ytr: Vec<u8> = tr.iter().map(|&i| labels[i]).collect();
                let yva: Vec<u8> = va.iter().map(|&i| labels[i]).collect();
                let clf = train_linear(&x.select(Axis(0), &tr), &ytr, c).unwrap();
                total += auroc(&clf.decision_scores(&x.select(Axis(0), &va)).unwrap(), &yva).unwrap();
            }
            assert!((total / 10.0 - result.mean_auroc[ci]).abs() < 1e-12);
        }
        assert!(result.mean_auroc[0] + 0.05 < result.mean_auroc.iter().copied().fold(0.0, f64::max));
    }

    #[test]
    fn selector_runs_on_fold_training_rows_only() {
        let (x, labels) = dataset(4, 60);
        let seen = std::sync::Mutex::new(Vec::new());
        let selector = |xt: &Array2<f64>, _: &[u8]| {
            seen.lock().unwrap().push(xt.nrows());
            vec![2]
        };
        let opts = GridSearchOptions { grid: vec![0.1], folds: 5, ..Default::default() };
        grid_search_cv(&x, &labels, &opts, Some(&selector)).unwrap();
        let rows = seen.into_inner().unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|&r| r == 48));
    }
}
