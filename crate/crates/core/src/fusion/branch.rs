use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::combine::{early_concat, intermediate_concat, ScoreStats};
use super::run::FusionConfig;
use super::FusionError;
use crate::classifier::{grid_search_cv, train_linear_with, CvGridResult, LinearClassifier, SvmOptions};
use crate::data::StudyTable;
use crate::modality::Modality;
use crate::mpca::{self, fisher_rank, MpcaModel, MpcaOptions};
use crate::tensor::Tensor3;

/// One independently trained path from inputs to a decision score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Imaging(Modality),
    Early(Modality, Modality),
    Intermediate(Modality, Modality),
    Tabular,
}

impl BranchKind {
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            BranchKind::Imaging(m) => vec![m],
            BranchKind::Early(a, b) | BranchKind::Intermediate(a, b) => vec![a, b],
            BranchKind::Tabular => vec![Modality::Ehr],
        }
    }
}

impl fmt::Display for BranchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchKind::Imaging(m) => write!(f, "{}", m.abbrev()),
            BranchKind::Early(a, b) => write!(f, "early({}+{})", a.abbrev(), b.abbrev()),
            BranchKind::Intermediate(a, b) => write!(f, "intermediate({}+{})", a.abbrev(), b.abbrev()),
            BranchKind::Tabular => f.write_str("EHR"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedBranch {
    pub kind: BranchKind,
    /// One model per imaging input (two for intermediate fusion).
    pub mpca: Vec<MpcaModel>,
    /// Tabular columns used by the tabular branch.
    pub tabular_columns: Vec<usize>,
    /// Columns of the branch feature matrix fed to the classifier.
    pub selected: Vec<usize>,
    pub classifier: LinearClassifier,
    pub cv: CvGridResult,
    /// Statistics of `train_scores`, used to put branches on one scale.
    pub train_stats: ScoreStats,
    /// Out-of-fold decision scores of the training subjects.
    pub train_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub name: String,
    pub kind: BranchKind,
    pub mpca_dims: Vec<[usize; 3]>,
    pub candidate_features: usize,
    pub selected_features: usize,
    pub chosen_c: f64,
    pub cv_mean_auroc: Vec<f64>,
    pub train_score_mean: f64,
    pub train_score_std: f64,
}

fn owned(table: &StudyTable, indices: &[usize], m: Modality) -> Vec<Tensor3> {
    table.tensors_of(indices, m).into_iter().cloned().collect()
}

fn early_inputs(table: &StudyTable, indices: &[usize], a: Modality, b: Modality) -> Result<Vec<Tensor3>, FusionError> {
    indices
        .iter()
        .map(|&i| early_concat(&table.subjects[i].tensors[&a], &table.subjects[i].tensors[&b]))
        .collect()
}

fn intermediate_features(models: &[MpcaModel], a: &[Tensor3], b: &[Tensor3]) -> Result<Array2<f64>, FusionError> {
    let f = 2 * models[0].feature_count();
    let mut out = Array2::zeros((a.len(), f));
    for (r, (ta, tb)) in a.iter().zip(b).enumerate() {
        let y = intermediate_concat(&models[0].transform(ta)?, &models[1].transform(tb)?)?;
        out.row_mut(r).assign(&ndarray::ArrayView1::from(y.data()));
    }
    Ok(out)
}

fn check_tensors(table: &StudyTable, indices: &[usize], kind: BranchKind) -> Result<(), FusionError> {
    for m in kind.modalities() {
        if !m.is_imaging() {
            continue;
        }
        if let Some(&i) = indices.iter().find(|&&i| !table.subjects[i].has(m)) {
            return Err(FusionError::MissingModality { subject: table.subjects[i].id.clone(), modality: m });
        }
    }
    Ok(())
}

/// Fits MPCA (or tabular extraction), Fisher top-kappa selection and a
/// cross-validated linear classifier on `train` only.
pub fn fit_branch(
    kind: BranchKind,
    table: &StudyTable,
    train: &[usize],
    tabular_columns: &[usize],
    cfg: &FusionConfig,
) -> Result<TrainedBranch, FusionError> {
    if train.is_empty() {
        return Err(FusionError::EmptyTraining);
    }
    check_tensors(table, train, kind)?;
    let labels = table.labels_of(train);
    let unsupervised = &cfg.mpca;
    let (mpca, features) = match kind {
        BranchKind::Imaging(m) => {
            let samples = owned(table, train, m);
            let model = mpca::fit(&samples, None, unsupervised)?;
            let f = model.feature_matrix(&samples)?;
            (vec![model], f)
        }
        BranchKind::Early(a, b) => {
            let samples = early_inputs(table, train, a, b)?;
            let model = mpca::fit(&samples, None, unsupervised)?;
            let f = model.feature_matrix(&samples)?;
            (vec![model], f)
        }
        BranchKind::Intermediate(a, b) => {
            let (sa, sb) = (owned(table, train, a), owned(table, train, b));
            let shared = match cfg.mpca.target_dims {
                Some(t) => t,
                None => {
                    let da = mpca::select_dims(&sa, cfg.mpca.variance_fraction)?;
                    let db = mpca::select_dims(&sb, cfg.mpca.variance_fraction)?;
                    std::array::from_fn(|n| da[n].max(db[n]))
                }
            };
            let opts = MpcaOptions { target_dims: Some(shared), ..cfg.mpca.clone() };
            let models = vec![mpca::fit(&sa, None, &opts)?, mpca::fit(&sb, None, &opts)?];
            let f = intermediate_features(&models, &sa, &sb)?;
            (models, f)
        }
        BranchKind::Tabular => {
            if tabular_columns.is_empty() {
                return Err(FusionError::Plan("tabular branch has no columns".into()));
            }
            (Vec::new(), table.tabular_matrix(train, Some(tabular_columns)))
        }
    };

    let (cv, selected) = if kind == BranchKind::Tabular {
        (grid_search_cv(&features, &labels, &cfg.cv, None)?, (0..features.ncols()).collect::<Vec<_>>())
    } else {
        let kappa = cfg.mpca.kappa.min(features.ncols());
        if cfg.mpca.kappa > features.ncols() {
            log::warn!("{kind}: kappa {} exceeds {} features; using all", cfg.mpca.kappa, features.ncols());
        }
        let selector = move |x: &Array2<f64>, y: &[u8]| -> Vec<usize> {
            match fisher_rank(x, y) {
                Ok((order, _)) => order[..kappa].to_vec(),
                Err(_) => (0..kappa).collect(),
            }
        };
        let cv = if cfg.fisher_in_folds {
            grid_search_cv(&features, &labels, &cfg.cv, Some(&selector))?
        } else {
            let (order, _) = fisher_rank(&features, &labels)?;
            let pre = select_columns(&features, &order[..kappa]);
            grid_search_cv(&pre, &labels, &cfg.cv, None)?
        };
        let (order, _) = fisher_rank(&features, &labels)?;
        (cv, order[..kappa].to_vec())
    };

    let x = select_columns(&features, &selected);
    let svm = SvmOptions { c: cv.chosen_c, class_weighted: cfg.cv.class_weighted, ..Default::default() };
    let classifier = train_linear_with(&x, &labels, &svm)?;
    let train_scores = cv.oof_scores.clone();
    log::info!(
        "branch {kind}: {} of {} features, C = {}, CV AUROC {:.4}",
        selected.len(),
        features.ncols(),
        cv.chosen_c,
        cv.mean_auroc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    );
    Ok(TrainedBranch {
        kind,
        mpca,
        tabular_columns: tabular_columns.to_vec(),
        selected,
        classifier,
        cv,
        train_stats: ScoreStats::fit(&train_scores),
        train_scores,
    })
}

fn select_columns(x: &Array2<f64>, cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows(), cols.len()), |(r, c)| x[[r, cols[c]]])
}

impl TrainedBranch {
    /// Branch feature matrix of arbitrary subjects, before selection.
    fn features(&self, table: &StudyTable, indices: &[usize]) -> Result<Array2<f64>, FusionError> {
        check_tensors(table, indices, self.kind)?;
        Ok(match self.kind {
            BranchKind::Imaging(m) => self.mpca[0].feature_matrix(&owned(table, indices, m))?,
            BranchKind::Early(a, b) => self.mpca[0].feature_matrix(&early_inputs(table, indices, a, b)?)?,
            BranchKind::Intermediate(a, b) => {
                intermediate_features(&self.mpca, &owned(table, indices, a), &owned(table, indices, b))?
            }
            BranchKind::Tabular => table.tabular_matrix(indices, Some(&self.tabular_columns)),
        })
    }

    pub fn scores(&self, table: &StudyTable, indices: &[usize]) -> Result<Vec<f64>, FusionError> {
        let x = select_columns(&self.features(table, indices)?, &self.selected);
        Ok(self.classifier.decision_scores(&x)?)
    }

    pub fn summary(&self) -> BranchSummary {
        let candidate_features = match self.kind {
            BranchKind::Tabular => self.tabular_columns.len(),
            _ => self.mpca.iter().map(MpcaModel::feature_count).sum(),
        };
        BranchSummary {
            name: self.kind.to_string(),
            kind: self.kind,
            mpca_dims: self.mpca.iter().map(|m| m.target_dims).collect(),
            candidate_features,
            selected_features: self.selected.len(),
            chosen_c: self.cv.chosen_c,
            cv_mean_auroc: self.cv.mean_auroc.clone(),
            train_score_mean: self.train_stats.mean,
            train_score_std: self.train_stats.std,
        }
    }
}
