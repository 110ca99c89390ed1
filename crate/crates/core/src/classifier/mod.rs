//! Soft-margin linear SVM and cross-validated selection of its C.

mod cv;
mod svm;

pub use cv::{grid_search_cv, stratified_folds, ColumnSelector, CvGridResult, GridSearchOptions, DEFAULT_GRID};
pub use svm::{primal_objective, train_linear, train_linear_with, LinearClassifier, SvmOptions};

use thiserror::Error;

use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("expected length {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("C must be positive and finite, got {0}")]
    BadC(f64),
    #[error("need at least 2 folds, got {0}")]
    Folds(usize),
    #[error("class {class} has {count} samples, fewer than {folds} folds")]
    TooFewPerClass { class: u8, count: usize, folds: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("malformed classifier JSON: {0}")]
    Format(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
