//! Graph-attention feature selection for tabular data.
//!
//! Subjects become nodes of a cosine-similarity graph; a multi-head
//! attention network is trained for node classification and each input
//! column is scored by how much validation AUROC drops when it is zeroed.

mod graph;
mod importance;
mod model;
mod train;

pub use graph::{build_graph, cosine_matrix, SubjectGraph};
pub use importance::{ablation_importance, FeatureImportance, FeatureImportanceReport};
pub use model::{backward, cross_entropy, forward, ForwardPass, GatModel, HeadParams};
pub use train::{eval_loss, node_scores, train, GatConfig, TrainOutcome};

use thiserror::Error;

use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum GatError {
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("feature row {0} is all zero; cosine similarity undefined")]
    ZeroRow(usize),
    #[error("target degree {target} must be below the node count {nodes}")]
    TargetDegree { target: usize, nodes: usize },
    #[error("labels and masks must have one entry per node ({0})")]
    MaskLength(usize),
    #[error("expected {expected} features, found {found}")]
    FeatureDim { expected: usize, found: usize },
    #[error("training mask must contain both classes")]
    SingleClassTrain,
    #[error("loss became non-finite ({loss}) at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("model has not been trained")]
    Untrained,
    #[error("validation mask is empty")]
    EmptyValidation,
    #[error("theta {theta} out of range for {features} features")]
    Theta { theta: usize, features: usize },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
