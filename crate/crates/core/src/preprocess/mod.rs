//! Image-space alignment and training-set quality control.

mod filtering;
mod registration;

pub use filtering::{
    assign_quantiles, filter_training_samples, EvalError, FilterConfig, FilterReport,
    QuantilePooling, TracePoint,
};
pub use registration::{
    affine_from_landmarks, build_template, solve_affine, warp_stack, AffineTransform, LandmarkSet,
    Point,
};

use thiserror::Error;

use crate::modality::Modality;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("landmarks are collinear; affine registration is degenerate")]
    Collinear,
    #[error("landmark coordinates of subject '{0}' are not finite")]
    NonFinite(String),
    #[error("uncertainty scores of subject '{0}' must be finite and nonnegative")]
    BadUncertainty(String),
    #[error("modality {0} has no landmarks")]
    NotImaging(Modality),
    #[error("cannot build a template from an empty landmark list")]
    EmptyTemplate,
    #[error("template mixes modalities {0} and {1}")]
    MixedModalities(Modality, Modality),
    #[error("need at least 2 quantiles, got {0}")]
    TooFewQuantiles(usize),
    #[error("{quantiles} quantiles requested but only {landmarks} landmarks available")]
    TooManyQuantiles { quantiles: usize, landmarks: usize },
    #[error("subject '{0}' lacks landmarks for {1}")]
    MissingLandmarks(String, Modality),
    #[error("subject '{0}' has duplicate landmarks for {1}")]
    DuplicateLandmarks(String, Modality),
    #[error("validation evaluator failed: {0}")]
    Evaluation(String),
}
