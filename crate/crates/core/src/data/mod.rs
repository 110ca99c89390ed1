//! Study assembly: on-disk formats, splitting, tabular cleaning and the
//! synthetic dataset generator.

mod clean;
mod load;
mod split;
mod synthetic;
mod tensor_file;

pub use clean::{clean_tabular, CleaningConfig, CleaningReport, ImputationScope};
pub use load::{load_study, tensor_path, ExclusionReport, LoadOptions};
pub use split::{carve_validation, chronological_split, segment_sizes};
pub use synthetic::{generate_synthetic, synthetic_tabular, template_points, SyntheticSpec, SyntheticSummary};
pub use tensor_file::{read_tensor, read_tensor_bytes, tensor_bytes, write_tensor};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modality::Modality;
use crate::preprocess::LandmarkSet;
use crate::tensor::{Tensor3, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("malformed header in {path}: {reason}")]
    Header { path: String, reason: String },
    #[error("duplicate subject {id} in {path}")]
    DuplicateSubject { id: String, path: String },
    #[error("non-numeric value {value:?} in {path}, row {row}, column {column}")]
    NonNumeric { path: String, row: usize, column: String, value: String },
    #[error("bad tensor file {path}: {reason}")]
    TensorFormat { path: String, reason: String },
    #[error("subject {0} has no screening order")]
    MissingOrder(String),
    #[error("feature {0} is entirely missing in the training split")]
    AllMissing(String),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test { segment: usize },
    Excluded,
}

impl Split {
    /// Train or validation: the portion fitting is allowed to see.
    pub fn is_training(self) -> bool {
        matches!(self, Split::Train | Split::Validation)
    }

    pub fn is_test(self) -> bool {
        matches!(self, Split::Test { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub tensors: BTreeMap<Modality, Tensor3>,
    /// One value per table feature; NaN marks a missing cell.
    pub tabular: Vec<f64>,
    pub landmarks: BTreeMap<Modality, LandmarkSet>,
    pub screening_order: Option<f64>,
    pub split: Split,
}

impl Subject {
    pub fn has(&self, modality: Modality) -> bool {
        match modality {
            Modality::Ehr => !self.tabular.is_empty(),
            m => self.tensors.contains_key(&m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelAccess {
    Read { subject: usize, split: Split },
    TestReveal,
}

/// Subjects with their labels. Label reads go through accessor methods and
/// are logged so tests can check that test labels stay unseen until the
/// final evaluation.
#[derive(Debug)]
pub struct StudyTable {
    pub feature_names: Vec<String>,
    pub subjects: Vec<Subject>,
    labels: Vec<u8>,
    log: Mutex<Vec<LabelAccess>>,
}

impl Clone for StudyTable {
    fn clone(&self) -> Self {
        StudyTable {
            feature_names: self.feature_names.clone(),
            subjects: self.subjects.clone(),
            labels: self.labels.clone(),
            log: Mutex::new(Vec::new()),
        }
    }
}

impl StudyTable {
    pub fn new(feature_names: Vec<String>, subjects: Vec<Subject>, labels: Vec<u8>) -> Result<Self, DataError> {
        if subjects.len() != labels.len() {
            return Err(DataError::Invalid(format!("{} subjects but {} labels", subjects.len(), labels.len())));
        }
        let mut seen = BTreeSet::new();
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateSubject { id: s.id.clone(), path: "<table>".into() });
            }
            if !s.tabular.is_empty() && s.tabular.len() != feature_names.len() {
                return Err(DataError::Invalid(format!("subject {} has {} tabular values", s.id, s.tabular.len())));
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(DataError::Invalid(format!("label {l} is not 0 or 1")));
        }
        Ok(StudyTable { feature_names, subjects, labels, log: Mutex::new(Vec::new()) })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.subjects.iter().position(|s| s.id == id)
    }

    pub fn label(&self, i: usize) -> u8 {
        self.log.lock().expect("log lock").push(LabelAccess::Read { subject: i, split: self.subjects[i].split });
        self.labels[i]
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.label(i)).collect()
    }

    /// Marks the start of final evaluation and returns the requested labels.
    pub fn reveal_labels(&self, indices: &[usize]) -> Vec<u8> {
        self.log.lock().expect("log lock").push(LabelAccess::TestReveal);
        self.labels_of(indices)
    }

    pub fn access_log(&self) -> Vec<LabelAccess> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn clear_access_log(&self) {
        self.log.lock().expect("log lock").clear();
    }

    /// True when some test-split label was read before the first reveal.
    pub fn test_label_read_before_reveal(&self) -> bool {
        for event in self.log.lock().expect("log lock").iter() {
            match event {
                LabelAccess::TestReveal => return false,
                LabelAccess::Read { split, .. } if split.is_test() => return true,
                LabelAccess::Read { .. } => {}
            }
        }
        false
    }

    pub fn indices_where(&self, pred: impl Fn(Split) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| pred(self.subjects[i].split)).collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices_where(|s| s == Split::Train)
    }

    pub fn validation_indices(&self) -> Vec<usize> {
        self.indices_where(|s| s == Split::Validation)
    }

    pub fn training_indices(&self) -> Vec<usize> {
        self.indices_where(Split::is_training)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_where(Split::is_test)
    }

    /// Test indices grouped by segment, segments in order.
    pub fn test_segments(&self) -> Vec<Vec<usize>> {
        let mut segments: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.subjects.iter().enumerate() {
            if let Split::Test { segment } = s.split {
                segments.entry(segment).or_default().push(i);
            }
        }
        segments.into_values().collect()
    }

    /// Tabular rows of `indices`, restricted to `columns` when given.
    pub fn tabular_matrix(&self, indices: &[usize], columns: Option<&[usize]>) -> Array2<f64> {
        let all: Vec<usize>;
        let cols = match columns {
            Some(c) => c,
            None => {
                all = (0..self.feature_names.len()).collect();
                &all
            }
        };
        Array2::from_shape_fn((indices.len(), cols.len()), |(r, c)| self.subjects[indices[r]].tabular[cols[c]])
    }

    pub fn tensors_of(&self, indices: &[usize], modality: Modality) -> Vec<&Tensor3> {
        indices.iter().map(|&i| &self.subjects[i].tensors[&modality]).collect()
    }

    pub fn missing_modality(&self, modality: Modality) -> Option<&str> {
        self.subjects.iter().find(|s| s.split != Split::Excluded && !s.has(modality)).map(|s| s.id.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, split: Split) -> Subject {
        Subject {
            id: id.into(),
            tensors: BTreeMap::new(),
            tabular: vec![1.0],
            landmarks: BTreeMap::new(),
            screening_order: None,
            split,
        }
    }

    #[test]
    fn access_log_detects_early_test_reads() {
        let t = StudyTable::new(
            vec!["f".into()],
            vec![subject("a", Split::Train), subject("b", Split::Test { segment: 0 })],
            vec![0, 1],
        )
        .unwrap();
        t.label(0);
        assert!(!t.test_label_read_before_reveal());
        t.reveal_labels(&[1]);
        assert!(!t.test_label_read_before_reveal());
        t.clear_access_log();
        t.label(1);
        assert!(t.test_label_read_before_reveal());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = StudyTable::new(vec!["f".into()], vec![subject("a", Split::Train), subject("a", Split::Train)], vec![0, 1]);
        assert!(matches!(r, Err(DataError::DuplicateSubject { .. })));
    }
}
