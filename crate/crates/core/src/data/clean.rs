use serde::{Deserialize, Serialize};

use super::{DataError, StudyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImputationScope {
    /// Missing fractions and means from train and validation subjects only.
    #[default]
    TrainingOnly,
    /// Statistics over every subject, test included.
    AllSubjects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub max_missing_fraction: f64,
    pub scope: ImputationScope,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig { max_missing_fraction: 0.05, scope: ImputationScope::TrainingOnly }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedColumn {
    pub name: String,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedColumn {
    pub name: String,
    pub cells: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub dropped: Vec<DroppedColumn>,
    pub imputed: Vec<ImputedColumn>,
}

impl CleaningReport {
    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty() && self.imputed.is_empty()
    }
}

/// Drops columns whose missing fraction exceeds the limit and fills the
/// remaining gaps with the column mean. Subject count never changes.
pub fn clean_tabular(table: &mut StudyTable, config: &CleaningConfig) -> Result<CleaningReport, DataError> {
    if !(0.0..=1.0).contains(&config.max_missing_fraction) {
        return Err(DataError::Invalid(format!("max_missing_fraction {} outside [0, 1]", config.max_missing_fraction)));
    }
    let stat_rows = match config.scope {
        ImputationScope::TrainingOnly => table.training_indices(),
        ImputationScope::AllSubjects => (0..table.len()).collect(),
    };
    let mut report = CleaningReport::default();
    if stat_rows.is_empty() {
        return Ok(report);
    }
    let mut keep = Vec::new();
    let mut means = Vec::new();
    for (j, name) in table.feature_names.iter().enumerate() {
        let values: Vec<f64> = stat_rows.iter().map(|&i| table.subjects[i].tabular[j]).collect();
        let missing = values.iter().filter(|v| v.is_nan()).count();
        let fraction = missing as f64 / values.len() as f64;
        if fraction > config.max_missing_fraction {
            report.dropped.push(DroppedColumn { name: name.clone(), missing_fraction: fraction });
            continue;
        }
        if missing == values.len() {
            return Err(DataError::AllMissing(name.clone()));
        }
        let present: Vec<f64> = values.into_iter().filter(|v| !v.is_nan()).collect();
        keep.push(j);
        means.push(present.iter().sum::<f64>() / present.len() as f64);
    }
    for (&j, &mean) in keep.iter().zip(&means) {
        let cells = table.subjects.iter().filter(|s| s.tabular[j].is_nan()).count();
        if cells > 0 {
            report.imputed.push(ImputedColumn { name: table.feature_names[j].clone(), cells, mean });
        }
    }
    for s in &mut table.subjects {
        s.tabular = keep
            .iter()
            .zip(&means)
            .map(|(&j, &mean)| if s.tabular[j].is_nan() { mean } else { s.tabular[j] })
            .collect();
    }
    table.feature_names = keep.iter().map(|&j| table.feature_names[j].clone()).collect();
    for d in &report.dropped {
        log::info!("dropped feature {} ({:.1}% missing)", d.name, 100.0 * d.missing_fraction);
    }
    Ok(report)
}
