//! Study directory layout:
//!
//! ```text
//! labels.csv            subject_id, label | pawp_mmhg [, screening_order]
//! ehr.csv               subject_id, <feature columns...>
//! landmarks.csv         subject_id, modality, landmark_id, x, y, uncertainty
//! tensors/<id>_<modality>.hft
//! ```
//!
//! Empty cells and `NA`/`nan` in `ehr.csv` are missing values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tensor_file::read_tensor;
use super::{DataError, Split, StudyTable, Subject};
use crate::modality::Modality;
use crate::preprocess::LandmarkSet;
use crate::tensor::Tensor3;

/// PAWP above this (mmHg) is the positive class.
pub const PAWP_THRESHOLD_MMHG: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub required: Vec<Modality>,
    /// Require three landmarks for every required imaging modality.
    pub require_landmarks: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { required: vec![Modality::ShortAxis, Modality::FourChamber, Modality::Ehr], require_landmarks: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    /// `(subject_id, reason)`.
    pub excluded: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

fn open_csv(path: &Path) -> Result<Option<csv::Reader<std::fs::File>>, DataError> {
    if !path.exists() {
        return Ok(None);
    }
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map(Some)
        .map_err(|source| DataError::Csv { path: path.display().to_string(), source })
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn parse_number(path: &Path, row: usize, column: &str, value: &str) -> Result<f64, DataError> {
    value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| DataError::NonNumeric {
        path: path.display().to_string(),
        row,
        column: column.to_string(),
        value: value.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv { path: path.display().to_string(), source }
}

struct LabelRow {
    label: u8,
    order: Option<f64>,
}

fn read_labels(path: &Path) -> Result<Option<BTreeMap<String, LabelRow>>, DataError> {
    let Some(mut rdr) = open_csv(path)? else { return Ok(None) };
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let header_err = |reason: &str| DataError::Header { path: path.display().to_string(), reason: reason.into() };
    if header_index(&headers, "subject_id") != Some(0) {
        return Err(header_err("first column must be subject_id"));
    }
    let label_col = header_index(&headers, "label");
    let pawp_col = header_index(&headers, "pawp_mmhg");
    if label_col.is_none() && pawp_col.is_none() {
        return Err(header_err("need a label or pawp_mmhg column"));
    }
    let order_col = header_index(&headers, "screening_order");
    let mut out = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let id = rec[0].to_string();
        let label = match label_col {
            Some(c) => match &rec[c] {
                "0" => 0,
                "1" => 1,
                v => {
                    return Err(DataError::NonNumeric { path: path.display().to_string(), row, column: "label".into(), value: v.into() })
                }
            },
            None => {
                let c = pawp_col.expect("checked");
                u8::from(parse_number(path, row, "pawp_mmhg", &rec[c])? > PAWP_THRESHOLD_MMHG)
            }
        };
        let order = match order_col {
            Some(c) if !rec[c].is_empty() => Some(parse_number(path, row, "screening_order", &rec[c])?),
            _ => None,
        };
        if out.insert(id.clone(), LabelRow { label, order }).is_some() {
            return Err(DataError::DuplicateSubject { id, path: path.display().to_string() });
        }
    }
    Ok(Some(out))
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

type EhrTable = (Vec<String>, BTreeMap<String, Vec<f64>>);

fn read_ehr(path: &Path) -> Result<Option<EhrTable>, DataError> {
    let Some(mut rdr) = open_csv(path)? else { return Ok(None) };
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if header_index(&headers, "subject_id") != Some(0) {
        return Err(DataError::Header { path: path.display().to_string(), reason: "first column must be subject_id".into() });
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() != names.len() {
        return Err(DataError::Header { path: path.display().to_string(), reason: "duplicate column names".into() });
    }
    let mut rows = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let id = rec[0].to_string();
        let values = rec
            .iter()
            .skip(1)
            .zip(&names)
            .map(|(cell, name)| if is_missing(cell) { Ok(f64::NAN) } else { parse_number(path, row, name, cell) })
            .collect::<Result<Vec<f64>, _>>()?;
        if rows.insert(id.clone(), values).is_some() {
            return Err(DataError::DuplicateSubject { id, path: path.display().to_string() });
        }
    }
    Ok(Some((names, rows)))
}

type LandmarkRows = BTreeMap<(String, Modality), BTreeMap<i64, ([f64; 2], f64)>>;

fn read_landmarks(path: &Path) -> Result<LandmarkRows, DataError> {
    let mut out: LandmarkRows = BTreeMap::new();
    let Some(mut rdr) = open_csv(path)? else { return Ok(out) };
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let expected = ["subject_id", "modality", "landmark_id", "x", "y", "uncertainty"];
    if headers.len() < 6 || headers.iter().take(6).ne(expected.iter().copied()) {
        return Err(DataError::Header { path: path.display().to_string(), reason: format!("expected columns {expected:?}") });
    }
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let modality: Modality = rec[1].parse().map_err(|_| DataError::NonNumeric {
            path: path.display().to_string(),
            row,
            column: "modality".into(),
            value: rec[1].to_string(),
        })?;
        let id: i64 = rec[2].parse().map_err(|_| DataError::NonNumeric {
            path: path.display().to_string(),
            row,
            column: "landmark_id".into(),
            value: rec[2].to_string(),
        })?;
        let x = parse_number(path, row, "x", &rec[3])?;
        let y = parse_number(path, row, "y", &rec[4])?;
        let u = parse_number(path, row, "uncertainty", &rec[5])?;
        let slot = out.entry((rec[0].to_string(), modality)).or_default();
        if slot.insert(id, ([x, y], u)).is_some() {
            return Err(DataError::Invalid(format!("duplicate landmark {id} for {} {modality}", &rec[0])));
        }
    }
    Ok(out)
}

fn landmark_set(id: &str, modality: Modality, rows: &BTreeMap<i64, ([f64; 2], f64)>) -> Option<LandmarkSet> {
    if rows.len() != 3 {
        return None;
    }
    let entries: Vec<&([f64; 2], f64)> = rows.values().collect();
    Some(LandmarkSet {
        subject_id: id.to_string(),
        modality,
        points: [entries[0].0, entries[1].0, entries[2].0],
        uncertainties: [entries[0].1, entries[1].1, entries[2].1],
    })
}

pub fn tensor_path(dir: &Path, id: &str, modality: Modality) -> std::path::PathBuf {
    dir.join("tensors").join(format!("{id}_{}.hft", modality.as_str()))
}

/// Joins the study files on subject_id. Subjects lacking anything in
/// `options.required` are left out and listed in the report.
pub fn load_study(dir: &Path, options: &LoadOptions) -> Result<(StudyTable, ExclusionReport), DataError> {
    if !dir.is_dir() {
        return Err(DataError::Io {
            path: dir.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "study directory not found"),
        });
    }
    let mut report = ExclusionReport::default();
    let Some(labels) = read_labels(&dir.join("labels.csv"))? else {
        let msg = format!("{} has no labels.csv; study is empty", dir.display());
        log::warn!("{msg}");
        report.warnings.push(msg);
        return Ok((StudyTable::new(Vec::new(), Vec::new(), Vec::new())?, report));
    };
    let (feature_names, mut ehr) = read_ehr(&dir.join("ehr.csv"))?.unwrap_or_default();
    let landmarks = read_landmarks(&dir.join("landmarks.csv"))?;
    for id in ehr.keys() {
        if !labels.contains_key(id) {
            report.excluded.push((id.clone(), "no label".into()));
        }
    }

    let ids: Vec<&String> = labels.keys().collect();
    let loaded: Vec<Result<BTreeMap<Modality, Tensor3>, DataError>> = ids
        .par_iter()
        .map(|id| {
            let mut tensors = BTreeMap::new();
            for m in Modality::IMAGING {
                let path = tensor_path(dir, id, m);
                if path.exists() {
                    tensors.insert(m, read_tensor(&path)?);
                }
            }
            Ok(tensors)
        })
        .collect();

    let mut subjects = Vec::new();
    let mut label_values = Vec::new();
    for (id, tensors) in ids.into_iter().zip(loaded) {
        let tensors = tensors?;
        let row = &labels[id];
        let tabular = ehr.remove(id).unwrap_or_default();
        let mut sets = BTreeMap::new();
        for m in Modality::IMAGING {
            if let Some(rows) = landmarks.get(&(id.clone(), m)) {
                if let Some(set) = landmark_set(id, m, rows) {
                    sets.insert(m, set);
                }
            }
        }
        let mut missing = Vec::new();
        for &m in &options.required {
            let present = match m {
                Modality::Ehr => !tabular.is_empty(),
                _ => tensors.contains_key(&m),
            };
            if !present {
                missing.push(format!("{m} data"));
            }
            if m.is_imaging() && options.require_landmarks && !sets.contains_key(&m) {
                missing.push(format!("{m} landmarks"));
            }
        }
        if !missing.is_empty() {
            report.excluded.push((id.clone(), format!("missing {}", missing.join(", "))));
            continue;
        }
        subjects.push(Subject {
            id: id.clone(),
            tensors,
            tabular,
            landmarks: sets,
            screening_order: row.order,
            split: Split::Train,
        });
        label_values.push(row.label);
    }
    if subjects.is_empty() {
        let msg = format!("{} contains no complete subjects", dir.display());
        log::warn!("{msg}");
        report.warnings.push(msg);
    }
    for (id, reason) in &report.excluded {
        log::info!("excluded {id}: {reason}");
    }
    Ok((StudyTable::new(feature_names, subjects, label_values)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_tensor;
    use std::fs;

    fn fixture(dir: &Path) {
        fs::create_dir_all(dir.join("tensors")).unwrap();
        fs::write(dir.join("labels.csv"), "subject_id,pawp_mmhg,screening_order\ns1,12,3\ns2,18.5,1\ns3,16,2\n").unwrap();
        fs::write(dir.join("ehr.csv"), "subject_id,age,bsa\ns1,60,1.8\ns2,NA,2.0\ns3,71,\ns4,50,1.7\n").unwrap();
        let mut lm = String::from("subject_id,modality,landmark_id,x,y,uncertainty\n");
        for s in ["s1", "s2", "s3"] {
            for m in ["short_axis", "four_chamber"] {
                lm += &format!("{s},{m},0,1,1,0.1\n{s},{m},1,5,1,0.2\n{s},{m},2,3,4,0.3\n");
            }
        }
        fs::write(dir.join("landmarks.csv"), lm).unwrap();
        for (k, s) in ["s1", "s2", "s3"].iter().enumerate() {
            for m in Modality::IMAGING {
                let t = Tensor3::from_fn([2, 3, 2], |i, j, l| (k * 100 + i * 6 + j * 2 + l) as f64).unwrap();
                write_tensor(&t, &tensor_path(dir, s, m)).unwrap();
            }
        }
    }

    #[test]
    fn empty_directory_gives_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let (table, report) = load_study(dir.path(), &LoadOptions::default()).unwrap();
        assert!(table.is_empty());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn complete_fixture_joins_every_field() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let (table, report) = load_study(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.feature_names, vec!["age", "bsa"]);
        assert_eq!(report.excluded, vec![("s4".to_string(), "no label".to_string())]);
        let s2 = &table.subjects[table.index_of("s2").unwrap()];
        assert!(s2.tabular[0].is_nan());
        assert_eq!(s2.tabular[1], 2.0);
        assert_eq!(s2.screening_order, Some(1.0));
        assert_eq!(table.labels_of(&[0, 1, 2]), vec![0, 1, 1]);
        let s3 = &table.subjects[2];
        assert_eq!(s3.tensors[&Modality::FourChamber].get(1, 2, 1), 211.0);
        assert_eq!(s3.landmarks[&Modality::ShortAxis].points[2], [3.0, 4.0]);
        assert_eq!(s3.landmarks[&Modality::ShortAxis].uncertainties, [0.1, 0.2, 0.3]);
    }

    #[test]
    fn missing_tensor_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        fs::remove_file(tensor_path(dir.path(), "s1", Modality::ShortAxis)).unwrap();
        let (table, report) = load_study(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(table.len(), 2);
        assert!(report.excluded.iter().any(|(id, why)| id == "s1" && why.contains("short_axis")));
        let only_fc = LoadOptions { required: vec![Modality::FourChamber], require_landmarks: false };
        assert_eq!(load_study(dir.path(), &only_fc).unwrap().0.len(), 3);
    }

    #[test]
    fn malformed_inputs_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        fs::write(dir.path().join("ehr.csv"), "id,age\ns1,3\n").unwrap();
        assert!(matches!(load_study(dir.path(), &LoadOptions::default()), Err(DataError::Header { .. })));
        fs::write(dir.path().join("ehr.csv"), "subject_id,age\ns1,3\ns1,4\n").unwrap();
        assert!(matches!(load_study(dir.path(), &LoadOptions::default()), Err(DataError::DuplicateSubject { .. })));
        fs::write(dir.path().join("ehr.csv"), "subject_id,age\ns1,old\n").unwrap();
        assert!(matches!(load_study(dir.path(), &LoadOptions::default()), Err(DataError::NonNumeric { .. })));
    }
}
