use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plot::{bar_chart, line_chart, Series};
use super::{io_err, PipelineError, RunManifest};
use crate::fusion::PlanEvaluation;
use crate::metrics::DcaPoint;

/// Writes `dca.csv` and `dca.svg` into `dir`; returns their file names.
pub fn write_dca(curve: &[DcaPoint], dir: &Path, title: &str) -> Result<(String, String), PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut csv = String::from("threshold_probability,net_benefit_model,net_benefit_treat_all,net_benefit_treat_none\n");
    for p in curve {
        csv += &format!("{:?},{:?},{:?},{:?}\n", p.threshold, p.net_benefit_model, p.net_benefit_treat_all, p.net_benefit_treat_none);
    }
    let csv_path = dir.join("dca.csv");
    fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;

    let prevalence = curve.first().map_or(0.5, |p| p.net_benefit_treat_all.max(p.net_benefit_model));
    let top = (prevalence * 1.1).max(0.05);
    let series = [
        Series { name: "model", points: curve.iter().map(|p| (p.threshold, p.net_benefit_model)).collect() },
        Series { name: "treat all", points: curve.iter().map(|p| (p.threshold, p.net_benefit_treat_all)).collect() },
        Series { name: "treat none", points: curve.iter().map(|p| (p.threshold, p.net_benefit_treat_none)).collect() },
    ];
    let svg = line_chart(
        &format!("Decision curve: {title}"),
        "threshold probability",
        "net benefit",
        (0.0, 1.0),
        (-0.05, top),
        &series,
    );
    let svg_path = dir.join("dca.svg");
    fs::write(&svg_path, svg).map_err(io_err(&svg_path))?;
    Ok(("dca.csv".into(), "dca.svg".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub manifest: PathBuf,
    pub segments: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub mcc_mean: f64,
    pub mcc_std: f64,
    pub pooled_auroc: f64,
    /// Differences from the first manifest given.
    pub delta_auroc: f64,
    pub delta_accuracy: f64,
    pub delta_mcc: f64,
}

/// Loads each manifest's evaluation report and tabulates them, best
/// segment-mean AUROC first.
pub fn compare_manifests(paths: &[PathBuf]) -> Result<Vec<CompareRow>, PipelineError> {
    if paths.len() < 2 {
        return Err(PipelineError::Config("compare needs at least two manifests".into()));
    }
    let mut rows = Vec::new();
    for path in paths {
        let manifest = RunManifest::read(path)?;
        let report_rel = manifest.eval_report.as_ref().ok_or_else(|| PipelineError::Artifact {
            path: path.display().to_string(),
            reason: "manifest lists no evaluation report".into(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let report_path = base.join(report_rel);
        let text = fs::read_to_string(&report_path).map_err(io_err(&report_path))?;
        let eval: PlanEvaluation = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Artifact { path: report_path.display().to_string(), reason: e.to_string() })?;
        rows.push(CompareRow {
            label: eval.plan.clone(),
            manifest: path.clone(),
            segments: eval.segments.len(),
            auroc_mean: eval.segment_auroc.mean,
            auroc_std: eval.segment_auroc.std,
            accuracy_mean: eval.segment_accuracy.mean,
            accuracy_std: eval.segment_accuracy.std,
            mcc_mean: eval.segment_mcc.mean,
            mcc_std: eval.segment_mcc.std,
            pooled_auroc: eval.overall.auroc,
            delta_auroc: 0.0,
            delta_accuracy: 0.0,
            delta_mcc: 0.0,
        });
    }
    let reference = rows[0].clone();
    for r in &mut rows {
        r.delta_auroc = r.auroc_mean - reference.auroc_mean;
        r.delta_accuracy = r.accuracy_mean - reference.accuracy_mean;
        r.delta_mcc = r.mcc_mean - reference.mcc_mean;
    }
    rows.sort_by(|a, b| b.auroc_mean.total_cmp(&a.auroc_mean).then_with(|| a.label.cmp(&b.label)));
    Ok(rows)
}

pub fn write_comparison(rows: &[CompareRow], csv_path: &Path, svg_path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Artifact { path: csv_path.display().to_string(), reason: e.to_string() })?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Artifact { path: csv_path.display().to_string(), reason: e.to_string() })?;
    fs::write(csv_path, bytes).map_err(io_err(csv_path))?;
    let bars: Vec<(String, f64, f64)> = rows.iter().map(|r| (r.label.clone(), r.auroc_mean, r.auroc_std)).collect();
    fs::write(svg_path, bar_chart("Test AUROC by plan (segment mean, std)", "AUROC", &bars)).map_err(io_err(svg_path))?;
    Ok(())
}
