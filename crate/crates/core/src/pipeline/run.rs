use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::write_dca;
use super::{fail, io_err, PipelineError, RunManifest, StageRecord, MANIFEST_FILE};
use crate::classifier::GridSearchOptions;
use crate::data::{carve_validation, chronological_split, clean_tabular, load_study, Split, StudyTable};
use crate::fusion::{
    evaluate_scores, fit_branch, late_fuse, run_plan, BranchSummary, FusionConfig, FusionError, PlanOutcome,
    PlanScores,
};
use crate::gat::{ablation_importance, build_graph, train as train_gat};
use crate::linalg::Standardizer;
use crate::metrics::auroc;
use crate::modality::Modality;
use crate::mpca::{select_dims, write_model};
use crate::preprocess::{
    affine_from_landmarks, build_template, filter_training_samples, warp_stack, AffineTransform, EvalError,
    FilterReport, LandmarkSet, Point,
};
use crate::tensor::Tensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Registration,
    Filtering,
    Mpca,
    Gat,
    Fusion,
    Evaluation,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Registration, Stage::Filtering, Stage::Mpca, Stage::Gat, Stage::Fusion, Stage::Evaluation];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Registration => "registration",
            Stage::Filtering => "filtering",
            Stage::Mpca => "mpca",
            Stage::Gat => "gat",
            Stage::Fusion => "fusion",
            Stage::Evaluation => "evaluation",
        }
    }

    fn enabled(self, cfg: &RunConfig) -> bool {
        let s = &cfg.stages;
        match self {
            Stage::Registration => s.registration,
            Stage::Filtering => s.filtering,
            Stage::Mpca => s.mpca,
            Stage::Gat => s.gat,
            Stage::Fusion => s.fusion,
            Stage::Evaluation => s.evaluation,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RegistrationRecord {
    templates: BTreeMap<Modality, [Point; 3]>,
    /// Template-to-scan sampling map per subject and modality.
    transforms: BTreeMap<String, BTreeMap<Modality, AffineTransform>>,
    /// Scans left unwarped because their landmarks were unusable.
    unregistered: Vec<(String, Modality)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelectedFeatures {
    names: Vec<String>,
    indices: Vec<usize>,
    baseline_auroc: Option<f64>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    reuse: bool,
    manifest: RunManifest,
}

fn rel(parts: &[&str]) -> PathBuf {
    parts.iter().collect()
}

impl Run<'_> {
    fn write_bytes(&self, path: &Path, bytes: &[u8]) -> Result<PathBuf, PipelineError> {
        let full = self.out.join(path);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        fs::write(&full, bytes).map_err(io_err(&full))?;
        Ok(path.to_path_buf())
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<PathBuf, PipelineError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write_bytes(path, text.as_bytes())
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path) -> Result<T, PipelineError> {
        let full = self.out.join(path);
        let text = fs::read_to_string(&full).map_err(io_err(&full))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Artifact { path: full.display().to_string(), reason: e.to_string() })
    }

    fn checkpoint(&self, paths: &[PathBuf]) -> bool {
        self.reuse && paths.iter().all(|p| self.out.join(p).is_file())
    }

    fn record(&mut self, stage: Stage, start: Instant, outputs: Vec<PathBuf>, reused: bool) {
        let seconds = start.elapsed().as_secs_f64();
        log::info!("stage {stage} finished in {seconds:.2} s");
        self.manifest.stages.push(StageRecord { stage, seconds, outputs, reused });
    }
}

/// Executes every enabled stage up to and including `until`. With `reuse`,
/// stages whose checkpoint files already exist in the output directory are
/// loaded instead of recomputed.
pub fn run_pipeline(cfg: &RunConfig, until: Stage, reuse: bool) -> Result<RunManifest, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let mut run = Run {
        cfg,
        out: cfg.out_dir.clone(),
        reuse,
        manifest: RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            plan: cfg.fusion.plan.label(),
            artifacts: Vec::new(),
            stages: Vec::new(),
            branches: Vec::new(),
            eval_report: None,
        },
    };
    let active: Vec<Stage> = Stage::ALL.into_iter().filter(|s| s.enabled(cfg) && *s <= until).collect();
    if !active.is_empty() {
        if cfg.workers > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            pool.install(|| execute(&mut run, &active))?;
        } else {
            execute(&mut run, &active)?;
        }
    }
    let manifest = run.manifest;
    let mut text = serde_json::to_string_pretty(&manifest).expect("serializable");
    text.push('\n');
    let path = cfg.out_dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

fn prepare(run: &mut Run<'_>) -> Result<StudyTable, PipelineError> {
    let cfg = run.cfg;
    let (mut table, exclusions) = load_study(&cfg.data_dir, &cfg.load)?;
    if table.is_empty() {
        return Err(PipelineError::Config(format!("{} holds no usable subjects", cfg.data_dir.display())));
    }
    chronological_split(&mut table, cfg.split.train_fraction, cfg.split.test_segments)?;
    carve_validation(&mut table, cfg.split.validation_fraction, cfg.validation_seed())?;
    let cleaning = clean_tabular(&mut table, &cfg.cleaning)?;
    let mut split_csv = String::from("subject_id,split,segment\n");
    for s in &table.subjects {
        let (name, seg) = match s.split {
            Split::Train => ("train", String::new()),
            Split::Validation => ("validation", String::new()),
            Split::Test { segment } => ("test", segment.to_string()),
            Split::Excluded => ("excluded", String::new()),
        };
        split_csv += &format!("{},{name},{seg}\n", s.id);
    }
    let artifacts = vec![
        run.write_bytes(&rel(&["study", "split.csv"]), split_csv.as_bytes())?,
        run.write_json(&rel(&["study", "cleaning.json"]), &cleaning)?,
        run.write_json(&rel(&["study", "exclusions.json"]), &exclusions)?,
    ];
    run.manifest.artifacts = artifacts;
    Ok(table)
}

fn execute(run: &mut Run<'_>, active: &[Stage]) -> Result<(), PipelineError> {
    let cfg = run.cfg;
    let mut table = prepare(run)?;
    let on = |s: Stage| active.contains(&s);

    if on(Stage::Registration) {
        let start = Instant::now();
        let path = rel(&["registration", "registration.json"]);
        let reused = run.checkpoint(std::slice::from_ref(&path));
        let record = if reused { run.read_json(&path)? } else { register(&table).map_err(|e| fail(Stage::Registration, e))? };
        apply_registration(&mut table, &record);
        if !reused {
            run.write_json(&path, &record)?;
        }
        run.record(Stage::Registration, start, vec![path], reused);
    }

    let mut train = table.train_indices();
    if on(Stage::Filtering) {
        let start = Instant::now();
        let path = rel(&["filtering", "filter_report.json"]);
        let reused = run.checkpoint(std::slice::from_ref(&path));
        let report: FilterReport = if reused {
            run.read_json(&path)?
        } else {
            filter(cfg, &table)?
        };
        train = report.retained_subject_ids.iter().filter_map(|id| table.index_of(id)).collect();
        train.sort_unstable();
        if !reused {
            run.write_json(&path, &report)?;
        }
        run.record(Stage::Filtering, start, vec![path], reused);
    }

    if on(Stage::Mpca) {
        let start = Instant::now();
        let mut dims = BTreeMap::new();
        for m in cfg.fusion.plan.modalities.iter().filter(|m| m.is_imaging()) {
            if table.missing_modality(*m).is_some() {
                continue;
            }
            let samples: Vec<Tensor3> = table.tensors_of(&train, *m).into_iter().cloned().collect();
            let d = select_dims(&samples, cfg.mpca.variance_fraction).map_err(|e| fail(Stage::Mpca, e))?;
            dims.insert(*m, d);
        }
        let path = run.write_json(&rel(&["mpca", "dims.json"]), &dims)?;
        run.record(Stage::Mpca, start, vec![path], false);
    }

    let mut columns: Vec<usize> = (0..table.feature_names.len()).collect();
    let needs_tabular = cfg.fusion.plan.modalities.contains(&Modality::Ehr);
    if on(Stage::Gat) && needs_tabular {
        let start = Instant::now();
        let sel_path = rel(&["gat", "selected_features.json"]);
        let reused = run.checkpoint(std::slice::from_ref(&sel_path));
        let mut outputs = vec![sel_path.clone()];
        let selected: SelectedFeatures = if reused {
            run.read_json(&sel_path)?
        } else {
            let (selected, extra) = select_features(run, &table, &train)?;
            outputs.extend(extra?);
            run.write_json(&sel_path, &selected)?;
            selected
        };
        columns = selected
            .names
            .iter()
            .map(|n| table.feature_names.iter().position(|f| f == n))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| PipelineError::Stage { stage: Stage::Gat, message: "selected feature not in table".into() })?;
        if reused {
            outputs = vec![sel_path];
        }
        run.record(Stage::Gat, start, outputs, reused);
    }

    let mut scores: Option<PlanScores> = None;
    if on(Stage::Fusion) {
        let start = Instant::now();
        let train_path = rel(&["fusion", "train_scores.csv"]);
        let test_path = rel(&["fusion", "test_scores.csv"]);
        let branches_path = rel(&["fusion", "branches.json"]);
        let reused = run.checkpoint(&[train_path.clone(), test_path.clone(), branches_path.clone()]);
        let test = table.test_indices();
        if reused {
            let train_s = read_scores(&run.out.join(&train_path), &table)?;
            let test_s = read_scores(&run.out.join(&test_path), &table)?;
            run.manifest.branches = run.read_json(&branches_path)?;
            scores = Some(PlanScores {
                plan: cfg.fusion.plan.label(),
                train_indices: train_s.0,
                train_scores: train_s.1,
                test_indices: test_s.0,
                test_scores: test_s.1,
            });
            run.record(Stage::Fusion, start, vec![train_path, test_path, branches_path], true);
        } else {
            for m in cfg.fusion.plan.modalities.iter().filter(|m| m.is_imaging()) {
                if let Some(id) = table.missing_modality(*m) {
                    let e = FusionError::MissingModality { subject: id.to_string(), modality: *m };
                    return Err(fail(Stage::Fusion, e));
                }
            }
            let outcome = run_plan(&cfg.fusion.plan, &table, &train, &test, &columns, &cfg.fusion_config())
                .map_err(|e| fail(Stage::Fusion, e))?;
            let outputs = write_fusion(run, &table, &outcome)?;
            run.manifest.branches = outcome.branches.iter().map(|b| b.summary()).collect();
            scores = Some(outcome.scores());
            run.record(Stage::Fusion, start, outputs, false);
        }
    }

    if on(Stage::Evaluation) {
        let start = Instant::now();
        let scores = scores.ok_or_else(|| PipelineError::Stage {
            stage: Stage::Evaluation,
            message: "no fused scores; enable the fusion stage".into(),
        })?;
        let eval = evaluate_scores(&scores, &table, &cfg.dca.thresholds).map_err(|e| fail(Stage::Evaluation, e))?;
        let report_path = run.write_json(&rel(&["evaluation", "eval_report.json"]), &eval)?;
        let (csv, svg) = write_dca(&eval.overall.dca_curve, &run.out.join("evaluation"), &eval.plan)?;
        run.manifest.eval_report = Some(report_path.clone());
        let outputs = vec![report_path, rel(&["evaluation", &csv]), rel(&["evaluation", &svg])];
        run.record(Stage::Evaluation, start, outputs, false);
    }
    Ok(())
}

fn register(table: &StudyTable) -> Result<RegistrationRecord, crate::preprocess::PreprocessError> {
    let training = table.training_indices();
    let mut templates = BTreeMap::new();
    for m in Modality::IMAGING {
        let sets: Vec<LandmarkSet> =
            training.iter().filter_map(|&i| table.subjects[i].landmarks.get(&m).cloned()).collect();
        if !sets.is_empty() {
            templates.insert(m, build_template(&sets)?);
        }
    }
    let mut transforms = BTreeMap::new();
    let mut unregistered = Vec::new();
    for s in &table.subjects {
        let mut per = BTreeMap::new();
        for m in s.tensors.keys() {
            let Some(template) = templates.get(m) else { continue };
            match s.landmarks.get(m).map(|set| affine_from_landmarks(set, template)) {
                Some(Ok(a)) => {
                    per.insert(*m, a);
                }
                Some(Err(e)) => {
                    log::warn!("{} {m}: {e}; left unregistered", s.id);
                    unregistered.push((s.id.clone(), *m));
                }
                None => unregistered.push((s.id.clone(), *m)),
            }
        }
        transforms.insert(s.id.clone(), per);
    }
    Ok(RegistrationRecord { templates, transforms, unregistered })
}

fn apply_registration(table: &mut StudyTable, record: &RegistrationRecord) {
    table.subjects.par_iter_mut().for_each(|s| {
        if let Some(per) = record.transforms.get(&s.id) {
            for (m, t) in s.tensors.iter_mut() {
                if let Some(a) = per.get(m) {
                    *t = warp_stack(t, a);
                }
            }
        }
    });
}

fn filter(cfg: &RunConfig, table: &StudyTable) -> Result<FilterReport, PipelineError> {
    let val = table.validation_indices();
    if val.is_empty() {
        return Err(PipelineError::Config("filtering needs a non-empty validation split".into()));
    }
    let kinds = cfg.filter.eval_plan.branches().map_err(|e| PipelineError::Config(e.to_string()))?;
    let weights = cfg.filter.eval_plan.weights().map_err(|e| PipelineError::Config(e.to_string()))?;
    let val_labels = table.labels_of(&val);
    let fusion = FusionConfig {
        cv: GridSearchOptions { folds: cfg.filter.eval_folds, ..cfg.classifier.clone() },
        ..cfg.fusion_config()
    };
    let columns: Vec<usize> = (0..table.feature_names.len()).collect();
    let sets: Vec<LandmarkSet> =
        table.train_indices().iter().flat_map(|&i| table.subjects[i].landmarks.values().cloned()).collect();
    let eval = |ids: &[String]| -> Result<f64, EvalError> {
        let idx: Vec<usize> = ids.iter().filter_map(|id| table.index_of(id)).collect();
        let mut scores = Vec::new();
        let mut stats = Vec::new();
        for &kind in &kinds {
            let b = fit_branch(kind, table, &idx, &columns, &fusion)?;
            scores.push(b.scores(table, &val)?);
            stats.push(b.train_stats);
        }
        let fused = late_fuse(&scores, &stats, &weights, fusion.combination)?;
        Ok(auroc(&fused, &val_labels)?)
    };
    let report = filter_training_samples(&sets, &cfg.filter.filter, eval).map_err(|e| fail(Stage::Filtering, e))?;
    Ok(report)
}

type Extra = Result<Vec<PathBuf>, PipelineError>;

fn select_features(run: &Run<'_>, table: &StudyTable, train: &[usize]) -> Result<(SelectedFeatures, Extra), PipelineError> {
    let cfg = run.cfg;
    let val = table.validation_indices();
    let nodes: Vec<usize> = train.iter().chain(&val).copied().collect();
    let x = table.tabular_matrix(&nodes, None);
    let train_rows: Vec<usize> = (0..train.len()).collect();
    let xs = Standardizer::fit(&x, Some(&train_rows)).transform(&x);
    let train_mask: Vec<bool> = (0..nodes.len()).map(|r| r < train.len()).collect();
    let val_mask: Vec<bool> = train_mask.iter().map(|t| !t).collect();
    let graph = build_graph(&xs, cfg.gat.target_degree)
        .and_then(|g| g.with_labels(table.labels_of(&nodes), train_mask, val_mask))
        .map_err(|e| fail(Stage::Gat, e))?;
    let outcome = train_gat(&graph, &cfg.gat).map_err(|e| fail(Stage::Gat, e))?;
    let theta = cfg.gat.theta.min(table.feature_names.len());
    if theta < cfg.gat.theta {
        log::warn!("theta {} exceeds {} features; keeping all", cfg.gat.theta, theta);
    }
    let report = ablation_importance(&outcome.model, &graph, &table.feature_names, theta).map_err(|e| fail(Stage::Gat, e))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(|e| fail(Stage::Gat, e))?;
    let training = serde_json::json!({
        "mean_degree": graph.mean_degree(),
        "threshold": graph.threshold,
        "initial_eval_loss": outcome.initial_eval_loss,
        "final_eval_loss": outcome.final_eval_loss,
        "loss_history": outcome.loss_history,
    });
    let extra = (|| {
        Ok(vec![
            run.write_bytes(&rel(&["gat", "importance.csv"]), &csv)?,
            run.write_json(&rel(&["gat", "model.json"]), &outcome.model)?,
            run.write_json(&rel(&["gat", "training.json"]), &training)?,
        ])
    })();
    let mut indices = report.selected_indices();
    indices.sort_unstable();
    let selected = SelectedFeatures {
        names: indices.iter().map(|&i| table.feature_names[i].clone()).collect(),
        indices,
        baseline_auroc: Some(report.baseline_auroc),
    };
    Ok((selected, extra))
}

fn write_fusion(run: &Run<'_>, table: &StudyTable, outcome: &PlanOutcome) -> Result<Vec<PathBuf>, PipelineError> {
    let mut outputs = Vec::new();
    for (k, b) in outcome.branches.iter().enumerate() {
        outputs.push(run.write_bytes(&rel(&["fusion", &format!("branch{k}_classifier.json")]), b.classifier.to_json().as_bytes())?);
        for (j, m) in b.mpca.iter().enumerate() {
            let path = rel(&["fusion", &format!("branch{k}_mpca{j}.mpca")]);
            let full = run.out.join(&path);
            write_model(m, &full).map_err(|e| fail(Stage::Fusion, e))?;
            outputs.push(path);
        }
    }
    let summaries: Vec<BranchSummary> = outcome.branches.iter().map(|b| b.summary()).collect();
    outputs.push(run.write_json(&rel(&["fusion", "branches.json"]), &summaries)?);

    let mut train_csv = String::from("subject_id,score\n");
    for (&i, s) in outcome.train_indices.iter().zip(&outcome.train_scores) {
        train_csv += &format!("{},{s:?}\n", table.subjects[i].id);
    }
    outputs.push(run.write_bytes(&rel(&["fusion", "train_scores.csv"]), train_csv.as_bytes())?);
    let names: Vec<String> = outcome.branches.iter().map(|b| format!("score_{}", b.kind)).collect();
    let mut test_csv = format!("subject_id,score,{}\n", names.join(","));
    for (p, &i) in outcome.test_indices.iter().enumerate() {
        test_csv += &format!("{},{:?}", table.subjects[i].id, outcome.test_scores[p]);
        for b in &outcome.test_branch_scores {
            test_csv += &format!(",{:?}", b[p]);
        }
        test_csv.push('\n');
    }
    outputs.push(run.write_bytes(&rel(&["fusion", "test_scores.csv"]), test_csv.as_bytes())?);
    Ok(outputs)
}

/// Reads `subject_id,score,...` back into table indices and scores.
fn read_scores(path: &Path, table: &StudyTable) -> Result<(Vec<usize>, Vec<f64>), PipelineError> {
    let bad = |reason: String| PipelineError::Artifact { path: path.display().to_string(), reason };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let (mut idx, mut scores) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let i = table.index_of(&rec[0]).ok_or_else(|| bad(format!("unknown subject {}", &rec[0])))?;
        idx.push(i);
        scores.push(rec[1].parse::<f64>().map_err(|e| bad(e.to_string()))?);
    }
    Ok((idx, scores))
}
