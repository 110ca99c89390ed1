use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::graph::SubjectGraph;
use super::model::GatModel;
use super::train::node_scores;
use super::GatError;
use crate::metrics::auroc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature_index: usize,
    pub feature_name: String,
    pub delta_auroc: f64,
    /// 1-based rank by descending ΔAUROC.
    pub rank: usize,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportanceReport {
    pub baseline_auroc: f64,
    /// Sorted by rank.
    pub ranking: Vec<FeatureImportance>,
}

impl FeatureImportanceReport {
    pub fn selected_names(&self) -> Vec<String> {
        self.ranking.iter().filter(|f| f.selected).map(|f| f.feature_name.clone()).collect()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.ranking.iter().filter(|f| f.selected).map(|f| f.feature_index).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["feature_name", "delta_auroc", "rank", "selected"])?;
        for f in &self.ranking {
            w.write_record([f.feature_name.clone(), f.delta_auroc.to_string(), f.rank.to_string(), f.selected.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn validation_auroc(model: &GatModel, g: &SubjectGraph, features: &Array2<f64>) -> Result<f64, GatError> {
    let scores = node_scores(model, g, features)?;
    let (s, l): (Vec<f64>, Vec<u8>) = scores
        .iter()
        .zip(&g.labels)
        .zip(&g.val_mask)
        .filter(|(_, &m)| m)
        .map(|((&s, &l), _)| (s, l))
        .unzip();
    Ok(auroc(&s, &l)?)
}

/// Zeroes each input column in turn and records the drop in validation
/// AUROC, keeping the graph edges fixed.
pub fn ablation_importance(
    model: &GatModel,
    g: &SubjectGraph,
    feature_names: &[String],
    theta: usize,
) -> Result<FeatureImportanceReport, GatError> {
    if model.epochs_trained == 0 {
        return Err(GatError::Untrained);
    }
    let d = g.feature_dim();
    if feature_names.len() != d {
        return Err(GatError::FeatureDim { expected: d, found: feature_names.len() });
    }
    if theta == 0 || theta > d {
        return Err(GatError::Theta { theta, features: d });
    }
    if !g.val_mask.iter().any(|&m| m) {
        return Err(GatError::EmptyValidation);
    }
    let baseline = validation_auroc(model, g, &g.node_features)?;
    let deltas: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let mut ablated = g.node_features.clone();
            ablated.column_mut(j).fill(0.0);
            validation_auroc(model, g, &ablated).map(|a| baseline - a)
        })
        .collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| deltas[b].total_cmp(&deltas[a]).then(a.cmp(&b)));
    let ranking = order
        .iter()
        .enumerate()
        .map(|(r, &j)| FeatureImportance {
            feature_index: j,
            feature_name: feature_names[j].clone(),
            delta_auroc: deltas[j],
            rank: r + 1,
            selected: r < theta,
        })
        .collect();
    Ok(FeatureImportanceReport { baseline_auroc: baseline, ranking })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gat::{build_graph, train, GatConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(d: usize) -> Vec<String> {
        (0..d).map(|j| format!("f{j}")).collect()
    }

    fn informative_graph(seed: u64) -> SubjectGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = 120;
        let labels: Vec<u8> = (0..v).map(|_| rng.random_range(0..=1)).collect();
        let mut x = Array2::from_shape_fn((v, 5), |_| rng.random_range(-1.0..1.0));
        for i in 0..v {
            x[[i, 0]] = if labels[i] == 1 { 1.5 } else { -1.5 } + rng.random_range(-0.3..0.3);
        }
        // Column 4 is all zero.
        x.column_mut(4).fill(0.0);
        let train: Vec<bool> = (0..v).map(|i| i % 3 != 0).collect();
        let val: Vec<bool> = train.iter().map(|t| !t).collect();
        build_graph(&x, 6).unwrap().with_labels(labels, train, val).unwrap()
    }

    #[test]
    fn label_feature_ranked_first_and_zero_column_is_noop() {
        let g = informative_graph(5);
        let cfg = GatConfig { hidden_dims: vec![16, 16, 16], epochs: 150, ..Default::default() };
        let model = train(&g, &cfg).unwrap().model;
        let report = ablation_importance(&model, &g, &names(5), 5).unwrap();
        assert_eq!(report.ranking[0].feature_index, 0);
        let zero = report.ranking.iter().find(|f| f.feature_index == 4).unwrap();
        assert_eq!(zero.delta_auroc, 0.0);
        assert!(report.ranking.iter().all(|f| f.selected));
        assert!(report.ranking.windows(2).all(|w| w[0].delta_auroc >= w[1].delta_auroc));

        let again = ablation_importance(&model, &g, &names(5), 2).unwrap();
        assert_eq!(again.selected_indices().len(), 2);
        let mut buf = Vec::new();
        again.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("feature_name,delta_auroc,rank,selected\nf0,"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn untrained_model_rejected() {
        let g = informative_graph(6);
        let model = GatModel::new(&mut ChaCha8Rng::seed_from_u64(0), 5, &[4], 1, 0.25, 0.5);
        assert!(matches!(ablation_importance(&model, &g, &names(5), 3), Err(GatError::Untrained)));
    }
}
