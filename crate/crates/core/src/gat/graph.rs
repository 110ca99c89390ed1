use ndarray::Array2;

use super::GatError;

/// Subject similarity graph: nodes are subjects, undirected edges join pairs
/// whose cosine similarity exceeds `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectGraph {
    pub node_features: Array2<f64>,
    /// Undirected edges `(u, v, cosine)` with `u < v`.
    pub edges: Vec<(usize, usize, f64)>,
    pub threshold: f64,
    pub labels: Vec<u8>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    /// Per-node neighborhood including the self-loop (weight 1), self first.
    pub(crate) neighbors: Vec<Vec<(usize, f64)>>,
}

pub fn cosine_matrix(features: &Array2<f64>) -> Result<Array2<f64>, GatError> {
    let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(GatError::ZeroRow(i));
    }
    let gram = features.dot(&features.t());
    Ok(Array2::from_shape_fn(gram.dim(), |(i, j)| gram[[i, j]] / (norms[i] * norms[j])))
}

/// Builds the graph whose mean degree is closest to `target_degree`.
///
/// Keeping the `m` most similar pairs gives mean degree `2m/V`; only cut
/// points between distinct similarity values are realizable with a strict
/// threshold, so the best realizable `m` wins (fewer edges on ties).
pub fn build_graph(features: &Array2<f64>, target_degree: usize) -> Result<SubjectGraph, GatError> {
    let v = features.nrows();
    if v < 2 {
        return Err(GatError::TooFewNodes(v));
    }
    if target_degree >= v {
        return Err(GatError::TargetDegree { target: target_degree, nodes: v });
    }
    let cos = cosine_matrix(features)?;
    let mut pairs: Vec<(usize, usize, f64)> = Vec::with_capacity(v * (v - 1) / 2);
    for i in 0..v {
        for j in i + 1..v {
            pairs.push((i, j, cos[[i, j]]));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let p = pairs.len();
    let target = target_degree as f64;
    let mut best: Option<(f64, usize)> = None;
    for m in 0..=p {
        let realizable = m == 0 || m == p || pairs[m - 1].2 > pairs[m].2;
        if !realizable {
            continue;
        }
        let gap = (2.0 * m as f64 / v as f64 - target).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((gap, m));
        }
    }
    let m = best.expect("m = 0 is always realizable").1;
    let threshold = if m == p { pairs[p - 1].2 - 1.0 } else { pairs[m].2 };
    let mut edges: Vec<(usize, usize, f64)> = pairs[..m].to_vec();
    edges.sort_by_key(|&(a, b, _)| (a, b));
    if edges.is_empty() {
        log::warn!("similarity graph has no edges above threshold {threshold}; attention reduces to self-loops");
    }
    Ok(SubjectGraph::from_edges(features.clone(), edges, threshold))
}

impl SubjectGraph {
    pub fn from_edges(node_features: Array2<f64>, edges: Vec<(usize, usize, f64)>, threshold: f64) -> Self {
        let v = node_features.nrows();
        let mut neighbors: Vec<Vec<(usize, f64)>> = (0..v).map(|i| vec![(i, 1.0)]).collect();
        for &(a, b, w) in &edges {
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
        }
        for list in &mut neighbors {
            list[1..].sort_by_key(|&(u, _)| u);
        }
        SubjectGraph {
            node_features,
            edges,
            threshold,
            labels: vec![0; v],
            train_mask: vec![false; v],
            val_mask: vec![false; v],
            neighbors,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edges.len() as f64 / self.num_nodes() as f64
    }

    /// `N_v` including the self-loop.
    pub fn neighborhood(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[v]
    }

    pub fn with_labels(mut self, labels: Vec<u8>, train_mask: Vec<bool>, val_mask: Vec<bool>) -> Result<Self, GatError> {
        let v = self.num_nodes();
        if labels.len() != v || train_mask.len() != v || val_mask.len() != v {
            return Err(GatError::MaskLength(v));
        }
        self.labels = labels;
        self.train_mask = train_mask;
        self.val_mask = val_mask;
        Ok(self)
    }

    /// Same graph with node features replaced (edges are kept).
    pub fn with_features(&self, node_features: Array2<f64>) -> Self {
        let mut g = self.clone();
        g.node_features = node_features;
        g
    }

    /// Relabels node `i` as `perm[i]`. Neighborhood order is carried over so
    /// per-node reductions run in the same order.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let v = self.num_nodes();
        assert_eq!(perm.len(), v);
        let mut features = Array2::zeros(self.node_features.dim());
        let mut labels = vec![0; v];
        let mut train_mask = vec![false; v];
        let mut val_mask = vec![false; v];
        let mut neighbors = vec![Vec::new(); v];
        for i in 0..v {
            let p = perm[i];
            features.row_mut(p).assign(&self.node_features.row(i));
            labels[p] = self.labels[i];
            train_mask[p] = self.train_mask[i];
            val_mask[p] = self.val_mask[i];
            neighbors[p] = self.neighbors[i].iter().map(|&(u, w)| (perm[u], w)).collect();
        }
        let mut edges: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|&(a, b, w)| (perm[a].min(perm[b]), perm[a].max(perm[b]), w))
            .collect();
        edges.sort_by_key(|&(a, b, _)| (a, b));
        SubjectGraph { node_features: features, edges, threshold: self.threshold, labels, train_mask, val_mask, neighbors }
    }
}
