use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::SubjectGraph;
use super::GatError;

/// One attention head of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `d_out x d_in`.
    pub w: Array2<f64>,
    pub a_src: Array1<f64>,
    pub a_dst: Array1<f64>,
    pub a_edge: Array1<f64>,
    pub w_edge: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatModel {
    pub layers: Vec<Vec<HeadParams>>,
    /// `2 x d_last`.
    pub decoder_w: Array2<f64>,
    pub decoder_b: Array1<f64>,
    pub leaky_slope: f64,
    /// Drop probability for attention weights and layer outputs in training.
    pub dropout: f64,
    pub epochs_trained: usize,
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

fn glorot_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Array1<f64> {
    glorot(rng, 1, len).remove_axis(Axis(0))
}

impl HeadParams {
    fn zeros_like(&self) -> Self {
        HeadParams {
            w: Array2::zeros(self.w.dim()),
            a_src: Array1::zeros(self.a_src.len()),
            a_dst: Array1::zeros(self.a_dst.len()),
            a_edge: Array1::zeros(self.a_edge.len()),
            w_edge: Array1::zeros(self.w_edge.len()),
        }
    }
}

impl GatModel {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        input_dim: usize,
        hidden_dims: &[usize],
        heads: usize,
        leaky_slope: f64,
        dropout: f64,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_dims.len());
        let mut d_in = input_dim;
        for &d_out in hidden_dims {
            let layer = (0..heads)
                .map(|_| HeadParams {
                    w: glorot(rng, d_out, d_in),
                    a_src: glorot_vec(rng, d_out),
                    a_dst: glorot_vec(rng, d_out),
                    a_edge: glorot_vec(rng, d_out),
                    w_edge: glorot_vec(rng, d_out),
                })
                .collect();
            layers.push(layer);
            d_in = d_out;
        }
        GatModel {
            layers,
            decoder_w: glorot(rng, 2, d_in),
            decoder_b: Array1::zeros(2),
            leaky_slope,
            dropout,
            epochs_trained: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(self.decoder_w.ncols(), |l| l[0].w.ncols())
    }

    pub fn zeros_like(&self) -> Self {
        GatModel {
            layers: self.layers.iter().map(|l| l.iter().map(HeadParams::zeros_like).collect()).collect(),
            decoder_w: Array2::zeros(self.decoder_w.dim()),
            decoder_b: Array1::zeros(2),
            leaky_slope: self.leaky_slope,
            dropout: self.dropout,
            epochs_trained: 0,
        }
    }

    /// Every trainable array as a flat slice, in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            for h in layer {
                for a in [&h.a_src, &h.a_dst, &h.a_edge, &h.w_edge] {
                    out.push(a.as_slice().expect("contiguous"));
                }
                out.push(h.w.as_slice().expect("contiguous"));
            }
        }
        out.push(self.decoder_w.as_slice().expect("contiguous"));
        out.push(self.decoder_b.as_slice().expect("contiguous"));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            for h in layer {
                out.push(h.a_src.as_slice_mut().expect("contiguous"));
                out.push(h.a_dst.as_slice_mut().expect("contiguous"));
                out.push(h.a_edge.as_slice_mut().expect("contiguous"));
                out.push(h.w_edge.as_slice_mut().expect("contiguous"));
                out.push(h.w.as_slice_mut().expect("contiguous"));
            }
        }
        out.push(self.decoder_w.as_slice_mut().expect("contiguous"));
        out.push(self.decoder_b.as_slice_mut().expect("contiguous"));
        out
    }

    fn leaky(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.leaky_slope * x
        }
    }
}

struct HeadCache {
    z: Array2<f64>,
    /// Pre-activation attention logits, one per CSR slot.
    raw: Vec<f64>,
    alpha: Vec<f64>,
    /// Inverted-dropout multipliers on attention weights (empty when off).
    drop: Vec<f64>,
}

struct LayerCache {
    input: Array2<f64>,
    heads: Vec<HeadCache>,
    /// Inverted-dropout multipliers (empty when dropout is off).
    mask: Vec<f64>,
}

pub struct ForwardPass {
    pub logits: Array2<f64>,
    /// Per layer, per head, attention weights in neighborhood order.
    pub attention: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerCache>,
    embedding: Array2<f64>,
}

/// Flattened neighborhoods: `offsets[v]..offsets[v+1]` index `nbr`/`weight`.
struct Csr {
    offsets: Vec<usize>,
    nbr: Vec<usize>,
    weight: Vec<f64>,
}

impl Csr {
    fn new(g: &SubjectGraph) -> Self {
        let mut offsets = vec![0];
        let mut nbr = Vec::new();
        let mut weight = Vec::new();
        for v in 0..g.num_nodes() {
            for &(u, w) in g.neighborhood(v) {
                nbr.push(u);
                weight.push(w);
            }
            offsets.push(nbr.len());
        }
        Csr { offsets, nbr, weight }
    }
}

pub fn forward<R: Rng + ?Sized>(
    model: &GatModel,
    g: &SubjectGraph,
    features: &Array2<f64>,
    dropout_rng: Option<&mut R>,
) -> Result<ForwardPass, GatError> {
    if features.ncols() != model.input_dim() {
        return Err(GatError::FeatureDim { expected: model.input_dim(), found: features.ncols() });
    }
    let csr = Csr::new(g);
    let v = g.num_nodes();
    let mut rng = dropout_rng;
    let mut h = features.clone();
    let mut caches = Vec::with_capacity(model.layers.len());
    let mut attention = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let k = layer.len() as f64;
        let d_out = layer[0].w.nrows();
        let mut next = Array2::<f64>::zeros((v, d_out));
        let mut heads = Vec::with_capacity(layer.len());
        for p in layer {
            let z = h.dot(&p.w.t());
            let s_src = z.dot(&p.a_src);
            let s_dst = z.dot(&p.a_dst);
            let c = p.a_edge.dot(&p.w_edge);
            let mut raw = vec![0.0; csr.nbr.len()];
            let mut alpha = vec![0.0; csr.nbr.len()];
            for node in 0..v {
                let range = csr.offsets[node]..csr.offsets[node + 1];
                let mut peak = f64::NEG_INFINITY;
                for e in range.clone() {
                    raw[e] = s_src[node] + s_dst[csr.nbr[e]] + csr.weight[e] * c;
                    alpha[e] = model.leaky(raw[e]);
                    peak = peak.max(alpha[e]);
                }
                let mut total = 0.0;
                for e in range.clone() {
                    alpha[e] = (alpha[e] - peak).exp();
                    total += alpha[e];
                }
                for e in range {
                    alpha[e] /= total;
                }
            }
            let mut drop = Vec::new();
            if let Some(r) = rng.as_deref_mut() {
                if model.dropout > 0.0 {
                    let keep = 1.0 / (1.0 - model.dropout);
                    drop = (0..alpha.len()).map(|_| if r.random::<f64>() < model.dropout { 0.0 } else { keep }).collect();
                }
            }
            for node in 0..v {
                let mut row = next.row_mut(node);
                for e in csr.offsets[node]..csr.offsets[node + 1] {
                    let a = if drop.is_empty() { alpha[e] } else { alpha[e] * drop[e] };
                    row.scaled_add(a / k, &z.row(csr.nbr[e]));
                }
            }
            heads.push(HeadCache { z, raw, alpha, drop });
        }
        let mut mask = Vec::new();
        if let Some(r) = rng.as_deref_mut() {
            if model.dropout > 0.0 {
                let keep = 1.0 / (1.0 - model.dropout);
                mask = (0..next.len()).map(|_| if r.random::<f64>() < model.dropout { 0.0 } else { keep }).collect();
                for (x, m) in next.iter_mut().zip(&mask) {
                    *x *= m;
                }
            }
        }
        attention.push(heads.iter().map(|hc| hc.alpha.clone()).collect());
        caches.push(LayerCache { input: h, heads, mask });
        h = next;
    }
    let mut logits = h.dot(&model.decoder_w.t());
    logits += &model.decoder_b;
    Ok(ForwardPass { logits, attention, layers: caches, embedding: h })
}

/// Mean cross-entropy over `mask` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[u8], mask: &[bool]) -> (f64, Array2<f64>) {
    let n = mask.iter().filter(|&&m| m).count().max(1) as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        if !mask[i] {
            continue;
        }
        let peak = row[0].max(row[1]);
        let e0 = (row[0] - peak).exp();
        let e1 = (row[1] - peak).exp();
        let log_z = peak + (e0 + e1).ln();
        let y = labels[i] as usize;
        loss -= row[y] - log_z;
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        for c in 0..2 {
            grad[[i, c]] = (p[c] - if c == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

/// Reverse pass: gradients of a scalar loss given `d logits`.
pub fn backward(model: &GatModel, g: &SubjectGraph, pass: &ForwardPass, d_logits: &Array2<f64>) -> GatModel {
    let csr = Csr::new(g);
    let v = g.num_nodes();
    let mut grads = model.zeros_like();
    grads.decoder_w = d_logits.t().dot(&pass.embedding);
    grads.decoder_b = d_logits.sum_axis(Axis(0));
    let mut d_h = d_logits.dot(&model.decoder_w);

    for (l, layer) in model.layers.iter().enumerate().rev() {
        let cache = &pass.layers[l];
        if !cache.mask.is_empty() {
            for (x, m) in d_h.iter_mut().zip(&cache.mask) {
                *x *= m;
            }
        }
        let k = layer.len() as f64;
        let mut d_input = Array2::<f64>::zeros(cache.input.dim());
        for (idx, p) in layer.iter().enumerate() {
            let hc = &cache.heads[idx];
            let d_out = &d_h / k;
            let mut d_z = Array2::<f64>::zeros(hc.z.dim());
            let mut d_src = Array1::<f64>::zeros(v);
            let mut d_dst = Array1::<f64>::zeros(v);
            let mut d_c = 0.0;
            let mut d_alpha = vec![0.0; csr.nbr.len()];
            for node in 0..v {
                let range = csr.offsets[node]..csr.offsets[node + 1];
                let out_row = d_out.row(node);
                let mut weighted = 0.0;
                for e in range.clone() {
                    let u = csr.nbr[e];
                    let m = if hc.drop.is_empty() { 1.0 } else { hc.drop[e] };
                    d_alpha[e] = m * out_row.dot(&hc.z.row(u));
                    weighted += hc.alpha[e] * d_alpha[e];
                    d_z.row_mut(u).scaled_add(hc.alpha[e] * m, &out_row);
                }
                for e in range {
                    let d_g = hc.alpha[e] * (d_alpha[e] - weighted);
                    let d_r = if hc.raw[e] > 0.0 { d_g } else { model.leaky_slope * d_g };
                    d_src[node] += d_r;
                    d_dst[csr.nbr[e]] += d_r;
                    d_c += d_r * csr.weight[e];
                }
            }
            let gh = &mut grads.layers[l][idx];
            gh.a_src = hc.z.t().dot(&d_src);
            gh.a_dst = hc.z.t().dot(&d_dst);
            gh.a_edge = &p.w_edge * d_c;
            gh.w_edge = &p.a_edge * d_c;
            for node in 0..v {
                let mut row = d_z.row_mut(node);
                row.scaled_add(d_src[node], &p.a_src);
                row.scaled_add(d_dst[node], &p.a_dst);
            }
            gh.w = d_z.t().dot(&cache.input);
            d_input += &d_z.dot(&p.w);
        }
        d_h = d_input;
    }
    grads
}
