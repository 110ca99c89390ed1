use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::SubjectGraph;
use super::model::{backward, cross_entropy, forward, GatModel};
use super::GatError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    pub hidden_dims: Vec<usize>,
    pub heads: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub target_degree: usize,
    /// Number of features kept after ablation ranking.
    pub theta: usize,
    pub seed: u64,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            hidden_dims: vec![64, 64, 64],
            heads: 3,
            leaky_slope: 0.25,
            dropout: 0.5,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 400,
            target_degree: 10,
            theta: 15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: GatModel,
    /// Training-mode (dropout on) loss before each update.
    pub loss_history: Vec<f64>,
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &GatModel) -> Self {
        let shapes: Vec<Vec<f64>> = model.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        Adam { m: shapes.clone(), v: shapes, t: 0 }
    }

    fn step(&mut self, model: &mut GatModel, grads: &GatModel, cfg: &GatConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let grads = grads.param_slices();
        for (((p, g), m), v) in model.param_slices_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

pub fn eval_loss(model: &GatModel, g: &SubjectGraph) -> Result<f64, GatError> {
    let pass = forward::<ChaCha8Rng>(model, g, &g.node_features, None)?;
    Ok(cross_entropy(&pass.logits, &g.labels, &g.train_mask).0)
}

/// Full-batch transductive training: every node passes messages, only
/// train-mask nodes enter the loss.
pub fn train(g: &SubjectGraph, cfg: &GatConfig) -> Result<TrainOutcome, GatError> {
    let in_train: Vec<u8> = g.labels.iter().zip(&g.train_mask).filter(|(_, &m)| m).map(|(&l, _)| l).collect();
    if !in_train.contains(&0) || !in_train.contains(&1) {
        return Err(GatError::SingleClassTrain);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GatModel::new(&mut rng, g.feature_dim(), &cfg.hidden_dims, cfg.heads, cfg.leaky_slope, cfg.dropout);
    let initial_eval_loss = eval_loss(&model, g)?;
    let mut adam = Adam::new(&model);
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let pass = forward(&model, g, &g.node_features, Some(&mut rng))?;
        let (loss, d_logits) = cross_entropy(&pass.logits, &g.labels, &g.train_mask);
        if !loss.is_finite() {
            return Err(GatError::NonFiniteLoss { epoch, loss });
        }
        loss_history.push(loss);
        let grads = backward(&model, g, &pass, &d_logits);
        adam.step(&mut model, &grads, cfg);
        if epoch % 100 == 0 {
            log::debug!("gat epoch {epoch}: loss {loss:.5}");
        }
    }
    model.epochs_trained = cfg.epochs;
    let final_eval_loss = eval_loss(&model, g)?;
    Ok(TrainOutcome { model, loss_history, initial_eval_loss, final_eval_loss })
}

/// `logit1 - logit0` per node with dropout off.
pub fn node_scores(model: &GatModel, g: &SubjectGraph, features: &ndarray::Array2<f64>) -> Result<Vec<f64>, GatError> {
    let pass = forward::<ChaCha8Rng>(model, g, features, None)?;
    Ok(pass.logits.rows().into_iter().map(|r| r[1] - r[0]).collect())
}
