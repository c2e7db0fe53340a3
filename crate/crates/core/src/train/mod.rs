//! Per-concept logistic model, losses and update rules.
//!
//! Every decision concept has its own weight vector over the features of its
//! base concept. A composite node's features are its own followed by those of
//! its members in argument order, recursively.

mod metrics;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{prf1, threshold, Confusion, Counts, Metrics, Prf};

use crate::ground::{clamp_score, DataNodeGraph, DecisionIndex, Grounding, ScoreVector};
use crate::schema::ConceptGraph;
use crate::softlogic;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("node `{node}` gives {found} features to `{concept}`, which expects {expected}")]
    DimMismatch { node: String, concept: String, expected: usize, found: usize },
    #[error("no parameters for concept `{0}`")]
    MissingParams(String),
    #[error("inference result covers {found} variables, {expected} needed")]
    MissingAssignment { expected: usize, found: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Model weights per decision concept and one multiplier per constraint id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    pub concepts: BTreeMap<String, ConceptParams>,
    #[serde(default)]
    pub multipliers: BTreeMap<String, f64>,
}

/// Gradient with the same shape as the concept parameters.
pub type Gradients = BTreeMap<String, ConceptParams>;

impl ParameterStore {
    pub fn zeros(dims: &BTreeMap<String, usize>) -> Self {
        let concepts =
            dims.iter().map(|(c, &d)| (c.clone(), ConceptParams { weights: vec![0.0; d], bias: 0.0 })).collect();
        ParameterStore { concepts, multipliers: BTreeMap::new() }
    }

    /// Weights uniform in `[-scale, scale]`, biases zero.
    pub fn random<R: Rng + ?Sized>(dims: &BTreeMap<String, usize>, rng: &mut R, scale: f64) -> Self {
        let mut p = Self::zeros(dims);
        for cp in p.concepts.values_mut() {
            for w in &mut cp.weights {
                *w = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn multiplier(&self, id: &str) -> f64 {
        self.multipliers.get(id).copied().unwrap_or(0.0)
    }

    /// All weights and biases, concepts in name order, bias last.
    pub fn theta(&self) -> Vec<f64> {
        flatten(&self.concepts)
    }

    pub fn set_theta(&mut self, theta: &[f64]) {
        let mut it = theta.iter().copied();
        for cp in self.concepts.values_mut() {
            for w in &mut cp.weights {
                *w = it.next().expect("theta too short");
            }
            cp.bias = it.next().expect("theta too short");
        }
        assert!(it.next().is_none(), "theta too long");
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn flatten(g: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for cp in g.values() {
        out.extend_from_slice(&cp.weights);
        out.push(cp.bias);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn collect_features(dng: &DataNodeGraph, node: usize, depth: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(&dng.nodes()[node].features);
    if depth < 16 {
        for &(_, m) in dng.members(node) {
            collect_features(dng, m, depth + 1, out);
        }
    }
}

/// Feature vector of a node: its own features, then its members' in argument order.
pub fn node_features(dng: &DataNodeGraph, id: &str) -> Option<Vec<f64>> {
    let pos = dng.position(id)?;
    let mut out = Vec::new();
    collect_features(dng, pos, 0, &mut out);
    Some(out)
}

/// Input dimension of every decision concept, read off the first node of
/// its base concept found in `samples`. Concepts never seen get 0.
pub fn feature_dims(graph: &ConceptGraph, samples: &[DataNodeGraph]) -> BTreeMap<String, usize> {
    let mut base_dims: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        for (i, n) in s.nodes().iter().enumerate() {
            base_dims.entry(n.concept.clone()).or_insert_with(|| {
                let mut f = Vec::new();
                collect_features(s, i, 0, &mut f);
                f.len()
            });
        }
    }
    graph
        .decision_concepts()
        .map(|c| {
            let base = graph.base(&c.name).unwrap_or(&c.name);
            (c.name.clone(), base_dims.get(base).copied().unwrap_or(0))
        })
        .collect()
}

/// Unclamped sigmoid outputs per decision variable.
pub fn forward(
    params: &ParameterStore,
    dng: &DataNodeGraph,
    index: &DecisionIndex,
) -> Result<Vec<f64>, TrainError> {
    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(index.len());
    for v in index.vars() {
        let cp = params.concepts.get(&v.concept).ok_or_else(|| TrainError::MissingParams(v.concept.clone()))?;
        let x = cache.entry(v.node.as_str()).or_insert_with(|| node_features(dng, &v.node).unwrap_or_default());
        if x.len() != cp.weights.len() {
            return Err(TrainError::DimMismatch {
                node: v.node.clone(),
                concept: v.concept.clone(),
                expected: cp.weights.len(),
                found: x.len(),
            });
        }
        let z: f64 = cp.weights.iter().zip(x.iter()).map(|(w, x)| w * x).sum::<f64>() + cp.bias;
        out.push(sigmoid(z));
    }
    Ok(out)
}

/// Clamped scores for every decision variable of the sample.
pub fn predict(params: &ParameterStore, dng: &DataNodeGraph, index: &DecisionIndex) -> Result<ScoreVector, TrainError> {
    forward(params, dng, index).map(ScoreVector::new)
}

/// Binary cross-entropy summed over labelled variables, and its gradient
/// with respect to the scores.
pub fn nll_loss(scores: &[f64], labels: &[Option<bool>]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; scores.len()];
    for (i, (&p, y)) in scores.iter().zip(labels).enumerate() {
        let p = clamp_score(p);
        match y {
            Some(true) => {
                loss -= p.ln();
                grad[i] = -1.0 / p;
            }
            Some(false) => {
                loss -= (1.0 - p).ln();
                grad[i] = 1.0 / (1.0 - p);
            }
            None => {}
        }
    }
    (loss, grad)
}

/// `(1 - λ)·NLL + λ·IML`, where IML drops every positive term the
/// inference result `fstar` already gets right.
pub fn iml_loss(
    scores: &[f64],
    labels: &[Option<bool>],
    fstar: &[bool],
    lambda: f64,
) -> Result<(f64, Vec<f64>), TrainError> {
    if fstar.len() < scores.len() {
        return Err(TrainError::MissingAssignment { expected: scores.len(), found: fstar.len() });
    }
    let (nll, nll_grad) = nll_loss(scores, labels);
    let mut iml = 0.0;
    let mut grad: Vec<f64> = nll_grad.iter().map(|g| (1.0 - lambda) * g).collect();
    for (i, (&p, y)) in scores.iter().zip(labels).enumerate() {
        if *y == Some(true) && !fstar[i] {
            let p = clamp_score(p);
            iml -= p.ln();
            grad[i] += lambda * (-1.0 / p);
        }
    }
    let loss = if lambda == 0.0 { nll } else if lambda == 1.0 { iml } else { (1.0 - lambda) * nll + lambda * iml };
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdLoss {
    pub loss: f64,
    pub grad_scores: Vec<f64>,
    /// Summed violation per constraint id.
    pub grad_lambda: BTreeMap<String, f64>,
}

/// NLL plus multiplier-weighted soft violations of every grounded constraint.
pub fn pd_loss(scores: &[f64], labels: &[Option<bool>], grounding: &Grounding, params: &ParameterStore) -> PdLoss {
    let (mut loss, mut grad) = nll_loss(scores, labels);
    let mut grad_lambda: BTreeMap<String, f64> = BTreeMap::new();
    for gc in &grounding.constraints {
        let v = 1.0 - softlogic::soft_eval(&gc.expr, scores);
        *grad_lambda.entry(gc.constraint_id.clone()).or_insert(0.0) += v;
        let m = params.multiplier(&gc.constraint_id);
        if m != 0.0 {
            loss += m * v;
            softlogic::backward(&gc.expr, scores, -m, &mut grad);
        }
    }
    PdLoss { loss, grad_scores: grad, grad_lambda }
}

/// Mean soft violation over all grounded constraints; 0 without constraints.
pub fn mean_violation(scores: &[f64], grounding: &Grounding) -> f64 {
    if grounding.constraints.is_empty() {
        return 0.0;
    }
    let total: f64 = grounding.constraints.iter().map(|gc| 1.0 - softlogic::soft_eval(&gc.expr, scores)).sum();
    total / grounding.constraints.len() as f64
}

/// Chain rule from score gradients to the weights of concepts accepted by
/// `trainable`. `probs` are the unclamped outputs of [`forward`].
pub fn backward(
    dng: &DataNodeGraph,
    index: &DecisionIndex,
    probs: &[f64],
    grad_scores: &[f64],
    trainable: &dyn Fn(&str) -> bool,
) -> Gradients {
    let mut grads: Gradients = BTreeMap::new();
    let mut cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (v, (&p, &g)) in index.vars().iter().zip(probs.iter().zip(grad_scores)) {
        if !trainable(&v.concept) {
            continue;
        }
        let x = cache.entry(v.node.as_str()).or_insert_with(|| node_features(dng, &v.node).unwrap_or_default());
        let gz = g * p * (1.0 - p);
        let cp = grads
            .entry(v.concept.clone())
            .or_insert_with(|| ConceptParams { weights: vec![0.0; x.len()], bias: 0.0 });
        for (w, xi) in cp.weights.iter_mut().zip(x.iter()) {
            *w += gz * xi;
        }
        cp.bias += gz;
    }
    grads
}

/// `θ ← θ − lr·g` for the concepts present in `grads`.
pub fn sgd_step(params: &mut ParameterStore, grads: &Gradients, lr: f64) {
    for (c, g) in grads {
        if let Some(cp) = params.concepts.get_mut(c) {
            for (w, gw) in cp.weights.iter_mut().zip(&g.weights) {
                *w -= lr * gw;
            }
            cp.bias -= lr * g.bias;
        }
    }
}

/// Projected ascent on the multipliers: `Λ ← max(0, Λ + lr·g)`.
pub fn ascend_multipliers(params: &mut ParameterStore, grad_lambda: &BTreeMap<String, f64>, lr_lambda: f64) {
    for (id, g) in grad_lambda {
        let m = params.multipliers.entry(id.clone()).or_insert(0.0);
        *m = (*m + lr_lambda * g).max(0.0);
    }
}

/// One primal-dual update: descent on θ, projected ascent on Λ.
pub fn pd_step(
    params: &ParameterStore,
    grad_theta: &Gradients,
    grad_lambda: &BTreeMap<String, f64>,
    lr_theta: f64,
    lr_lambda: f64,
) -> ParameterStore {
    let mut next = params.clone();
    sgd_step(&mut next, grad_theta, lr_theta);
    ascend_multipliers(&mut next, grad_lambda, lr_lambda);
    next
}

#[cfg(test)]
mod tests;
