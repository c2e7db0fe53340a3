use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ground::DecisionIndex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl From<Counts> for Prf {
    fn from(c: Counts) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1, counts: c }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub concepts: BTreeMap<String, Prf>,
    pub micro: Prf,
}

/// Running confusion counts per concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Confusion {
    counts: BTreeMap<String, Counts>,
}

impl Confusion {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one sample. Unlabelled variables and concepts rejected by
    /// `keep` are skipped.
    pub fn add(&mut self, index: &DecisionIndex, predictions: &[bool], labels: &[Option<bool>], keep: &dyn Fn(&str) -> bool) {
        for (v, (&p, y)) in index.vars().iter().zip(predictions.iter().zip(labels)) {
            let Some(y) = *y else { continue };
            if !keep(&v.concept) {
                continue;
            }
            let c = self.counts.entry(v.concept.clone()).or_default();
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        for (k, c) in &other.counts {
            self.counts.entry(k.clone()).or_default().add(*c);
        }
    }

    pub fn counts(&self) -> &BTreeMap<String, Counts> {
        &self.counts
    }

    pub fn metrics(&self) -> Metrics {
        let mut micro = Counts::default();
        for c in self.counts.values() {
            micro.add(*c);
        }
        Metrics { concepts: self.counts.iter().map(|(k, &c)| (k.clone(), c.into())).collect(), micro: micro.into() }
    }
}

/// Precision, recall and F1 per concept and micro-averaged over one sample.
pub fn prf1(index: &DecisionIndex, predictions: &[bool], labels: &[Option<bool>]) -> Metrics {
    let mut c = Confusion::new();
    c.add(index, predictions, labels, &|_| true);
    c.metrics()
}

/// Local decisions: positive iff p > 0.5.
pub fn threshold(scores: &[f64]) -> Vec<bool> {
    scores.iter().map(|&p| p > 0.5).collect()
}
