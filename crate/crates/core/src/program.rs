//! Training and evaluation programs.
//!
//! A program binds a domain to a strategy and a set of points of interest.
//! Only decision concepts under some point of interest are trained; the rest
//! of the parameter store is left untouched, which is what makes pre-training
//! one part of a model and then fine-tuning another possible.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground::{ground, DataError, DataNodeGraph, Grounding, ScoreVector};
use crate::ilp::{compile, solve_or_fallback, violations, SolveError, SolverConfig, Violation};
use crate::lclang::Domain;
use crate::train::{self, Confusion, Metrics, ParameterStore, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "ilp")]
    Ilp,
    #[serde(rename = "iml")]
    Iml,
    #[serde(rename = "pd")]
    Pd,
    #[serde(rename = "pd+ilp")]
    PdIlp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::Baseline, Strategy::Ilp, Strategy::Iml, Strategy::Pd, Strategy::PdIlp];

    /// Whether test-time predictions go through the solver.
    pub fn uses_ilp(self) -> bool {
        matches!(self, Strategy::Ilp | Strategy::PdIlp)
    }

    fn uses_pd(self) -> bool {
        matches!(self, Strategy::Pd | Strategy::PdIlp)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Baseline => "baseline",
            Strategy::Ilp => "ilp",
            Strategy::Iml => "iml",
            Strategy::Pd => "pd",
            Strategy::PdIlp => "pd+ilp",
        })
    }
}

impl FromStr for Strategy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| ConfigError(format!("unknown strategy `{s}` (expected baseline, ilp, iml, pd or pd+ilp)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn default_lr() -> f64 {
    0.001
}

/// Everything about a run except the domain and the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramSpec {
    /// Concepts whose decision subconcepts are trained. Empty trains all.
    #[serde(default)]
    pub poi: Vec<String>,
    pub strategy: Strategy,
    /// IML blend factor in [0, 1].
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Step size of the multiplier ascent (pd, pd+ilp).
    #[serde(default)]
    pub lr_lambda: Option<f64>,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for per-sample inference; 0 picks the default.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ProgramSpec {
    pub fn new(strategy: Strategy) -> Self {
        ProgramSpec {
            poi: Vec::new(),
            strategy,
            lambda: None,
            lr: default_lr(),
            lr_lambda: None,
            epochs: 0,
            seed: 0,
            jobs: 0,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<(), ConfigError> {
        for p in &self.poi {
            if domain.graph.concept(p).is_none() {
                return Err(ConfigError(format!("point of interest `{p}` is not a declared concept")));
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ConfigError(format!("lr must be a finite non-negative number, found {}", self.lr)));
        }
        match self.strategy {
            Strategy::Iml => match self.lambda {
                Some(l) if (0.0..=1.0).contains(&l) => {}
                Some(l) => return Err(ConfigError(format!("lambda must lie in [0, 1], found {l}"))),
                None => return Err(ConfigError("strategy iml needs lambda".into())),
            },
            Strategy::Pd | Strategy::PdIlp => match self.lr_lambda {
                Some(l) if l.is_finite() && l >= 0.0 => {}
                Some(l) => return Err(ConfigError(format!("lr_lambda must be finite and non-negative, found {l}"))),
                None => return Err(ConfigError(format!("strategy {} needs lr_lambda", self.strategy))),
            },
            Strategy::Baseline | Strategy::Ilp => {}
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("trainable concept `{0}` has no labels in the training data")]
    MissingLabels(String),
    #[error("composed programs must share one concept graph (program {0} differs)")]
    GraphMismatch(usize),
    #[error("sample {sample}: {source}")]
    Data { sample: usize, source: DataError },
    #[error("sample {sample}: {source}")]
    Train { sample: usize, source: TrainError },
    #[error("sample {sample}: {source}")]
    Solve { sample: usize, source: SolveError },
}

/// One line of the training log. Epoch 0 describes the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample training loss: the losses seen by each update during
    /// the epoch, or the loss at the initial parameters for epoch 0.
    pub loss: f64,
    /// Mean soft constraint violation of the training predictions after the epoch.
    pub violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample: usize,
    pub violations: Vec<Violation>,
    /// False when the solver hit a limit and an unverified assignment was used.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub strategy: Strategy,
    pub metrics: Metrics,
    pub total_violations: usize,
    pub samples: Vec<SampleReport>,
}

/// Loss, its gradient over the scores, and per-constraint violation sums.
type SampleLoss = (f64, Vec<f64>, BTreeMap<String, f64>);

/// A grounded sample: grounding does not depend on parameters, so it is
/// done once per run.
struct Prepared<'a> {
    dng: &'a DataNodeGraph,
    grounding: Grounding,
    labels: Vec<Option<bool>>,
}

/// Small random weights so that runs depend on the seed but start near 0.5.
pub fn init_params(domain: &Domain, samples: &[DataNodeGraph], seed: u64) -> ParameterStore {
    let dims = train::feature_dims(&domain.graph, samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterStore::random(&dims, &mut rng, 0.01);
    p.multipliers = domain.constraints.ids().map(|id| (id.to_string(), 0.0)).collect();
    p
}

#[derive(Debug, Clone)]
pub struct Program {
    pub domain: Domain,
    pub spec: ProgramSpec,
}

impl Program {
    pub fn new(domain: Domain, spec: ProgramSpec) -> Result<Self, ProgramError> {
        spec.validate(&domain)?;
        Ok(Program { domain, spec })
    }

    /// Whether the weights of decision concept `concept` are trained here.
    pub fn trainable(&self, concept: &str) -> bool {
        self.spec.poi.is_empty()
            || self.spec.poi.iter().any(|p| self.domain.graph.is_subtype(concept, p).unwrap_or(false))
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(self.spec.jobs).build().expect("thread pool")
    }

    fn prepare<'a>(&self, data: &'a [DataNodeGraph]) -> Result<Vec<Prepared<'a>>, ProgramError> {
        data.iter()
            .enumerate()
            .map(|(i, dng)| {
                let grounding = ground(&self.domain.graph, &self.domain.constraints, dng)
                    .map_err(|source| ProgramError::Data { sample: i, source })?;
                let labels = grounding.index.labels(dng);
                Ok(Prepared { dng, grounding, labels })
            })
            .collect()
    }

    fn scores(&self, params: &ParameterStore, s: &Prepared, i: usize) -> Result<Vec<f64>, ProgramError> {
        train::forward(params, s.dng, &s.grounding.index).map_err(|source| ProgramError::Train { sample: i, source })
    }

    /// Solver decisions for one sample at the given scores.
    fn infer(&self, s: &Prepared, probs: &[f64], i: usize) -> Result<(Vec<bool>, bool), ProgramError> {
        let scores = ScoreVector::new(probs.to_vec());
        let model = compile(&s.grounding, &scores).map_err(|source| ProgramError::Data { sample: i, source })?;
        let a = solve_or_fallback(&model, &self.spec.solver).map_err(|source| ProgramError::Solve { sample: i, source })?;
        let mut values = a.values;
        values.truncate(model.num_decision);
        Ok((values, a.verified))
    }

    fn check_labels(&self, prepared: &[Prepared]) -> Result<(), ProgramError> {
        let mut seen: BTreeMap<&str, bool> = BTreeMap::new();
        for s in prepared {
            for (v, y) in s.grounding.index.vars().iter().zip(&s.labels) {
                if self.trainable(&v.concept) {
                    *seen.entry(v.concept.as_str()).or_insert(false) |= y.is_some();
                }
            }
        }
        match seen.into_iter().find(|&(_, labelled)| !labelled) {
            Some((c, _)) => Err(ProgramError::MissingLabels(c.to_string())),
            None => Ok(()),
        }
    }

    /// Loss and score gradient of one sample under the training strategy.
    fn loss(
        &self,
        params: &ParameterStore,
        s: &Prepared,
        probs: &[f64],
        fstar: Option<&[bool]>,
        i: usize,
    ) -> Result<SampleLoss, ProgramError> {
        Ok(match self.spec.strategy {
            Strategy::Baseline | Strategy::Ilp => {
                let (l, g) = train::nll_loss(probs, &s.labels);
                (l, g, BTreeMap::new())
            }
            Strategy::Iml => {
                let fstar = fstar.expect("inference result computed for iml");
                let (l, g) = train::iml_loss(probs, &s.labels, fstar, self.spec.lambda.unwrap_or(0.0))
                    .map_err(|source| ProgramError::Train { sample: i, source })?;
                (l, g, BTreeMap::new())
            }
            Strategy::Pd | Strategy::PdIlp => {
                let r = train::pd_loss(probs, &s.labels, &s.grounding, params);
                (r.loss, r.grad_scores, r.grad_lambda)
            }
        })
    }

    fn fstars(&self, params: &ParameterStore, prepared: &[Prepared]) -> Result<Vec<Vec<bool>>, ProgramError> {
        self.pool().install(|| {
            prepared
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let probs = self.scores(params, s, i)?;
                    Ok(self.infer(s, &probs, i)?.0)
                })
                .collect()
        })
    }

    fn mean_violation(&self, params: &ParameterStore, prepared: &[Prepared]) -> Result<f64, ProgramError> {
        if prepared.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (i, s) in prepared.iter().enumerate() {
            total += train::mean_violation(&self.scores(params, s, i)?, &s.grounding);
        }
        Ok(total / prepared.len() as f64)
    }

    fn log(
        &self,
        epoch: usize,
        loss: f64,
        params: &ParameterStore,
        prepared: &[Prepared],
        dev: Option<&[Prepared]>,
    ) -> Result<EpochLog, ProgramError> {
        let violation = self.mean_violation(params, prepared)?;
        let dev = match dev {
            Some(d) => Some(self.evaluate(params, d)?.metrics),
            None => None,
        };
        log::info!("epoch {epoch}: loss {loss:.6}, violation {violation:.6}");
        Ok(EpochLog { epoch, loss, violation, dev })
    }

    /// Trains `params` in place and returns one log entry per epoch,
    /// starting with epoch 0 for the initial parameters.
    pub fn train(
        &self,
        params: &mut ParameterStore,
        train_data: &[DataNodeGraph],
        dev_data: Option<&[DataNodeGraph]>,
    ) -> Result<Vec<EpochLog>, ProgramError> {
        let prepared = self.prepare(train_data)?;
        let dev = match dev_data {
            Some(d) => Some(self.prepare(d)?),
            None => None,
        };
        self.check_labels(&prepared)?;
        let n = prepared.len().max(1) as f64;
        let trainable = |c: &str| self.trainable(c);

        let mut initial = 0.0;
        let fstars = if self.spec.strategy == Strategy::Iml { Some(self.fstars(params, &prepared)?) } else { None };
        for (i, s) in prepared.iter().enumerate() {
            let probs = self.scores(params, s, i)?;
            initial += self.loss(params, s, &probs, fstars.as_ref().map(|f| f[i].as_slice()), i)?.0;
        }
        let mut logs = vec![self.log(0, initial / n, params, &prepared, dev.as_deref())?];

        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        for epoch in 1..=self.spec.epochs {
            order.shuffle(&mut rng);
            // the inference mask is refreshed once per epoch
            let fstars = if self.spec.strategy == Strategy::Iml { Some(self.fstars(params, &prepared)?) } else { None };
            let mut total = 0.0;
            let mut dual: BTreeMap<String, f64> = BTreeMap::new();
            for &i in &order {
                let s = &prepared[i];
                let probs = self.scores(params, s, i)?;
                let (loss, grad, gl) = self.loss(params, s, &probs, fstars.as_ref().map(|f| f[i].as_slice()), i)?;
                total += loss;
                for (id, g) in gl {
                    *dual.entry(id).or_insert(0.0) += g;
                }
                let grads = train::backward(s.dng, &s.grounding.index, &probs, &grad, &trainable);
                train::sgd_step(params, &grads, self.spec.lr);
            }
            if self.spec.strategy.uses_pd() {
                for g in dual.values_mut() {
                    *g /= n;
                }
                train::ascend_multipliers(params, &dual, self.spec.lr_lambda.unwrap_or(0.0));
            }
            logs.push(self.log(epoch, total / n, params, &prepared, dev.as_deref())?);
        }
        Ok(logs)
    }

    fn evaluate(&self, params: &ParameterStore, prepared: &[Prepared]) -> Result<TestReport, ProgramError> {
        let per_sample: Vec<Result<(Confusion, SampleReport), ProgramError>> = self.pool().install(|| {
            prepared
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let probs = self.scores(params, s, i)?;
                    let (preds, verified) =
                        if self.spec.strategy.uses_ilp() { self.infer(s, &probs, i)? } else { (train::threshold(&probs), true) };
                    let mut c = Confusion::new();
                    c.add(&s.grounding.index, &preds, &s.labels, &|x| self.trainable(x));
                    let violations = violations(&s.grounding, &preds);
                    Ok((c, SampleReport { sample: i, violations, verified }))
                })
                .collect()
        });
        let mut confusion = Confusion::new();
        let mut samples = Vec::with_capacity(per_sample.len());
        for r in per_sample {
            let (c, rep) = r?;
            confusion.merge(&c);
            samples.push(rep);
        }
        let total_violations = samples.iter().map(|s| s.violations.len()).sum();
        Ok(TestReport { strategy: self.spec.strategy, metrics: confusion.metrics(), total_violations, samples })
    }

    /// Metrics and per-sample constraint violations of the predictions.
    pub fn test(&self, params: &ParameterStore, data: &[DataNodeGraph]) -> Result<TestReport, ProgramError> {
        let prepared = self.prepare(data)?;
        self.evaluate(params, &prepared)
    }
}

/// Runs programs one after another on shared parameters.
pub fn compose(
    programs: &[Program],
    params: &mut ParameterStore,
    train_data: &[DataNodeGraph],
    dev_data: Option<&[DataNodeGraph]>,
) -> Result<Vec<Vec<EpochLog>>, ProgramError> {
    if let Some(first) = programs.first() {
        if let Some(k) = programs.iter().position(|p| p.domain.graph != first.domain.graph) {
            return Err(ProgramError::GraphMismatch(k));
        }
    }
    programs.iter().map(|p| p.train(params, train_data, dev_data)).collect()
}
