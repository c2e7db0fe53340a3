//! Exact 0-1 solver: depth-first branch and bound with unit propagation.
//!
//! The search runs twice. The first pass finds the optimal value, branching
//! on large objective coefficients first. The second pass walks variables in
//! index order, 0 before 1, and stops at the first feasible assignment within
//! tolerance of that value, which makes the result independent of branching
//! order and identical to the brute-force enumeration.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{IlpModel, Relation};
use crate::ground::Grounding;

pub const BRUTE_FORCE_MAX_VARS: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub node_limit: u64,
    pub time_limit_ms: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { node_limit: 50_000_000, time_limit_ms: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub values: Vec<bool>,
    pub objective: f64,
    /// False when the assignment comes from a fallback after a resource limit.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("model is infeasible (first conflicting row {row}, from constraint {origin})")]
    Infeasible { row: String, origin: String },
    #[error("resource limit reached after {nodes} nodes")]
    ResourceLimit { best: Option<Assignment>, nodes: u64 },
    #[error("{vars} variables is too many for enumeration (max {max})")]
    TooLarge { vars: usize, max: usize },
}

/// Ties within this relative tolerance of the optimum count as optimal.
fn tie_threshold(z: f64) -> f64 {
    z - 1e-9 * z.abs().max(1.0)
}

fn slack_eps(z: f64) -> f64 {
    1e-12 * z.abs().max(1.0)
}

struct LeRow {
    terms: Vec<(usize, i64)>,
    rhs: i64,
}

struct Limit;

struct Search<'m> {
    model: &'m IlpModel,
    rows: Vec<LeRow>,
    occ: Vec<Vec<usize>>,
    val: Vec<i8>,
    min_act: Vec<i64>,
    trail: Vec<usize>,
    ub: f64,
    nodes: u64,
    node_limit: u64,
    deadline: Option<Instant>,
    best: f64,
    incumbent: Option<Vec<bool>>,
}

impl<'m> Search<'m> {
    fn new(model: &'m IlpModel, config: &SolverConfig) -> Self {
        let n = model.num_vars();
        let mut rows = Vec::new();
        for r in &model.rows {
            let neg = || r.terms.iter().map(|&(v, c)| (v, -c)).collect();
            match r.rel {
                Relation::Le => rows.push(LeRow { terms: r.terms.clone(), rhs: r.rhs }),
                Relation::Ge => rows.push(LeRow { terms: neg(), rhs: -r.rhs }),
                Relation::Eq => {
                    rows.push(LeRow { terms: r.terms.clone(), rhs: r.rhs });
                    rows.push(LeRow { terms: neg(), rhs: -r.rhs });
                }
            }
        }
        let mut occ = vec![Vec::new(); n];
        for (ri, r) in rows.iter().enumerate() {
            for &(v, _) in &r.terms {
                occ[v].push(ri);
            }
        }
        let min_act = rows.iter().map(|r| r.terms.iter().map(|&(_, c)| c.min(0)).sum()).collect();
        let ub = model.objective.iter().map(|&c| c.max(0.0)).sum();
        Search {
            model,
            rows,
            occ,
            val: vec![-1; n],
            min_act,
            trail: Vec::with_capacity(n),
            ub,
            nodes: 0,
            node_limit: config.node_limit,
            deadline: config.time_limit_ms.map(|ms| Instant::now() + Duration::from_millis(ms)),
            best: f64::NEG_INFINITY,
            incumbent: None,
        }
    }

    fn tick(&mut self) -> Result<(), Limit> {
        self.nodes += 1;
        if self.nodes > self.node_limit {
            return Err(Limit);
        }
        if self.nodes.is_multiple_of(256) {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    return Err(Limit);
                }
            }
        }
        Ok(())
    }

    fn fix(&mut self, j: usize, x: bool) {
        self.val[j] = i8::from(x);
        self.trail.push(j);
        let c = self.model.objective[j];
        self.ub += if x { c } else { 0.0 } - c.max(0.0);
        for &r in &self.occ[j] {
            let a = self.rows[r].terms.iter().find(|t| t.0 == j).map_or(0, |t| t.1);
            self.min_act[r] += if x { a } else { 0 } - a.min(0);
        }
    }

    fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let j = self.trail.pop().expect("trail above mark");
            let x = self.val[j] == 1;
            self.val[j] = -1;
            let c = self.model.objective[j];
            self.ub -= if x { c } else { 0.0 } - c.max(0.0);
            for &r in &self.occ[j] {
                let a = self.rows[r].terms.iter().find(|t| t.0 == j).map_or(0, |t| t.1);
                self.min_act[r] -= if x { a } else { 0 } - a.min(0);
            }
        }
    }

    /// Fixes every variable the row forces. False on conflict.
    fn check_row(&mut self, r: usize) -> bool {
        let slack = self.rows[r].rhs - self.min_act[r];
        if slack < 0 {
            return false;
        }
        for t in 0..self.rows[r].terms.len() {
            let (k, a) = self.rows[r].terms[t];
            if self.val[k] < 0 && a.abs() > slack {
                // forcing never changes this row's minimum activity
                self.fix(k, a < 0);
            }
        }
        true
    }

    fn propagate(&mut self, from: usize) -> bool {
        let mut head = from;
        while head < self.trail.len() {
            let j = self.trail[head];
            head += 1;
            for i in 0..self.occ[j].len() {
                let r = self.occ[j][i];
                if !self.check_row(r) {
                    return false;
                }
            }
        }
        true
    }

    fn root(&mut self) -> bool {
        for r in 0..self.rows.len() {
            if !self.check_row(r) {
                return false;
            }
        }
        self.propagate(0)
    }

    fn values(&self) -> Vec<bool> {
        self.val.iter().map(|&x| x == 1).collect()
    }

    fn optimize(&mut self, order: &[usize]) -> Result<(), Limit> {
        self.tick()?;
        if self.incumbent.is_some() && self.ub <= self.best + slack_eps(self.best) {
            return Ok(());
        }
        let Some(&j) = order.iter().find(|&&j| self.val[j] < 0) else {
            let values = self.values();
            let z = self.model.objective_value(&values);
            debug_assert!(self.model.is_feasible(&values));
            if z > self.best {
                self.best = z;
                self.incumbent = Some(values);
            }
            return Ok(());
        };
        let preferred = self.model.objective[j] > 0.0;
        for x in [preferred, !preferred] {
            let mark = self.trail.len();
            self.fix(j, x);
            if self.propagate(mark) {
                self.optimize(order)?;
            }
            self.undo(mark);
        }
        Ok(())
    }

    fn first_within(&mut self, next: usize, threshold: f64) -> Result<Option<Vec<bool>>, Limit> {
        self.tick()?;
        if self.ub < threshold - slack_eps(threshold) {
            return Ok(None);
        }
        let Some(j) = (next..self.val.len()).find(|&j| self.val[j] < 0) else {
            let values = self.values();
            let z = self.model.objective_value(&values);
            return Ok((z >= threshold).then_some(values));
        };
        for x in [false, true] {
            let mark = self.trail.len();
            self.fix(j, x);
            if self.propagate(mark) {
                if let Some(v) = self.first_within(j + 1, threshold)? {
                    return Ok(Some(v));
                }
            }
            self.undo(mark);
        }
        Ok(None)
    }
}

fn assignment(model: &IlpModel, values: Vec<bool>, verified: bool) -> Assignment {
    let objective = model.objective_value(&values);
    Assignment { values, objective, verified }
}

fn feasible_prefix(model: &IlpModel, rows: usize, config: &SolverConfig) -> bool {
    let sub = IlpModel {
        names: model.names.clone(),
        objective: vec![0.0; model.num_vars()],
        rows: model.rows[..rows].to_vec(),
        num_decision: model.num_decision,
    };
    let mut s = Search::new(&sub, config);
    if !s.root() {
        return false;
    }
    let order: Vec<usize> = (0..sub.num_vars()).collect();
    match s.optimize(&order) {
        Ok(()) => s.incumbent.is_some(),
        Err(Limit) => s.incumbent.is_some(),
    }
}

/// Smallest row prefix that is already infeasible; its last row is the hint.
fn infeasible_hint(model: &IlpModel, config: &SolverConfig) -> SolveError {
    let (mut lo, mut hi) = (0, model.rows.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if feasible_prefix(model, mid, config) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = hi.saturating_sub(1);
    SolveError::Infeasible {
        row: format!("c{r}"),
        origin: model.rows.get(r).map(|row| row.origin.clone()).unwrap_or_default(),
    }
}

/// Optimal assignment; among optimal ones the lexicographically smallest.
pub fn solve(model: &IlpModel, config: &SolverConfig) -> Result<Assignment, SolveError> {
    let mut s = Search::new(model, config);
    if !s.root() {
        return Err(infeasible_hint(model, config));
    }
    let mut order: Vec<usize> = (0..model.num_vars()).collect();
    order.sort_by(|&a, &b| model.objective[b].abs().total_cmp(&model.objective[a].abs()).then(a.cmp(&b)));
    if s.optimize(&order).is_err() {
        let nodes = s.nodes;
        let best = s.incumbent.take().map(|v| assignment(model, v, false));
        return Err(SolveError::ResourceLimit { best, nodes });
    }
    let Some(incumbent) = s.incumbent.take() else {
        return Err(infeasible_hint(model, config));
    };
    let threshold = tie_threshold(s.best);
    let found = s.first_within(0, threshold);
    log::debug!("solved {} vars, {} rows in {} nodes", model.num_vars(), model.rows.len(), s.nodes);
    match found {
        Ok(Some(values)) => Ok(assignment(model, values, true)),
        Ok(None) => Ok(assignment(model, incumbent, true)),
        Err(Limit) => Err(SolveError::ResourceLimit { best: Some(assignment(model, incumbent, false)), nodes: s.nodes }),
    }
}

/// Like [`solve`], but a resource limit yields the best assignment found or,
/// failing that, the independent argmax, marked unverified.
pub fn solve_or_fallback(model: &IlpModel, config: &SolverConfig) -> Result<Assignment, SolveError> {
    match solve(model, config) {
        Err(SolveError::ResourceLimit { best, nodes }) => {
            log::warn!("solver stopped after {nodes} nodes; using an unverified assignment");
            Ok(best.unwrap_or_else(|| {
                let values = (0..model.num_vars()).map(|j| j < model.num_decision && model.objective[j] > 0.0).collect();
                assignment(model, values, false)
            }))
        }
        other => other,
    }
}

/// Plain enumeration in lexicographic order. A branch is abandoned only once
/// a row whose variables are all assigned is violated.
struct Enumerator<'m> {
    model: &'m IlpModel,
    /// Rows grouped by their highest variable index.
    closing: Vec<Vec<usize>>,
    values: Vec<bool>,
}

impl<'m> Enumerator<'m> {
    fn new(model: &'m IlpModel, rows: usize) -> Self {
        let mut closing = vec![Vec::new(); model.num_vars()];
        for (r, row) in model.rows[..rows].iter().enumerate() {
            if let Some(last) = row.terms.iter().map(|t| t.0).max() {
                closing[last].push(r);
            }
        }
        Enumerator { model, closing, values: vec![false; model.num_vars()] }
    }

    fn constant_rows_ok(&self, rows: usize) -> bool {
        self.model.rows[..rows].iter().filter(|r| r.terms.is_empty()).all(|r| r.satisfied(&[]))
    }

    /// Calls `leaf` on every feasible assignment, in order, with its objective.
    fn walk(&mut self, depth: usize, z: f64, leaf: &mut dyn FnMut(&[bool], f64) -> bool) -> bool {
        if depth == self.values.len() {
            return leaf(&self.values, z);
        }
        for x in [false, true] {
            self.values[depth] = x;
            let ok = self.closing[depth].iter().all(|&r| self.model.rows[r].satisfied(&self.values));
            let z = if x { z + self.model.objective[depth] } else { z };
            if ok && !self.walk(depth + 1, z, leaf) {
                return false;
            }
        }
        self.values[depth] = false;
        true
    }
}

fn prefix_has_solution(model: &IlpModel, rows: usize) -> bool {
    let mut e = Enumerator::new(model, rows);
    if !e.constant_rows_ok(rows) {
        return false;
    }
    let mut found = false;
    e.walk(0, 0.0, &mut |_, _| {
        found = true;
        false
    });
    found
}

/// Exhaustive enumeration in lexicographic order (variable 0 most significant).
pub fn brute_force(model: &IlpModel) -> Result<Assignment, SolveError> {
    let n = model.num_vars();
    if n > BRUTE_FORCE_MAX_VARS {
        return Err(SolveError::TooLarge { vars: n, max: BRUTE_FORCE_MAX_VARS });
    }
    let mut e = Enumerator::new(model, model.rows.len());
    if e.constant_rows_ok(model.rows.len()) {
        let mut best = f64::NEG_INFINITY;
        e.walk(0, 0.0, &mut |_, z| {
            best = best.max(z);
            true
        });
        if best > f64::NEG_INFINITY {
            let threshold = tie_threshold(best);
            let mut first = None;
            e.walk(0, 0.0, &mut |values, z| {
                if z >= threshold {
                    first = Some(values.to_vec());
                }
                first.is_none()
            });
            let values = first.expect("the maximum is attained");
            return Ok(assignment(model, values, true));
        }
    }
    let (mut lo, mut hi) = (0, model.rows.len());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if prefix_has_solution(model, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = hi.saturating_sub(1);
    Err(SolveError::Infeasible {
        row: format!("c{r}"),
        origin: model.rows.get(r).map(|row| row.origin.clone()).unwrap_or_default(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint_id: String,
    pub binding: Vec<(String, String)>,
}

/// Grounded constraints falsified by `values` (decision variables first).
pub fn violations(grounding: &Grounding, values: &[bool]) -> Vec<Violation> {
    grounding
        .constraints
        .iter()
        .filter(|gc| !gc.expr.eval(values))
        .map(|gc| Violation { constraint_id: gc.constraint_id.clone(), binding: gc.binding.clone() })
        .collect()
}
