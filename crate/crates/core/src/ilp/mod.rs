//! Lowering of grounded constraints to 0-1 integer programs.
//!
//! Every nested connective gets an auxiliary binary variable tied to its
//! operands by a few linear rows, so that the auxiliary equals the truth
//! value of the connective in every feasible assignment. The objective is
//! the log-odds of each decision score.

mod lp;
mod solve;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use lp::emit_lp;
pub use solve::{
    brute_force, solve, solve_or_fallback, violations, Assignment, SolveError, SolverConfig, Violation,
    BRUTE_FORCE_MAX_VARS,
};

use crate::ground::{DataError, Grounding, Prop, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        })
    }
}

/// One linear row `Σ coef·x  rel  rhs`. Terms are unique per variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub terms: Vec<(usize, i64)>,
    pub rel: Relation,
    pub rhs: i64,
    /// Id of the constraint the row was lowered from.
    pub origin: String,
}

impl Row {
    pub fn new(terms: Vec<(usize, i64)>, rel: Relation, rhs: i64, origin: &str) -> Self {
        let mut merged: Vec<(usize, i64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.iter_mut().find(|(w, _)| *w == v) {
                Some(t) => t.1 += c,
                None => merged.push((v, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0);
        Row { terms: merged, rel, rhs, origin: origin.to_string() }
    }

    pub fn activity(&self, values: &[bool]) -> i64 {
        self.terms.iter().map(|&(v, c)| if values[v] { c } else { 0 }).sum()
    }

    pub fn satisfied(&self, values: &[bool]) -> bool {
        let a = self.activity(values);
        match self.rel {
            Relation::Le => a <= self.rhs,
            Relation::Ge => a >= self.rhs,
            Relation::Eq => a == self.rhs,
        }
    }
}

/// A maximization problem over binary variables. Decision variables come
/// first, auxiliaries after them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpModel {
    pub names: Vec<String>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub num_decision: usize,
}

impl IlpModel {
    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn is_feasible(&self, values: &[bool]) -> bool {
        self.rows.iter().all(|r| r.satisfied(values))
    }

    /// Objective value summed in variable order.
    pub fn objective_value(&self, values: &[bool]) -> f64 {
        let mut z = 0.0;
        for (c, &x) in self.objective.iter().zip(values) {
            if x {
                z += c;
            }
        }
        z
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Log-odds `ln p - ln(1-p)` of an already clamped score.
pub fn log_odds(p: f64) -> f64 {
    p.ln() - (1.0 - p).ln()
}

fn sanitize(raw: &str) -> String {
    raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect()
}

/// Incrementally builds a model from lowered constraints.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    names: Vec<String>,
    used: HashSet<String>,
    objective: Vec<f64>,
    rows: Vec<Row>,
    num_decision: usize,
    aux_counts: BTreeMap<String, usize>,
}

impl ModelBuilder {
    /// Starts a model with the given decision variables.
    pub fn new(names: Vec<String>, objective: Vec<f64>) -> Self {
        assert_eq!(names.len(), objective.len());
        let mut b = ModelBuilder {
            names: Vec::with_capacity(names.len()),
            used: HashSet::new(),
            objective,
            rows: Vec::new(),
            num_decision: names.len(),
            aux_counts: BTreeMap::new(),
        };
        for n in names {
            b.push_name(sanitize(&n));
        }
        b
    }

    fn push_name(&mut self, base: String) -> usize {
        let mut name = base.clone();
        let mut k = 1;
        while self.used.contains(&name) {
            name = format!("{base}_{k}");
            k += 1;
        }
        self.used.insert(name.clone());
        self.names.push(name);
        self.names.len() - 1
    }

    fn aux(&mut self, id: &str) -> usize {
        let k = self.aux_counts.entry(id.to_string()).or_insert(0);
        let name = sanitize(&format!("aux_{id}_{k}"));
        *k += 1;
        self.objective.push(0.0);
        self.push_name(name)
    }

    fn row(&mut self, terms: Vec<(usize, i64)>, rel: Relation, rhs: i64, id: &str) {
        self.rows.push(Row::new(terms, rel, rhs, id));
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    /// Lowers `expr` and returns a variable equal to its truth value in
    /// every feasible assignment.
    pub fn lower(&mut self, id: &str, expr: &Prop) -> usize {
        match expr {
            Prop::Var(i) => *i,
            Prop::Const(b) => {
                let v = self.aux(id);
                self.row(vec![(v, 1)], Relation::Eq, i64::from(*b), id);
                v
            }
            Prop::Not(a) => {
                let a = self.lower(id, a);
                let v = self.aux(id);
                self.row(vec![(v, 1), (a, 1)], Relation::Eq, 1, id);
                v
            }
            Prop::And(xs) | Prop::Or(xs) if xs.len() == 1 => self.lower(id, &xs[0]),
            Prop::And(xs) if xs.is_empty() => self.lower(id, &Prop::Const(true)),
            Prop::Or(xs) if xs.is_empty() => self.lower(id, &Prop::Const(false)),
            Prop::And(xs) => {
                let args: Vec<usize> = xs.iter().map(|x| self.lower(id, x)).collect();
                let v = self.aux(id);
                for &a in &args {
                    self.row(vec![(v, 1), (a, -1)], Relation::Le, 0, id);
                }
                let mut sum: Vec<(usize, i64)> = args.iter().map(|&a| (a, 1)).collect();
                sum.push((v, -1));
                self.row(sum, Relation::Le, args.len() as i64 - 1, id);
                v
            }
            Prop::Or(xs) => {
                let args: Vec<usize> = xs.iter().map(|x| self.lower(id, x)).collect();
                let v = self.aux(id);
                for &a in &args {
                    self.row(vec![(v, 1), (a, -1)], Relation::Ge, 0, id);
                }
                let mut sum = vec![(v, 1)];
                sum.extend(args.iter().map(|&a| (a, -1)));
                self.row(sum, Relation::Le, 0, id);
                v
            }
            Prop::If(a, b) => {
                let a = self.lower(id, a);
                let b = self.lower(id, b);
                let v = self.aux(id);
                self.row(vec![(v, 1), (a, 1)], Relation::Ge, 1, id);
                self.row(vec![(v, 1), (b, -1)], Relation::Ge, 0, id);
                self.row(vec![(v, 1), (a, 1), (b, -1)], Relation::Le, 1, id);
                v
            }
            Prop::AtMost(k, xs) => {
                let n = xs.len();
                if *k >= n {
                    return self.lower(id, &Prop::Const(true));
                }
                let args: Vec<usize> = xs.iter().map(|x| self.lower(id, x)).collect();
                let v = self.aux(id);
                let (n, k) = (n as i64, *k as i64);
                // v = 1 forces the count down to k, v = 0 forces it above k
                let mut upper: Vec<(usize, i64)> = args.iter().map(|&a| (a, 1)).collect();
                upper.push((v, n - k));
                self.row(upper, Relation::Le, n, id);
                let mut lower: Vec<(usize, i64)> = args.iter().map(|&a| (a, 1)).collect();
                lower.push((v, k + 1));
                self.row(lower, Relation::Ge, k + 1, id);
                v
            }
        }
    }

    /// Adds `expr` as a hard constraint.
    pub fn require(&mut self, id: &str, expr: &Prop) {
        match expr {
            Prop::If(a, b) if matches!(**a, Prop::Var(_)) => {
                let Prop::Var(a) = **a else { unreachable!() };
                let b = self.lower(id, b);
                self.row(vec![(a, 1), (b, -1)], Relation::Le, 0, id);
            }
            Prop::AtMost(k, xs) => {
                if *k >= xs.len() {
                    return;
                }
                let args: Vec<(usize, i64)> = xs.iter().map(|x| (self.lower(id, x), 1)).collect();
                self.row(args, Relation::Le, *k as i64, id);
            }
            other => {
                let root = self.lower(id, other);
                self.row(vec![(root, 1)], Relation::Eq, 1, id);
            }
        }
    }

    pub fn finish(self) -> IlpModel {
        IlpModel { names: self.names, objective: self.objective, rows: self.rows, num_decision: self.num_decision }
    }
}

/// Builds the inference model of one grounded sample.
pub fn compile(grounding: &Grounding, scores: &ScoreVector) -> Result<IlpModel, DataError> {
    let vars = grounding.index.vars();
    if scores.len() < vars.len() {
        let v = &vars[scores.len()];
        return Err(DataError::MissingScore { node: v.node.clone(), concept: v.concept.clone() });
    }
    if scores.len() > vars.len() {
        return Err(DataError::Schema(format!(
            "{} scores given for {} decision variables",
            scores.len(),
            vars.len()
        )));
    }
    let names = vars.iter().map(|v| format!("var_{}_{}", v.node, v.concept)).collect();
    let objective = scores.as_slice().iter().map(|&p| log_odds(p)).collect();
    let mut b = ModelBuilder::new(names, objective);
    for gc in &grounding.constraints {
        b.require(&gc.constraint_id, &gc.expr);
    }
    Ok(b.finish())
}
