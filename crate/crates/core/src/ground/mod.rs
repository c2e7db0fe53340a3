//! Instance graphs and grounding.
//!
//! A top-level constraint is instantiated once per combination of
//! candidates of its universally bound variables. Atoms become decision
//! variables of concrete nodes; `existsL` becomes a disjunction over the
//! nodes it can reach. A path that reaches several nodes outside `existsL`
//! grounds to the conjunction over them, and a path that reaches nothing
//! grounds to `false`.

mod data;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use data::{check_dimensions, load_data, load_dataset, DataNode, DataNodeGraph, RawNode, RawSample};

use crate::lclang::{collect_binders, plan_path, universal_binders, Atom, ConstraintSet, LcExpr};
use crate::schema::ConceptGraph;

/// Scores are clamped into `[SCORE_CLAMP, 1 - SCORE_CLAMP]`.
pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("link refers to unknown node `{0}`")]
    DanglingLink(String),
    #[error("node `{node}` is missing argument `{arg}`")]
    MissingArg { node: String, arg: String },
    #[error("concept `{0}` is not declared")]
    UnknownConcept(String),
    #[error("bad path: {0}")]
    BadPath(String),
    #[error("malformed constraint {id}: {message}")]
    Malformed { id: String, message: String },
    #[error("no score for `{concept}` on node `{node}`")]
    MissingScore { node: String, concept: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecisionVar {
    pub node: String,
    pub concept: String,
    pub index: usize,
}

/// Dense numbering of every (node, decision concept) pair of a sample:
/// nodes by id, then decision concepts in declaration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionIndex {
    vars: Vec<DecisionVar>,
    #[serde(skip)]
    lookup: HashMap<(String, String), usize>,
}

impl DecisionIndex {
    pub fn new(graph: &ConceptGraph, dng: &DataNodeGraph) -> Self {
        let decisions: Vec<(&str, &str)> = graph
            .decision_concepts()
            .filter_map(|c| graph.base(&c.name).ok().map(|b| (c.name.as_str(), b)))
            .collect();
        let mut vars = Vec::new();
        let mut lookup = HashMap::new();
        for node in dng.nodes() {
            for &(concept, base) in &decisions {
                if base == node.concept {
                    lookup.insert((node.id.clone(), concept.to_string()), vars.len());
                    vars.push(DecisionVar { node: node.id.clone(), concept: concept.to_string(), index: vars.len() });
                }
            }
        }
        DecisionIndex { vars, lookup }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn vars(&self) -> &[DecisionVar] {
        &self.vars
    }

    pub fn get(&self, node: &str, concept: &str) -> Option<usize> {
        self.lookup.get(&(node.to_string(), concept.to_string())).copied()
    }

    /// Ground-truth labels per variable; `None` where the data has none.
    pub fn labels(&self, dng: &DataNodeGraph) -> Vec<Option<bool>> {
        self.vars
            .iter()
            .map(|v| dng.node(&v.node).and_then(|n| n.labels.get(&v.concept).copied()))
            .collect()
    }

    /// Nested `{node: {concept: value}}` view of a per-variable vector.
    pub fn to_nested<T: Clone>(&self, values: &[T]) -> BTreeMap<String, BTreeMap<String, T>> {
        let mut out: BTreeMap<String, BTreeMap<String, T>> = BTreeMap::new();
        for (v, x) in self.vars.iter().zip(values) {
            out.entry(v.node.clone()).or_default().insert(v.concept.clone(), x.clone());
        }
        out
    }
}

/// Positive-class probability per decision variable, clamped away from 0 and 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<f64>);

pub fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
}

impl ScoreVector {
    pub fn new(raw: Vec<f64>) -> Self {
        ScoreVector(raw.into_iter().map(clamp_score).collect())
    }

    pub fn uniform(n: usize) -> Self {
        ScoreVector(vec![0.5; n])
    }

    /// Reads `{node: {concept: p}}`; every variable of `index` must be present.
    pub fn from_nested(
        index: &DecisionIndex,
        map: &BTreeMap<String, BTreeMap<String, f64>>,
    ) -> Result<Self, DataError> {
        index
            .vars()
            .iter()
            .map(|v| {
                map.get(&v.node)
                    .and_then(|m| m.get(&v.concept))
                    .copied()
                    .ok_or_else(|| DataError::MissingScore { node: v.node.clone(), concept: v.concept.clone() })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ScoreVector::new)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Propositional formula over decision variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Prop {
    Var(usize),
    Const(bool),
    Not(Box<Prop>),
    And(Vec<Prop>),
    Or(Vec<Prop>),
    If(Box<Prop>, Box<Prop>),
    AtMost(usize, Vec<Prop>),
}

impl Prop {
    pub fn eval(&self, values: &[bool]) -> bool {
        match self {
            Prop::Var(i) => values[*i],
            Prop::Const(b) => *b,
            Prop::Not(a) => !a.eval(values),
            Prop::And(xs) => xs.iter().all(|x| x.eval(values)),
            Prop::Or(xs) => xs.iter().any(|x| x.eval(values)),
            Prop::If(a, b) => !a.eval(values) || b.eval(values),
            Prop::AtMost(k, xs) => xs.iter().filter(|x| x.eval(values)).count() <= *k,
        }
    }

    /// Distinct variables in first-occurrence order.
    pub fn vars(&self) -> Vec<usize> {
        fn walk(p: &Prop, out: &mut Vec<usize>) {
            match p {
                Prop::Var(i) => {
                    if !out.contains(i) {
                        out.push(*i)
                    }
                }
                Prop::Const(_) => {}
                Prop::Not(a) => walk(a, out),
                Prop::If(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Prop::And(xs) | Prop::Or(xs) | Prop::AtMost(_, xs) => xs.iter().for_each(|x| walk(x, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for Prop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, xs: &[Prop]| -> fmt::Result {
            write!(f, "{name}(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{x}")?;
            }
            f.write_str(")")
        };
        match self {
            Prop::Var(i) => write!(f, "v{i}"),
            Prop::Const(b) => write!(f, "{b}"),
            Prop::Not(a) => write!(f, "not({a})"),
            Prop::And(xs) => list(f, "and", xs),
            Prop::Or(xs) => list(f, "or", xs),
            Prop::If(a, b) => write!(f, "if({a}, {b})"),
            Prop::AtMost(k, xs) => list(f, &format!("atmost{k}"), xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedConstraint {
    pub constraint_id: String,
    /// Universally bound variable to node id, in binding order.
    pub binding: Vec<(String, String)>,
    pub expr: Prop,
}

/// All grounded constraints of one sample plus the variable numbering.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub index: DecisionIndex,
    pub constraints: Vec<GroundedConstraint>,
}

/// Grounds every constraint of `constraints` on one sample.
pub fn ground(
    graph: &ConceptGraph,
    constraints: &ConstraintSet,
    dng: &DataNodeGraph,
) -> Result<Grounding, DataError> {
    let index = DecisionIndex::new(graph, dng);
    let mut out = Vec::new();
    {
        let g = Grounder { graph, dng, index: &index };
        for c in constraints {
            let report = crate::lclang::check_wellformed(&c.expr, graph);
            let first = report.errors().next().map(|i| i.message.clone());
            if let Some(message) = first {
                return Err(DataError::Malformed { id: c.id.clone(), message });
            }
            g.constraint(&c.id, &c.expr, &mut out)?;
        }
    }
    Ok(Grounding { index, constraints: out })
}

/// Gives every atom without variable and path a fresh variable `_k`.
fn name_anonymous(expr: &LcExpr, counter: &mut usize) -> LcExpr {
    match expr {
        LcExpr::Atom(Atom { concept, var: None, path: None }) => {
            let v = format!("_{counter}");
            *counter += 1;
            LcExpr::Atom(Atom { concept: concept.clone(), var: Some(v), path: None })
        }
        LcExpr::Atom(_) | LcExpr::Disjoint(_) => expr.clone(),
        LcExpr::Not(e) => LcExpr::Not(Box::new(name_anonymous(e, counter))),
        LcExpr::Exists(e) => LcExpr::Exists(Box::new(name_anonymous(e, counter))),
        LcExpr::If(a, b) => {
            let a = name_anonymous(a, counter);
            LcExpr::If(Box::new(a), Box::new(name_anonymous(b, counter)))
        }
        LcExpr::And(xs) => LcExpr::And(xs.iter().map(|x| name_anonymous(x, counter)).collect()),
        LcExpr::Or(xs) => LcExpr::Or(xs.iter().map(|x| name_anonymous(x, counter)).collect()),
        LcExpr::AtMost { k, children } => LcExpr::AtMost {
            k: *k,
            children: children.iter().map(|x| name_anonymous(x, counter)).collect(),
        },
    }
}

/// Cartesian product, first list varying slowest.
fn product(lists: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for list in lists {
        let mut next = Vec::with_capacity(out.len() * list.len());
        for prefix in &out {
            for &x in list {
                let mut p = prefix.clone();
                p.push(x);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

struct Grounder<'a> {
    graph: &'a ConceptGraph,
    dng: &'a DataNodeGraph,
    index: &'a DecisionIndex,
}

type Env = BTreeMap<String, usize>;

impl Grounder<'_> {
    fn constraint(&self, id: &str, expr: &LcExpr, out: &mut Vec<GroundedConstraint>) -> Result<(), DataError> {
        if let LcExpr::Disjoint(concepts) = expr {
            let base = self.graph.base(&concepts[0]).map_err(|_| DataError::UnknownConcept(concepts[0].clone()))?;
            for n in self.dng.candidate_positions(self.graph, base)? {
                let atoms = concepts.iter().map(|c| self.atom_prop(c, n)).collect();
                out.push(GroundedConstraint {
                    constraint_id: id.to_string(),
                    binding: vec![("_".to_string(), self.dng.nodes()[n].id.clone())],
                    expr: Prop::AtMost(1, atoms),
                });
            }
            return Ok(());
        }
        let expr = name_anonymous(expr, &mut 0);
        let binders = universal_binders(&expr);
        let lists = binders
            .iter()
            .map(|(_, c)| self.dng.candidate_positions(self.graph, c))
            .collect::<Result<Vec<_>, _>>()?;
        for combo in product(&lists) {
            let env: Env = binders.iter().map(|(v, _)| v.clone()).zip(combo.iter().copied()).collect();
            let prop = self.expr(&expr, &env, false)?;
            let binding = binders
                .iter()
                .zip(&combo)
                .map(|((v, _), &n)| (v.clone(), self.dng.nodes()[n].id.clone()))
                .collect();
            out.push(GroundedConstraint { constraint_id: id.to_string(), binding, expr: prop });
        }
        Ok(())
    }

    fn atom_prop(&self, concept: &str, node: usize) -> Prop {
        let n = &self.dng.nodes()[node];
        if self.graph.is_decision(concept) {
            match self.index.get(&n.id, concept) {
                Some(i) => Prop::Var(i),
                None => Prop::Const(false),
            }
        } else {
            Prop::Const(n.concept == concept)
        }
    }

    fn expr(&self, e: &LcExpr, env: &Env, existential: bool) -> Result<Prop, DataError> {
        Ok(match e {
            LcExpr::Atom(a) => {
                if let Some(p) = &a.path {
                    let &start = env
                        .get(&p.root_var)
                        .ok_or_else(|| DataError::BadPath(format!("variable '{}' is not bound", p.root_var)))?;
                    let (plan, _) = plan_path(self.graph, &self.dng.nodes()[start].concept, &p.steps)
                        .map_err(DataError::BadPath)?;
                    let mut props: Vec<Prop> =
                        self.dng.follow(start, &plan).into_iter().map(|n| self.atom_prop(&a.concept, n)).collect();
                    match props.len() {
                        0 => Prop::Const(false),
                        1 => props.pop().expect("one element"),
                        _ if existential => Prop::Or(props),
                        _ => Prop::And(props),
                    }
                } else {
                    let v = a.var.as_ref().expect("anonymous atoms are named before grounding");
                    let &n = env
                        .get(v)
                        .ok_or_else(|| DataError::BadPath(format!("variable '{v}' is not bound")))?;
                    self.atom_prop(&a.concept, n)
                }
            }
            LcExpr::Not(x) => Prop::Not(Box::new(self.expr(x, env, existential)?)),
            LcExpr::And(xs) => Prop::And(self.all(xs, env, existential)?),
            LcExpr::Or(xs) => Prop::Or(self.all(xs, env, existential)?),
            LcExpr::If(a, b) => {
                Prop::If(Box::new(self.expr(a, env, existential)?), Box::new(self.expr(b, env, existential)?))
            }
            LcExpr::AtMost { k, children } => Prop::AtMost(*k, self.all(children, env, existential)?),
            LcExpr::Exists(x) => {
                let mut binders = Vec::new();
                collect_binders(x, &mut binders);
                binders.retain(|(v, _)| !env.contains_key(v));
                if binders.is_empty() {
                    return self.expr(x, env, true);
                }
                let lists = binders
                    .iter()
                    .map(|(_, c)| self.dng.candidate_positions(self.graph, c))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut alts = Vec::new();
                for combo in product(&lists) {
                    let mut inner = env.clone();
                    inner.extend(binders.iter().map(|(v, _)| v.clone()).zip(combo));
                    alts.push(self.expr(x, &inner, true)?);
                }
                Prop::Or(alts)
            }
            LcExpr::Disjoint(_) => {
                return Err(DataError::Malformed {
                    id: String::new(),
                    message: "disjoint inside an expression".into(),
                })
            }
        })
    }

    fn all(&self, xs: &[LcExpr], env: &Env, existential: bool) -> Result<Vec<Prop>, DataError> {
        xs.iter().map(|x| self.expr(x, env, existential)).collect()
    }
}
