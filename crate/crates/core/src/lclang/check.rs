//! Well-formedness of constraint expressions against a concept graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::{Atom, LcExpr, PathStep};
use crate::report::{IssueKind, ValidationReport};
use crate::schema::ConceptGraph;

/// A path step after resolution against the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResolvedStep {
    /// Composite to the member filling `arg`.
    Member(String),
    /// Container to its contained nodes of the given concept.
    Children(String),
    /// Contained node to its containers of the given concept.
    Parents(String),
    /// Across `relation` from any other argument to `arg`.
    Via { relation: String, arg: String },
}

/// Types a path starting at a node of concept `start`.
///
/// Returns the resolved steps and the base concept the path ends on.
pub fn plan_path(
    graph: &ConceptGraph,
    start: &str,
    steps: &[PathStep],
) -> Result<(Vec<ResolvedStep>, String), String> {
    let mut cur = graph.base(start).map_err(|e| e.to_string())?.to_string();
    let mut plan = Vec::with_capacity(steps.len());
    for step in steps {
        match step {
            PathStep::Name(s) => {
                if let Some(t) = graph.has_a_target(&cur, s) {
                    plan.push(ResolvedStep::Member(s.clone()));
                    cur = graph.base(t).map_err(|e| e.to_string())?.to_string();
                } else if graph.contains_concept(s) && graph.has_contains(&cur, s) {
                    plan.push(ResolvedStep::Children(s.clone()));
                    cur = s.clone();
                } else if graph.contains_concept(s) && graph.has_contains(s, &cur) {
                    plan.push(ResolvedStep::Parents(s.clone()));
                    cur = s.clone();
                } else {
                    return Err(format!("`{cur}` has no argument or contains link named `{s}`"));
                }
            }
            PathStep::Via { relation, arg } => {
                let target = graph
                    .has_a_target(relation, arg)
                    .ok_or_else(|| format!("`{relation}` has no argument `{arg}`"))?;
                let fills_other = graph.has_a_args(relation).iter().any(|(a, t)| {
                    a != arg && graph.base(t).map(|b| b == cur).unwrap_or(false)
                });
                if !fills_other {
                    return Err(format!(
                        "`{cur}` does not fill any argument of `{relation}` other than `{arg}`"
                    ));
                }
                plan.push(ResolvedStep::Via { relation: relation.clone(), arg: arg.clone() });
                cur = graph.base(target).map_err(|e| e.to_string())?.to_string();
            }
        }
    }
    Ok((plan, cur))
}

/// Variables bound outside any `existsL`, in order of first appearance,
/// with the concept of their binding atom.
pub fn universal_binders(expr: &LcExpr) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    collect_binders(expr, &mut out);
    out
}

/// Binders of `expr` that are not inside a nested `existsL`.
pub(crate) fn collect_binders(expr: &LcExpr, out: &mut Vec<(String, String)>) {
    match expr {
        LcExpr::Atom(Atom { concept, var: Some(v), path: None }) => {
            if !out.iter().any(|(n, _)| n == v) {
                out.push((v.clone(), concept.clone()));
            }
        }
        LcExpr::Exists(_) => {}
        other => {
            for c in other.children() {
                collect_binders(c, out);
            }
        }
    }
}

struct Checker<'g> {
    graph: &'g ConceptGraph,
    report: ValidationReport,
}

impl Checker<'_> {
    fn walk(&mut self, expr: &LcExpr, scope: &BTreeMap<String, String>, top: bool) {
        match expr {
            LcExpr::Atom(a) => self.atom(a, scope),
            LcExpr::Not(e) => self.walk(e, scope, false),
            LcExpr::And(xs) | LcExpr::Or(xs) => {
                if xs.len() < 2 {
                    let name = if matches!(expr, LcExpr::And(_)) { "andL" } else { "orL" };
                    self.report.error(
                        IssueKind::Arity,
                        format!("{name} needs at least two operands, found {}", xs.len()),
                    );
                }
                for x in xs {
                    self.walk(x, scope, false);
                }
            }
            LcExpr::If(a, b) => {
                self.walk(a, scope, false);
                self.walk(b, scope, false);
            }
            LcExpr::AtMost { k, children } => {
                if *k == 0 {
                    self.report.error(IssueKind::Arity, "atMostL bound must be positive");
                }
                if children.is_empty() {
                    self.report.error(IssueKind::Arity, "atMostL needs at least one operand");
                }
                for x in children {
                    self.walk(x, scope, false);
                }
            }
            LcExpr::Exists(e) => {
                let mut inner = scope.clone();
                let mut binders = Vec::new();
                collect_binders(e, &mut binders);
                for (v, c) in binders {
                    if let (std::collections::btree_map::Entry::Vacant(slot), Ok(b)) = (inner.entry(v), self.graph.base(&c)) {
                        slot.insert(b.to_string());
                    }
                }
                self.walk(e, &inner, false);
            }
            LcExpr::Disjoint(cs) => {
                if !top {
                    self.report.error(IssueKind::Placement, "disjoint is only allowed as a whole constraint");
                }
                self.disjoint(cs);
            }
        }
    }

    fn atom(&mut self, a: &Atom, scope: &BTreeMap<String, String>) {
        let Ok(base) = self.graph.base(&a.concept).map(str::to_string) else {
            self.report.error(IssueKind::UnknownConcept, format!("concept `{}` is not declared", a.concept));
            return;
        };
        if a.var.is_some() && a.path.is_some() {
            self.report.error(
                IssueKind::Placement,
                format!("`{}` has both a variable and a path", a.concept),
            );
        }
        if let Some(v) = &a.var {
            match scope.get(v) {
                Some(bound) if *bound != base => self.report.error(
                    IssueKind::TypeMismatch,
                    format!("variable '{v}' ranges over `{bound}` but `{}` applies to `{base}`", a.concept),
                ),
                Some(_) => {}
                None => self.report.error(IssueKind::UnboundVariable, format!("variable '{v}' is not bound")),
            }
        }
        if let Some(p) = &a.path {
            let Some(start) = scope.get(&p.root_var) else {
                self.report.error(
                    IssueKind::UnboundVariable,
                    format!("path variable '{}' is not bound", p.root_var),
                );
                return;
            };
            match plan_path(self.graph, start, &p.steps) {
                Ok((_, end)) if end == base => {}
                Ok((_, end)) => self.report.error(
                    IssueKind::BadPath,
                    format!("path ends on `{end}` but `{}` applies to `{base}`", a.concept),
                ),
                Err(msg) => self.report.error(IssueKind::BadPath, msg),
            }
        }
    }

    fn disjoint(&mut self, cs: &[String]) {
        if cs.len() < 2 {
            self.report.error(IssueKind::Arity, "disjoint needs at least two concepts");
        }
        let mut ok = true;
        for c in cs {
            if !self.graph.contains_concept(c) {
                self.report.error(IssueKind::UnknownConcept, format!("concept `{c}` is not declared"));
                ok = false;
            } else if !self.graph.is_decision(c) {
                self.report.error(IssueKind::Disjoint, format!("`{c}` is not a decision concept"));
                ok = false;
            }
        }
        if ok {
            let names: Vec<&str> = cs.iter().map(String::as_str).collect();
            if matches!(self.graph.common_ancestor(&names), Ok(None)) {
                self.report.error(
                    IssueKind::Disjoint,
                    format!("disjoint concepts {} share no is_a ancestor", cs.join(", ")),
                );
            }
        }
    }
}

/// Checks variable binding, path typing and arity rules of one expression.
pub fn check_wellformed(expr: &LcExpr, graph: &ConceptGraph) -> ValidationReport {
    let mut checker = Checker { graph, report: ValidationReport::new() };
    let mut scope = BTreeMap::new();
    for (v, c) in universal_binders(expr) {
        if let Ok(b) = graph.base(&c) {
            scope.insert(v, b.to_string());
        }
    }
    checker.walk(expr, &scope, true);
    checker.report
}
