//! The declaration language: concept graph statements followed by logical
//! constraints written as nested calls (`ifL`, `andL`, `orL`, `notL`,
//! `existsL`, `atMostL`, `disjoint`).
//!
//! Every top-level constraint is universally quantified over the candidates
//! of each variable it binds outside an `existsL`.

mod ast;
mod check;
mod lexer;
mod parser;

pub use ast::{pretty, Atom, LcExpr, Path, PathStep};
pub use check::{check_wellformed, plan_path, universal_binders, ResolvedStep};
pub(crate) use check::collect_binders;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{IssueKind, ValidationReport};
use crate::schema::{ConceptGraph, SchemaError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: {source}")]
    Schema { line: usize, col: usize, source: SchemaError },
    #[error("{line}:{col}: unknown concept: {message}")]
    UnknownConcept { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unbound variable: {message}")]
    UnboundVariable { line: usize, col: usize, message: String },
    #[error("{line}:{col}: bad path: {message}")]
    BadPath { line: usize, col: usize, message: String },
    #[error("{line}:{col}: {message}")]
    Invalid { line: usize, col: usize, message: String },
}

impl ParseError {
    pub(crate) fn syntax(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError::Syntax { line, col, message: message.into() }
    }

    pub(crate) fn schema(line: usize, col: usize, source: SchemaError) -> Self {
        ParseError::Schema { line, col, source }
    }

    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::Schema { line, col, .. }
            | ParseError::UnknownConcept { line, col, .. }
            | ParseError::UnboundVariable { line, col, .. }
            | ParseError::BadPath { line, col, .. }
            | ParseError::Invalid { line, col, .. } => Some((*line, *col)),
        }
    }

    fn from_issue(line: usize, col: usize, kind: IssueKind, message: String) -> Self {
        match kind {
            IssueKind::UnknownConcept => ParseError::UnknownConcept { line, col, message },
            IssueKind::UnboundVariable => ParseError::UnboundVariable { line, col, message },
            IssueKind::BadPath => ParseError::BadPath { line, col, message },
            _ => ParseError::Invalid { line, col, message },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub expr: LcExpr,
    /// Source position of the constraint, 1-based.
    pub line: usize,
    pub col: usize,
}

/// Ordered constraints, each with a stable id (`lc0`, `lc1`, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an expression under the next free id and returns that id.
    pub fn add(&mut self, expr: LcExpr) -> String {
        let id = format!("lc{}", self.constraints.len());
        self.constraints.push(Constraint { id: id.clone(), expr, line: 0, col: 0 });
        id
    }

    pub(crate) fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.constraints.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.constraints.iter().map(|c| c.id.as_str())
    }
}

impl<'a> IntoIterator for &'a ConstraintSet {
    type Item = &'a Constraint;
    type IntoIter = std::slice::Iter<'a, Constraint>;

    fn into_iter(self) -> Self::IntoIter {
        self.constraints.iter()
    }
}

/// A parsed declaration file: the schema plus its constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub graph: ConceptGraph,
    pub constraints: ConstraintSet,
}

impl Domain {
    pub fn new(graph: ConceptGraph, constraints: ConstraintSet) -> Self {
        Domain { graph, constraints }
    }

    /// Every schema and constraint diagnostic, constraint issues prefixed
    /// with their source position.
    pub fn report(&self) -> ValidationReport {
        let mut report = self.graph.validate();
        for c in &self.constraints {
            let mut sub = check_wellformed(&c.expr, &self.graph);
            for issue in &mut sub.issues {
                issue.message = format!("{}:{}: {} ({})", c.line, c.col, issue.message, c.id);
            }
            report.extend(sub);
        }
        report
    }
}

/// Parses without semantic checks beyond what building the graph enforces.
pub fn parse_unchecked(source: &str) -> Result<Domain, ParseError> {
    let (graph, constraints) = parser::Parser::new(source)?.parse_file()?;
    Ok(Domain { graph, constraints })
}

/// Parses a declaration file and rejects it on the first schema or
/// constraint error. Warnings are ignored.
pub fn parse(source: &str) -> Result<Domain, ParseError> {
    let domain = parse_unchecked(source)?;
    let first = domain.graph.validate().errors().next().cloned();
    if let Some(issue) = first {
        return Err(ParseError::from_issue(1, 1, issue.kind, issue.message));
    }
    for c in &domain.constraints {
        let report = check_wellformed(&c.expr, &domain.graph);
        let first = report.errors().next().cloned();
        if let Some(issue) = first {
            return Err(ParseError::from_issue(c.line, c.col, issue.kind, issue.message));
        }
    }
    Ok(domain)
}

/// Parses a single constraint expression.
pub fn parse_expr(source: &str) -> Result<LcExpr, ParseError> {
    let mut p = parser::Parser::new(source)?;
    let e = p.parse_expr()?;
    p.expect_eof()?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EMR: &str = r#"
# entity-mention-relation schema
concept word; concept phrase; concept sentence; concept pair;
concept entity: phrase;
concept people: entity;
concept organization: entity;
concept location: entity;
concept work_for: pair;
concept located_in: pair;
pair.has_a(arg1=phrase, arg2=phrase)
sentence.contains(phrase)
phrase contains word;

ifL(work_for('x'), andL(people(path=('x', arg1)), organization(path=('x', arg2))))
disjoint(people, organization, location)
"#;

    #[test]
    fn work_for_rule_structure() {
        let e = parse_expr(
            "ifL(work_for('x'), andL(people(path=('x',arg1)), organization(path=('x',arg2))))",
        )
        .unwrap();
        let want = LcExpr::implies(
            LcExpr::bind("work_for", "x"),
            LcExpr::And(vec![LcExpr::at("people", "x", &["arg1"]), LcExpr::at("organization", "x", &["arg2"])]),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn parses_emr_file() {
        let d = parse(EMR).unwrap();
        assert_eq!(d.constraints.len(), 2);
        assert_eq!(d.constraints.iter().next().unwrap().line, 14);
        assert!(matches!(&d.constraints.get("lc1").unwrap().expr, LcExpr::Disjoint(c) if c.len() == 3));
        assert!(d.report().is_empty());
    }

    #[test]
    fn wellformed_emr_rule() {
        let d = parse(EMR).unwrap();
        let rule = &d.constraints.get("lc0").unwrap().expr;
        assert!(check_wellformed(rule, &d.graph).is_empty());
    }

    #[test]
    fn path_step_missing_on_pair() {
        let d = parse(EMR).unwrap();
        let e = parse_expr("ifL(work_for('x'), people(path=('x', arg3)))").unwrap();
        let r = check_wellformed(&e, &d.graph);
        assert_eq!(r.len(), 1);
        assert_eq!(r.issues[0].kind, IssueKind::BadPath);
    }

    #[test]
    fn and_with_single_child() {
        let d = parse(EMR).unwrap();
        let e = parse_expr("andL(people('x'))").unwrap();
        let r = check_wellformed(&e, &d.graph);
        assert_eq!(r.len(), 1);
        assert_eq!(r.issues[0].kind, IssueKind::Arity);
    }

    #[test]
    fn symmetric_without_binding_is_bad_path() {
        let src = r#"
concept paragraph; concept question; concept symmetric;
concept is_more: question; concept is_less: question;
paragraph contains question;
symmetric.has_a(arg1=question, arg2=question)
ifL(is_more('x'), is_less(path=('x', arg2)))
"#;
        match parse(src) {
            Err(ParseError::BadPath { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected BadPath, got {other:?}"),
        }
        let fixed = src.replace(
            "ifL(is_more('x'), is_less(path=('x', arg2)))",
            "ifL(symmetric('s'), ifL(is_more(path=('s', arg1)), is_less(path=('s', arg2))))",
        );
        parse(&fixed).unwrap();
    }

    #[test]
    fn unbalanced_snippet_is_syntax_error() {
        let src = "concept question; concept symmetric;\nsymmetric.has_a(arg1=question, arg2=question)\nifL(is_more('x'), is_less(path=('x', arg2))\n";
        assert!(matches!(parse(src), Err(ParseError::Syntax { line: 4, .. })));
    }

    #[test]
    fn disjoint_needs_shared_parent() {
        let src = "concept image; concept truck: image; concept dog: image;\ndisjoint(truck, dog)";
        let d = parse(src).unwrap();
        assert_eq!(d.constraints.iter().next().unwrap().expr, LcExpr::Disjoint(vec!["truck".into(), "dog".into()]));

        let bad = "concept image; concept text; concept truck: image; concept dog: text;\ndisjoint(truck, dog)";
        assert!(matches!(parse(bad), Err(ParseError::Invalid { line: 2, .. })));
    }

    #[test]
    fn unknown_and_unbound() {
        let base = "concept phrase; concept people: phrase;\n";
        assert!(matches!(parse(&format!("{base}ifL(people('x'), zebra('x'))")), Err(ParseError::UnknownConcept { .. })));
        assert!(matches!(
            parse(&format!("{base}people(path=('y'))")),
            Err(ParseError::UnboundVariable { .. })
        ));
    }

    #[test]
    fn fire_station_rule() {
        let src = r#"
concept city; concept neighbor; concept firestationCity: city;
neighbor has_a (arg1=city, arg2=city);
orL(firestationCity('x'), existsL(firestationCity(path=('x', neighbor.arg2))))
"#;
        let d = parse(src).unwrap();
        let e = &d.constraints.iter().next().unwrap().expr;
        assert_eq!(
            pretty(e),
            "orL(firestationCity('x'), existsL(firestationCity(path=('x', neighbor.arg2))))"
        );
    }

    #[test]
    fn pretty_forms() {
        let e = parse_expr("ifL(a('x'), b('x'))").unwrap();
        assert_eq!(pretty(&e), "ifL(a('x'), b('x'))");
        assert_eq!(pretty(&LcExpr::Disjoint(vec!["a".into(), "b".into(), "c".into()])), "disjoint(a, b, c)");
        let m = parse_expr("atMostL(2, a('x'), b(), c(path=(\"x\", arg1, sentence)))").unwrap();
        assert_eq!(pretty(&m), "atMostL(2, a('x'), b(), c(path=('x', arg1, sentence)))");
    }

    #[test]
    fn schema_error_positions() {
        let err = parse("concept a;\nconcept a;").unwrap_err();
        assert!(matches!(err, ParseError::Schema { line: 2, col: 9, source: SchemaError::DuplicateName(_) }));
        let err = parse("concept b: missing;").unwrap_err();
        assert!(matches!(err, ParseError::Schema { source: SchemaError::UnknownParent(_), .. }));
    }

    #[test]
    fn empty_file() {
        let err = parse("").unwrap_err();
        assert_eq!(err.to_string(), "1:1: no concepts declared");
    }
}
