//! The conceptual graph: concepts and the typed edges between them.
//!
//! Three concept kinds exist. *Basic* concepts describe the raw structure of
//! an input (`sentence`, `phrase`), *compositional* concepts relate two or
//! more basic concepts through named `has_a` arguments (`pair`), and
//! *decision* concepts are derived from a parent with an implicit `is_a`
//! edge and carry one binary prediction per candidate instance (`people`).
//!
//! Only three edge kinds exist: `is_a`, `has_a` and `contains`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{IssueKind, ValidationReport};

/// Words with a meaning of their own in the declaration language.
pub const RESERVED_WORDS: &[&str] = &[
    "concept", "has_a", "contains", "path", "ifL", "andL", "orL", "notL", "existsL", "atMostL",
    "disjoint",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("concept `{0}` is already declared")]
    DuplicateName(String),
    #[error("parent concept `{0}` is not declared")]
    UnknownParent(String),
    #[error("concept `{0}` is not declared")]
    UnknownConcept(String),
    #[error("argument name `{arg}` is used twice on `{concept}`")]
    DuplicateArgName { concept: String, arg: String },
    #[error("`{0}` needs at least two has_a arguments")]
    Arity(String),
    #[error("`{0}` is not a valid concept name")]
    InvalidName(String),
    #[error("concept `{name}`: {reason}")]
    KindMismatch { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Basic,
    Compositional,
    Decision,
}

impl fmt::Display for ConceptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConceptKind::Basic => "basic",
            ConceptKind::Compositional => "compositional",
            ConceptKind::Decision => "decision",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub kind: ConceptKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    IsA,
    HasA,
    Contains,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg_name: Option<String>,
}

/// Concepts plus typed edges. Built once, then shared read-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GraphParts")]
pub struct ConceptGraph {
    concepts: Vec<Concept>,
    edges: Vec<Edge>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct GraphParts {
    concepts: Vec<Concept>,
    edges: Vec<Edge>,
}

impl From<GraphParts> for ConceptGraph {
    fn from(parts: GraphParts) -> Self {
        ConceptGraph::from_parts(parts.concepts, parts.edges)
    }
}

pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_') && !RESERVED_WORDS.contains(&name)
}

impl ConceptGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a graph without any checking. Use [`ConceptGraph::validate`]
    /// to find out whether the result is usable.
    pub fn from_parts(concepts: Vec<Concept>, edges: Vec<Edge>) -> Self {
        let mut graph = ConceptGraph { concepts, edges, index: HashMap::new() };
        graph.reindex();
        graph
    }

    fn reindex(&mut self) {
        self.index.clear();
        for (i, c) in self.concepts.iter().enumerate() {
            self.index.entry(c.name.clone()).or_insert(i);
        }
    }

    pub fn add_concept(
        &mut self,
        name: &str,
        kind: ConceptKind,
        parent: Option<&str>,
    ) -> Result<&mut Self, SchemaError> {
        if !is_valid_name(name) {
            return Err(SchemaError::InvalidName(name.to_string()));
        }
        if self.index.contains_key(name) {
            return Err(SchemaError::DuplicateName(name.to_string()));
        }
        if let Some(p) = parent {
            if !self.index.contains_key(p) {
                return Err(SchemaError::UnknownParent(p.to_string()));
            }
        }
        match (kind, parent) {
            (ConceptKind::Decision, None) => {
                return Err(SchemaError::KindMismatch {
                    name: name.to_string(),
                    reason: "a decision concept needs a parent".into(),
                })
            }
            (ConceptKind::Basic | ConceptKind::Compositional, Some(_)) => {
                return Err(SchemaError::KindMismatch {
                    name: name.to_string(),
                    reason: "only decision concepts have a parent".into(),
                })
            }
            _ => {}
        }
        self.index.insert(name.to_string(), self.concepts.len());
        self.concepts.push(Concept {
            name: name.to_string(),
            kind,
            parent: parent.map(str::to_string),
        });
        if let Some(p) = parent {
            self.edges.push(Edge {
                kind: EdgeKind::IsA,
                src: name.to_string(),
                dst: p.to_string(),
                arg_name: None,
            });
        }
        Ok(self)
    }

    pub fn add_basic(&mut self, name: &str) -> Result<&mut Self, SchemaError> {
        self.add_concept(name, ConceptKind::Basic, None)
    }

    pub fn add_decision(&mut self, name: &str, parent: &str) -> Result<&mut Self, SchemaError> {
        self.add_concept(name, ConceptKind::Decision, Some(parent))
    }

    /// Declares the named arguments of a compositional concept. A basic
    /// concept that receives arguments becomes compositional.
    pub fn add_has_a(
        &mut self,
        composite: &str,
        args: &[(&str, &str)],
    ) -> Result<&mut Self, SchemaError> {
        let idx = *self
            .index
            .get(composite)
            .ok_or_else(|| SchemaError::UnknownConcept(composite.to_string()))?;
        if self.concepts[idx].kind == ConceptKind::Decision {
            return Err(SchemaError::KindMismatch {
                name: composite.to_string(),
                reason: "decision concepts cannot have has_a arguments".into(),
            });
        }
        let mut seen: BTreeSet<String> =
            self.has_a_args(composite).iter().map(|(a, _)| a.clone()).collect();
        for (arg, target) in args {
            if !self.index.contains_key(*target) {
                return Err(SchemaError::UnknownConcept(target.to_string()));
            }
            if !seen.insert(arg.to_string()) {
                return Err(SchemaError::DuplicateArgName {
                    concept: composite.to_string(),
                    arg: arg.to_string(),
                });
            }
        }
        if seen.len() < 2 {
            return Err(SchemaError::Arity(composite.to_string()));
        }
        self.concepts[idx].kind = ConceptKind::Compositional;
        for (arg, target) in args {
            self.edges.push(Edge {
                kind: EdgeKind::HasA,
                src: composite.to_string(),
                dst: target.to_string(),
                arg_name: Some(arg.to_string()),
            });
        }
        Ok(self)
    }

    pub fn add_contains(&mut self, parent: &str, child: &str) -> Result<&mut Self, SchemaError> {
        for name in [parent, child] {
            if !self.index.contains_key(name) {
                return Err(SchemaError::UnknownConcept(name.to_string()));
            }
        }
        self.edges.push(Edge {
            kind: EdgeKind::Contains,
            src: parent.to_string(),
            dst: child.to_string(),
            arg_name: None,
        });
        Ok(self)
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn concept(&self, name: &str) -> Option<&Concept> {
        self.index.get(name).map(|&i| &self.concepts[i])
    }

    pub fn contains_concept(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    fn require(&self, name: &str) -> Result<&Concept, SchemaError> {
        self.concept(name).ok_or_else(|| SchemaError::UnknownConcept(name.to_string()))
    }

    pub fn is_decision(&self, name: &str) -> bool {
        self.concept(name).is_some_and(|c| c.kind == ConceptKind::Decision)
    }

    /// Decision concepts in declaration order.
    pub fn decision_concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.iter().filter(|c| c.kind == ConceptKind::Decision)
    }

    /// Named `has_a` arguments of `composite`, in declaration order.
    pub fn has_a_args(&self, composite: &str) -> Vec<(String, String)> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::HasA && e.src == composite)
            .map(|e| (e.arg_name.clone().unwrap_or_default(), e.dst.clone()))
            .collect()
    }

    pub fn has_a_target(&self, composite: &str, arg: &str) -> Option<&str> {
        self.edges
            .iter()
            .find(|e| {
                e.kind == EdgeKind::HasA && e.src == composite && e.arg_name.as_deref() == Some(arg)
            })
            .map(|e| e.dst.as_str())
    }

    pub fn has_contains(&self, parent: &str, child: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.kind == EdgeKind::Contains && e.src == parent && e.dst == child)
    }

    /// Proper ancestors along `is_a`, nearest first. Stops on a cycle.
    pub fn ancestors(&self, name: &str) -> Result<Vec<String>, SchemaError> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::from([name.to_string()]);
        let mut cur = self.require(name)?;
        while let Some(p) = &cur.parent {
            if !seen.insert(p.clone()) {
                break;
            }
            out.push(p.clone());
            match self.concept(p) {
                Some(c) => cur = c,
                None => break,
            }
        }
        Ok(out)
    }

    /// Reflexive-transitive closure of `is_a`.
    pub fn is_subtype(&self, a: &str, b: &str) -> Result<bool, SchemaError> {
        self.require(b)?;
        if a == b {
            self.require(a)?;
            return Ok(true);
        }
        Ok(self.ancestors(a)?.iter().any(|x| x == b))
    }

    /// The basic or compositional concept at the root of `name`'s `is_a` chain.
    pub fn base(&self, name: &str) -> Result<&str, SchemaError> {
        let c = self.require(name)?;
        match self.ancestors(name)?.last() {
            Some(root) => Ok(self.require(root)?.name.as_str()),
            None => Ok(c.name.as_str()),
        }
    }

    /// Closest concept that is an ancestor-or-self of every name given.
    pub fn common_ancestor(&self, names: &[&str]) -> Result<Option<String>, SchemaError> {
        let Some((first, rest)) = names.split_first() else {
            return Ok(None);
        };
        let mut chain = vec![first.to_string()];
        chain.extend(self.ancestors(first)?);
        for candidate in chain {
            let mut all = true;
            for other in rest {
                if !self.is_subtype(other, &candidate)? {
                    all = false;
                    break;
                }
            }
            if all {
                return Ok(Some(candidate));
            }
        }
        Ok(None)
    }

    /// Checks every structural invariant and reports all violations.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::new();
        if self.concepts.is_empty() {
            report.error(IssueKind::Empty, "no concepts declared");
        }
        let mut names = BTreeSet::new();
        for c in &self.concepts {
            if !names.insert(c.name.as_str()) {
                report.error(IssueKind::DuplicateName, format!("concept `{}` declared twice", c.name));
            }
            if !is_valid_name(&c.name) {
                report.error(IssueKind::InvalidName, format!("`{}` is not a valid concept name", c.name));
            }
            match (c.kind, &c.parent) {
                (ConceptKind::Decision, None) => report.error(
                    IssueKind::KindMismatch,
                    format!("decision concept `{}` has no parent", c.name),
                ),
                (ConceptKind::Basic | ConceptKind::Compositional, Some(p)) => report.error(
                    IssueKind::KindMismatch,
                    format!("{} concept `{}` must not have parent `{p}`", c.kind, c.name),
                ),
                _ => {}
            }
            if let Some(p) = &c.parent {
                if !self.contains_concept(p) {
                    report.error(
                        IssueKind::UnknownConcept,
                        format!("parent `{p}` of `{}` is not declared", c.name),
                    );
                }
            }
            let n_args = self.has_a_args(&c.name).len();
            if c.kind == ConceptKind::Compositional && n_args < 2 {
                report.error(
                    IssueKind::Arity,
                    format!("compositional concept `{}` has {n_args} has_a argument(s), needs 2", c.name),
                );
            }
            if c.kind != ConceptKind::Compositional && n_args > 0 {
                report.error(
                    IssueKind::KindMismatch,
                    format!("{} concept `{}` has has_a arguments", c.kind, c.name),
                );
            }
        }

        let mut isa_out: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut has_a_seen: BTreeSet<(&str, &str)> = BTreeSet::new();
        for e in &self.edges {
            for end in [&e.src, &e.dst] {
                if !self.contains_concept(end) {
                    report.error(
                        IssueKind::UnknownConcept,
                        format!("{:?} edge refers to undeclared concept `{end}`", e.kind),
                    );
                }
            }
            match e.kind {
                EdgeKind::IsA => isa_out.entry(e.src.as_str()).or_default().push(e.dst.as_str()),
                EdgeKind::HasA => {
                    let arg = e.arg_name.as_deref().unwrap_or("");
                    if arg.is_empty() {
                        report.error(
                            IssueKind::DuplicateArgName,
                            format!("has_a edge {} -> {} has no argument name", e.src, e.dst),
                        );
                    } else if !has_a_seen.insert((e.src.as_str(), arg)) {
                        report.error(
                            IssueKind::DuplicateArgName,
                            format!("argument `{arg}` appears twice on `{}`", e.src),
                        );
                    }
                }
                EdgeKind::Contains => {
                    if e.src == e.dst {
                        report.warning(
                            IssueKind::ContainsCycle,
                            format!("`{}` contains itself", e.src),
                        );
                    }
                }
            }
        }

        for c in &self.concepts {
            let outs = isa_out.get(c.name.as_str()).cloned().unwrap_or_default();
            if outs.len() > 1 {
                report.error(
                    IssueKind::MultipleParents,
                    format!("`{}` has {} is_a parents", c.name, outs.len()),
                );
            }
            if outs.first().copied() != c.parent.as_deref() {
                report.error(
                    IssueKind::KindMismatch,
                    format!("is_a edges of `{}` disagree with its declared parent", c.name),
                );
            }
        }

        for cycle in isa_cycles(&isa_out) {
            report.error(IssueKind::IsACycle, format!("is_a cycle through {}", cycle.join(" -> ")));
        }
        for cycle in contains_cycles(&self.edges) {
            report.warning(IssueKind::ContainsCycle, format!("contains cycle through {}", cycle.join(" -> ")));
        }
        report
    }
}

/// One entry per distinct cycle, each listed from its smallest member.
fn isa_cycles(out: &HashMap<&str, Vec<&str>>) -> Vec<Vec<String>> {
    let mut found = BTreeSet::new();
    let mut starts: Vec<&str> = out.keys().copied().collect();
    starts.sort_unstable();
    for start in starts {
        let mut path = vec![start];
        let mut cur = start;
        while let Some(&next) = out.get(cur).and_then(|v| v.first()) {
            if let Some(pos) = path.iter().position(|&p| p == next) {
                let cyc = &path[pos..];
                let min = cyc.iter().enumerate().min_by_key(|(_, n)| **n).map(|(i, _)| i).unwrap_or(0);
                let rotated: Vec<String> =
                    cyc[min..].iter().chain(&cyc[..min]).map(|s| s.to_string()).collect();
                found.insert(rotated);
                break;
            }
            path.push(next);
            cur = next;
        }
    }
    found.into_iter().collect()
}

/// Cycles of length two or more in the `contains` relation (self-loops are
/// reported separately).
fn contains_cycles(edges: &[Edge]) -> Vec<Vec<String>> {
    let mut adj: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    for e in edges.iter().filter(|e| e.kind == EdgeKind::Contains && e.src != e.dst) {
        adj.entry(e.src.as_str()).or_default().insert(e.dst.as_str());
    }
    let mut nodes: Vec<&str> = adj.keys().copied().collect();
    nodes.sort_unstable();
    let mut found = BTreeSet::new();
    for &start in &nodes {
        // DFS restricted to nodes >= start finds each cycle once, rooted at its minimum.
        let mut stack = vec![(start, vec![start])];
        while let Some((cur, path)) = stack.pop() {
            for &next in adj.get(cur).into_iter().flatten() {
                if next == start {
                    found.insert(path.iter().map(|s| s.to_string()).collect::<Vec<_>>());
                } else if next > start && !path.contains(&next) && path.len() < 16 {
                    let mut p = path.clone();
                    p.push(next);
                    stack.push((next, p));
                }
            }
        }
    }
    found.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn emr() -> ConceptGraph {
        let mut g = ConceptGraph::new();
        for c in ["word", "phrase", "sentence", "pair"] {
            g.add_basic(c).unwrap();
        }
        g.add_decision("entity", "phrase").unwrap();
        g.add_decision("people", "entity").unwrap();
        g.add_decision("organization", "entity").unwrap();
        g.add_decision("location", "entity").unwrap();
        g.add_decision("work_for", "pair").unwrap();
        g.add_decision("located_in", "pair").unwrap();
        g.add_has_a("pair", &[("arg1", "phrase"), ("arg2", "phrase")]).unwrap();
        g.add_contains("sentence", "phrase").unwrap();
        g.add_contains("phrase", "word").unwrap();
        g
    }

    #[test]
    fn decision_parent_creates_is_a() {
        let g = emr();
        assert!(g.edges().iter().any(|e| e.kind == EdgeKind::IsA && e.src == "people" && e.dst == "entity"));
    }

    #[test]
    fn single_basic_concept() {
        let mut g = ConceptGraph::new();
        g.add_basic("word").unwrap();
        assert_eq!(g.concepts().len(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn duplicate_and_unknown_parent() {
        let mut g = emr();
        assert_eq!(
            g.add_decision("people", "entity").unwrap_err(),
            SchemaError::DuplicateName("people".into())
        );
        assert_eq!(g.add_decision("x", "nope").unwrap_err(), SchemaError::UnknownParent("nope".into()));
    }

    #[test]
    fn names_follow_identifier_rule() {
        let mut g = ConceptGraph::new();
        assert!(matches!(g.add_basic("1abc"), Err(SchemaError::InvalidName(_))));
        assert!(matches!(g.add_basic("a-b"), Err(SchemaError::InvalidName(_))));
        assert!(matches!(g.add_basic("ifL"), Err(SchemaError::InvalidName(_))));
        g.add_basic("_Word9").unwrap();
        g.add_basic("word9").unwrap();
        g.add_basic("Word9").unwrap();
    }

    #[test]
    fn has_a_edges_and_arity() {
        let g = emr();
        assert_eq!(g.has_a_args("pair").len(), 2);
        assert_eq!(g.concept("pair").unwrap().kind, ConceptKind::Compositional);

        let mut q = ConceptGraph::new();
        q.add_basic("question").unwrap().add_basic("symmetric").unwrap();
        q.add_has_a("symmetric", &[("arg1", "question"), ("arg2", "question")]).unwrap();
        assert_eq!(q.edges().len(), 2);

        let mut g = emr();
        g.add_basic("single").unwrap();
        assert_eq!(g.add_has_a("single", &[("arg1", "phrase")]).unwrap_err(), SchemaError::Arity("single".into()));
        assert!(matches!(
            g.add_has_a("single", &[("arg1", "phrase"), ("arg1", "word")]),
            Err(SchemaError::DuplicateArgName { .. })
        ));
        assert!(matches!(g.add_has_a("single", &[("a", "zzz"), ("b", "word")]), Err(SchemaError::UnknownConcept(_))));
        assert!(matches!(g.add_has_a("people", &[("a", "word"), ("b", "word")]), Err(SchemaError::KindMismatch { .. })));
    }

    #[test]
    fn contains_edges() {
        let mut g = ConceptGraph::new();
        g.add_basic("paragraph").unwrap().add_basic("question").unwrap();
        g.add_contains("paragraph", "question").unwrap();
        assert!(g.has_contains("paragraph", "question"));
        assert!(matches!(g.add_contains("paragraph", "nope"), Err(SchemaError::UnknownConcept(_))));

        g.add_contains("question", "question").unwrap();
        let report = g.validate();
        assert!(report.is_ok());
        assert_eq!(report.warnings().count(), 1);
    }

    #[test]
    fn validate_clean_emr() {
        assert!(emr().validate().is_empty());
    }

    #[test]
    fn validate_empty_graph() {
        let r = ConceptGraph::new().validate();
        assert_eq!(r.len(), 1);
        assert_eq!(r.issues[0].message, "no concepts declared");
    }

    #[test]
    fn validate_is_a_cycle() {
        let concepts = vec![
            Concept { name: "a".into(), kind: ConceptKind::Decision, parent: Some("b".into()) },
            Concept { name: "b".into(), kind: ConceptKind::Decision, parent: Some("a".into()) },
        ];
        let edges = vec![
            Edge { kind: EdgeKind::IsA, src: "a".into(), dst: "b".into(), arg_name: None },
            Edge { kind: EdgeKind::IsA, src: "b".into(), dst: "a".into(), arg_name: None },
        ];
        let g = ConceptGraph::from_parts(concepts, edges);
        let r = g.validate();
        let cycles: Vec<_> = r.issues.iter().filter(|i| i.kind == IssueKind::IsACycle).collect();
        assert_eq!(cycles.len(), 1, "{r:?}");
        assert_eq!(r.len(), 1, "{r:?}");
        // ancestors still terminates
        assert_eq!(g.ancestors("a").unwrap(), vec!["b".to_string()]);
    }

    #[test]
    fn validate_decision_without_parent() {
        let g = ConceptGraph::from_parts(
            vec![Concept { name: "orphan".into(), kind: ConceptKind::Decision, parent: None }],
            vec![],
        );
        let r = g.validate();
        assert_eq!(r.len(), 1);
        assert_eq!(r.issues[0].kind, IssueKind::KindMismatch);
    }

    #[test]
    fn subtype_queries() {
        let g = emr();
        assert!(g.is_subtype("people", "entity").unwrap());
        assert!(g.is_subtype("people", "phrase").unwrap());
        assert!(!g.is_subtype("entity", "people").unwrap());
        assert!(g.is_subtype("pair", "pair").unwrap());
        assert!(matches!(g.is_subtype("people", "nope"), Err(SchemaError::UnknownConcept(_))));
        assert_eq!(g.ancestors("people").unwrap(), vec!["entity".to_string(), "phrase".to_string()]);
        assert_eq!(g.base("people").unwrap(), "phrase");
        assert_eq!(g.base("work_for").unwrap(), "pair");
        assert_eq!(
            g.common_ancestor(&["people", "organization", "location"]).unwrap().as_deref(),
            Some("entity")
        );
        assert_eq!(g.common_ancestor(&["people", "work_for"]).unwrap(), None);
    }
}
