use std::fmt;

use serde::{Deserialize, Serialize};

/// One step of a relational path.
///
/// `Name` is resolved against the schema: an argument name of the current
/// compositional concept moves to that member, a concept name linked by
/// `contains` moves to the children (or, reversed, to the parents).
/// `Via` hops across a compositional concept: from a node filling one
/// argument of `relation` to the node filling `arg`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathStep {
    Name(String),
    Via { relation: String, arg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub root_var: String,
    pub steps: Vec<PathStep>,
}

impl Path {
    pub fn new(root_var: &str, steps: &[&str]) -> Self {
        let steps = steps
            .iter()
            .map(|s| match s.split_once('.') {
                Some((relation, arg)) => {
                    PathStep::Via { relation: relation.to_string(), arg: arg.to_string() }
                }
                None => PathStep::Name(s.to_string()),
            })
            .collect();
        Path { root_var: root_var.to_string(), steps }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub concept: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<Path>,
}

/// A logical-constraint expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LcExpr {
    Atom(Atom),
    Not(Box<LcExpr>),
    And(Vec<LcExpr>),
    Or(Vec<LcExpr>),
    If(Box<LcExpr>, Box<LcExpr>),
    Exists(Box<LcExpr>),
    AtMost { k: usize, children: Vec<LcExpr> },
    Disjoint(Vec<String>),
}

impl LcExpr {
    /// `concept('var')`
    pub fn bind(concept: &str, var: &str) -> Self {
        LcExpr::Atom(Atom { concept: concept.into(), var: Some(var.into()), path: None })
    }

    /// `concept(path=(root, steps...))`
    pub fn at(concept: &str, root: &str, steps: &[&str]) -> Self {
        LcExpr::Atom(Atom { concept: concept.into(), var: None, path: Some(Path::new(root, steps)) })
    }

    pub fn negate(e: LcExpr) -> Self {
        LcExpr::Not(Box::new(e))
    }

    pub fn implies(a: LcExpr, b: LcExpr) -> Self {
        LcExpr::If(Box::new(a), Box::new(b))
    }

    pub fn exists(e: LcExpr) -> Self {
        LcExpr::Exists(Box::new(e))
    }

    /// Direct sub-expressions.
    pub fn children(&self) -> Vec<&LcExpr> {
        match self {
            LcExpr::Atom(_) | LcExpr::Disjoint(_) => vec![],
            LcExpr::Not(e) | LcExpr::Exists(e) => vec![e],
            LcExpr::If(a, b) => vec![a, b],
            LcExpr::And(xs) | LcExpr::Or(xs) | LcExpr::AtMost { children: xs, .. } => xs.iter().collect(),
        }
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        if let LcExpr::Atom(a) = self {
            out.push(a);
        }
        for c in self.children() {
            c.collect_atoms(out);
        }
    }
}

fn write_var(f: &mut fmt::Formatter<'_>, v: &str) -> fmt::Result {
    if v.contains('\'') {
        write!(f, "\"{v}\"")
    } else {
        write!(f, "'{v}'")
    }
}

impl fmt::Display for PathStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathStep::Name(n) => f.write_str(n),
            PathStep::Via { relation, arg } => write!(f, "{relation}.{arg}"),
        }
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("path=(")?;
        write_var(f, &self.root_var)?;
        for s in &self.steps {
            write!(f, ", {s}")?;
        }
        f.write_str(")")
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.concept)?;
        if let Some(v) = &self.var {
            write_var(f, v)?;
            if self.path.is_some() {
                f.write_str(", ")?;
            }
        }
        if let Some(p) = &self.path {
            write!(f, "{p}")?;
        }
        f.write_str(")")
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, name: &str, xs: &[LcExpr]) -> fmt::Result {
    write!(f, "{name}(")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{x}")?;
    }
    f.write_str(")")
}

/// Canonical text form; parsing it yields the same tree.
impl fmt::Display for LcExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LcExpr::Atom(a) => write!(f, "{a}"),
            LcExpr::Not(e) => write!(f, "notL({e})"),
            LcExpr::And(xs) => write_list(f, "andL", xs),
            LcExpr::Or(xs) => write_list(f, "orL", xs),
            LcExpr::If(a, b) => write!(f, "ifL({a}, {b})"),
            LcExpr::Exists(e) => write!(f, "existsL({e})"),
            LcExpr::AtMost { k, children } => {
                write!(f, "atMostL({k}")?;
                for c in children {
                    write!(f, ", {c}")?;
                }
                f.write_str(")")
            }
            LcExpr::Disjoint(cs) => write!(f, "disjoint({})", cs.join(", ")),
        }
    }
}

/// Canonical text of an expression.
pub fn pretty(expr: &LcExpr) -> String {
    expr.to_string()
}
