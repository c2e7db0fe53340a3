//! Recursive-descent parser for `.dk` files.
//!
//! ```text
//! file       := stmt*
//! stmt       := decl | has_a | contains | expr            (each may end in `;`)
//! decl       := "concept" IDENT [":" IDENT]
//! has_a      := IDENT ["."] "has_a" "(" IDENT "=" IDENT ("," IDENT "=" IDENT)* ")"
//! contains   := IDENT "." "contains" "(" IDENT ")" | IDENT "contains" IDENT
//! expr       := "ifL" "(" expr "," expr ")"
//!             | ("andL" | "orL") "(" [expr ("," expr)*] ")"
//!             | ("notL" | "existsL") "(" expr ")"
//!             | "atMostL" "(" INT ("," expr)* ")"
//!             | "disjoint" "(" IDENT ("," IDENT)* ")"
//!             | IDENT "(" [STR] [","] ["path" "=" "(" STR ("," step)* ")"] ")"
//! step       := IDENT ["." IDENT]
//! ```

use super::ast::{Atom, LcExpr, Path, PathStep};
use super::lexer::{tokenize, Tok, Token};
use super::{Constraint, ConstraintSet, ParseError};
use crate::schema::{ConceptGraph, RESERVED_WORDS};

pub(crate) struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    pub(crate) fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser { toks: tokenize(src)?, pos: 0 })
    }

    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> ParseError {
        let t = self.peek();
        ParseError::syntax(t.line, t.col, msg)
    }

    fn expect(&mut self, want: Tok) -> Result<Token, ParseError> {
        if self.peek().tok == want {
            Ok(self.next())
        } else {
            Err(self.err_here(format!("expected {}, found {}", want.describe(), self.peek().tok.describe())))
        }
    }

    fn ident(&mut self) -> Result<(String, usize, usize), ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Ident(s) => {
                self.next();
                Ok((s, t.line, t.col))
            }
            other => Err(self.err_here(format!("expected a name, found {}", other.describe()))),
        }
    }

    fn eat(&mut self, want: &Tok) -> bool {
        if &self.peek().tok == want {
            self.next();
            true
        } else {
            false
        }
    }

    pub(crate) fn parse_file(&mut self) -> Result<(ConceptGraph, ConstraintSet), ParseError> {
        let mut graph = ConceptGraph::new();
        let mut constraints = ConstraintSet::default();
        loop {
            while self.eat(&Tok::Semi) {}
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => break,
                Tok::Ident(w) if w == "concept" => {
                    self.next();
                    self.parse_decl(&mut graph)?;
                }
                Tok::Ident(_) => match (self.peek_at(1).clone(), self.peek_at(2).clone()) {
                    (Tok::Dot, Tok::Ident(kw)) if kw == "has_a" || kw == "contains" => {
                        let (name, ..) = self.ident()?;
                        self.next();
                        self.next();
                        if kw == "has_a" {
                            self.parse_has_a(&mut graph, &name, t.line, t.col)?;
                        } else {
                            self.expect(Tok::LParen)?;
                            let (child, ..) = self.ident()?;
                            self.expect(Tok::RParen)?;
                            graph
                                .add_contains(&name, &child)
                                .map_err(|e| ParseError::schema(t.line, t.col, e))?;
                        }
                    }
                    (Tok::Ident(kw), _) if kw == "has_a" => {
                        let (name, ..) = self.ident()?;
                        self.next();
                        self.parse_has_a(&mut graph, &name, t.line, t.col)?;
                    }
                    (Tok::Ident(kw), _) if kw == "contains" => {
                        let (name, ..) = self.ident()?;
                        self.next();
                        let (child, ..) = self.ident()?;
                        graph.add_contains(&name, &child).map_err(|e| ParseError::schema(t.line, t.col, e))?;
                    }
                    (Tok::LParen, _) => {
                        let expr = self.parse_expr()?;
                        let id = format!("lc{}", constraints.len());
                        constraints.push(Constraint { id, expr, line: t.line, col: t.col });
                    }
                    (other, _) => {
                        self.next();
                        return Err(self.err_here(format!(
                            "expected `(`, `has_a` or `contains`, found {}",
                            other.describe()
                        )));
                    }
                },
                other => return Err(self.err_here(format!("unexpected {}", other.describe()))),
            }
        }
        Ok((graph, constraints))
    }

    fn parse_decl(&mut self, graph: &mut ConceptGraph) -> Result<(), ParseError> {
        let (name, line, col) = self.ident()?;
        let parent = if self.eat(&Tok::Colon) { Some(self.ident()?.0) } else { None };
        let res = match &parent {
            Some(p) => graph.add_decision(&name, p),
            None => graph.add_basic(&name),
        };
        res.map(|_| ()).map_err(|e| ParseError::schema(line, col, e))
    }

    fn parse_has_a(
        &mut self,
        graph: &mut ConceptGraph,
        name: &str,
        line: usize,
        col: usize,
    ) -> Result<(), ParseError> {
        self.expect(Tok::LParen)?;
        let mut args = Vec::new();
        loop {
            let (arg, ..) = self.ident()?;
            self.expect(Tok::Eq)?;
            let (target, ..) = self.ident()?;
            args.push((arg, target));
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen)?;
        let borrowed: Vec<(&str, &str)> = args.iter().map(|(a, t)| (a.as_str(), t.as_str())).collect();
        graph.add_has_a(name, &borrowed).map(|_| ()).map_err(|e| ParseError::schema(line, col, e))
    }

    fn expr_list(&mut self) -> Result<Vec<LcExpr>, ParseError> {
        let mut xs = Vec::new();
        if self.peek().tok == Tok::RParen {
            return Ok(xs);
        }
        loop {
            xs.push(self.parse_expr()?);
            if !self.eat(&Tok::Comma) {
                return Ok(xs);
            }
        }
    }

    pub(crate) fn parse_expr(&mut self) -> Result<LcExpr, ParseError> {
        let (head, ..) = self.ident()?;
        self.expect(Tok::LParen)?;
        let expr = match head.as_str() {
            "ifL" => {
                let a = self.parse_expr()?;
                self.expect(Tok::Comma)?;
                let b = self.parse_expr()?;
                LcExpr::If(Box::new(a), Box::new(b))
            }
            "andL" => LcExpr::And(self.expr_list()?),
            "orL" => LcExpr::Or(self.expr_list()?),
            "notL" => LcExpr::Not(Box::new(self.parse_expr()?)),
            "existsL" => LcExpr::Exists(Box::new(self.parse_expr()?)),
            "atMostL" => {
                let k = match self.peek().tok.clone() {
                    Tok::Int(k) => {
                        self.next();
                        k
                    }
                    other => {
                        return Err(self.err_here(format!(
                            "atMostL expects an integer bound first, found {}",
                            other.describe()
                        )));
                    }
                };
                let mut children = Vec::new();
                while self.eat(&Tok::Comma) {
                    children.push(self.parse_expr()?);
                }
                LcExpr::AtMost { k, children }
            }
            "disjoint" => {
                let mut names = vec![self.ident()?.0];
                while self.eat(&Tok::Comma) {
                    names.push(self.ident()?.0);
                }
                LcExpr::Disjoint(names)
            }
            w if RESERVED_WORDS.contains(&w) => {
                return Err(self.err_here(format!("`{w}` cannot be used as a constraint")));
            }
            _ => self.parse_atom_body(head)?,
        };
        self.expect(Tok::RParen)?;
        Ok(expr)
    }

    fn parse_atom_body(&mut self, concept: String) -> Result<LcExpr, ParseError> {
        let mut var = None;
        if let Tok::Str(s) = &self.peek().tok {
            var = Some(s.clone());
            self.next();
            if self.peek().tok == Tok::Comma {
                self.next();
            }
        }
        let mut path = None;
        if matches!(&self.peek().tok, Tok::Ident(w) if w == "path") {
            self.next();
            self.expect(Tok::Eq)?;
            self.expect(Tok::LParen)?;
            let root_var = match self.peek().tok.clone() {
                Tok::Str(s) => {
                    self.next();
                    s
                }
                other => {
                    return Err(self.err_here(format!(
                        "path must start with a quoted variable, found {}",
                        other.describe()
                    )));
                }
            };
            let mut steps = Vec::new();
            while self.eat(&Tok::Comma) {
                let (first, ..) = self.ident()?;
                if self.eat(&Tok::Dot) {
                    let (arg, ..) = self.ident()?;
                    steps.push(PathStep::Via { relation: first, arg });
                } else {
                    steps.push(PathStep::Name(first));
                }
            }
            self.expect(Tok::RParen)?;
            path = Some(Path { root_var, steps });
        }
        Ok(LcExpr::Atom(Atom { concept, var, path }))
    }

    pub(crate) fn expect_eof(&mut self) -> Result<(), ParseError> {
        while self.eat(&Tok::Semi) {}
        match self.peek().tok {
            Tok::Eof => Ok(()),
            ref other => Err(self.err_here(format!("unexpected {} after expression", other.describe()))),
        }
    }
}
