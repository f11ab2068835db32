//! Templated rule language: facts, rules with optional negated conditions, and
//! queries.
//!
//! The accepted grammar is
//!
//! ```text
//! fact   := ENTITY "is" ATTR "."
//! rule   := "If" cond ("and" cond)* "then" concl "."
//! cond   := SUBJ "is" ["not"] ATTR
//! concl  := SUBJ "is" ATTR
//! query  := ENTITY "is" ["not"] ATTR "."
//! SUBJ   := ENTITY | "someone"
//! ENTITY := /[A-Z][a-z]*/
//! ATTR   := /[a-z]+/
//! ```
//!
//! Canonical text has exactly one space between tokens and a trailing period.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node id reserved for the negation-as-failure node of proof graphs.
pub const NAF_ID: &str = "NAF";

const KEYWORDS: &[&str] = &["is", "not", "and", "then", "someone", "if"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Atom {
    pub entity: String,
    pub attribute: String,
}

impl Atom {
    pub fn new(entity: impl Into<String>, attribute: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.attribute, self.entity)
    }
}

/// Subject of a rule literal: the shared rule variable or a named entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Someone,
    Entity(String),
}

impl Subject {
    /// Binds the rule variable to `entity`; named subjects are unchanged.
    pub fn ground<'a>(&'a self, entity: &'a str) -> &'a str {
        match self {
            Subject::Someone => entity,
            Subject::Entity(name) => name,
        }
    }

    fn render(&self) -> &str {
        match self {
            Subject::Someone => "someone",
            Subject::Entity(name) => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub subject: Subject,
    pub attribute: String,
    pub negated: bool,
}

impl Literal {
    pub fn positive(subject: Subject, attribute: impl Into<String>) -> Self {
        Self {
            subject,
            attribute: attribute.into(),
            negated: false,
        }
    }

    pub fn negative(subject: Subject, attribute: impl Into<String>) -> Self {
        Self {
            subject,
            attribute: attribute.into(),
            negated: true,
        }
    }

    pub fn ground(&self, entity: &str) -> Atom {
        Atom::new(self.subject.ground(entity), self.attribute.clone())
    }

    fn render(&self) -> String {
        if self.negated {
            format!("{} is not {}", self.subject.render(), self.attribute)
        } else {
            format!("{} is {}", self.subject.render(), self.attribute)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub body: Vec<Literal>,
    pub head: Literal,
}

impl Rule {
    /// True when the rule mentions the shared variable anywhere.
    pub fn has_variable(&self) -> bool {
        std::iter::once(&self.head)
            .chain(&self.body)
            .any(|l| l.subject == Subject::Someone)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatementKind {
    Fact,
    Rule,
}

/// Type of a proof-graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Fact,
    Rule,
    Naf,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StatementBody {
    Fact(Atom),
    Rule(Rule),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Statement {
    pub id: String,
    pub body: StatementBody,
    /// Canonical surface text.
    pub text: String,
}

impl Statement {
    pub fn fact(id: impl Into<String>, atom: Atom) -> Self {
        let body = StatementBody::Fact(atom);
        let text = render_body(&body);
        Self {
            id: id.into(),
            body,
            text,
        }
    }

    pub fn rule(id: impl Into<String>, body: Vec<Literal>, head: Literal) -> Self {
        let body = StatementBody::Rule(Rule { body, head });
        let text = render_body(&body);
        Self {
            id: id.into(),
            body,
            text,
        }
    }

    pub fn kind(&self) -> StatementKind {
        match self.body {
            StatementBody::Fact(_) => StatementKind::Fact,
            StatementBody::Rule(_) => StatementKind::Rule,
        }
    }

    pub fn as_fact(&self) -> Option<&Atom> {
        match &self.body {
            StatementBody::Fact(atom) => Some(atom),
            StatementBody::Rule(_) => None,
        }
    }

    pub fn as_rule(&self) -> Option<&Rule> {
        match &self.body {
            StatementBody::Rule(rule) => Some(rule),
            StatementBody::Fact(_) => None,
        }
    }
}

/// An ordered list of statements. Order fixes the node indices of the
/// graphical model (index 0 is the NAF node, statement `k` is node `k + 1`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Theory {
    statements: Vec<Statement>,
}

impl Theory {
    pub fn new(statements: Vec<Statement>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &statements {
            if s.id.is_empty() || s.id == NAF_ID {
                return Err(Error::InvalidTheory(format!("reserved or empty id `{}`", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidTheory(format!("duplicate id `{}`", s.id)));
            }
        }
        Ok(Self { statements })
    }

    /// Parses `(id, text)` pairs.
    pub fn parse<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let statements = items
            .into_iter()
            .map(|(id, text)| parse_statement(text, id))
            .collect::<Result<Vec<_>>>()?;
        Self::new(statements)
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Statement> {
        self.statements.iter().find(|s| s.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.statements.iter().position(|s| s.id == id)
    }

    /// Model node ids: `NAF` first, then statement ids in order.
    pub fn node_ids(&self) -> Vec<String> {
        std::iter::once(NAF_ID.to_string())
            .chain(self.statements.iter().map(|s| s.id.clone()))
            .collect()
    }

    pub fn node_kinds(&self) -> Vec<NodeKind> {
        std::iter::once(NodeKind::Naf)
            .chain(self.statements.iter().map(|s| match s.kind() {
                StatementKind::Fact => NodeKind::Fact,
                StatementKind::Rule => NodeKind::Rule,
            }))
            .collect()
    }

    /// Model node index of `id` (`NAF` is 0).
    pub fn node_index(&self, id: &str) -> Option<usize> {
        if id == NAF_ID {
            Some(0)
        } else {
            self.position(id).map(|p| p + 1)
        }
    }

    /// Every entity named anywhere in the theory, sorted.
    pub fn entities(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for s in &self.statements {
            match &s.body {
                StatementBody::Fact(a) => {
                    out.insert(a.entity.clone());
                }
                StatementBody::Rule(r) => {
                    for l in std::iter::once(&r.head).chain(&r.body) {
                        if let Subject::Entity(e) = &l.subject {
                            out.insert(e.clone());
                        }
                    }
                }
            }
        }
        out
    }

    /// Every attribute named anywhere in the theory, sorted.
    pub fn attributes(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for s in &self.statements {
            match &s.body {
                StatementBody::Fact(a) => {
                    out.insert(a.attribute.clone());
                }
                StatementBody::Rule(r) => {
                    for l in std::iter::once(&r.head).chain(&r.body) {
                        out.insert(l.attribute.clone());
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Query {
    pub atom: Atom,
    pub negated: bool,
    pub text: String,
}

impl Query {
    pub fn new(atom: Atom, negated: bool) -> Self {
        let text = render_query_parts(&atom, negated);
        Self {
            atom,
            negated,
            text,
        }
    }
}

pub fn render_statement(s: &Statement) -> String {
    render_body(&s.body)
}

pub fn render_query(q: &Query) -> String {
    render_query_parts(&q.atom, q.negated)
}

fn render_query_parts(atom: &Atom, negated: bool) -> String {
    if negated {
        format!("{} is not {}.", atom.entity, atom.attribute)
    } else {
        format!("{} is {}.", atom.entity, atom.attribute)
    }
}

fn render_body(body: &StatementBody) -> String {
    match body {
        StatementBody::Fact(a) => format!("{} is {}.", a.entity, a.attribute),
        StatementBody::Rule(r) => {
            let conds: Vec<String> = r.body.iter().map(Literal::render).collect();
            format!("If {} then {}.", conds.join(" and "), r.head.render())
        }
    }
}

pub fn parse_statement(text: &str, id: &str) -> Result<Statement> {
    let mut p = Parser::new(text)?;
    let body = if p.peek_word() == Some("If") {
        p.bump();
        let mut conds = vec![p.literal(true)?];
        while p.peek_word() == Some("and") {
            p.bump();
            conds.push(p.literal(true)?);
        }
        p.keyword("then")?;
        let head = p.literal(false)?;
        StatementBody::Rule(Rule { body: conds, head })
    } else {
        let entity = p.entity()?;
        p.keyword("is")?;
        let attribute = p.attribute()?;
        StatementBody::Fact(Atom { entity, attribute })
    };
    p.finish()?;
    let text = render_body(&body);
    Ok(Statement {
        id: id.to_string(),
        body,
        text,
    })
}

pub fn parse_query(text: &str) -> Result<Query> {
    let mut p = Parser::new(text)?;
    let entity = p.entity()?;
    p.keyword("is")?;
    let negated = p.peek_word() == Some("not");
    if negated {
        p.bump();
    }
    let attribute = p.attribute()?;
    p.finish()?;
    Ok(Query::new(Atom { entity, attribute }, negated))
}

/// Whitespace-normalized form of a grammar-valid string.
pub fn canonical(text: &str) -> Result<String> {
    match Parser::new(text)?.peek_word() {
        Some("If") => parse_statement(text, "_").map(|s| s.text),
        _ => match parse_statement(text, "_") {
            Ok(s) => Ok(s.text),
            Err(_) => parse_query(text).map(|q| q.text),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Word(&'a str),
    Period,
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self> {
        let bytes = text.as_bytes();
        let mut toks = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c == b'.' {
                toks.push((i, Tok::Period));
                i += 1;
            } else if c.is_ascii_alphabetic() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                toks.push((start, Tok::Word(&text[start..i])));
            } else {
                return Err(parse_error(i, format!("unexpected character {:?}", text[i..].chars().next().unwrap_or('?'))));
            }
        }
        Ok(Self {
            toks,
            pos: 0,
            end: text.len(),
        })
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn peek_word(&self) -> Option<&'a str> {
        match self.toks.get(self.pos) {
            Some((_, Tok::Word(w))) => Some(w),
            _ => None,
        }
    }

    fn bump(&mut self) {
        self.pos += 1;
    }

    fn word(&mut self, expected: &str) -> Result<&'a str> {
        match self.toks.get(self.pos) {
            Some((_, Tok::Word(w))) => {
                self.pos += 1;
                Ok(w)
            }
            Some((o, Tok::Period)) => Err(parse_error(*o, format!("expected {expected}, found `.`"))),
            None => Err(parse_error(self.end, format!("expected {expected}, found end of input"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        let at = self.offset();
        let w = self.word(&format!("`{kw}`"))?;
        if w == kw {
            Ok(())
        } else {
            Err(parse_error(at, format!("expected `{kw}`, found `{w}`")))
        }
    }

    fn entity(&mut self) -> Result<String> {
        let at = self.offset();
        let w = self.word("an entity")?;
        if is_entity(w) {
            Ok(w.to_string())
        } else {
            Err(parse_error(at, format!("expected an entity, found `{w}`")))
        }
    }

    fn attribute(&mut self) -> Result<String> {
        let at = self.offset();
        let w = self.word("an attribute")?;
        if is_attribute(w) {
            Ok(w.to_string())
        } else {
            Err(parse_error(at, format!("expected an attribute, found `{w}`")))
        }
    }

    fn subject(&mut self) -> Result<Subject> {
        let at = self.offset();
        let w = self.word("a subject")?;
        if w == "someone" {
            Ok(Subject::Someone)
        } else if is_entity(w) {
            Ok(Subject::Entity(w.to_string()))
        } else {
            Err(parse_error(at, format!("expected `someone` or an entity, found `{w}`")))
        }
    }

    fn literal(&mut self, allow_negation: bool) -> Result<Literal> {
        let subject = self.subject()?;
        self.keyword("is")?;
        let negated = if self.peek_word() == Some("not") {
            if !allow_negation {
                return Err(parse_error(self.offset(), "negated conclusions are not allowed"));
            }
            self.bump();
            true
        } else {
            false
        };
        let attribute = self.attribute()?;
        Ok(Literal {
            subject,
            attribute,
            negated,
        })
    }

    fn finish(&mut self) -> Result<()> {
        match self.toks.get(self.pos) {
            Some((_, Tok::Period)) => self.pos += 1,
            _ => return Err(parse_error(self.offset(), "expected `.`")),
        }
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some((o, _)) => Err(parse_error(*o, "unexpected input after `.`")),
        }
    }
}

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

fn is_entity(w: &str) -> bool {
    let mut chars = w.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_lowercase())
        && w != "If"
}

fn is_attribute(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase()) && !KEYWORDS.contains(&w)
}
