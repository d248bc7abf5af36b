//! Grammars, parsers, and canonical serializers for the SQL and SPARQL
//! subsets.
//!
//! Parsing is total: any byte string either yields an AST or a structured
//! [`ParseError`] with a token offset — model output goes through the same
//! path as trusted text, so the parsers must survive arbitrary garbage.
//! Serialization is canonical and deterministic; the canonical token stream
//! joined with single spaces is the on-disk and in-corpus query format.

mod lexer;
mod sparql;
mod sql;

pub use lexer::{tokenize, LexTok};
pub use sparql::{parse_sparql, serialize_sparql, Filter, SparqlQuery, Term, TriplePattern};
pub use sql::{parse_sql, serialize_sql, Aggregator, Condition, SqlQuery, MAX_CONDITIONS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon;

/// Where a parse failed; `offset` counts tokens from 1.
#[derive(Debug, Error, PartialEq, Clone)]
pub enum ParseError {
    #[error("lexical error at token {offset}: unknown token {token:?}")]
    Lexical { offset: usize, token: String },
    #[error("syntax error at token {offset}: expected {expected}, found {found:?}")]
    Syntax { offset: usize, expected: String, found: String },
    #[error("syntax error at token {offset}: {msg}")]
    Constraint { offset: usize, msg: String },
}

/// Ordered tokens from the closed lexicon.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        TokenSeq(tokens)
    }

    pub fn from_strs(tokens: &[&str]) -> Self {
        TokenSeq(tokens.iter().map(|s| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }

    /// Plain-text rendering: tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.0.join(" ")
    }
}

impl std::fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text())
    }
}

impl std::ops::Index<usize> for TokenSeq {
    type Output = String;
    fn index(&self, i: usize) -> &String {
        &self.0[i]
    }
}

/// Comparison operator in conditions and filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Gt,
    Lt,
}

impl CmpOp {
    pub fn token(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
        }
    }

    pub fn from_token(t: &str) -> Option<Self> {
        match t {
            "=" => Some(CmpOp::Eq),
            ">" => Some(CmpOp::Gt),
            "<" => Some(CmpOp::Lt),
            _ => None,
        }
    }
}

/// A literal in a WHERE condition or FILTER: numeric if its surface form is
/// a plain decimal number, otherwise a bare word token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Num(f64),
    Word(String),
}

impl Literal {
    pub fn from_token(tok: &str) -> Literal {
        if is_plain_number(tok) {
            Literal::Num(tok.parse().expect("validated numeric surface form"))
        } else {
            Literal::Word(tok.to_string())
        }
    }

    pub fn render(&self) -> String {
        match self {
            Literal::Num(v) => {
                if v.fract() == 0.0 && v.abs() < 1e15 {
                    format!("{}", *v as i64)
                } else {
                    format!("{v}")
                }
            }
            Literal::Word(w) => w.clone(),
        }
    }
}

/// `-?digits(.digits)?` only; rejects exponents, infinities, and NaN so the
/// numeric literal space round-trips through canonical rendering.
pub fn is_plain_number(tok: &str) -> bool {
    let body = tok.strip_prefix('-').unwrap_or(tok);
    if body.is_empty() {
        return false;
    }
    let mut parts = body.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    match frac {
        None => true,
        Some(f) => !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()),
    }
}

/// Structural role of a serialized token, reported alongside the canonical
/// stream so downstream alignment never re-parses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenRole {
    Keyword,
    Punct,
    Operator,
    Variable,
    Table,
    Column,
    /// Non-variable slot of a triple pattern (entity, relation, or value).
    KbToken,
    Literal,
}

/// Canonical tokens plus per-token structural roles.
#[derive(Debug, Clone, PartialEq)]
pub struct SerializedQuery {
    pub tokens: TokenSeq,
    pub roles: Vec<TokenRole>,
}

impl SerializedQuery {
    /// Positions whose role references the schema structurally (tables,
    /// columns, triple-pattern slots).
    pub fn schema_identifier_positions(&self) -> Vec<(usize, TokenRole)> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, TokenRole::Table | TokenRole::Column | TokenRole::KbToken))
            .map(|(i, r)| (i, *r))
            .collect()
    }
}

pub(crate) fn push_tok(out: &mut Vec<String>, roles: &mut Vec<TokenRole>, tok: &str, role: TokenRole) {
    out.push(tok.to_string());
    roles.push(role);
}

/// Words that may not be used as identifiers inside query positions.
pub(crate) fn is_reserved_word(tok: &str) -> bool {
    lexicon::is_keyword(tok) || lexicon::is_punct(tok) || lexicon::is_operator(tok)
}
