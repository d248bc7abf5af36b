//! SPARQL subset: basic graph patterns over labeled triples plus value
//! filters. Patterns and filters live inside one brace group, separated by
//! `.` tokens.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::lexer::{tokenize, Cursor, LexTok};
use super::{
    push_tok, CmpOp, Literal, ParseError, SerializedQuery, TokenRole, TokenSeq,
};

/// Slot of a triple pattern: a variable or a schema token (label, property
/// name, or rendered value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Token(String),
}

impl Term {
    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Token(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub var: String,
    pub op: CmpOp,
    pub literal: Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparqlQuery {
    pub select_vars: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
}

impl SparqlQuery {
    /// Variables bound by at least one triple pattern.
    pub fn bound_vars(&self) -> BTreeSet<&str> {
        self.patterns
            .iter()
            .flat_map(|p| p.terms())
            .filter_map(|t| t.as_var())
            .collect()
    }
}

/// `select ?v+ where { pattern ( . pattern | . filter ( ?v op lit ) )* }`
pub fn parse_sparql(text: &str) -> Result<SparqlQuery, ParseError> {
    let mut cur = Cursor::new(tokenize(text)?);
    cur.expect_keyword("select")?;

    let mut select_vars = Vec::new();
    while let Some(LexTok::Variable(v)) = cur.peek() {
        select_vars.push(v.clone());
        cur.next();
    }
    if select_vars.is_empty() {
        return Err(ParseError::Syntax {
            offset: cur.offset(),
            expected: "at least one variable".into(),
            found: cur.found(),
        });
    }

    cur.expect_keyword("where")?;
    cur.expect(&LexTok::LBrace, "`{`")?;

    let mut patterns = Vec::new();
    let mut filters = Vec::new();
    let mut saw_filter = false;
    loop {
        match cur.peek() {
            Some(LexTok::Word(w)) if w == "filter" => {
                cur.next();
                cur.expect(&LexTok::LParen, "`(` after filter")?;
                let var = match cur.next() {
                    Some(LexTok::Variable(v)) => v,
                    _ => {
                        return Err(ParseError::Syntax {
                            offset: cur.offset(),
                            expected: "filter variable".into(),
                            found: cur.found(),
                        })
                    }
                };
                let op = cur.expect_op()?;
                let lit = cur.expect_word("filter literal")?;
                cur.expect(&LexTok::RParen, "`)` closing filter")?;
                filters.push(Filter { var, op, literal: Literal::from_token(&lit) });
                saw_filter = true;
            }
            _ => {
                if saw_filter {
                    return Err(ParseError::Syntax {
                        offset: cur.offset(),
                        expected: "filter or `}` after filters".into(),
                        found: cur.found(),
                    });
                }
                let subject = parse_term(&mut cur)?;
                let predicate = parse_term(&mut cur)?;
                let object = parse_term(&mut cur)?;
                patterns.push(TriplePattern { subject, predicate, object });
            }
        }
        match cur.peek() {
            Some(LexTok::Dot) => {
                cur.next();
            }
            Some(LexTok::RBrace) => break,
            _ => {
                return Err(ParseError::Syntax {
                    offset: cur.offset(),
                    expected: "`.` or `}`".into(),
                    found: cur.found(),
                })
            }
        }
    }
    cur.expect(&LexTok::RBrace, "`}`")?;
    cur.expect_end()?;

    if patterns.is_empty() {
        return Err(ParseError::Constraint {
            offset: 1,
            msg: "at least one triple pattern required".into(),
        });
    }
    let query = SparqlQuery { select_vars, patterns, filters };
    let bound = query.bound_vars();
    for v in &query.select_vars {
        if !bound.contains(v.as_str()) {
            return Err(ParseError::Constraint {
                offset: 1,
                msg: format!("selected variable {v} never appears in a triple pattern"),
            });
        }
    }
    for f in &query.filters {
        if !bound.contains(f.var.as_str()) {
            return Err(ParseError::Constraint {
                offset: 1,
                msg: format!("filtered variable {} never appears in a triple pattern", f.var),
            });
        }
    }
    Ok(query)
}

fn parse_term(cur: &mut Cursor) -> Result<Term, ParseError> {
    match cur.peek() {
        Some(LexTok::Variable(v)) => {
            let v = v.clone();
            cur.next();
            Ok(Term::Var(v))
        }
        Some(LexTok::Word(w)) if !super::is_reserved_word(w) => {
            let w = w.clone();
            cur.next();
            Ok(Term::Token(w))
        }
        _ => Err(ParseError::Syntax {
            offset: cur.offset(),
            expected: "variable or schema token".into(),
            found: cur.found(),
        }),
    }
}

pub fn serialize_sparql(q: &SparqlQuery) -> SerializedQuery {
    let mut toks = Vec::new();
    let mut roles = Vec::new();
    push_tok(&mut toks, &mut roles, "select", TokenRole::Keyword);
    for v in &q.select_vars {
        push_tok(&mut toks, &mut roles, v, TokenRole::Variable);
    }
    push_tok(&mut toks, &mut roles, "where", TokenRole::Keyword);
    push_tok(&mut toks, &mut roles, "{", TokenRole::Punct);
    let mut first = true;
    for p in &q.patterns {
        if !first {
            push_tok(&mut toks, &mut roles, ".", TokenRole::Punct);
        }
        first = false;
        for term in p.terms() {
            match term {
                Term::Var(v) => push_tok(&mut toks, &mut roles, v, TokenRole::Variable),
                Term::Token(t) => push_tok(&mut toks, &mut roles, t, TokenRole::KbToken),
            }
        }
    }
    for f in &q.filters {
        push_tok(&mut toks, &mut roles, ".", TokenRole::Punct);
        push_tok(&mut toks, &mut roles, "filter", TokenRole::Keyword);
        push_tok(&mut toks, &mut roles, "(", TokenRole::Punct);
        push_tok(&mut toks, &mut roles, &f.var, TokenRole::Variable);
        push_tok(&mut toks, &mut roles, f.op.token(), TokenRole::Operator);
        push_tok(&mut toks, &mut roles, &f.literal.render(), TokenRole::Literal);
        push_tok(&mut toks, &mut roles, ")", TokenRole::Punct);
    }
    push_tok(&mut toks, &mut roles, "}", TokenRole::Punct);
    SerializedQuery { tokens: TokenSeq::new(toks), roles }
}
