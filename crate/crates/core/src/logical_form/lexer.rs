//! Whitespace-driven lexer over the closed lexicon.
//!
//! Chunks are whitespace-separated; a chunk that exactly matches a
//! punctuation mark or operator is that token, a chunk starting with `?` is
//! a variable, and anything else is a word (keyword or identifier/literal).
//! Canonical serializations always space-separate tokens, so this is exact
//! on canonical input and well-defined on everything else. Chunks that look
//! like special framing tokens (leading `<`) are lexical errors: the lexer
//! never produces specials from source text.

use crate::lexicon;

use super::ParseError;

/// One lexed token; `offset` is its index in the token stream.
#[derive(Debug, Clone, PartialEq)]
pub enum LexTok {
    Word(String),
    Variable(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Dot,
    Op(&'static str),
}

impl LexTok {
    pub fn surface(&self) -> String {
        match self {
            LexTok::Word(w) => w.clone(),
            LexTok::Variable(v) => v.clone(),
            LexTok::LParen => "(".into(),
            LexTok::RParen => ")".into(),
            LexTok::LBrace => "{".into(),
            LexTok::RBrace => "}".into(),
            LexTok::Dot => ".".into(),
            LexTok::Op(o) => (*o).into(),
        }
    }
}

pub fn tokenize(text: &str) -> Result<Vec<LexTok>, ParseError> {
    let mut out = Vec::new();
    for (idx, chunk) in text.split_whitespace().enumerate() {
        let offset = idx + 1;
        let tok = match chunk {
            "(" => LexTok::LParen,
            ")" => LexTok::RParen,
            "{" => LexTok::LBrace,
            "}" => LexTok::RBrace,
            "." => LexTok::Dot,
            "=" => LexTok::Op("="),
            ">" => LexTok::Op(">"),
            "<" => LexTok::Op("<"),
            _ => {
                if let Some(name) = chunk.strip_prefix('?') {
                    if name.is_empty() {
                        return Err(ParseError::Lexical { offset, token: chunk.into() });
                    }
                    LexTok::Variable(chunk.to_string())
                } else if chunk.starts_with('<') || lexicon::is_special(chunk) {
                    return Err(ParseError::Lexical { offset, token: chunk.into() });
                } else {
                    LexTok::Word(chunk.to_lowercase())
                }
            }
        };
        out.push(tok);
    }
    Ok(out)
}

/// Cursor with one-token lookahead shared by both parsers.
pub(crate) struct Cursor {
    toks: Vec<LexTok>,
    pos: usize,
}

impl Cursor {
    pub fn new(toks: Vec<LexTok>) -> Self {
        Cursor { toks, pos: 0 }
    }

    /// 1-based token position, matching error reporting.
    pub fn offset(&self) -> usize {
        self.pos + 1
    }

    pub fn peek(&self) -> Option<&LexTok> {
        self.toks.get(self.pos)
    }

    pub fn next(&mut self) -> Option<LexTok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn found(&self) -> String {
        self.peek().map(|t| t.surface()).unwrap_or_else(|| "end of input".into())
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(LexTok::Word(w)) if w == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ParseError::Syntax {
                offset: self.pos + 1,
                expected: format!("keyword `{kw}`"),
                found: self.found(),
            }),
        }
    }

    /// A word that is not reserved — an identifier or literal position.
    pub fn expect_word(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(LexTok::Word(w)) if !super::is_reserved_word(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => Err(ParseError::Syntax {
                offset: self.pos + 1,
                expected: what.to_string(),
                found: self.found(),
            }),
        }
    }

    pub fn expect_op(&mut self) -> Result<super::CmpOp, ParseError> {
        match self.peek() {
            Some(LexTok::Op(o)) => {
                let op = super::CmpOp::from_token(o).expect("lexer ops are comparison ops");
                self.pos += 1;
                Ok(op)
            }
            _ => Err(ParseError::Syntax {
                offset: self.pos + 1,
                expected: "comparison operator".into(),
                found: self.found(),
            }),
        }
    }

    pub fn expect(&mut self, tok: &LexTok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.pos + 1,
                expected: what.to_string(),
                found: self.found(),
            })
        }
    }

    pub fn expect_end(&mut self) -> Result<(), ParseError> {
        if self.peek().is_none() {
            Ok(())
        } else {
            Err(ParseError::Syntax {
                offset: self.pos + 1,
                expected: "end of input".into(),
                found: self.found(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_canonical_sql() {
        let toks = tokenize("select count ( name ) from company where founded > 1990").unwrap();
        assert_eq!(toks.len(), 11);
        assert_eq!(toks[2], LexTok::LParen);
        assert_eq!(toks[9], LexTok::Op(">"));
    }

    #[test]
    fn keeps_dotted_identifiers_whole() {
        let toks = tokenize("select no. from t").unwrap();
        assert_eq!(toks[1], LexTok::Word("no.".into()));
    }

    #[test]
    fn rejects_special_looking_chunks() {
        let err = tokenize("select <SEP> from t").unwrap_err();
        assert_eq!(err, ParseError::Lexical { offset: 2, token: "<SEP>".into() });
    }

    #[test]
    fn rejects_bare_question_mark() {
        assert!(tokenize("select ? where").is_err());
    }

    #[test]
    fn lexes_variables() {
        let toks = tokenize("select ?x where").unwrap();
        assert_eq!(toks[1], LexTok::Variable("?x".into()));
    }
}
