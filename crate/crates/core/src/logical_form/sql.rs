//! Single-table SQL subset: one select column with an optional aggregator
//! and up to four equality/comparison conditions.

use serde::{Deserialize, Serialize};

use super::lexer::{tokenize, Cursor, LexTok};
use super::{
    push_tok, CmpOp, Literal, ParseError, SerializedQuery, TokenRole, TokenSeq,
};

pub const MAX_CONDITIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    None,
    Max,
    Min,
    Count,
    Sum,
    Avg,
}

impl Aggregator {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            Aggregator::None => None,
            Aggregator::Max => Some("max"),
            Aggregator::Min => Some("min"),
            Aggregator::Count => Some("count"),
            Aggregator::Sum => Some("sum"),
            Aggregator::Avg => Some("avg"),
        }
    }

    fn from_keyword(kw: &str) -> Option<Self> {
        match kw {
            "max" => Some(Aggregator::Max),
            "min" => Some(Aggregator::Min),
            "count" => Some(Aggregator::Count),
            "sum" => Some(Aggregator::Sum),
            "avg" => Some(Aggregator::Avg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    pub op: CmpOp,
    pub literal: Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlQuery {
    pub aggregator: Aggregator,
    pub select_column: String,
    pub table: String,
    pub conditions: Vec<Condition>,
}

/// `select [agg (] column [)] from table [where col op lit (and ...)*]`
pub fn parse_sql(text: &str) -> Result<SqlQuery, ParseError> {
    let mut cur = Cursor::new(tokenize(text)?);
    cur.expect_keyword("select")?;

    let (aggregator, select_column) = match cur.peek() {
        Some(LexTok::Word(w)) => {
            if let Some(agg) = Aggregator::from_keyword(w) {
                cur.next();
                cur.expect(&LexTok::LParen, "`(` after aggregator")?;
                let col = cur.expect_word("column name")?;
                cur.expect(&LexTok::RParen, "`)` after aggregated column")?;
                (agg, col)
            } else {
                (Aggregator::None, cur.expect_word("column name")?)
            }
        }
        _ => {
            return Err(ParseError::Syntax {
                offset: cur.offset(),
                expected: "column name or aggregator".into(),
                found: cur.found(),
            })
        }
    };

    cur.expect_keyword("from")?;
    let table = cur.expect_word("table name")?;

    let mut conditions = Vec::new();
    if let Some(LexTok::Word(w)) = cur.peek() {
        if w == "where" {
            cur.next();
            loop {
                if conditions.len() == MAX_CONDITIONS {
                    return Err(ParseError::Constraint {
                        offset: cur.offset(),
                        msg: format!("at most {MAX_CONDITIONS} conditions"),
                    });
                }
                let column = cur.expect_word("condition column")?;
                let op = cur.expect_op()?;
                let lit = cur.expect_word("literal")?;
                conditions.push(Condition { column, op, literal: Literal::from_token(&lit) });
                match cur.peek() {
                    Some(LexTok::Word(w)) if w == "and" => {
                        cur.next();
                    }
                    _ => break,
                }
            }
        }
    }
    cur.expect_end()?;
    Ok(SqlQuery { aggregator, select_column, table, conditions })
}

/// Canonical serialization with per-token structural roles.
pub fn serialize_sql(q: &SqlQuery) -> SerializedQuery {
    let mut toks = Vec::new();
    let mut roles = Vec::new();
    push_tok(&mut toks, &mut roles, "select", TokenRole::Keyword);
    if let Some(kw) = q.aggregator.keyword() {
        push_tok(&mut toks, &mut roles, kw, TokenRole::Keyword);
        push_tok(&mut toks, &mut roles, "(", TokenRole::Punct);
        push_tok(&mut toks, &mut roles, &q.select_column, TokenRole::Column);
        push_tok(&mut toks, &mut roles, ")", TokenRole::Punct);
    } else {
        push_tok(&mut toks, &mut roles, &q.select_column, TokenRole::Column);
    }
    push_tok(&mut toks, &mut roles, "from", TokenRole::Keyword);
    push_tok(&mut toks, &mut roles, &q.table, TokenRole::Table);
    for (i, c) in q.conditions.iter().enumerate() {
        let kw = if i == 0 { "where" } else { "and" };
        push_tok(&mut toks, &mut roles, kw, TokenRole::Keyword);
        push_tok(&mut toks, &mut roles, &c.column, TokenRole::Column);
        push_tok(&mut toks, &mut roles, c.op.token(), TokenRole::Operator);
        push_tok(&mut toks, &mut roles, &c.literal.render(), TokenRole::Literal);
    }
    SerializedQuery { tokens: TokenSeq::new(toks), roles }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_condition_query() {
        let q = parse_sql("select name from company where founded > 1990").unwrap();
        assert_eq!(
            q,
            SqlQuery {
                aggregator: Aggregator::None,
                select_column: "name".into(),
                table: "company".into(),
                conditions: vec![Condition {
                    column: "founded".into(),
                    op: CmpOp::Gt,
                    literal: Literal::Num(1990.0),
                }],
            }
        );
    }

    #[test]
    fn serializes_count_query() {
        let q = SqlQuery {
            aggregator: Aggregator::Count,
            select_column: "name".into(),
            table: "company".into(),
            conditions: vec![],
        };
        let s = serialize_sql(&q);
        assert_eq!(s.tokens.text(), "select count ( name ) from company");
    }

    #[test]
    fn missing_column_is_a_syntax_error_at_token_two() {
        // `from` (token 2) is a reserved word where a column was required
        let err = parse_sql("select from where").unwrap_err();
        match err {
            ParseError::Syntax { offset, .. } => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let q = parse_sql("select avg ( size ) from city where name = oslo and size < 100").unwrap();
        let s = serialize_sql(&q);
        assert_eq!(parse_sql(&s.tokens.text()).unwrap(), q);
    }

    #[test]
    fn serialization_is_idempotent() {
        let text = "select name from company where founded > 1990";
        let once = serialize_sql(&parse_sql(text).unwrap());
        let twice = serialize_sql(&parse_sql(&once.tokens.text()).unwrap());
        assert_eq!(once, twice);
    }

    #[test]
    fn rejects_five_conditions() {
        let err = parse_sql(
            "select a from t where b = 1 and c = 2 and d = 3 and e = 4 and f = 5",
        )
        .unwrap_err();
        assert!(matches!(err, ParseError::Constraint { .. }));
    }

    #[test]
    fn roles_mark_schema_positions() {
        let s = serialize_sql(&parse_sql("select name from company where founded > 1990").unwrap());
        let idents = s.schema_identifier_positions();
        let toks: Vec<&str> = idents.iter().map(|(i, _)| s.tokens[*i].as_str()).collect();
        assert_eq!(toks, vec!["name", "company", "founded"]);
    }

    #[test]
    fn garbage_input_yields_structured_errors() {
        for junk in ["", "wibble", "select", "select ) from", "\u{1F980} select"] {
            assert!(parse_sql(junk).is_err());
        }
    }
}
