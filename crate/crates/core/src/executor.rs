//! In-memory evaluation of logical forms against schema instances.
//!
//! Execution accuracy compares denotations, so result sets are bags: row
//! order never matters, multiplicity always does. Executors are pure and
//! never panic on schema-violating queries — an unknown identifier is a
//! `SchemaReference` error, which the analysis layer reads as a
//! hallucination signal.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logical_form::{Aggregator, CmpOp, Literal, SparqlQuery, SqlQuery, Term};
use crate::schema::{
    ColumnType, DatabaseInstance, KnowledgeBase, PropValue, RelationalSchema, Value,
};

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("schema reference error: unknown {kind} {name:?}")]
    SchemaReference { kind: &'static str, name: String },
    #[error("type error: {0}")]
    Type(String),
}

/// Bag of result rows with a column/variable header. Equality is
/// order-insensitive and multiplicity-sensitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultSet {
    pub fn new(header: Vec<String>, rows: Vec<Vec<Value>>) -> Self {
        ResultSet { header, rows }
    }
}

/// True iff headers match and the row bags match under canonical typed
/// rendering.
pub fn result_equal(a: &ResultSet, b: &ResultSet) -> bool {
    if a.header != b.header || a.rows.len() != b.rows.len() {
        return false;
    }
    let key = |rows: &[Vec<Value>]| -> Vec<String> {
        let mut keys: Vec<String> = rows
            .iter()
            .map(|row| {
                row.iter().map(Value::typed_key).collect::<Vec<_>>().join("\u{1f}")
            })
            .collect();
        keys.sort();
        keys
    };
    key(&a.rows) == key(&b.rows)
}

fn literal_matches(lit: &Literal, value: &Value, op: CmpOp) -> Result<bool, ExecError> {
    match (value, lit) {
        (Value::Null, _) => Ok(false),
        (Value::Num(v), Literal::Num(l)) => Ok(match op {
            CmpOp::Eq => v == l,
            CmpOp::Gt => v > l,
            CmpOp::Lt => v < l,
        }),
        (Value::Text(t), Literal::Word(w)) => match op {
            CmpOp::Eq => Ok(t == w),
            _ => Err(ExecError::Type(format!(
                "ordering comparison on text value {t:?}"
            ))),
        },
        (Value::Num(_), Literal::Word(w)) => Err(ExecError::Type(format!(
            "literal {w:?} compared against a number column"
        ))),
        (Value::Text(t), Literal::Num(_)) => Err(ExecError::Type(format!(
            "numeric literal compared against text value {t:?}"
        ))),
    }
}

/// Filter rows by the conjunction of conditions, project the select column,
/// and apply the aggregator. Aggregates over an empty selection yield a
/// single NULL cell; COUNT yields 0.
pub fn execute_sql(
    q: &SqlQuery,
    schema: &RelationalSchema,
    db: &DatabaseInstance,
) -> Result<ResultSet, ExecError> {
    let table = schema.table(&q.table).ok_or_else(|| ExecError::SchemaReference {
        kind: "table",
        name: q.table.clone(),
    })?;
    let select_idx =
        table.column_index(&q.select_column).ok_or_else(|| ExecError::SchemaReference {
            kind: "column",
            name: q.select_column.clone(),
        })?;
    let cond_idx: Vec<usize> = q
        .conditions
        .iter()
        .map(|c| {
            table.column_index(&c.column).ok_or_else(|| ExecError::SchemaReference {
                kind: "column",
                name: c.column.clone(),
            })
        })
        .collect::<Result<_, _>>()?;

    let select_ty = table.columns[select_idx].ty;
    if !matches!(q.aggregator, Aggregator::None | Aggregator::Count)
        && select_ty != ColumnType::Number
    {
        return Err(ExecError::Type(format!(
            "aggregator {:?} over text column {:?}",
            q.aggregator, q.select_column
        )));
    }

    let empty = Vec::new();
    let rows = db.rows.get(&crate::schema::normalize(&q.table)).unwrap_or(&empty);
    let mut selected: Vec<&Value> = Vec::new();
    'rows: for row in rows {
        for (cond, &idx) in q.conditions.iter().zip(&cond_idx) {
            if !literal_matches(&cond.literal, &row[idx], cond.op)? {
                continue 'rows;
            }
        }
        selected.push(&row[select_idx]);
    }

    let header = match q.aggregator.keyword() {
        Some(kw) => vec![format!("{kw}({})", q.select_column)],
        None => vec![q.select_column.clone()],
    };
    let rows = match q.aggregator {
        Aggregator::None => selected.into_iter().map(|v| vec![v.clone()]).collect(),
        Aggregator::Count => vec![vec![Value::Num(selected.len() as f64)]],
        agg => {
            let nums: Vec<f64> = selected
                .iter()
                .filter_map(|v| match v {
                    Value::Num(n) => Some(*n),
                    _ => None,
                })
                .collect();
            let cell = if nums.is_empty() {
                Value::Null
            } else {
                match agg {
                    Aggregator::Sum => Value::Num(nums.iter().sum()),
                    Aggregator::Avg => Value::Num(nums.iter().sum::<f64>() / nums.len() as f64),
                    Aggregator::Max => Value::Num(nums.iter().cloned().fold(f64::MIN, f64::max)),
                    Aggregator::Min => Value::Num(nums.iter().cloned().fold(f64::MAX, f64::min)),
                    _ => unreachable!(),
                }
            };
            vec![vec![cell]]
        }
    };
    Ok(ResultSet::new(header, rows))
}

/// A value bound to a SPARQL variable: node labels stay text, property
/// values keep their type so filters can compare numerically.
fn object_value(kb: &KnowledgeBase, token: &str) -> Value {
    match kb.typed_value(token) {
        Some(PropValue::Int(v)) => Value::Num(v as f64),
        _ => Value::Text(token.to_string()),
    }
}

/// Backtracking join of the triple patterns over edge and property triples,
/// then filters, then projection onto the selected variables.
pub fn execute_sparql(q: &SparqlQuery, kb: &KnowledgeBase) -> Result<ResultSet, ExecError> {
    let vocab = crate::schema::kb_vocabulary(kb);
    for p in &q.patterns {
        for term in p.terms() {
            if let Term::Token(t) = term {
                if !vocab.contains(t) {
                    return Err(ExecError::SchemaReference {
                        kind: "schema token",
                        name: t.clone(),
                    });
                }
            }
        }
    }

    let triples = kb.triples();
    let mut bindings: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for pattern in &q.patterns {
        let mut extended = Vec::new();
        for binding in &bindings {
            for triple in &triples {
                if let Some(next) = try_extend(binding, pattern, triple) {
                    extended.push(next);
                }
            }
        }
        bindings = extended;
        if bindings.is_empty() {
            break;
        }
    }

    let mut rows = Vec::new();
    'bindings: for binding in &bindings {
        for f in &q.filters {
            let token = lookup(binding, &f.var).expect("filter variables validated at parse");
            let value = object_value(kb, token);
            if !literal_matches(&f.literal, &value, f.op)? {
                continue 'bindings;
            }
        }
        let row: Vec<Value> = q
            .select_vars
            .iter()
            .map(|v| {
                let token = lookup(binding, v).expect("selected variables validated at parse");
                object_value(kb, token)
            })
            .collect();
        rows.push(row);
    }
    Ok(ResultSet::new(q.select_vars.clone(), rows))
}

fn lookup<'a>(binding: &'a [(String, String)], var: &str) -> Option<&'a str> {
    binding.iter().find(|(v, _)| v == var).map(|(_, t)| t.as_str())
}

fn try_extend(
    binding: &[(String, String)],
    pattern: &crate::logical_form::TriplePattern,
    triple: &[String; 3],
) -> Option<Vec<(String, String)>> {
    let mut next = binding.to_vec();
    for (term, actual) in pattern.terms().into_iter().zip(triple) {
        match term {
            Term::Token(t) => {
                if t != actual {
                    return None;
                }
            }
            Term::Var(v) => match lookup(&next, v) {
                Some(bound) => {
                    if bound != actual {
                        return None;
                    }
                }
                None => next.push((v.clone(), actual.clone())),
            },
        }
    }
    Some(next)
}
