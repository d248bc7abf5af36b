//! Independent reference implementations used to cross-check the library:
//! a plain vocabulary-membership scan for anchors, a naive row-scan SQL
//! evaluator, and a cartesian-product SPARQL matcher. These deliberately
//! share no code with the implementations they check.

#![allow(dead_code)]

use semanchor::executor::ResultSet;
use semanchor::logical_form::{
    Aggregator, CmpOp, Literal, SparqlQuery, SqlQuery, Term, TokenSeq,
};
use semanchor::schema::{
    ColumnType, DatabaseInstance, KnowledgeBase, PropValue, RelationalSchema, SchemaVocabulary,
    Value,
};

/// Anchor positions by brute-force membership test of every token.
pub fn scan_anchor_positions(main: &TokenSeq, vocab: &SchemaVocabulary) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, tok) in main.iter().enumerate() {
        if vocab.contains(tok) {
            out.push(i);
        }
    }
    out
}

fn value_satisfies(value: &Value, op: CmpOp, lit: &Literal) -> Option<bool> {
    match (value, lit) {
        (Value::Null, _) => Some(false),
        (Value::Num(v), Literal::Num(l)) => Some(match op {
            CmpOp::Eq => v == l,
            CmpOp::Gt => v > l,
            CmpOp::Lt => v < l,
        }),
        (Value::Text(t), Literal::Word(w)) => match op {
            CmpOp::Eq => Some(t == w),
            _ => None,
        },
        _ => None,
    }
}

/// Naive SQL evaluation: re-resolve names per row, scan everything.
/// Returns None on any schema or type violation.
pub fn row_scan_sql(
    q: &SqlQuery,
    schema: &RelationalSchema,
    db: &DatabaseInstance,
) -> Option<ResultSet> {
    let table = schema.tables.iter().find(|t| t.name == q.table)?;
    let col_of = |name: &str| table.columns.iter().position(|c| c.name == name);
    let select = col_of(&q.select_column)?;
    if !matches!(q.aggregator, Aggregator::None | Aggregator::Count)
        && table.columns[select].ty != ColumnType::Number
    {
        return None;
    }
    // resolve condition columns up front, matching the executor's
    // validation even over empty tables
    for cond in &q.conditions {
        col_of(&cond.column)?;
    }
    let empty = Vec::new();
    let rows = db.rows.get(&q.table).unwrap_or(&empty);
    let mut picked: Vec<Value> = Vec::new();
    for row in rows {
        let mut ok = true;
        for cond in &q.conditions {
            let ci = col_of(&cond.column)?;
            match value_satisfies(&row[ci], cond.op, &cond.literal) {
                Some(true) => {}
                Some(false) => {
                    ok = false;
                    break;
                }
                None => return None,
            }
        }
        if ok {
            picked.push(row[select].clone());
        }
    }
    let header = match q.aggregator.keyword() {
        Some(kw) => vec![format!("{kw}({})", q.select_column)],
        None => vec![q.select_column.clone()],
    };
    let rows = match q.aggregator {
        Aggregator::None => picked.into_iter().map(|v| vec![v]).collect(),
        Aggregator::Count => vec![vec![Value::Num(picked.len() as f64)]],
        agg => {
            let nums: Vec<f64> = picked
                .iter()
                .filter_map(|v| if let Value::Num(n) = v { Some(*n) } else { None })
                .collect();
            let cell = if nums.is_empty() {
                Value::Null
            } else {
                match agg {
                    Aggregator::Sum => Value::Num(nums.iter().sum()),
                    Aggregator::Avg => Value::Num(nums.iter().sum::<f64>() / nums.len() as f64),
                    Aggregator::Max => {
                        Value::Num(nums.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
                    }
                    Aggregator::Min => {
                        Value::Num(nums.iter().fold(f64::INFINITY, |a, &b| a.min(b)))
                    }
                    _ => unreachable!(),
                }
            };
            vec![vec![cell]]
        }
    };
    Some(ResultSet::new(header, rows))
}

fn term_token(t: &Term) -> Option<&str> {
    match t {
        Term::Token(s) => Some(s),
        Term::Var(_) => None,
    }
}

fn term_var(t: &Term) -> Option<&str> {
    match t {
        Term::Var(v) => Some(v),
        Term::Token(_) => None,
    }
}

/// Cartesian-product SPARQL matching: independently list each pattern's
/// matching triples, enumerate every combination, and keep the consistent
/// ones. Exponential, fine for test-sized KBs.
pub fn nested_loop_sparql(q: &SparqlQuery, kb: &KnowledgeBase) -> Option<ResultSet> {
    let triples = kb.triples();
    let vocab = semanchor::schema::kb_vocabulary(kb);
    for p in &q.patterns {
        for term in [&p.subject, &p.predicate, &p.object] {
            if let Some(tok) = term_token(term) {
                if !vocab.contains(tok) {
                    return None;
                }
            }
        }
    }

    // per-pattern candidate triples by slotwise comparison
    let mut candidates: Vec<Vec<&[String; 3]>> = Vec::new();
    for p in &q.patterns {
        let matches: Vec<&[String; 3]> = triples
            .iter()
            .filter(|t| {
                [&p.subject, &p.predicate, &p.object]
                    .iter()
                    .zip(t.iter())
                    .all(|(term, actual)| term_token(term).map_or(true, |tok| tok == actual))
            })
            .collect();
        candidates.push(matches);
    }

    let typed = |tok: &str| -> Value {
        match kb.typed_value(tok) {
            Some(PropValue::Int(v)) => Value::Num(v as f64),
            _ => Value::Text(tok.to_string()),
        }
    };

    // enumerate the cartesian product of candidates
    let mut rows: Vec<Vec<Value>> = Vec::new();
    let mut index = vec![0usize; candidates.len()];
    'outer: loop {
        // check consistency of the current combination
        let mut assignment: Vec<(String, String)> = Vec::new();
        let mut consistent = true;
        for (pi, p) in q.patterns.iter().enumerate() {
            if candidates[pi].is_empty() {
                consistent = false;
                break;
            }
            let triple = candidates[pi][index[pi]];
            for (term, actual) in
                [&p.subject, &p.predicate, &p.object].iter().zip(triple.iter())
            {
                if let Some(var) = term_var(term) {
                    match assignment.iter().find(|(v, _)| v == var) {
                        Some((_, bound)) if bound != actual => {
                            consistent = false;
                            break;
                        }
                        Some(_) => {}
                        None => assignment.push((var.to_string(), actual.clone())),
                    }
                }
            }
            if !consistent {
                break;
            }
        }
        if consistent {
            let mut keep = true;
            for f in &q.filters {
                let bound = assignment.iter().find(|(v, _)| *v == f.var)?;
                match value_satisfies(&typed(&bound.1), f.op, &f.literal) {
                    Some(true) => {}
                    Some(false) => {
                        keep = false;
                        break;
                    }
                    // a type-violating comparison is an error, not a miss
                    None => return None,
                }
            }
            if keep {
                let row: Vec<Value> = q
                    .select_vars
                    .iter()
                    .map(|v| {
                        assignment
                            .iter()
                            .find(|(var, _)| var == v)
                            .map(|(_, tok)| typed(tok))
                            .unwrap_or(Value::Null)
                    })
                    .collect();
                rows.push(row);
            }
        }
        // advance the product index
        let mut d = candidates.len();
        loop {
            if d == 0 {
                break 'outer;
            }
            d -= 1;
            if candidates[d].is_empty() {
                break 'outer;
            }
            index[d] += 1;
            if index[d] < candidates[d].len() {
                break;
            }
            index[d] = 0;
        }
    }
    Some(ResultSet::new(q.select_vars.clone(), rows))
}
