//! Ingestion of the published WikiSQL file format.
//!
//! Two line-delimited JSON inputs: a tables file (`id`, `header`, `types`,
//! `rows`) and a data file (`question`, `table_id`, `sql{sel, agg, conds}`).
//! Aggregator codes 0-5 map to (none, max, min, count, sum, avg); condition
//! operator codes 0-2 map to (=, >, <). Malformed records are skipped with a
//! reason; more than 5% malformed aborts the ingestion.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::anchors::SupervisionTargets;
use crate::corpus::{Corpus, Example, SchemaRecord, Split, FORMAT_VERSION};
use crate::logical_form::{
    parse_sql, serialize_sql, Aggregator, CmpOp, Condition, Literal, SqlQuery,
};
use crate::schema::{
    db_vocabulary, normalize, Column, ColumnType, DatabaseInstance, RelationalSchema, Table, Value,
};

const MAX_MALFORMED_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{bad} of {total} records malformed, above the {:.0}% limit", MAX_MALFORMED_FRACTION * 100.0)]
    TooManyMalformed { bad: usize, total: usize },
    #[error("no data records found")]
    Empty,
}

/// What happened during ingestion; skipped records keep their line number
/// and reason for the log.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub converted: usize,
    pub skipped: Vec<(usize, String)>,
}

#[derive(Debug, Deserialize)]
struct WikiTable {
    id: String,
    header: Vec<String>,
    types: Vec<String>,
    rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Debug, Deserialize)]
struct WikiRecord {
    question: String,
    table_id: String,
    sql: WikiSql,
}

#[derive(Debug, Deserialize)]
struct WikiSql {
    sel: usize,
    agg: usize,
    conds: Vec<(usize, usize, serde_json::Value)>,
}

struct ConvertedTable {
    schema: RelationalSchema,
    instance: DatabaseInstance,
}

fn agg_from_code(code: usize) -> Option<Aggregator> {
    match code {
        0 => Some(Aggregator::None),
        1 => Some(Aggregator::Max),
        2 => Some(Aggregator::Min),
        3 => Some(Aggregator::Count),
        4 => Some(Aggregator::Sum),
        5 => Some(Aggregator::Avg),
        _ => None,
    }
}

fn op_from_code(code: usize) -> Option<CmpOp> {
    match code {
        0 => Some(CmpOp::Eq),
        1 => Some(CmpOp::Gt),
        2 => Some(CmpOp::Lt),
        _ => None,
    }
}

/// Numeric cells may arrive as JSON numbers or as rendered strings with
/// thousands separators.
fn coerce_number(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.replace(',', "").trim().parse().ok(),
        _ => None,
    }
}

fn coerce_cell(v: &serde_json::Value, ty: ColumnType) -> Option<Value> {
    match ty {
        ColumnType::Number => coerce_number(v).map(Value::Num),
        ColumnType::Text => match v {
            serde_json::Value::String(s) => Some(Value::Text(normalize(s))),
            serde_json::Value::Number(n) => Some(Value::Text(n.to_string())),
            _ => None,
        },
    }
}

fn convert_table(t: &WikiTable) -> Result<ConvertedTable, String> {
    if t.header.len() != t.types.len() {
        return Err("header/types length mismatch".into());
    }
    let name = normalize(&t.id);
    let columns: Vec<Column> = t
        .header
        .iter()
        .zip(&t.types)
        .map(|(h, ty)| Column {
            name: normalize(h),
            ty: if ty == "real" { ColumnType::Number } else { ColumnType::Text },
        })
        .collect();
    let schema = RelationalSchema {
        tables: vec![Table { name: name.clone(), columns: columns.clone() }],
    };
    schema.validate().map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        if row.len() != columns.len() {
            return Err("row arity mismatch".into());
        }
        let converted: Option<Vec<Value>> = row
            .iter()
            .zip(&columns)
            .map(|(cell, col)| coerce_cell(cell, col.ty))
            .collect();
        rows.push(converted.ok_or("uncoercible cell value")?);
    }
    let mut instance = DatabaseInstance::default();
    instance.rows.insert(name, rows);
    Ok(ConvertedTable { schema, instance })
}

/// Question text to utterance tokens: normalize, split on whitespace, trim
/// surrounding punctuation.
fn tokenize_question(q: &str) -> Vec<String> {
    q.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation() && c != '-')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty() && !w.starts_with('<'))
        .collect()
}

fn convert_record(
    rec: &WikiRecord,
    table: &ConvertedTable,
    id: String,
    split: Split,
) -> Result<Example, String> {
    let t = &table.schema.tables[0];
    let agg = agg_from_code(rec.sql.agg).ok_or("aggregator code out of range")?;
    let select_column = t
        .columns
        .get(rec.sql.sel)
        .ok_or("select column index out of range")?
        .name
        .clone();
    let mut conditions = Vec::new();
    for (ci, op_code, value) in &rec.sql.conds {
        let col = t.columns.get(*ci).ok_or("condition column index out of range")?;
        let op = op_from_code(*op_code).ok_or("operator code out of range")?;
        let literal = match col.ty {
            ColumnType::Number => {
                Literal::Num(coerce_number(value).ok_or("uncoercible numeric condition value")?)
            }
            ColumnType::Text => match value {
                serde_json::Value::String(s) => {
                    let norm = normalize(s);
                    if norm.is_empty() || norm.starts_with('<') {
                        return Err("unusable text condition value".into());
                    }
                    Literal::Word(norm)
                }
                serde_json::Value::Number(n) => Literal::Word(n.to_string()),
                _ => return Err("unusable condition value".into()),
            },
        };
        conditions.push(Condition { column: col.name.clone(), op, literal });
    }
    if conditions.len() > crate::logical_form::MAX_CONDITIONS {
        return Err("too many conditions".into());
    }
    let query = SqlQuery { aggregator: agg, select_column, table: t.name.clone(), conditions };
    let serialized = serialize_sql(&query);
    let reparsed = parse_sql(&serialized.tokens.text()).map_err(|e| e.to_string())?;
    if reparsed != query {
        return Err("canonical round-trip mismatch".into());
    }
    let targets = SupervisionTargets::build(serialized.tokens, &db_vocabulary(&table.schema));
    let utterance = tokenize_question(&rec.question);
    if utterance.is_empty() {
        return Err("empty question".into());
    }
    Ok(Example {
        id,
        utterance: crate::logical_form::TokenSeq::new(utterance),
        main: targets.main,
        sae: targets.sae,
        saa: targets.saa,
        saa_mask: targets.saa_mask,
        schema_ref: t.name.clone(),
        split,
    })
}

fn read_jsonl<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, Result<T, String>)>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, serde_json::from_str(&line).map_err(|e| e.to_string())));
    }
    Ok(out)
}

/// Convert WikiSQL-format files into a native corpus. Returns the corpus and
/// a report of skipped records.
pub fn ingest_wikisql(
    tables_path: &Path,
    data_path: &Path,
    split: Split,
) -> Result<(Corpus, IngestReport), IngestError> {
    // A bad tables line only poisons the records that reference it; they
    // are skipped and counted like any other malformed record.
    let mut tables: BTreeMap<String, Result<ConvertedTable, String>> = BTreeMap::new();
    for (line, parsed) in read_jsonl::<WikiTable>(tables_path)? {
        match parsed {
            Ok(t) => {
                let converted = convert_table(&t).map_err(|e| format!("tables line {line}: {e}"));
                tables.insert(t.id.clone(), converted);
            }
            Err(e) => {
                // without an id the table cannot be referenced; remember the
                // reason under a synthetic key for the report
                tables.insert(format!("<bad line {line}>"), Err(e));
            }
        }
    }

    let mut corpus = Corpus::default();
    let mut report = IngestReport::default();
    let records = read_jsonl::<WikiRecord>(data_path)?;
    let total = records.len();
    if total == 0 {
        return Err(IngestError::Empty);
    }
    let mut idx = 0usize;
    for (line, parsed) in records {
        let rec = match parsed {
            Ok(r) => r,
            Err(e) => {
                report.skipped.push((line, format!("unparseable record: {e}")));
                continue;
            }
        };
        let table = match tables.get(&rec.table_id) {
            Some(Ok(t)) => t,
            Some(Err(e)) => {
                report.skipped.push((line, format!("table {}: {e}", rec.table_id)));
                continue;
            }
            None => {
                report.skipped.push((line, format!("unknown table {}", rec.table_id)));
                continue;
            }
        };
        let id = format!("ws{idx:06}");
        match convert_record(&rec, table, id, split) {
            Ok(example) => {
                idx += 1;
                let schema_id = example.schema_ref.clone();
                corpus.schemas.entry(schema_id.clone()).or_insert_with(|| SchemaRecord::Db {
                    version: FORMAT_VERSION,
                    id: schema_id,
                    schema: table.schema.clone(),
                    rows: table.instance.clone(),
                });
                corpus.examples.push(example);
                report.converted += 1;
            }
            Err(reason) => report.skipped.push((line, reason)),
        }
    }
    let bad = report.skipped.len();
    if bad as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        return Err(IngestError::TooManyMalformed { bad, total });
    }
    Ok((corpus, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let tables = dir.join("tables.jsonl");
        let data = dir.join("data.jsonl");
        let mut tf = File::create(&tables).unwrap();
        writeln!(
            tf,
            r#"{{"id":"1-1000181-1","header":["Player","No.","Position"],"types":["text","real","text"],"rows":[["Mark Fisher",12,"Guard"],["Ed Brown",7,"Forward"]]}}"#
        )
        .unwrap();
        let mut df = File::create(&data).unwrap();
        writeln!(
            df,
            r#"{{"question":"What position does Mark Fisher play?","table_id":"1-1000181-1","sql":{{"sel":2,"agg":0,"conds":[[0,0,"Mark Fisher"]]}}}}"#
        )
        .unwrap();
        writeln!(
            df,
            r#"{{"question":"How many players wear number above 10?","table_id":"1-1000181-1","sql":{{"sel":1,"agg":3,"conds":[[1,1,10]]}}}}"#
        )
        .unwrap();
        (tables, data)
    }

    #[test]
    fn converts_published_codes_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, data) = write_fixture(dir.path());
        let (corpus, report) = ingest_wikisql(&tables, &data, Split::Train).unwrap();
        assert_eq!(report.converted, 2);
        assert!(report.skipped.is_empty());

        let q0 = parse_sql(&corpus.examples[0].main.text()).unwrap();
        assert_eq!(q0.aggregator, Aggregator::None);
        assert_eq!(q0.select_column, "position");
        assert_eq!(q0.conditions[0].op, CmpOp::Eq);
        assert_eq!(q0.conditions[0].literal, Literal::Word("mark_fisher".into()));

        let q1 = parse_sql(&corpus.examples[1].main.text()).unwrap();
        assert_eq!(q1.aggregator, Aggregator::Count);
        // sel=1 over [Player, No., Position] normalizes to "no."
        assert_eq!(q1.select_column, "no.");
        assert_eq!(q1.conditions[0].op, CmpOp::Gt);
        assert_eq!(q1.conditions[0].literal, Literal::Num(10.0));
    }

    #[test]
    fn executes_ingested_gold_queries() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, data) = write_fixture(dir.path());
        let (corpus, _) = ingest_wikisql(&tables, &data, Split::Train).unwrap();
        for ex in &corpus.examples {
            let rec = corpus.schema_for(ex).unwrap();
            if let SchemaRecord::Db { schema, rows, .. } = rec {
                let q = parse_sql(&ex.main.text()).unwrap();
                crate::executor::execute_sql(&q, schema, rows).unwrap();
            }
        }
    }

    #[test]
    fn skips_malformed_records_and_counts_them() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, data) = write_fixture(dir.path());
        let mut df = std::fs::OpenOptions::new().append(true).open(&data).unwrap();
        // 2 good + 30 bad would exceed 5%; add exactly one bad record of 21
        for _ in 0..1 {
            writeln!(
                df,
                r#"{{"question":"Bad agg","table_id":"1-1000181-1","sql":{{"sel":0,"agg":9,"conds":[]}}}}"#
            )
            .unwrap();
        }
        for _ in 0..18 {
            writeln!(
                df,
                r#"{{"question":"What position does Mark Fisher play?","table_id":"1-1000181-1","sql":{{"sel":2,"agg":0,"conds":[[0,0,"Mark Fisher"]]}}}}"#
            )
            .unwrap();
        }
        let (corpus, report) = ingest_wikisql(&tables, &data, Split::Train).unwrap();
        assert_eq!(report.converted, 20);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].1.contains("aggregator"));
        assert_eq!(corpus.examples.len(), 20);
    }

    #[test]
    fn aborts_when_malformed_fraction_exceeds_limit() {
        let dir = tempfile::tempdir().unwrap();
        let (tables, data) = write_fixture(dir.path());
        let mut df = std::fs::OpenOptions::new().append(true).open(&data).unwrap();
        writeln!(df, r#"{{"question":"x","table_id":"nope","sql":{{"sel":0,"agg":0,"conds":[]}}}}"#)
            .unwrap();
        let err = ingest_wikisql(&tables, &data, Split::Train).unwrap_err();
        assert!(matches!(err, IngestError::TooManyMalformed { bad: 1, total: 3 }));
    }
}
