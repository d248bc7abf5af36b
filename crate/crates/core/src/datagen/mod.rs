//! Seeded synthetic benchmark generator and WikiSQL-format ingestion.
//!
//! The generator samples random DB and KB schemas with instances, then emits
//! (utterance, logical form) pairs from a fixed template table (documented in
//! the README). The seed fully determines the corpus; every emitted example
//! is self-checked to parse, round-trip, and execute.

mod templates;
mod wikisql;

pub use wikisql::{ingest_wikisql, IngestReport};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::SupervisionTargets;
use crate::corpus::{Corpus, Example, SchemaRecord, Split, FORMAT_VERSION};
use crate::executor::{execute_sparql, execute_sql};
use crate::logical_form::{
    parse_sparql, parse_sql, serialize_sparql, serialize_sql, Aggregator, CmpOp, Condition,
    Literal, SparqlQuery, SqlQuery, Term, TokenSeq, TriplePattern,
};
use crate::schema::{
    Column, ColumnType, DatabaseInstance, KbEdge, KbNode, KnowledgeBase, PropValue,
    RelationalSchema, Table, Value,
};
use templates::*;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("infeasible config: {0}")]
    Config(String),
    #[error("self-check failed for generated example {id}: {msg}")]
    SelfCheck { id: String, msg: String },
}

/// Generator configuration; the seed fully determines the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub version: u32,
    pub seed: u64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub schemas_per_kind: usize,
    pub tables_per_schema: (usize, usize),
    pub columns_per_table: (usize, usize),
    pub kb_nodes: (usize, usize),
    pub kb_edges: (usize, usize),
    pub rows_per_table: (usize, usize),
    /// Fraction of examples drawn over DB schemas (the rest are KB/SPARQL).
    pub sql_fraction: f64,
    /// Probability of using a non-default synonym in an utterance slot.
    pub paraphrase_rate: f64,
    /// Hold dev/test schemas out of the training pool.
    pub held_out_eval_schemas: bool,
    pub template_set: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            version: 1,
            seed: 0,
            train: 1000,
            dev: 100,
            test: 200,
            schemas_per_kind: 6,
            tables_per_schema: (1, 3),
            columns_per_table: (2, 6),
            kb_nodes: (5, 30),
            kb_edges: (5, 40),
            rows_per_table: (4, 9),
            sql_fraction: 0.5,
            paraphrase_rate: 0.3,
            held_out_eval_schemas: false,
            template_set: "v1".to_string(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let ranges = [
            ("tables_per_schema", self.tables_per_schema, TABLE_NOUNS.len()),
            ("columns_per_table", self.columns_per_table, 1 + TEXT_COLUMNS.len() + NUM_COLUMNS.len()),
            ("kb_nodes", self.kb_nodes, NAME_POOL.len()),
            ("kb_edges", self.kb_edges, usize::MAX),
            ("rows_per_table", self.rows_per_table, usize::MAX),
        ];
        for (name, (lo, hi), cap) in ranges {
            if lo == 0 || lo > hi {
                return Err(GenError::Config(format!("{name} range ({lo}, {hi}) is empty")));
            }
            if hi > cap {
                return Err(GenError::Config(format!(
                    "{name} upper bound {hi} exceeds pool capacity {cap}"
                )));
            }
        }
        if self.columns_per_table.0 < 2 {
            return Err(GenError::Config("tables need at least 2 columns".into()));
        }
        if self.schemas_per_kind == 0 {
            return Err(GenError::Config("schemas_per_kind must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sql_fraction) {
            return Err(GenError::Config("sql_fraction must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.paraphrase_rate) {
            return Err(GenError::Config("paraphrase_rate must be in [0, 1]".into()));
        }
        if self.held_out_eval_schemas && self.schemas_per_kind < 2 {
            return Err(GenError::Config(
                "held-out evaluation needs at least 2 schemas per kind".into(),
            ));
        }
        if self.template_set != "v1" {
            return Err(GenError::Config(format!(
                "unknown template set {:?}",
                self.template_set
            )));
        }
        Ok(())
    }
}

struct DbWorld {
    id: String,
    schema: RelationalSchema,
    instance: DatabaseInstance,
}

struct KbWorld {
    id: String,
    kb: KnowledgeBase,
}

pub fn generate_corpus(cfg: &GenConfig) -> Result<Corpus, GenError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut corpus = Corpus::default();
    let mut dbs = Vec::new();
    let mut kbs = Vec::new();
    for i in 0..cfg.schemas_per_kind {
        let id = format!("s{i:03}");
        let (schema, instance) = gen_db(&mut rng, cfg);
        debug_assert!(schema.validate().is_ok());
        debug_assert!(instance.validate(&schema).is_ok());
        corpus.schemas.insert(
            id.clone(),
            SchemaRecord::Db {
                version: FORMAT_VERSION,
                id: id.clone(),
                schema: schema.clone(),
                rows: instance.clone(),
            },
        );
        dbs.push(DbWorld { id, schema, instance });
    }
    for i in 0..cfg.schemas_per_kind {
        let id = format!("s{:03}", cfg.schemas_per_kind + i);
        let kb = gen_kb(&mut rng, cfg);
        debug_assert!(kb.validate().is_ok());
        corpus.schemas.insert(
            id.clone(),
            SchemaRecord::Kb {
                version: FORMAT_VERSION,
                id: id.clone(),
                schema: kb.clone(),
                triples: kb.triples(),
            },
        );
        kbs.push(KbWorld { id, kb });
    }

    // schema index pools per split kind (held-out mode reserves the tail
    // schemas for dev/test)
    let cut = if cfg.held_out_eval_schemas {
        (cfg.schemas_per_kind * 3).div_ceil(4)
    } else {
        cfg.schemas_per_kind
    };
    let train_pool: Vec<usize> = (0..cut).collect();
    let eval_pool: Vec<usize> = if cfg.held_out_eval_schemas {
        (cut..cfg.schemas_per_kind).collect()
    } else {
        (0..cfg.schemas_per_kind).collect()
    };

    let mut idx = 0usize;
    for (split, count) in [
        (Split::Train, cfg.train),
        (Split::Dev, cfg.dev),
        (Split::Test, cfg.test),
    ] {
        let pool = if split == Split::Train { &train_pool } else { &eval_pool };
        for _ in 0..count {
            let id = format!("ex{idx:06}");
            idx += 1;
            let use_sql = rng.gen_bool(cfg.sql_fraction);
            let schema_idx = *pool.choose(&mut rng).expect("pool nonempty");
            let example = if use_sql {
                gen_sql_example(&mut rng, cfg, &dbs[schema_idx], id, split)?
            } else {
                gen_sparql_example(&mut rng, cfg, &kbs[schema_idx], id, split)?
            };
            corpus.examples.push(example);
        }
    }
    Ok(corpus)
}

fn sample_distinct<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], n: usize) -> Vec<&'a str> {
    let mut picked: Vec<&str> = pool.to_vec();
    picked.shuffle(rng);
    picked.truncate(n);
    picked
}

fn gen_db(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> (RelationalSchema, DatabaseInstance) {
    let n_tables = rng.gen_range(cfg.tables_per_schema.0..=cfg.tables_per_schema.1);
    let table_names = sample_distinct(rng, TABLE_NOUNS, n_tables);
    let mut tables = Vec::new();
    let mut instance = DatabaseInstance::default();
    for tname in table_names {
        let n_cols = rng.gen_range(cfg.columns_per_table.0..=cfg.columns_per_table.1);
        // always a text "name" column plus at least one numeric column
        let mut columns = vec![Column { name: "name".into(), ty: ColumnType::Text }];
        let n_num = rng.gen_range(1..n_cols.max(2));
        for c in sample_distinct(rng, NUM_COLUMNS, n_num) {
            columns.push(Column { name: c.into(), ty: ColumnType::Number });
        }
        let remaining = n_cols.saturating_sub(columns.len());
        for c in sample_distinct(rng, TEXT_COLUMNS, remaining) {
            columns.push(Column { name: c.into(), ty: ColumnType::Text });
        }

        let n_rows = rng.gen_range(cfg.rows_per_table.0..=cfg.rows_per_table.1);
        let names = sample_distinct(rng, NAME_POOL, n_rows);
        let rows: Vec<Vec<Value>> = (0..n_rows)
            .map(|r| {
                columns
                    .iter()
                    .enumerate()
                    .map(|(ci, col)| match (ci, col.ty) {
                        (0, _) => Value::Text(names[r].to_string()),
                        (_, ColumnType::Number) => Value::Num(num_value(rng, &col.name) as f64),
                        (_, ColumnType::Text) => {
                            Value::Text(ADJ_POOL[rng.gen_range(0..ADJ_POOL.len())].to_string())
                        }
                    })
                    .collect()
            })
            .collect();
        instance.rows.insert(tname.to_string(), rows);
        tables.push(Table { name: tname.to_string(), columns });
    }
    (RelationalSchema { tables }, instance)
}

/// Numeric columns named like years draw from the year pool, everything else
/// from the small-count pool.
fn num_value(rng: &mut ChaCha8Rng, column: &str) -> i64 {
    if column == "founded" {
        YEARS[rng.gen_range(0..YEARS.len())]
    } else {
        SMALLS[rng.gen_range(0..SMALLS.len())]
    }
}

fn gen_kb(rng: &mut ChaCha8Rng, cfg: &GenConfig) -> KnowledgeBase {
    let n_nodes = rng.gen_range(cfg.kb_nodes.0..=cfg.kb_nodes.1);
    let labels = sample_distinct(rng, NAME_POOL, n_nodes);
    let mut nodes: Vec<KbNode> = labels
        .iter()
        .enumerate()
        .map(|(i, label)| KbNode {
            id: format!("n{i}"),
            label: label.to_string(),
            properties: Vec::new(),
        })
        .collect();
    for (i, node) in nodes.iter_mut().enumerate() {
        // the first node always carries a numeric property so that filter
        // shapes are always constructible
        if i == 0 || rng.gen_bool(0.5) {
            let prop = NUM_PROPS[rng.gen_range(0..NUM_PROPS.len())];
            node.properties.push((prop.to_string(), PropValue::Int(prop_value(rng, prop))));
        }
        if rng.gen_bool(0.25) {
            let prop = TEXT_PROPS[rng.gen_range(0..TEXT_PROPS.len())];
            let val = ADJ_POOL[rng.gen_range(0..ADJ_POOL.len())];
            node.properties.push((prop.to_string(), PropValue::Text(val.to_string())));
        }
    }
    let n_edges = rng.gen_range(cfg.kb_edges.0..=cfg.kb_edges.1);
    let edges: Vec<KbEdge> = (0..n_edges)
        .map(|i| {
            let src = rng.gen_range(0..nodes.len());
            let mut dst = rng.gen_range(0..nodes.len());
            if dst == src {
                dst = (dst + 1) % nodes.len();
            }
            KbEdge {
                id: format!("e{i}"),
                src: format!("n{src}"),
                dst: format!("n{dst}"),
                label: REL_POOL[rng.gen_range(0..REL_POOL.len())].to_string(),
                properties: Vec::new(),
            }
        })
        .collect();
    KnowledgeBase { nodes, edges }
}

fn prop_value(rng: &mut ChaCha8Rng, prop: &str) -> i64 {
    if prop == "founded" {
        YEARS[rng.gen_range(0..YEARS.len())]
    } else {
        SMALLS[rng.gen_range(0..SMALLS.len())]
    }
}

fn op_phrase(rng: &mut ChaCha8Rng, op: CmpOp, rate: f64) -> &'static str {
    match op {
        CmpOp::Gt => pick(rng, SYN_GT, rate),
        CmpOp::Lt => pick(rng, SYN_LT, rate),
        CmpOp::Eq => pick(rng, SYN_EQ, rate),
    }
}

fn gen_sql_example(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
    world: &DbWorld,
    id: String,
    split: Split,
) -> Result<Example, GenError> {
    let table = &world.schema.tables[rng.gen_range(0..world.schema.tables.len())];
    let rows = &world.instance.rows[&crate::schema::normalize(&table.name)];
    let numeric_cols: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ty == ColumnType::Number)
        .map(|(i, _)| i)
        .collect();

    let shape = rng.gen_range(0..100);
    let (aggregator, n_conds) = if shape < 40 {
        let c = *[0usize, 1, 1, 1, 2].choose(rng).unwrap();
        (Aggregator::None, c)
    } else if shape < 60 {
        (Aggregator::Count, rng.gen_range(1..=2))
    } else {
        let agg = *[Aggregator::Max, Aggregator::Min, Aggregator::Sum, Aggregator::Avg]
            .choose(rng)
            .unwrap();
        (agg, rng.gen_range(0..=1))
    };

    // condition columns are distinct
    let mut cond_pool: Vec<usize> = (0..table.columns.len()).collect();
    cond_pool.shuffle(rng);
    let mut conditions = Vec::new();
    let mut cond_cols = Vec::new();
    for &ci in cond_pool.iter() {
        if conditions.len() == n_conds {
            break;
        }
        let col = &table.columns[ci];
        let op = match col.ty {
            ColumnType::Number => *[CmpOp::Gt, CmpOp::Lt, CmpOp::Eq].choose(rng).unwrap(),
            ColumnType::Text => CmpOp::Eq,
        };
        let literal = sample_literal(rng, rows, ci, col);
        conditions.push(Condition { column: col.name.clone(), op, literal });
        cond_cols.push(ci);
    }

    let select_idx = match aggregator {
        Aggregator::None => rng.gen_range(0..table.columns.len()),
        Aggregator::Count => cond_cols.first().copied().unwrap_or(0),
        _ => numeric_cols[rng.gen_range(0..numeric_cols.len())],
    };
    let select_column = table.columns[select_idx].name.clone();

    let query = SqlQuery {
        aggregator,
        select_column: select_column.clone(),
        table: crate::schema::normalize(&table.name),
        conditions: conditions.clone(),
    };

    let rate = cfg.paraphrase_rate;
    let mut utt: Vec<String> = Vec::new();
    let cond_phrases = |rng: &mut ChaCha8Rng, utt: &mut Vec<String>| {
        for (i, c) in conditions.iter().enumerate() {
            if i > 0 {
                utt.push("and".into());
            }
            utt.push(c.column.clone());
            push_phrase(utt, op_phrase(rng, c.op, rate));
            utt.push(c.literal.render());
        }
    };
    match aggregator {
        Aggregator::None if conditions.is_empty() => {
            push_phrase(&mut utt, pick(rng, SYN_LIST, rate));
            utt.push("the".into());
            utt.push(select_column.clone());
            push_phrase(&mut utt, "of every");
            utt.push(query.table.clone());
        }
        Aggregator::None => {
            push_phrase(&mut utt, pick(rng, SYN_WHICH, rate));
            utt.push(select_column.clone());
            utt.push("of".into());
            utt.push(query.table.clone());
            utt.push("has".into());
            cond_phrases(rng, &mut utt);
        }
        Aggregator::Count => {
            push_phrase(&mut utt, pick(rng, SYN_COUNT, rate));
            utt.push(query.table.clone());
            push_phrase(&mut utt, "rows have");
            cond_phrases(rng, &mut utt);
        }
        agg => {
            push_phrase(&mut utt, "what is the");
            let syn = match agg {
                Aggregator::Max => SYN_MAX,
                Aggregator::Min => SYN_MIN,
                Aggregator::Sum => SYN_SUM,
                _ => SYN_AVG,
            };
            push_phrase(&mut utt, pick(rng, syn, rate));
            utt.push(select_column.clone());
            push_phrase(&mut utt, "of the");
            utt.push(query.table.clone());
            if !conditions.is_empty() {
                utt.push("with".into());
                cond_phrases(rng, &mut utt);
            }
        }
    }

    let serialized = serialize_sql(&query);
    let vocab = crate::schema::db_vocabulary(&world.schema);
    let targets = SupervisionTargets::build(serialized.tokens.clone(), &vocab);

    if let Err(e) = parse_sql(&serialized.tokens.text())
        .map_err(|e| e.to_string())
        .and_then(|q| if q == query { Ok(()) } else { Err("round-trip mismatch".into()) })
        .and_then(|_| {
            execute_sql(&query, &world.schema, &world.instance).map(|_| ()).map_err(|e| e.to_string())
        })
    {
        return Err(GenError::SelfCheck { id, msg: e });
    }

    Ok(Example {
        id,
        utterance: TokenSeq::new(utt),
        main: targets.main,
        sae: targets.sae,
        saa: targets.saa,
        saa_mask: targets.saa_mask,
        schema_ref: world.id.clone(),
        split,
    })
}

fn sample_literal(
    rng: &mut ChaCha8Rng,
    rows: &[Vec<Value>],
    col_idx: usize,
    col: &Column,
) -> Literal {
    let from_data = !rows.is_empty() && rng.gen_bool(0.7);
    match col.ty {
        ColumnType::Number => {
            let v = if from_data {
                match &rows[rng.gen_range(0..rows.len())][col_idx] {
                    Value::Num(n) => *n as i64,
                    _ => num_value(rng, &col.name),
                }
            } else {
                num_value(rng, &col.name)
            };
            Literal::Num(v as f64)
        }
        ColumnType::Text => {
            let v = if from_data {
                match &rows[rng.gen_range(0..rows.len())][col_idx] {
                    Value::Text(t) => t.clone(),
                    _ => NAME_POOL[rng.gen_range(0..NAME_POOL.len())].to_string(),
                }
            } else if col_idx == 0 {
                NAME_POOL[rng.gen_range(0..NAME_POOL.len())].to_string()
            } else {
                ADJ_POOL[rng.gen_range(0..ADJ_POOL.len())].to_string()
            };
            Literal::Word(v)
        }
    }
}

fn gen_sparql_example(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
    world: &KbWorld,
    id: String,
    split: Split,
) -> Result<Example, GenError> {
    let kb = &world.kb;
    let triples = kb.triples();
    let edge_triples: Vec<&[String; 3]> = triples
        .iter()
        .take(kb.edges.len())
        .collect();
    let numeric_props: Vec<(String, i64)> = kb
        .nodes
        .iter()
        .flat_map(|n| n.properties.iter())
        .filter_map(|(p, v)| match v {
            PropValue::Int(i) => Some((p.clone(), *i)),
            PropValue::Text(_) => None,
        })
        .collect();

    let rate = cfg.paraphrase_rate;
    let mut utt: Vec<String> = Vec::new();
    let x = "?x".to_string();
    let shape = rng.gen_range(0..100);
    let query = if shape < 30 {
        let t = edge_triples[rng.gen_range(0..edge_triples.len())];
        push_phrase(&mut utt, pick(rng, SYN_WHICH, rate));
        push_phrase(&mut utt, pick(rng, SYN_ENTITIES, rate));
        utt.push("have".into());
        utt.push(t[1].clone());
        utt.push(t[2].clone());
        SparqlQuery {
            select_vars: vec![x.clone()],
            patterns: vec![TriplePattern {
                subject: Term::Var(x),
                predicate: Term::Token(t[1].clone()),
                object: Term::Token(t[2].clone()),
            }],
            filters: vec![],
        }
    } else if shape < 50 {
        let t = edge_triples[rng.gen_range(0..edge_triples.len())];
        push_phrase(&mut utt, "what is the");
        utt.push(t[1].clone());
        utt.push("of".into());
        utt.push(t[0].clone());
        SparqlQuery {
            select_vars: vec![x.clone()],
            patterns: vec![TriplePattern {
                subject: Term::Token(t[0].clone()),
                predicate: Term::Token(t[1].clone()),
                object: Term::Var(x),
            }],
            filters: vec![],
        }
    } else if shape < 75 {
        let (prop, observed) = {
            let (p, v) = numeric_props[rng.gen_range(0..numeric_props.len())].clone();
            (p, v)
        };
        let op = *[CmpOp::Gt, CmpOp::Lt, CmpOp::Eq].choose(rng).unwrap();
        let value = if rng.gen_bool(0.7) { observed } else { prop_value(rng, &prop) };
        push_phrase(&mut utt, pick(rng, SYN_WHICH, rate));
        push_phrase(&mut utt, pick(rng, SYN_ENTITIES, rate));
        utt.push("have".into());
        utt.push(prop.clone());
        push_phrase(&mut utt, op_phrase(rng, op, rate));
        utt.push(value.to_string());
        SparqlQuery {
            select_vars: vec![x.clone()],
            patterns: vec![TriplePattern {
                subject: Term::Var(x.clone()),
                predicate: Term::Token(prop),
                object: Term::Var("?y".into()),
            }],
            filters: vec![crate::logical_form::Filter {
                var: "?y".into(),
                op,
                literal: Literal::Num(value as f64),
            }],
        }
    } else if shape < 90 {
        let t1 = edge_triples[rng.gen_range(0..edge_triples.len())];
        let shared: Vec<&&[String; 3]> =
            edge_triples.iter().filter(|t| t[0] == t1[0] && *t != &t1).collect();
        let t2 = if shared.is_empty() {
            edge_triples[rng.gen_range(0..edge_triples.len())]
        } else {
            shared[rng.gen_range(0..shared.len())]
        };
        push_phrase(&mut utt, pick(rng, SYN_WHICH, rate));
        push_phrase(&mut utt, pick(rng, SYN_ENTITIES, rate));
        utt.push("have".into());
        utt.push(t1[1].clone());
        utt.push(t1[2].clone());
        utt.push("and".into());
        utt.push(t2[1].clone());
        utt.push(t2[2].clone());
        SparqlQuery {
            select_vars: vec![x.clone()],
            patterns: vec![
                TriplePattern {
                    subject: Term::Var(x.clone()),
                    predicate: Term::Token(t1[1].clone()),
                    object: Term::Token(t1[2].clone()),
                },
                TriplePattern {
                    subject: Term::Var(x),
                    predicate: Term::Token(t2[1].clone()),
                    object: Term::Token(t2[2].clone()),
                },
            ],
            filters: vec![],
        }
    } else {
        let t = edge_triples[rng.gen_range(0..edge_triples.len())];
        push_phrase(&mut utt, "list all pairs linked by");
        utt.push(t[1].clone());
        SparqlQuery {
            select_vars: vec![x.clone(), "?y".into()],
            patterns: vec![TriplePattern {
                subject: Term::Var(x),
                predicate: Term::Token(t[1].clone()),
                object: Term::Var("?y".into()),
            }],
            filters: vec![],
        }
    };

    let serialized = serialize_sparql(&query);
    let vocab = crate::schema::kb_vocabulary(kb);
    let targets = SupervisionTargets::build(serialized.tokens.clone(), &vocab);

    if let Err(e) = parse_sparql(&serialized.tokens.text())
        .map_err(|e| e.to_string())
        .and_then(|q| if q == query { Ok(()) } else { Err("round-trip mismatch".into()) })
        .and_then(|_| execute_sparql(&query, kb).map(|_| ()).map_err(|e| e.to_string()))
    {
        return Err(GenError::SelfCheck { id, msg: e });
    }

    Ok(Example {
        id,
        utterance: TokenSeq::new(utt),
        main: targets.main,
        sae: targets.sae,
        saa: targets.saa,
        saa_mask: targets.saa_mask,
        schema_ref: world.id.clone(),
        split,
    })
}
