//! Knowledge-base and relational-database schemas, their instances, and the
//! flat vocabularies that decide which logical-form tokens are anchors.
//!
//! A knowledge base is a labeled directed graph: nodes and edges all carry a
//! label, and any element may carry (property, value) pairs. A relational
//! schema is a list of tables, each a list of typed columns. Both flatten
//! into a [`SchemaVocabulary`]: the normalized tokens a logical form may use
//! to reference the schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon;

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("label or identifier {0:?} is reserved or malformed after normalization")]
    ReservedToken(String),
    #[error("duplicate table name {0:?}")]
    DuplicateTable(String),
    #[error("duplicate column {column:?} in table {table:?}")]
    DuplicateColumn { table: String, column: String },
    #[error("edge {edge:?} references missing node {node:?}")]
    MissingEndpoint { edge: String, node: String },
    #[error("distinct {kind} labels {a:?} and {b:?} collide after normalization")]
    LabelCollision { kind: &'static str, a: String, b: String },
    #[error("row arity {got} does not match table {table:?} arity {want}")]
    RowArity { table: String, got: usize, want: usize },
    #[error("value {value:?} does not match {ty:?} column {column:?}")]
    ValueType { column: String, ty: ColumnType, value: String },
    #[error("unknown table {0:?} in instance rows")]
    UnknownTable(String),
}

/// Lowercase, trim, and join internal whitespace runs with underscores.
/// Idempotent: normalizing a normalized token changes nothing.
pub fn normalize(s: &str) -> String {
    let lower = s.trim().to_lowercase();
    let mut out = String::with_capacity(lower.len());
    let mut in_ws = false;
    for ch in lower.chars() {
        if ch.is_whitespace() {
            in_ws = true;
        } else {
            if in_ws && !out.is_empty() {
                out.push('_');
            }
            in_ws = false;
            out.push(ch);
        }
    }
    out
}

/// A property value attached to a KB node or edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PropValue {
    Int(i64),
    Text(String),
}

impl PropValue {
    /// Canonical token rendering: integers without leading zeros, text
    /// normalized verbatim.
    pub fn render(&self) -> String {
        match self {
            PropValue::Int(v) => v.to_string(),
            PropValue::Text(t) => normalize(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbNode {
    pub id: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub properties: Vec<(String, PropValue)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbEdge {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub properties: Vec<(String, PropValue)>,
}

/// Directed labeled graph with optional (property, value) pairs on nodes and
/// edges. The label map is total by construction: every node and edge struct
/// carries one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub nodes: Vec<KbNode>,
    pub edges: Vec<KbEdge>,
}

impl KnowledgeBase {
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut node_labels: BTreeMap<String, String> = BTreeMap::new();
        for n in &self.nodes {
            let norm = normalize(&n.label);
            if !lexicon::is_valid_schema_token(&norm) {
                return Err(SchemaError::ReservedToken(n.label.clone()));
            }
            if let Some(prev) = node_labels.insert(norm, n.label.clone()) {
                if prev != n.label {
                    return Err(SchemaError::LabelCollision {
                        kind: "node",
                        a: prev,
                        b: n.label.clone(),
                    });
                }
            }
        }
        let node_ids: BTreeMap<&str, ()> =
            self.nodes.iter().map(|n| (n.id.as_str(), ())).collect();
        for e in &self.edges {
            let norm = normalize(&e.label);
            if !lexicon::is_valid_schema_token(&norm) {
                return Err(SchemaError::ReservedToken(e.label.clone()));
            }
            for endpoint in [&e.src, &e.dst] {
                if !node_ids.contains_key(endpoint.as_str()) {
                    return Err(SchemaError::MissingEndpoint {
                        edge: e.id.clone(),
                        node: endpoint.clone(),
                    });
                }
            }
        }
        for (name, value) in self.all_properties() {
            if !lexicon::is_valid_schema_token(&normalize(name)) {
                return Err(SchemaError::ReservedToken(name.to_string()));
            }
            if !lexicon::is_valid_schema_token(&value.render()) {
                return Err(SchemaError::ReservedToken(value.render()));
            }
        }
        Ok(())
    }

    fn all_properties(&self) -> impl Iterator<Item = (&str, &PropValue)> {
        self.nodes
            .iter()
            .flat_map(|n| n.properties.iter())
            .chain(self.edges.iter().flat_map(|e| e.properties.iter()))
            .map(|(k, v)| (k.as_str(), v))
    }

    /// Rendered triples the executor matches patterns against: every edge as
    /// (src label, edge label, dst label), plus every property pair as
    /// (owner label, property name, rendered value).
    pub fn triples(&self) -> Vec<[String; 3]> {
        let by_id: BTreeMap<&str, &KbNode> =
            self.nodes.iter().map(|n| (n.id.as_str(), n)).collect();
        let mut out = Vec::new();
        for e in &self.edges {
            let s = normalize(&by_id[e.src.as_str()].label);
            let o = normalize(&by_id[e.dst.as_str()].label);
            out.push([s, normalize(&e.label), o]);
        }
        for n in &self.nodes {
            for (p, v) in &n.properties {
                out.push([normalize(&n.label), normalize(p), v.render()]);
            }
        }
        for e in &self.edges {
            for (p, v) in &e.properties {
                out.push([normalize(&e.label), normalize(p), v.render()]);
            }
        }
        out
    }

    /// Typed lookup for property objects so that filters can compare
    /// numerically: rendered token -> original value.
    pub fn typed_value(&self, token: &str) -> Option<PropValue> {
        self.all_properties()
            .map(|(_, v)| v)
            .find(|v| v.render() == token)
            .cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Number,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationalSchema {
    pub tables: Vec<Table>,
}

impl RelationalSchema {
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut seen_tables = BTreeMap::new();
        for t in &self.tables {
            let norm = normalize(&t.name);
            if !lexicon::is_valid_schema_token(&norm) {
                return Err(SchemaError::ReservedToken(t.name.clone()));
            }
            if seen_tables.insert(norm, ()).is_some() {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut seen_cols = BTreeMap::new();
            for c in &t.columns {
                let cnorm = normalize(&c.name);
                if !lexicon::is_valid_schema_token(&cnorm) {
                    return Err(SchemaError::ReservedToken(c.name.clone()));
                }
                if seen_cols.insert(cnorm, ()).is_some() {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn table(&self, normalized_name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| normalize(&t.name) == normalized_name)
    }
}

impl Table {
    pub fn column_index(&self, normalized_name: &str) -> Option<usize> {
        self.columns.iter().position(|c| normalize(&c.name) == normalized_name)
    }
}

/// A cell value in a database row or a KB binding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Num(f64),
    Text(String),
}

impl Value {
    /// Canonical rendering; integer-valued floats drop the fraction.
    pub fn render(&self) -> String {
        match self {
            Value::Null => "null".to_string(),
            Value::Num(v) => {
                if v.fract() == 0.0 && v.abs() < 1e15 {
                    format!("{}", *v as i64)
                } else {
                    format!("{v}")
                }
            }
            Value::Text(t) => t.clone(),
        }
    }

    /// Typed canonical key: numbers and texts never compare equal even when
    /// they render to the same digits.
    pub fn typed_key(&self) -> String {
        match self {
            Value::Null => "0:null".to_string(),
            Value::Num(_) => format!("n:{}", self.render()),
            Value::Text(t) => format!("t:{t}"),
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.typed_key() == other.typed_key()
    }
}

/// Per-table rows, each row one [`Value`] per column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatabaseInstance {
    pub rows: BTreeMap<String, Vec<Vec<Value>>>,
}

impl DatabaseInstance {
    pub fn validate(&self, schema: &RelationalSchema) -> Result<(), SchemaError> {
        for (tname, rows) in &self.rows {
            let table = schema
                .table(tname)
                .ok_or_else(|| SchemaError::UnknownTable(tname.clone()))?;
            for row in rows {
                if row.len() != table.columns.len() {
                    return Err(SchemaError::RowArity {
                        table: tname.clone(),
                        got: row.len(),
                        want: table.columns.len(),
                    });
                }
                for (value, col) in row.iter().zip(&table.columns) {
                    let ok = matches!(
                        (value, col.ty),
                        (Value::Num(_), ColumnType::Number)
                            | (Value::Text(_), ColumnType::Text)
                            | (Value::Null, _)
                    );
                    if !ok {
                        return Err(SchemaError::ValueType {
                            column: col.name.clone(),
                            ty: col.ty,
                            value: value.render(),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Kind of schema element a vocabulary token names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Table,
    Column,
    EntityLabel,
    RelationLabel,
    Property,
    Value,
}

/// Flat normalized token set of one schema, each token mapped to the kind of
/// element it names. Membership in this set is what makes a logical-form
/// token a semantic anchor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchemaVocabulary {
    pub tokens: BTreeMap<String, TokenKind>,
}

impl SchemaVocabulary {
    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains_key(token)
    }

    pub fn kind(&self, token: &str) -> Option<TokenKind> {
        self.tokens.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn insert_first(&mut self, token: String, kind: TokenKind) {
        self.tokens.entry(token).or_insert(kind);
    }
}

/// All tokens a SPARQL-like query may use to reference the KB: node and edge
/// labels, property names, and rendered property values. A token that plays
/// several roles keeps the first kind in that precedence order.
pub fn kb_vocabulary(kb: &KnowledgeBase) -> SchemaVocabulary {
    let mut vocab = SchemaVocabulary::default();
    for n in &kb.nodes {
        vocab.insert_first(normalize(&n.label), TokenKind::EntityLabel);
    }
    for e in &kb.edges {
        vocab.insert_first(normalize(&e.label), TokenKind::RelationLabel);
    }
    for n in &kb.nodes {
        for (p, _) in &n.properties {
            vocab.insert_first(normalize(p), TokenKind::Property);
        }
    }
    for e in &kb.edges {
        for (p, _) in &e.properties {
            vocab.insert_first(normalize(p), TokenKind::Property);
        }
    }
    for n in &kb.nodes {
        for (_, v) in &n.properties {
            vocab.insert_first(v.render(), TokenKind::Value);
        }
    }
    for e in &kb.edges {
        for (_, v) in &e.properties {
            vocab.insert_first(v.render(), TokenKind::Value);
        }
    }
    vocab
}

/// Table and column names only; cell values are not part of a DB vocabulary.
pub fn db_vocabulary(schema: &RelationalSchema) -> SchemaVocabulary {
    let mut vocab = SchemaVocabulary::default();
    for t in &schema.tables {
        vocab.insert_first(normalize(&t.name), TokenKind::Table);
    }
    for t in &schema.tables {
        for c in &t.columns {
            vocab.insert_first(normalize(&c.name), TokenKind::Column);
        }
    }
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_kb() -> KnowledgeBase {
        KnowledgeBase {
            nodes: vec![
                KbNode {
                    id: "n0".into(),
                    label: "Saab".into(),
                    properties: vec![("founded".into(), PropValue::Int(1945))],
                },
                KbNode { id: "n1".into(), label: "car1".into(), properties: vec![] },
            ],
            edges: vec![KbEdge {
                id: "e0".into(),
                src: "n1".into(),
                dst: "n0".into(),
                label: "produced_by".into(),
                properties: vec![],
            }],
        }
    }

    #[test]
    fn kb_vocabulary_enumerates_labels_properties_values() {
        let vocab = kb_vocabulary(&sample_kb());
        assert_eq!(vocab.kind("saab"), Some(TokenKind::EntityLabel));
        assert_eq!(vocab.kind("produced_by"), Some(TokenKind::RelationLabel));
        assert_eq!(vocab.kind("founded"), Some(TokenKind::Property));
        assert_eq!(vocab.kind("1945"), Some(TokenKind::Value));
        assert_eq!(vocab.len(), 5); // car1 label included
    }

    #[test]
    fn empty_kb_gives_empty_vocabulary() {
        let kb = KnowledgeBase { nodes: vec![], edges: vec![] };
        assert!(kb_vocabulary(&kb).is_empty());
    }

    #[test]
    fn kb_vocabulary_size_is_count_of_unique_renderings() {
        let kb = sample_kb();
        let vocab = kb_vocabulary(&kb);
        let mut expected: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
        for n in &kb.nodes {
            expected.insert(normalize(&n.label));
        }
        for e in &kb.edges {
            expected.insert(normalize(&e.label));
        }
        for props in kb
            .nodes
            .iter()
            .map(|n| &n.properties)
            .chain(kb.edges.iter().map(|e| &e.properties))
        {
            for (p, v) in props {
                expected.insert(normalize(p));
                expected.insert(v.render());
            }
        }
        assert_eq!(vocab.len(), expected.len());
    }

    #[test]
    fn db_vocabulary_contains_tables_and_columns() {
        let schema = RelationalSchema {
            tables: vec![Table {
                name: "company".into(),
                columns: vec![
                    Column { name: "name".into(), ty: ColumnType::Text },
                    Column { name: "founded".into(), ty: ColumnType::Number },
                ],
            }],
        };
        let vocab = db_vocabulary(&schema);
        assert_eq!(vocab.kind("company"), Some(TokenKind::Table));
        assert_eq!(vocab.kind("name"), Some(TokenKind::Column));
        assert_eq!(vocab.kind("founded"), Some(TokenKind::Column));
        assert_eq!(vocab.len(), 3);
    }

    #[test]
    fn empty_schema_gives_empty_vocabulary() {
        let schema = RelationalSchema { tables: vec![] };
        assert!(db_vocabulary(&schema).is_empty());
    }

    #[test]
    fn duplicate_column_names_across_tables_collapse() {
        let schema = RelationalSchema {
            tables: vec![
                Table {
                    name: "company".into(),
                    columns: vec![Column { name: "name".into(), ty: ColumnType::Text }],
                },
                Table {
                    name: "museum".into(),
                    columns: vec![Column { name: "name".into(), ty: ColumnType::Text }],
                },
            ],
        };
        let vocab = db_vocabulary(&schema);
        assert_eq!(vocab.kind("name"), Some(TokenKind::Column));
        assert_eq!(vocab.len(), 3);
    }

    #[test]
    fn normalization_lowercases_and_joins_whitespace() {
        assert_eq!(normalize("Founded  In"), "founded_in");
        assert_eq!(normalize(" No. "), "no.");
        assert_eq!(normalize("saab"), "saab");
    }

    #[test]
    fn normalization_is_a_fixpoint() {
        for raw in ["Founded In", "  A  B  C ", "MiXeD", "no.", "1-1000181-1"] {
            let once = normalize(raw);
            assert_eq!(normalize(&once), once);
        }
    }

    #[test]
    fn vocabulary_construction_is_order_independent() {
        let mut kb = sample_kb();
        let v1 = kb_vocabulary(&kb);
        kb.nodes.reverse();
        kb.edges.reverse();
        let v2 = kb_vocabulary(&kb);
        assert_eq!(v1, v2);
    }

    #[test]
    fn validation_rejects_reserved_labels() {
        let mut kb = sample_kb();
        kb.nodes[0].label = "select".into();
        assert!(matches!(kb.validate(), Err(SchemaError::ReservedToken(_))));
    }

    #[test]
    fn validation_rejects_colliding_normalizations() {
        let mut kb = sample_kb();
        kb.nodes[1].label = "SAAB ".into();
        assert!(matches!(kb.validate(), Err(SchemaError::LabelCollision { .. })));
    }

    #[test]
    fn typed_values_distinguish_number_from_text() {
        assert_ne!(Value::Num(1990.0), Value::Text("1990".into()));
        assert_eq!(Value::Num(1990.0).render(), "1990");
        assert_eq!(Value::Text("1990".into()).render(), "1990");
    }
}
