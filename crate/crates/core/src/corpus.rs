//! The native corpus format and its in-memory form.
//!
//! A corpus directory holds two line-delimited JSON files plus a stats
//! report:
//!
//! - `schemas.jsonl` — one versioned document per schema+instance, tagged by
//!   `kind` (`db` or `kb`).
//! - `examples.jsonl` — one record per example with fields `id`, `utterance`,
//!   `main`, `sae`, `saa`, `saa_mask`, `schema_ref`, `split`.
//! - `stats.json` — corpus statistics, reproducible from the generator seed.
//!
//! Field names are stable; bump `version` on breaking changes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::SupervisionTargets;
use crate::lexicon;
use crate::logical_form::TokenSeq;
use crate::schema::{
    db_vocabulary, kb_vocabulary, DatabaseInstance, KnowledgeBase, RelationalSchema,
    SchemaVocabulary,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
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
    #[error("example {example} references unknown schema {schema_ref:?}")]
    MissingSchema { example: String, schema_ref: String },
    #[error("unsupported corpus format version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// One (utterance, logical form) pair with precomputed supervision targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub utterance: TokenSeq,
    pub main: TokenSeq,
    pub sae: TokenSeq,
    pub saa: TokenSeq,
    pub saa_mask: Vec<bool>,
    pub schema_ref: String,
    pub split: Split,
}

impl Example {
    pub fn targets(&self) -> SupervisionTargets {
        SupervisionTargets {
            main: self.main.clone(),
            sae: self.sae.clone(),
            saa: self.saa.clone(),
            saa_mask: self.saa_mask.clone(),
        }
    }
}

/// One schema+instance document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SchemaRecord {
    Db {
        version: u32,
        id: String,
        schema: RelationalSchema,
        rows: DatabaseInstance,
    },
    Kb {
        version: u32,
        id: String,
        schema: KnowledgeBase,
        triples: Vec<[String; 3]>,
    },
}

impl SchemaRecord {
    pub fn id(&self) -> &str {
        match self {
            SchemaRecord::Db { id, .. } | SchemaRecord::Kb { id, .. } => id,
        }
    }

    pub fn version(&self) -> u32 {
        match self {
            SchemaRecord::Db { version, .. } | SchemaRecord::Kb { version, .. } => *version,
        }
    }

    pub fn vocabulary(&self) -> SchemaVocabulary {
        match self {
            SchemaRecord::Db { schema, .. } => db_vocabulary(schema),
            SchemaRecord::Kb { schema, .. } => kb_vocabulary(schema),
        }
    }

    pub fn is_kb(&self) -> bool {
        matches!(self, SchemaRecord::Kb { .. })
    }
}

/// Histogram-style corpus statistics; deterministic given the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub examples: usize,
    pub per_split: BTreeMap<String, usize>,
    pub anchors_per_example: BTreeMap<usize, usize>,
    pub query_shapes: BTreeMap<String, usize>,
    pub examples_without_anchors: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub schemas: BTreeMap<String, SchemaRecord>,
    pub examples: Vec<Example>,
}

impl Corpus {
    pub fn schema_for(&self, ex: &Example) -> Result<&SchemaRecord, CorpusError> {
        self.schemas.get(&ex.schema_ref).ok_or_else(|| CorpusError::MissingSchema {
            example: ex.id.clone(),
            schema_ref: ex.schema_ref.clone(),
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Deterministic token vocabulary over the whole corpus: specials first,
    /// then every utterance/target token in sorted order.
    pub fn token_vocabulary(&self) -> Vec<String> {
        let mut tokens: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for ex in &self.examples {
            for t in ex.utterance.iter().chain(ex.main.iter()) {
                tokens.insert(t);
            }
        }
        let mut vocab: Vec<String> =
            lexicon::SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(tokens.into_iter().filter(|t| !lexicon::is_special(t)).map(String::from));
        vocab
    }

    pub fn stats(&self) -> CorpusStats {
        let mut stats = CorpusStats { examples: self.examples.len(), ..Default::default() };
        for ex in &self.examples {
            *stats.per_split.entry(ex.split.to_string()).or_default() += 1;
            let anchors = ex.saa_mask.iter().filter(|&&m| m).count();
            *stats.anchors_per_example.entry(anchors).or_default() += 1;
            if anchors == 0 {
                stats.examples_without_anchors += 1;
            }
            *stats.query_shapes.entry(query_shape(ex)).or_default() += 1;
        }
        stats
    }

    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        let io_err = |path: &Path, source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

        let schema_path = dir.join("schemas.jsonl");
        let mut out = String::new();
        for rec in self.schemas.values() {
            out.push_str(&serde_json::to_string(rec).expect("schema records serialize"));
            out.push('\n');
        }
        fs::write(&schema_path, out).map_err(|e| io_err(&schema_path, e))?;

        let examples_path = dir.join("examples.jsonl");
        let mut file = std::io::BufWriter::new(
            fs::File::create(&examples_path).map_err(|e| io_err(&examples_path, e))?,
        );
        for ex in &self.examples {
            serde_json::to_writer(&mut file, ex).expect("examples serialize");
            file.write_all(b"\n").map_err(|e| io_err(&examples_path, e))?;
        }
        file.flush().map_err(|e| io_err(&examples_path, e))?;

        let stats_path = dir.join("stats.json");
        let stats = serde_json::to_string_pretty(&self.stats()).expect("stats serialize");
        fs::write(&stats_path, stats).map_err(|e| io_err(&stats_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Corpus, CorpusError> {
        let mut corpus = Corpus::default();
        let schema_path = dir.join("schemas.jsonl");
        for (line_no, line) in read_lines(&schema_path)?.into_iter().enumerate() {
            let rec: SchemaRecord =
                serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                    path: schema_path.display().to_string(),
                    line: line_no + 1,
                    source,
                })?;
            if rec.version() != FORMAT_VERSION {
                return Err(CorpusError::Version(rec.version()));
            }
            corpus.schemas.insert(rec.id().to_string(), rec);
        }
        let examples_path = dir.join("examples.jsonl");
        for (line_no, line) in read_lines(&examples_path)?.into_iter().enumerate() {
            let ex: Example = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                path: examples_path.display().to_string(),
                line: line_no + 1,
                source,
            })?;
            corpus.examples.push(ex);
        }
        for ex in &corpus.examples {
            corpus.schema_for(ex)?;
        }
        Ok(corpus)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    BufReader::new(file)
        .lines()
        .map(|l| {
            l.map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
        })
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect()
}

/// Coarse shape label used in histograms and per-shape accuracy breakdowns.
pub fn query_shape(ex: &Example) -> String {
    use crate::logical_form::{parse_sparql, parse_sql};
    let text = ex.main.text();
    if let Ok(q) = parse_sql(&text) {
        let agg = q.aggregator.keyword().unwrap_or("none");
        return format!("sql/agg={agg}/conds={}", q.conditions.len());
    }
    if let Ok(q) = parse_sparql(&text) {
        return format!("sparql/patterns={}/filters={}", q.patterns.len(), q.filters.len());
    }
    "unparseable".to_string()
}

/// Integer token ids for one vocabulary; ids are dense and stable for a
/// fixed token list.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Vocab {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn bos(&self) -> u32 {
        self.id(lexicon::BOS).expect("specials always present")
    }

    pub fn eos(&self) -> u32 {
        self.id(lexicon::EOS).expect("specials always present")
    }

    pub fn pad(&self) -> u32 {
        self.id(lexicon::PAD).expect("specials always present")
    }

    pub fn encode(&self, seq: &TokenSeq) -> Option<Vec<u32>> {
        seq.iter().map(|t| self.id(t)).collect()
    }

    /// Decode ids to tokens, stopping before the first EOS.
    pub fn decode_until_eos(&self, ids: &[u32]) -> TokenSeq {
        let eos = self.eos();
        TokenSeq::new(
            ids.iter()
                .take_while(|&&id| id != eos)
                .map(|&id| self.token(id).to_string())
                .collect(),
        )
    }
}
