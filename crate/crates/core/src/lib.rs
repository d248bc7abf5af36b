//! Schema-grounded semantic parsing at desk scale.
//!
//! The crate generates synthetic (utterance, logical form) corpora over random
//! database and knowledge-base schemas, trains a small encoder-decoder
//! transformer whose intermediate decoder layers carry anchor-extraction and
//! anchor-alignment supervision, executes the generated queries in memory, and
//! reports execution accuracy, hallucination counts, and layer-level probes.

pub mod analysis;
pub mod anchors;
pub mod checkpoint;
pub mod corpus;
pub mod datagen;
pub mod executor;
pub mod lexicon;
pub mod logical_form;
pub mod model;
pub mod schema;
pub mod tensor;
pub mod training;

pub use analysis::{EvalReport, WeightDistributionReport};
pub use anchors::{extract_anchors, AnchorOccurrence, SupervisionTargets};
pub use corpus::{Corpus, CorpusStats, Example, SchemaRecord, Split, Vocab};
pub use datagen::{generate_corpus, ingest_wikisql, GenConfig};
pub use executor::{execute_sparql, execute_sql, result_equal, ResultSet};
pub use logical_form::{
    parse_sparql, parse_sql, serialize_sparql, serialize_sql, ParseError, SparqlQuery, SqlQuery,
    TokenSeq,
};
pub use model::{generate, DecodeMode, ForwardTrace, Model, ModelConfig};
pub use schema::{
    db_vocabulary, kb_vocabulary, DatabaseInstance, KnowledgeBase, RelationalSchema,
    SchemaVocabulary,
};
pub use tensor::{Graph, NodeId, TensorError};
pub use training::{fit, Ablation, FitReport, TrainConfig};
