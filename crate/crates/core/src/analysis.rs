//! Evaluation and interpretability: execution accuracy, hallucination
//! counting, layer-weight distribution reports, and per-layer decodings of
//! the intermediate decoder states.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::extract_anchors;
use crate::corpus::{query_shape, Corpus, Example, SchemaRecord};
use crate::executor::{execute_sparql, execute_sql, result_equal, ResultSet};
use crate::logical_form::{parse_sparql, parse_sql, serialize_sparql, serialize_sql, TokenSeq};
use crate::model::{generate, DecodeMode, ForwardOpts, Model, ModelError, TaskKind};
use crate::tensor::Graph;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Corpus(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub total: usize,
    pub correct: usize,
}

/// Evaluation summary over one prediction set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub examples: usize,
    pub execution_accuracy: f64,
    pub exact_match_rate: f64,
    pub parse_failures: usize,
    /// Predictions referencing at least one identifier outside the
    /// example's schema vocabulary (unparseable predictions included).
    pub hallucinations_strict: usize,
    /// Predictions whose anchor multiset differs from the gold one
    /// (unparseable predictions included).
    pub hallucinations_anchor_mismatch: usize,
    pub per_shape: BTreeMap<String, ShapeStats>,
}

/// Execute a gold or predicted query against its example's schema record.
fn execute_text(
    text: &str,
    record: &SchemaRecord,
) -> Result<ResultSet, String> {
    match record {
        SchemaRecord::Db { schema, rows, .. } => {
            let q = parse_sql(text).map_err(|e| e.to_string())?;
            execute_sql(&q, schema, rows).map_err(|e| e.to_string())
        }
        SchemaRecord::Kb { schema, .. } => {
            let q = parse_sparql(text).map_err(|e| e.to_string())?;
            execute_sparql(&q, schema).map_err(|e| e.to_string())
        }
    }
}

/// Canonical serialization of a prediction after parsing, or None when the
/// prediction does not parse under the example's dialect.
fn reserialize(text: &str, record: &SchemaRecord) -> Option<crate::logical_form::SerializedQuery> {
    match record {
        SchemaRecord::Db { .. } => parse_sql(text).ok().map(|q| serialize_sql(&q)),
        SchemaRecord::Kb { .. } => parse_sparql(text).ok().map(|q| serialize_sparql(&q)),
    }
}

struct PerExample {
    correct: bool,
    exact: bool,
    parsed: bool,
    strict_halluc: bool,
    anchor_mismatch: bool,
    shape: String,
}

fn judge(ex: &Example, prediction: &TokenSeq, record: &SchemaRecord) -> PerExample {
    let shape = query_shape(ex);
    let text = prediction.text();
    let exact = *prediction == ex.main;

    let Some(serialized) = reserialize(&text, record) else {
        return PerExample {
            correct: false,
            exact,
            parsed: false,
            strict_halluc: true,
            anchor_mismatch: true,
            shape,
        };
    };

    let vocab = record.vocabulary();
    let strict_halluc = serialized
        .schema_identifier_positions()
        .iter()
        .any(|(pos, _)| !vocab.contains(&serialized.tokens[*pos]));

    let mut gold_anchors: Vec<&str> = extract_anchors(&ex.main, &vocab)
        .iter()
        .map(|o| o.token.as_str())
        .map(|s| -> &str { Box::leak(s.to_string().into_boxed_str()) })
        .collect();
    let _ = &mut gold_anchors;

    let gold_multiset = anchor_multiset(&ex.main, record);
    let pred_multiset = anchor_multiset(&serialized.tokens, record);
    let anchor_mismatch = gold_multiset != pred_multiset;

    let correct = match (execute_text(&ex.main.text(), record), execute_text(&text, record)) {
        (Ok(gold), Ok(pred)) => result_equal(&gold, &pred),
        _ => false,
    };
    PerExample { correct, exact, parsed: true, strict_halluc, anchor_mismatch, shape }
}

fn anchor_multiset(seq: &TokenSeq, record: &SchemaRecord) -> BTreeMap<String, usize> {
    let vocab = record.vocabulary();
    let mut counts = BTreeMap::new();
    for occ in extract_anchors(seq, &vocab) {
        *counts.entry(occ.token).or_insert(0) += 1;
    }
    counts
}

/// Score a set of predictions against gold examples and their instances.
/// A prediction is execution-correct iff it parses, executes without error,
/// and returns the gold denotation.
pub fn evaluate_predictions(
    corpus: &Corpus,
    examples: &[&Example],
    predictions: &[TokenSeq],
) -> Result<EvalReport, AnalysisError> {
    if examples.len() != predictions.len() {
        return Err(AnalysisError::Corpus(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    let mut report = EvalReport { examples: examples.len(), ..EvalReport::default() };
    let judged: Vec<PerExample> = examples
        .par_iter()
        .zip(predictions)
        .map(|(ex, pred)| {
            let record = corpus
                .schema_for(ex)
                .map_err(|e| AnalysisError::Corpus(e.to_string()))?;
            Ok(judge(ex, pred, record))
        })
        .collect::<Result<_, AnalysisError>>()?;
    let mut correct = 0usize;
    let mut exact = 0usize;
    for j in judged {
        if j.correct {
            correct += 1;
        }
        if j.exact {
            exact += 1;
        }
        if !j.parsed {
            report.parse_failures += 1;
        }
        if j.strict_halluc {
            report.hallucinations_strict += 1;
        }
        if j.anchor_mismatch {
            report.hallucinations_anchor_mismatch += 1;
        }
        let s = report.per_shape.entry(j.shape).or_default();
        s.total += 1;
        if j.correct {
            s.correct += 1;
        }
    }
    if !examples.is_empty() {
        report.execution_accuracy = correct as f64 / examples.len() as f64;
        report.exact_match_rate = exact as f64 / examples.len() as f64;
    }
    Ok(report)
}

/// Fraction of predictions whose execution result matches the gold result.
pub fn execution_accuracy(
    corpus: &Corpus,
    examples: &[&Example],
    predictions: &[TokenSeq],
) -> Result<f64, AnalysisError> {
    Ok(evaluate_predictions(corpus, examples, predictions)?.execution_accuracy)
}

/// (strict schema-violation count, anchor-mismatch count).
pub fn count_hallucinations(
    corpus: &Corpus,
    examples: &[&Example],
    predictions: &[TokenSeq],
) -> Result<(usize, usize), AnalysisError> {
    let report = evaluate_predictions(corpus, examples, predictions)?;
    Ok((report.hallucinations_strict, report.hallucinations_anchor_mismatch))
}

/// Decode every example with the model and score the predictions.
pub fn evaluate_model(
    model: &Model,
    corpus: &Corpus,
    examples: &[&Example],
    mode: DecodeMode,
) -> Result<(EvalReport, Vec<TokenSeq>), AnalysisError> {
    let predictions: Vec<TokenSeq> = examples
        .par_iter()
        .map(|ex| -> Result<TokenSeq, AnalysisError> {
            let mut x = model.vocab.encode(&ex.utterance).ok_or_else(|| {
                AnalysisError::Corpus(format!(
                    "example {} has tokens outside the model vocabulary",
                    ex.id
                ))
            })?;
            x.push(model.vocab.eos());
            Ok(generate(model, &x, mode)?.tokens)
        })
        .collect::<Result<_, _>>()?;
    let report = evaluate_predictions(corpus, examples, &predictions)?;
    Ok((report, predictions))
}

/// Layer-weight distribution of one task head plus its center of mass
/// (layers counted from 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeightReport {
    pub task: String,
    pub weights: Vec<f64>,
    pub center_of_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDistributionReport {
    pub tasks: Vec<TaskWeightReport>,
}

impl WeightDistributionReport {
    /// Plain-text table, one row per task.
    pub fn render(&self) -> String {
        let mut out = String::from("task        layer weights (softmax)                 center\n");
        for t in &self.tasks {
            let ws: Vec<String> = t.weights.iter().map(|w| format!("{w:.4}")).collect();
            out.push_str(&format!("{:<11} [{}]  {:.3}\n", t.task, ws.join(", "), t.center_of_mass));
        }
        out
    }
}

/// Softmax of each task's layer weights; None for checkpoints trained
/// without the hierarchical aggregation (not applicable).
pub fn weight_distribution_report(model: &Model) -> Option<WeightDistributionReport> {
    let dists = crate::training::hierarchy_distributions(model)?;
    let tasks = dists
        .into_iter()
        .map(|(task, weights)| {
            let center_of_mass = weights
                .iter()
                .enumerate()
                .map(|(i, w)| (i + 1) as f64 * w)
                .sum();
            TaskWeightReport { task, weights, center_of_mass }
        })
        .collect();
    Some(WeightDistributionReport { tasks })
}

/// One intermediate layer's greedy decoding through one task head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDecoding {
    pub task: String,
    /// 1-based intermediate layer index.
    pub layer: usize,
    pub tokens: TokenSeq,
}

/// Teacher-forced pass on the example's main target, then every
/// intermediate layer state is pushed through every task head and argmaxed
/// per position. Returns (N-1) x (number of task heads) sequences, each of
/// the framed target length.
pub fn decode_intermediate_layers(
    model: &Model,
    ex: &Example,
) -> Result<Vec<LayerDecoding>, AnalysisError> {
    let prep = crate::training::PreparedExample::build(ex, &model.vocab)
        .map_err(|e| AnalysisError::Corpus(e.to_string()))?;
    let mut g = Graph::new();
    let trace = model.forward(&mut g, &prep.x, &prep.y_in, &mut ForwardOpts::eval())?;
    let v = model.config.vocab_size;
    let mut out = Vec::new();
    for task in model.tasks.active() {
        let (proj_w, proj_b, _) = model.head_index(task).expect("active task has a head");
        for (li, state) in trace.intermediate_states().iter().enumerate() {
            let logits = crate::model::head_logits(
                &mut g,
                *state,
                trace.bound.ids[proj_w],
                trace.bound.ids[proj_b],
            )
            .map_err(ModelError::from)?;
            let vals = g.values(logits);
            let tokens: Vec<String> = (0..prep.y_in.len())
                .map(|pos| {
                    let row = &vals[pos * v..(pos + 1) * v];
                    let mut best = 0;
                    for j in 1..v {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    model.vocab.token(best as u32).to_string()
                })
                .collect();
            out.push(LayerDecoding {
                task: task.name().to_string(),
                layer: li + 1,
                tokens: TokenSeq::new(tokens),
            });
        }
    }
    Ok(out)
}

/// Accuracy of one task's decoding at one layer against the task targets,
/// counted over live positions only.
pub fn layer_target_accuracy(
    model: &Model,
    ex: &Example,
    decoding: &LayerDecoding,
) -> Result<f64, AnalysisError> {
    let prep = crate::training::PreparedExample::build(ex, &model.vocab)
        .map_err(|e| AnalysisError::Corpus(e.to_string()))?;
    let (targets, ignore) = match decoding.task.as_str() {
        "sae" => (&prep.sae_tgt, &prep.sae_ignore),
        _ => (&prep.saa_tgt, &prep.saa_ignore),
    };
    let mut live = 0usize;
    let mut hit = 0usize;
    for (pos, (&tgt, &ig)) in targets.iter().zip(ignore).enumerate() {
        if ig {
            continue;
        }
        live += 1;
        if decoding.tokens.0.get(pos).map(String::as_str) == Some(model.vocab.token(tgt)) {
            hit += 1;
        }
    }
    Ok(if live == 0 { 1.0 } else { hit as f64 / live as f64 })
}

/// Decode helper for tests and the probe subcommand: which task kinds have
/// heads in this model.
pub fn active_tasks(model: &Model) -> Vec<TaskKind> {
    model.tasks.active()
}
