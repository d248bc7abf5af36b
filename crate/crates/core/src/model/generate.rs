//! Autoregressive decoding: greedy and beam search.
//!
//! No KV cache — every step re-runs the decoder over the prefix, which is
//! fine at these sizes. The encoder runs once per input and its output
//! values are re-entered into each step's graph as a constant leaf.

use std::sync::Arc;

use crate::logical_form::TokenSeq;
use crate::tensor::Graph;

use super::{ForwardOpts, Model, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Output tokens without framing; stops before EOS.
    pub tokens: TokenSeq,
    pub ids: Vec<u32>,
    /// Total log-probability of the emitted sequence including EOS.
    pub log_prob: f64,
    /// True when decoding hit the length cap without emitting EOS.
    pub truncated: bool,
}

struct Hypothesis {
    ids: Vec<u32>,
    log_prob: f64,
}

/// Cached encoder output for repeated decode steps.
struct Encoded {
    values: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

impl Model {
    fn encode_once(&self, x_ids: &[u32]) -> Result<Encoded, ModelError> {
        let mut g = Graph::new();
        let enc = self.encode(&mut g, x_ids, &mut ForwardOpts::eval())?;
        Ok(Encoded { values: g.values_arc(enc), shape: g.shape(enc).to_vec() })
    }

    /// Log-softmax over the next token given a decoder prefix.
    fn step_log_probs(&self, enc: &Encoded, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let enc_leaf = g.leaf_shared(Arc::clone(&enc.values), enc.shape.clone(), false);
        let trace = self.decode(&mut g, enc_leaf, prefix, &mut ForwardOpts::eval())?;
        let lsm = g.log_softmax(trace.main_logits, 1)?;
        let v = self.config.vocab_size;
        let last = prefix.len() - 1;
        Ok(g.values(lsm)[last * v..(last + 1) * v].to_vec())
    }
}

/// Decode from `<BOS>` until `<EOS>` or the configured target length cap.
/// Beam search returns the completed hypothesis with the highest total
/// log-probability; ties break toward the lower token id at the divergence
/// point.
pub fn generate(model: &Model, x_ids: &[u32], mode: DecodeMode) -> Result<Generated, ModelError> {
    match mode {
        DecodeMode::Greedy => greedy(model, x_ids),
        DecodeMode::Beam(width) if width <= 1 => greedy(model, x_ids),
        DecodeMode::Beam(width) => beam(model, x_ids, width),
    }
}

fn greedy(model: &Model, x_ids: &[u32]) -> Result<Generated, ModelError> {
    let enc = model.encode_once(x_ids)?;
    let bos = model.vocab.bos();
    let eos = model.vocab.eos();
    let max_len = model.config.max_target_len;
    let mut ids = vec![bos];
    let mut out = Vec::new();
    let mut log_prob = 0.0;
    let mut truncated = true;
    while out.len() < max_len {
        let lp = model.step_log_probs(&enc, &ids)?;
        let (tok, tok_lp) = argmax(&lp);
        log_prob += tok_lp;
        if tok == eos {
            truncated = false;
            break;
        }
        ids.push(tok);
        out.push(tok);
    }
    Ok(Generated {
        tokens: decode_tokens(model, &out),
        ids: out,
        log_prob,
        truncated,
    })
}

/// First maximum wins, so ties resolve to the lowest token id.
fn argmax(log_probs: &[f64]) -> (u32, f64) {
    let mut best = 0usize;
    for (i, &v) in log_probs.iter().enumerate().skip(1) {
        if v > log_probs[best] {
            best = i;
        }
    }
    (best as u32, log_probs[best])
}

fn beam(model: &Model, x_ids: &[u32], width: usize) -> Result<Generated, ModelError> {
    let enc = model.encode_once(x_ids)?;
    let bos = model.vocab.bos();
    let eos = model.vocab.eos();
    let max_len = model.config.max_target_len;

    let mut live = vec![Hypothesis { ids: vec![bos], log_prob: 0.0 }];
    let mut completed: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        // (score, token, parent) candidates across all live hypotheses
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let lp = model.step_log_probs(&enc, &hyp.ids)?;
            for (tok, &tok_lp) in lp.iter().enumerate() {
                candidates.push((hyp.log_prob + tok_lp, tok as u32, hi));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("log probs are finite")
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut next = Vec::with_capacity(width);
        for (score, tok, hi) in candidates.into_iter().take(width) {
            let mut ids = live[hi].ids.clone();
            if tok == eos {
                completed.push(Hypothesis { ids, log_prob: score });
            } else {
                ids.push(tok);
                next.push(Hypothesis { ids, log_prob: score });
            }
        }
        live = next;
        if live.is_empty() || completed.len() >= width {
            break;
        }
    }

    let pick_best = |hyps: &[Hypothesis]| -> usize {
        let mut best = 0usize;
        for i in 1..hyps.len() {
            let better = hyps[i]
                .log_prob
                .partial_cmp(&hyps[best].log_prob)
                .expect("finite")
                .then_with(|| hyps[best].ids.cmp(&hyps[i].ids));
            if better == std::cmp::Ordering::Greater {
                best = i;
            }
        }
        best
    };

    let (hyp, truncated) = if completed.is_empty() {
        (&live[pick_best(&live)], true)
    } else {
        (&completed[pick_best(&completed)], false)
    };
    let out: Vec<u32> = hyp.ids[1..].to_vec();
    Ok(Generated {
        tokens: decode_tokens(model, &out),
        ids: out,
        log_prob: hyp.log_prob,
        truncated,
    })
}

fn decode_tokens(model: &Model, ids: &[u32]) -> TokenSeq {
    TokenSeq::new(ids.iter().map(|&id| model.vocab.token(id).to_string()).collect())
}
