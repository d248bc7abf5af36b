//! Pre-norm transformer forward pass on the tape.

use std::sync::Arc;

use rand::Rng;

use crate::tensor::{Graph, NodeId, TensorError};

use super::{
    aggregate_intermediate, head_logits, Activation, AttnIdx, BoundParams, ForwardOpts,
    ForwardTrace, Model, ModelError, TaskTrace,
};

const LN_EPS: f64 = 1e-5;

impl Model {
    /// Teacher-forced pass: encode `x_ids`, decode `y_in_ids` (shifted
    /// target), retain every decoder layer state, and apply the main and
    /// task heads.
    pub fn forward(
        &self,
        g: &mut Graph,
        x_ids: &[u32],
        y_in_ids: &[u32],
        opts: &mut ForwardOpts,
    ) -> Result<ForwardTrace, ModelError> {
        self.check_ids(x_ids, self.config.max_source_len)?;
        self.check_ids(y_in_ids, self.config.max_target_len + 1)?;
        let bound = self.params.bind(g, opts.requires_grad);
        let encoder = self.encode_bound(g, &bound, x_ids, opts)?;
        self.decode_bound(g, &bound, encoder, y_in_ids, opts)
    }

    /// Encoder half only; used by generation to encode once per input.
    pub fn encode(
        &self,
        g: &mut Graph,
        x_ids: &[u32],
        opts: &mut ForwardOpts,
    ) -> Result<NodeId, ModelError> {
        self.check_ids(x_ids, self.config.max_source_len)?;
        let bound = self.params.bind(g, opts.requires_grad);
        self.encode_bound(g, &bound, x_ids, opts)
    }

    /// Decoder half over an already-encoded source. `encoder` may be a leaf
    /// holding cached encoder values.
    pub fn decode(
        &self,
        g: &mut Graph,
        encoder: NodeId,
        y_in_ids: &[u32],
        opts: &mut ForwardOpts,
    ) -> Result<ForwardTrace, ModelError> {
        self.check_ids(y_in_ids, self.config.max_target_len + 1)?;
        let bound = self.params.bind(g, opts.requires_grad);
        self.decode_bound(g, &bound, encoder, y_in_ids, opts)
    }

    fn check_ids(&self, ids: &[u32], max: usize) -> Result<(), ModelError> {
        if ids.len() > max {
            return Err(ModelError::TooLong { got: ids.len(), max });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenId { id: bad, vocab: self.config.vocab_size });
        }
        Ok(())
    }

    fn encode_bound(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x_ids: &[u32],
        opts: &mut ForwardOpts,
    ) -> Result<NodeId, ModelError> {
        let l = &self.layout;
        let mut h = self.embed(g, bound, x_ids, opts)?;
        for layer in &l.enc {
            let normed = g.layer_norm(h, bound.ids[layer.ln1g], bound.ids[layer.ln1b], LN_EPS)?;
            let attn = self.attention(g, bound, normed, normed, &layer.attn, None, opts)?;
            let attn = self.maybe_dropout(g, attn, opts)?;
            h = g.add(h, attn)?;
            let normed = g.layer_norm(h, bound.ids[layer.ln2g], bound.ids[layer.ln2b], LN_EPS)?;
            let ff = self.feed_forward(g, bound, normed, layer.w1, layer.b1, layer.w2, layer.b2, opts)?;
            h = g.add(h, ff)?;
        }
        Ok(g.layer_norm(h, bound.ids[l.enc_lng], bound.ids[l.enc_lnb], LN_EPS)?)
    }

    fn decode_bound(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        encoder: NodeId,
        y_in_ids: &[u32],
        opts: &mut ForwardOpts,
    ) -> Result<ForwardTrace, ModelError> {
        let l = &self.layout;
        let k = y_in_ids.len();
        let causal = causal_mask(k);
        let mut h = self.embed(g, bound, y_in_ids, opts)?;
        let mut decoder_layers = Vec::with_capacity(l.dec.len());
        for layer in &l.dec {
            let normed = g.layer_norm(h, bound.ids[layer.ln1g], bound.ids[layer.ln1b], LN_EPS)?;
            let self_attn = self.attention(
                g,
                bound,
                normed,
                normed,
                &layer.self_attn,
                Some(Arc::clone(&causal)),
                opts,
            )?;
            let self_attn = self.maybe_dropout(g, self_attn, opts)?;
            h = g.add(h, self_attn)?;

            let normed = g.layer_norm(h, bound.ids[layer.ln2g], bound.ids[layer.ln2b], LN_EPS)?;
            let cross = self.attention(g, bound, normed, encoder, &layer.cross_attn, None, opts)?;
            let cross = self.maybe_dropout(g, cross, opts)?;
            h = g.add(h, cross)?;

            let normed = g.layer_norm(h, bound.ids[layer.ln3g], bound.ids[layer.ln3b], LN_EPS)?;
            let ff = self.feed_forward(g, bound, normed, layer.w1, layer.b1, layer.w2, layer.b2, opts)?;
            h = g.add(h, ff)?;
            decoder_layers.push(h);
        }

        // main head: final layer norm, then the transposed embedding
        let final_state = *decoder_layers.last().expect("decoder layers nonempty");
        let normed = g.layer_norm(final_state, bound.ids[l.dec_lng], bound.ids[l.dec_lnb], LN_EPS)?;
        let emb_t = g.transpose(bound.ids[l.embedding])?;
        let main_logits = g.matmul(normed, emb_t)?;

        let mut tasks = std::collections::BTreeMap::new();
        let intermediates = &decoder_layers[..decoder_layers.len() - 1];
        for (task, head) in &l.heads {
            let (aggregated, coeffs) = match head.hier_w {
                Some(hw) => {
                    let coeffs = g.softmax(bound.ids[hw], 0)?;
                    let agg = aggregate_intermediate(
                        g,
                        intermediates,
                        bound.ids[hw],
                        self.config.residual_aggregation,
                    )?;
                    (agg, Some(coeffs))
                }
                // no hierarchy: the head reads the final layer directly
                None => (final_state, None),
            };
            let logits = head_logits(g, aggregated, bound.ids[head.proj_w], bound.ids[head.proj_b])?;
            tasks.insert(*task, TaskTrace { aggregated, coeffs, logits });
        }

        Ok(ForwardTrace {
            encoder,
            decoder_layers,
            main_logits,
            tasks,
            bound: bound.clone(),
        })
    }

    fn embed(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        ids: &[u32],
        opts: &mut ForwardOpts,
    ) -> Result<NodeId, ModelError> {
        let d = self.config.d_model;
        let e = g.embedding_lookup(bound.ids[self.layout.embedding], ids)?;
        let scaled = g.scale(e, (d as f64).sqrt());
        let pos = g.leaf(sinusoidal(ids.len(), d), vec![ids.len(), d], false);
        let with_pos = g.add(scaled, pos)?;
        Ok(self.maybe_dropout(g, with_pos, opts)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn feed_forward(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x: NodeId,
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
        opts: &mut ForwardOpts,
    ) -> Result<NodeId, TensorError> {
        let hidden = g.matmul(x, bound.ids[w1])?;
        let hidden = g.add(hidden, bound.ids[b1])?;
        let activated = match self.config.activation {
            Activation::Relu => g.relu(hidden),
            Activation::Gelu => g.gelu(hidden),
        };
        let out = g.matmul(activated, bound.ids[w2])?;
        let out = g.add(out, bound.ids[b2])?;
        self.maybe_dropout(g, out, opts)
    }

    /// Multi-head attention; heads are column slices of the projections.
    fn attention(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        q_in: NodeId,
        kv_in: NodeId,
        idx: &AttnIdx,
        causal: Option<Arc<Vec<bool>>>,
        opts: &mut ForwardOpts,
    ) -> Result<NodeId, TensorError> {
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let q = g.matmul(q_in, bound.ids[idx.wq])?;
        let q = g.add(q, bound.ids[idx.bq])?;
        let k = g.matmul(kv_in, bound.ids[idx.wk])?;
        let k = g.add(k, bound.ids[idx.bk])?;
        let v = g.matmul(kv_in, bound.ids[idx.wv])?;
        let v = g.add(v, bound.ids[idx.bv])?;

        let mut outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.narrow(q, 1, h * dh, dh)?;
            let kh = g.narrow(k, 1, h * dh, dh)?;
            let vh = g.narrow(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = match &causal {
                Some(mask) => {
                    debug_assert_eq!(mask.len(), g.values(scores).len());
                    g.masked_fill(scores, Arc::clone(mask), -1e30)?
                }
                None => scores,
            };
            let attn = g.softmax(scores, 1)?;
            let attn = self.maybe_dropout(g, attn, opts)?;
            outputs.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat(&outputs, 1)?;
        let out = g.matmul(merged, bound.ids[idx.wo])?;
        g.add(out, bound.ids[idx.bo])
    }

    fn maybe_dropout(
        &self,
        g: &mut Graph,
        x: NodeId,
        opts: &mut ForwardOpts,
    ) -> Result<NodeId, TensorError> {
        let rate = self.config.dropout;
        match &mut opts.dropout_rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..g.values(x).len())
                    .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                g.dropout(x, Arc::new(mask))
            }
            _ => Ok(x),
        }
    }
}

/// Upper-triangular causal mask for self-attention scores of shape [k, k].
fn causal_mask(k: usize) -> Arc<Vec<bool>> {
    let mut mask = vec![false; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            mask[i * k + j] = true;
        }
    }
    Arc::new(mask)
}

/// Fixed sinusoidal positional encodings.
fn sinusoidal(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            out[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}
