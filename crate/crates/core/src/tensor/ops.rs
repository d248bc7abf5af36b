use std::sync::Arc;

use super::graph::{gelu_value, for_each_lane, Graph, NodeId, Op};
use super::{numel, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Resolve matmul operand shapes.
///
/// Returns `(batch, m, k, n, a_batched, b_batched)`. Accepts `[m,k]x[k,n]`,
/// `[B,m,k]x[B,k,n]`, and either side rank-2 against a rank-3 other side
/// (the rank-2 side broadcasts over the batch).
pub(crate) fn matmul_dims(
    sa: &[usize],
    sb: &[usize],
) -> Result<(usize, usize, usize, usize, bool, bool)> {
    let mismatch = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    match (sa.len(), sb.len()) {
        (2, 2) => {
            if sa[1] != sb[0] {
                return Err(mismatch());
            }
            Ok((1, sa[0], sa[1], sb[1], false, false))
        }
        (3, 3) => {
            if sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(mismatch());
            }
            Ok((sa[0], sa[1], sa[2], sb[2], true, true))
        }
        (3, 2) => {
            if sa[2] != sb[0] {
                return Err(mismatch());
            }
            Ok((sa[0], sa[1], sa[2], sb[1], true, false))
        }
        (2, 3) => {
            if sa[1] != sb[1] {
                return Err(mismatch());
            }
            Ok((sb[0], sa[0], sa[1], sb[2], false, true))
        }
        _ => Err(mismatch()),
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() || shape.len() > 2 {
        return Err(TensorError::InvalidAxis { op, axis, rank: shape.len() });
    }
    Ok(())
}

impl Graph {
    /// Matrix product. Inner dimensions must agree; a rank-2 operand
    /// broadcasts over the other side's batch dimension.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n, a_batched, b_batched) = matmul_dims(&sa, &sb)?;
        let av = self.values_arc(a);
        let bv = self.values_arc(b);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if a_batched { &av[bi * m * k..(bi + 1) * m * k] } else { &av[..] };
            let bo = if b_batched { &bv[bi * k * n..(bi + 1) * k * n] } else { &bv[..] };
            let co = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                let arow = &ao[i * k..(i + 1) * k];
                let crow = &mut co[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    let brow = &bo[p * n..(p + 1) * n];
                    for (c, &bv) in crow.iter_mut().zip(brow) {
                        *c += av * bv;
                    }
                }
            }
        }
        let out_shape = if sa.len() == 3 || sb.len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out_shape, out, rg, Op::MatMul { a, b }))
    }

    /// Elementwise sum; also accepts a rank-1 `b` broadcast across the rows
    /// of a rank-2 `a` (bias add).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let av = self.values_arc(a);
        let bv = self.values_arc(b);
        let rg = self.rg(a) || self.rg(b);
        if sa == sb {
            let out: Vec<f64> = av.iter().zip(bv.iter()).map(|(x, y)| x + y).collect();
            Ok(self.push(sa, out, rg, Op::Add { a, b, broadcast_b: false }))
        } else if sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0] {
            let cols = sb[0];
            let mut out = Vec::with_capacity(av.len());
            for row in av.chunks_exact(cols) {
                out.extend(row.iter().zip(bv.iter()).map(|(x, y)| x + y));
            }
            Ok(self.push(sa, out, rg, Op::Add { a, b, broadcast_b: true }))
        } else {
            Err(TensorError::ShapeMismatch { op: "add", lhs: sa, rhs: sb })
        }
    }

    /// Elementwise product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa != sb {
            return Err(TensorError::ShapeMismatch { op: "mul", lhs: sa, rhs: sb });
        }
        let av = self.values_arc(a);
        let bv = self.values_arc(b);
        let out: Vec<f64> = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(sa, out, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|x| x * factor).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Scale { a, factor })
    }

    /// Swap the two axes of a rank-2 tensor.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected rank-2, got shape {s:?}"),
            });
        }
        let (r, c) = (s[0], s[1]);
        let av = self.values_arc(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], out, rg, Op::Transpose { a }))
    }

    /// Concatenate along `axis` (rank-1 axis 0, or rank-2 axis 0/1).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(TensorError::Invalid { op: "concat", msg: "no inputs".into() });
        }
        let first = self.shape(parts[0]).to_vec();
        check_axis("concat", &first, axis)?;
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len()
                || (0..s.len()).any(|d| d != axis && s[d] != first[d])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let mut out = Vec::with_capacity(numel(&out_shape));
        if axis == 0 {
            for p in parts {
                out.extend_from_slice(self.values(*p));
            }
        } else {
            let rows = out_shape[0];
            for i in 0..rows {
                for p in parts {
                    let c = self.shape(*p)[1];
                    let v = self.values(*p);
                    out.extend_from_slice(&v[i * c..(i + 1) * c]);
                }
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out_shape, out, rg, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(a).to_vec();
        check_axis("narrow", &s, axis)?;
        if start + len > s[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!("range {start}..{} exceeds axis size {}", start + len, s[axis]),
            });
        }
        let av = self.values_arc(a);
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let out = match (s.len(), axis) {
            (1, 0) => av[start..start + len].to_vec(),
            (2, 0) => av[start * s[1]..(start + len) * s[1]].to_vec(),
            (2, 1) => {
                let mut v = Vec::with_capacity(s[0] * len);
                for i in 0..s[0] {
                    v.extend_from_slice(&av[i * s[1] + start..i * s[1] + start + len]);
                }
                v
            }
            _ => unreachable!(),
        };
        let rg = self.rg(a);
        Ok(self.push(out_shape, out, rg, Op::Narrow { a, axis, start, len }))
    }

    /// Gather rows of `table` ([v, d]) by token id.
    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "embedding_lookup",
                msg: format!("table must be rank-2, got {s:?}"),
            });
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
            return Err(TensorError::Invalid {
                op: "embedding_lookup",
                msg: format!("token id {bad} out of range for table with {v} rows"),
            });
        }
        let tv = self.values_arc(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&tv[id as usize * d..(id as usize + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), d],
            out,
            rg,
            Op::Embedding { table, ids: Arc::new(ids.to_vec()) },
        ))
    }

    /// Per-row layer normalization with learned gain and shift.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let cols = xs[xs.len() - 1];
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: xs,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let xv = self.values_arc(x);
        let gv = self.values_arc(gamma);
        let bv = self.values_arc(beta);
        let rows = numel(&xs) / cols;
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let xr = &xv[r * cols..(r + 1) * cols];
            let mean = xr.iter().sum::<f64>() / cols as f64;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(
                xr.iter()
                    .zip(gv.iter().zip(bv.iter()))
                    .map(|(&v, (&g, &b))| (v - mean) * inv * g + b),
            );
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(xs, out, rg, Op::LayerNorm { x, gamma, beta, eps }))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Relu { a })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.values(a).iter().map(|&v| gelu_value(v)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, rg, Op::Gelu { a })
    }

    /// Inverted dropout with a caller-sampled keep mask. `mask` entries must
    /// be 0 or 1/(1-rate); eval mode simply skips the op.
    pub fn dropout(&mut self, a: NodeId, mask: Arc<Vec<f64>>) -> Result<NodeId> {
        if mask.len() != self.values(a).len() {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("mask len {} != tensor len {}", mask.len(), self.values(a).len()),
            });
        }
        let out: Vec<f64> = self.values(a).iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::Dropout { a, mask }))
    }

    /// Numerically stable softmax along `axis` (max-subtraction).
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        check_axis("softmax", &shape, axis)?;
        let av = self.values_arc(a);
        let mut out = vec![0.0; av.len()];
        if let Some(cols) = super::graph::contiguous_lanes(&shape, axis) {
            for (out_row, in_row) in out.chunks_exact_mut(cols).zip(av.chunks_exact(cols)) {
                let m = in_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for (o, &x) in out_row.iter_mut().zip(in_row) {
                    *o = (x - m).exp();
                    denom += *o;
                }
                for o in out_row.iter_mut() {
                    *o /= denom;
                }
            }
        } else {
            for_each_lane(&shape, axis, |lane| {
                let m = lane.iter().map(|&i| av[i]).fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for &i in lane {
                    let e = (av[i] - m).exp();
                    out[i] = e;
                    denom += e;
                }
                for &i in lane {
                    out[i] /= denom;
                }
            });
        }
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::Softmax { a, axis }))
    }

    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        check_axis("log_softmax", &shape, axis)?;
        let av = self.values_arc(a);
        let mut out = vec![0.0; av.len()];
        if let Some(cols) = super::graph::contiguous_lanes(&shape, axis) {
            for (out_row, in_row) in out.chunks_exact_mut(cols).zip(av.chunks_exact(cols)) {
                let m = in_row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + in_row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                for (o, &x) in out_row.iter_mut().zip(in_row) {
                    *o = x - lse;
                }
            }
        } else {
            for_each_lane(&shape, axis, |lane| {
                let m = lane.iter().map(|&i| av[i]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + lane.iter().map(|&i| (av[i] - m).exp()).sum::<f64>().ln();
                for &i in lane {
                    out[i] = av[i] - lse;
                }
            });
        }
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::LogSoftmax { a, axis }))
    }

    /// Replace masked entries with `fill`; gradients pass only where unmasked.
    pub fn masked_fill(&mut self, a: NodeId, mask: Arc<Vec<bool>>, fill: f64) -> Result<NodeId> {
        if mask.len() != self.values(a).len() {
            return Err(TensorError::Invalid {
                op: "masked_fill",
                msg: format!("mask len {} != tensor len {}", mask.len(), self.values(a).len()),
            });
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| if m { fill } else { v })
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, rg, Op::MaskedFill { a, mask }))
    }

    /// Sum all entries to a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.values(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![total], rg, Op::Sum { a })
    }

    /// `sum_i coeffs[i] * states[i]` over same-shape states; the rank-1
    /// coefficient vector participates in the gradient.
    pub fn weighted_sum(&mut self, states: &[NodeId], coeffs: NodeId) -> Result<NodeId> {
        if states.is_empty() {
            return Err(TensorError::Invalid { op: "weighted_sum", msg: "no states".into() });
        }
        let cs = self.shape(coeffs).to_vec();
        if cs != [states.len()] {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum",
                lhs: vec![states.len()],
                rhs: cs,
            });
        }
        let shape = self.shape(states[0]).to_vec();
        for s in states {
            if self.shape(*s) != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "weighted_sum",
                    lhs: shape,
                    rhs: self.shape(*s).to_vec(),
                });
            }
        }
        let cv = self.values_arc(coeffs);
        let mut out = vec![0.0; numel(&shape)];
        for (i, s) in states.iter().enumerate() {
            let sv = self.values(*s);
            for (o, v) in out.iter_mut().zip(sv) {
                *o += cv[i] * v;
            }
        }
        let rg = states.iter().any(|s| self.rg(*s)) || self.rg(coeffs);
        Ok(self.push(shape, out, rg, Op::WeightedSum { states: states.to_vec(), coeffs }))
    }

    /// Mean negative log-softmax probability of `targets` over unignored
    /// positions. With every position ignored the loss is a defined zero;
    /// callers are expected to flag that case.
    pub fn cross_entropy_from_logits(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        ignore: &[bool],
    ) -> Result<NodeId> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || ignore.len() != s[0] {
            return Err(TensorError::Invalid {
                op: "cross_entropy_from_logits",
                msg: format!(
                    "logits {s:?} vs {} targets / {} ignore flags",
                    targets.len(),
                    ignore.len()
                ),
            });
        }
        let v = s[1];
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
            return Err(TensorError::Invalid {
                op: "cross_entropy_from_logits",
                msg: format!("target id {bad} out of range for vocab {v}"),
            });
        }
        let lv = self.values_arc(logits);
        let mut total = 0.0;
        let mut n_live = 0usize;
        for (pos, (&tgt, &ig)) in targets.iter().zip(ignore.iter()).enumerate() {
            if ig {
                continue;
            }
            let row = &lv[pos * v..(pos + 1) * v];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            total += lse - row[tgt as usize];
            n_live += 1;
        }
        let loss = if n_live == 0 { 0.0 } else { total / n_live as f64 };
        let rg = self.rg(logits);
        Ok(self.push(
            vec![1],
            vec![loss],
            rg,
            Op::CrossEntropy {
                logits,
                targets: Arc::new(targets.to_vec()),
                ignore: Arc::new(ignore.to_vec()),
            },
        ))
    }
}
