use std::sync::Arc;

use super::{numel, TensorError};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Operation record; parents are earlier tape positions.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    /// Elementwise sum; `broadcast_b` marks a row-broadcast `[r,c] + [c]`.
    Add { a: NodeId, b: NodeId, broadcast_b: bool },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, factor: f64 },
    /// 2-D matrix product, or batched 3-D with a broadcastable batch dim.
    MatMul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Concat { parts: Vec<NodeId>, axis: usize },
    Narrow { a: NodeId, axis: usize, start: usize, len: usize },
    Embedding { table: NodeId, ids: Arc<Vec<u32>> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    Relu { a: NodeId },
    Gelu { a: NodeId },
    /// Mask entries are 0 or 1/(1-rate); sampled by the caller.
    Dropout { a: NodeId, mask: Arc<Vec<f64>> },
    Softmax { a: NodeId, axis: usize },
    LogSoftmax { a: NodeId, axis: usize },
    MaskedFill { a: NodeId, mask: Arc<Vec<bool>> },
    Sum { a: NodeId },
    /// `sum_i coeffs[i] * states[i]`, coefficients a rank-1 node.
    WeightedSum { states: Vec<NodeId>, coeffs: NodeId },
    /// Mean negative log-softmax over unignored positions; scalar output.
    CrossEntropy {
        logits: NodeId,
        targets: Arc<Vec<u32>>,
        ignore: Arc<Vec<bool>>,
    },
}

#[derive(Debug)]
pub struct Node {
    pub shape: Vec<usize>,
    pub values: Arc<Vec<f64>>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub op: Op,
}

/// Single-use computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Graph { nodes: Vec::with_capacity(n) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        op: Op,
    ) -> NodeId {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node {
            shape,
            values: Arc::new(values),
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Insert a leaf holding shared storage; no copy is made.
    pub fn leaf_shared(
        &mut self,
        values: Arc<Vec<f64>>,
        shape: Vec<usize>,
        requires_grad: bool,
    ) -> NodeId {
        assert_eq!(numel(&shape), values.len(), "leaf shape/value mismatch");
        self.nodes.push(Node {
            shape,
            values,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> NodeId {
        self.leaf_shared(Arc::new(values), shape, requires_grad)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(vec![v], vec![1], false)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn values_arc(&self, id: NodeId) -> Arc<Vec<f64>> {
        Arc::clone(&self.nodes[id.0].values)
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(numel(&self.nodes[id.0].shape), 1);
        self.nodes[id.0].values[0]
    }

    pub(crate) fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn add_grad(&mut self, id: NodeId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    fn add_grad_owned(&mut self, id: NodeId, delta: Vec<f64>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    /// Reverse pass from a scalar loss. Gradients accumulate (sum) across
    /// fan-out and remain stored on every `requires_grad` node afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let shape = self.nodes[loss.0].shape.clone();
        if numel(&shape) != 1 {
            return Err(TensorError::NonScalarLoss { shape });
        }
        self.add_grad(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &gout);
            self.nodes[i].grad = Some(gout);
        }
        Ok(())
    }

    fn propagate(&mut self, out_idx: usize, op: &Op, gout: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add { a, b, broadcast_b } => {
                if self.rg(*a) {
                    self.add_grad(*a, gout);
                }
                if self.rg(*b) {
                    if *broadcast_b {
                        let cols = self.nodes[b.0].shape[0];
                        let mut gb = vec![0.0; cols];
                        for row in gout.chunks_exact(cols) {
                            for (g, r) in gb.iter_mut().zip(row) {
                                *g += r;
                            }
                        }
                        self.add_grad_owned(*b, gb);
                    } else {
                        self.add_grad(*b, gout);
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let bv = self.values_arc(*b);
                    let ga: Vec<f64> = gout.iter().zip(bv.iter()).map(|(g, v)| g * v).collect();
                    self.add_grad_owned(*a, ga);
                }
                if self.rg(*b) {
                    let av = self.values_arc(*a);
                    let gb: Vec<f64> = gout.iter().zip(av.iter()).map(|(g, v)| g * v).collect();
                    self.add_grad_owned(*b, gb);
                }
            }
            Op::Scale { a, factor } => {
                if self.rg(*a) {
                    let ga: Vec<f64> = gout.iter().map(|g| g * factor).collect();
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::MatMul { a, b } => self.matmul_backward(*a, *b, gout),
            Op::Transpose { a } => {
                if self.rg(*a) {
                    let (r, c) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    // gout has shape [c, r]; transpose it back.
                    let mut ga = vec![0.0; r * c];
                    for i in 0..c {
                        for j in 0..r {
                            ga[j * c + i] = gout[i * r + j];
                        }
                    }
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::Concat { parts, axis } => self.concat_backward(out_idx, parts, *axis, gout),
            Op::Narrow { a, axis, start, len } => {
                if self.rg(*a) {
                    let shape = self.nodes[a.0].shape.clone();
                    let mut ga = vec![0.0; numel(&shape)];
                    match (shape.len(), axis) {
                        (1, 0) => ga[*start..*start + *len].copy_from_slice(gout),
                        (2, 0) => {
                            let c = shape[1];
                            ga[start * c..(start + len) * c].copy_from_slice(gout);
                        }
                        (2, 1) => {
                            let (r, c) = (shape[0], shape[1]);
                            for i in 0..r {
                                for j in 0..*len {
                                    ga[i * c + start + j] = gout[i * len + j];
                                }
                            }
                        }
                        _ => unreachable!("narrow axis validated at construction"),
                    }
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::Embedding { table, ids } => {
                if self.rg(*table) {
                    let d = self.nodes[table.0].shape[1];
                    let n = numel(&self.nodes[table.0].shape);
                    let mut gt = vec![0.0; n];
                    for (pos, &id) in ids.iter().enumerate() {
                        let row = &gout[pos * d..(pos + 1) * d];
                        let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                        for (t, g) in dst.iter_mut().zip(row) {
                            *t += g;
                        }
                    }
                    self.add_grad_owned(*table, gt);
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                self.layer_norm_backward(*x, *gamma, *beta, *eps, gout)
            }
            Op::Relu { a } => {
                if self.rg(*a) {
                    let av = self.values_arc(*a);
                    let ga: Vec<f64> = gout
                        .iter()
                        .zip(av.iter())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::Gelu { a } => {
                if self.rg(*a) {
                    let av = self.values_arc(*a);
                    let ga: Vec<f64> = gout
                        .iter()
                        .zip(av.iter())
                        .map(|(g, &v)| g * gelu_derivative(v))
                        .collect();
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::Dropout { a, mask } => {
                if self.rg(*a) {
                    let ga: Vec<f64> = gout.iter().zip(mask.iter()).map(|(g, m)| g * m).collect();
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::Softmax { a, axis } => {
                if self.rg(*a) {
                    let y = self.values_arc(NodeId(out_idx));
                    let shape = self.nodes[out_idx].shape.clone();
                    let ga = softmax_backward(&y, gout, &shape, *axis);
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::LogSoftmax { a, axis } => {
                if self.rg(*a) {
                    let y = self.values_arc(NodeId(out_idx));
                    let shape = self.nodes[out_idx].shape.clone();
                    let ga = log_softmax_backward(&y, gout, &shape, *axis);
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::MaskedFill { a, mask } => {
                if self.rg(*a) {
                    let ga: Vec<f64> = gout
                        .iter()
                        .zip(mask.iter())
                        .map(|(g, &m)| if m { 0.0 } else { *g })
                        .collect();
                    self.add_grad_owned(*a, ga);
                }
            }
            Op::Sum { a } => {
                if self.rg(*a) {
                    let n = numel(&self.nodes[a.0].shape);
                    self.add_grad_owned(*a, vec![gout[0]; n]);
                }
            }
            Op::WeightedSum { states, coeffs } => {
                let cv = self.values_arc(*coeffs);
                for (i, s) in states.iter().enumerate() {
                    if self.rg(*s) {
                        let gs: Vec<f64> = gout.iter().map(|g| g * cv[i]).collect();
                        self.add_grad_owned(*s, gs);
                    }
                }
                if self.rg(*coeffs) {
                    let mut gc = vec![0.0; cv.len()];
                    for (i, s) in states.iter().enumerate() {
                        let sv = self.values_arc(*s);
                        gc[i] = sv.iter().zip(gout).map(|(a, b)| a * b).sum();
                    }
                    self.add_grad_owned(*coeffs, gc);
                }
            }
            Op::CrossEntropy { logits, targets, ignore } => {
                if self.rg(*logits) {
                    let lv = self.values_arc(*logits);
                    let v = self.nodes[logits.0].shape[1];
                    let n_live = ignore.iter().filter(|&&ig| !ig).count();
                    let mut gl = vec![0.0; lv.len()];
                    if n_live > 0 {
                        let scale = gout[0] / n_live as f64;
                        for (pos, (&tgt, &ig)) in targets.iter().zip(ignore.iter()).enumerate() {
                            if ig {
                                continue;
                            }
                            let row = &lv[pos * v..(pos + 1) * v];
                            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let denom: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                            let grow = &mut gl[pos * v..(pos + 1) * v];
                            for (j, g) in grow.iter_mut().enumerate() {
                                let p = (row[j] - m).exp() / denom;
                                *g = scale * (p - if j == tgt as usize { 1.0 } else { 0.0 });
                            }
                        }
                    }
                    self.add_grad_owned(*logits, gl);
                }
            }
        }
    }

    fn matmul_backward(&mut self, a: NodeId, b: NodeId, gout: &[f64]) {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        let av = self.values_arc(a);
        let bv = self.values_arc(b);
        let (batch, m, k, n, a_batched, b_batched) = super::ops::matmul_dims(&sa, &sb).unwrap();
        if self.rg(a) {
            let mut ga = vec![0.0; av.len()];
            for bi in 0..batch {
                let go = &gout[bi * m * n..(bi + 1) * m * n];
                let bo = if b_batched { &bv[bi * k * n..(bi + 1) * k * n] } else { &bv[..] };
                let dst = if a_batched {
                    &mut ga[bi * m * k..(bi + 1) * m * k]
                } else {
                    &mut ga[..]
                };
                // dA += dC * B^T
                for i in 0..m {
                    for p in 0..k {
                        let mut s = 0.0;
                        let grow = &go[i * n..(i + 1) * n];
                        let brow = &bo[p * n..(p + 1) * n];
                        for (g, bvv) in grow.iter().zip(brow) {
                            s += g * bvv;
                        }
                        dst[i * k + p] += s;
                    }
                }
            }
            self.add_grad_owned(a, ga);
        }
        if self.rg(b) {
            let mut gb = vec![0.0; bv.len()];
            for bi in 0..batch {
                let go = &gout[bi * m * n..(bi + 1) * m * n];
                let ao = if a_batched { &av[bi * m * k..(bi + 1) * m * k] } else { &av[..] };
                let dst = if b_batched {
                    &mut gb[bi * k * n..(bi + 1) * k * n]
                } else {
                    &mut gb[..]
                };
                // dB += A^T * dC
                for i in 0..m {
                    let arow = &ao[i * k..(i + 1) * k];
                    let grow = &go[i * n..(i + 1) * n];
                    for (p, &appv) in arow.iter().enumerate() {
                        let drow = &mut dst[p * n..(p + 1) * n];
                        for (d, g) in drow.iter_mut().zip(grow) {
                            *d += appv * g;
                        }
                    }
                }
            }
            self.add_grad_owned(b, gb);
        }
    }

    fn concat_backward(&mut self, out_idx: usize, parts: &[NodeId], axis: usize, gout: &[f64]) {
        let out_shape = self.nodes[out_idx].shape.clone();
        match (out_shape.len(), axis) {
            (1, 0) | (2, 0) => {
                let mut offset = 0;
                for p in parts {
                    let n = numel(&self.nodes[p.0].shape);
                    if self.rg(*p) {
                        self.add_grad(*p, &gout[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            (2, 1) => {
                let rows = out_shape[0];
                let out_cols = out_shape[1];
                let mut col_off = 0;
                for p in parts {
                    let c = self.nodes[p.0].shape[1];
                    if self.rg(*p) {
                        let mut gp = vec![0.0; rows * c];
                        for i in 0..rows {
                            gp[i * c..(i + 1) * c]
                                .copy_from_slice(&gout[i * out_cols + col_off..i * out_cols + col_off + c]);
                        }
                        self.add_grad_owned(*p, gp);
                    }
                    col_off += c;
                }
            }
            _ => unreachable!("concat axis validated at construction"),
        }
    }

    fn layer_norm_backward(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64, gout: &[f64]) {
        let xs = self.nodes[x.0].shape.clone();
        let cols = xs[xs.len() - 1];
        let rows = numel(&xs) / cols;
        let xv = self.values_arc(x);
        let gv = self.values_arc(gamma);
        let mut gx = vec![0.0; xv.len()];
        let mut gg = vec![0.0; cols];
        let mut gb = vec![0.0; cols];
        for r in 0..rows {
            let xr = &xv[r * cols..(r + 1) * cols];
            let gr = &gout[r * cols..(r + 1) * cols];
            let mean = xr.iter().sum::<f64>() / cols as f64;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for j in 0..cols {
                let xhat = (xr[j] - mean) * inv;
                let dxhat = gr[j] * gv[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            let mean_dxhat = sum_dxhat / cols as f64;
            let mean_dxhat_xhat = sum_dxhat_xhat / cols as f64;
            let gxr = &mut gx[r * cols..(r + 1) * cols];
            for j in 0..cols {
                let xhat = (xr[j] - mean) * inv;
                let dxhat = gr[j] * gv[j];
                gxr[j] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                gg[j] += gr[j] * xhat;
                gb[j] += gr[j];
            }
        }
        if self.rg(x) {
            self.add_grad_owned(x, gx);
        }
        if self.rg(gamma) {
            self.add_grad_owned(gamma, gg);
        }
        if self.rg(beta) {
            self.add_grad_owned(beta, gb);
        }
    }
}

pub(crate) fn gelu_value(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_backward(y: &[f64], gout: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    if let Some(cols) = contiguous_lanes(shape, axis) {
        for ((gx_row, y_row), g_row) in gx
            .chunks_exact_mut(cols)
            .zip(y.chunks_exact(cols))
            .zip(gout.chunks_exact(cols))
        {
            let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
            for j in 0..cols {
                gx_row[j] = y_row[j] * (g_row[j] - dot);
            }
        }
        return gx;
    }
    for_each_lane(shape, axis, |lane| {
        let dot: f64 = lane.iter().map(|&i| gout[i] * y[i]).sum();
        for &i in lane {
            gx[i] = y[i] * (gout[i] - dot);
        }
    });
    gx
}

fn log_softmax_backward(y: &[f64], gout: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let mut gx = vec![0.0; y.len()];
    if let Some(cols) = contiguous_lanes(shape, axis) {
        for ((gx_row, y_row), g_row) in gx
            .chunks_exact_mut(cols)
            .zip(y.chunks_exact(cols))
            .zip(gout.chunks_exact(cols))
        {
            let total: f64 = g_row.iter().sum();
            for j in 0..cols {
                gx_row[j] = g_row[j] - y_row[j].exp() * total;
            }
        }
        return gx;
    }
    for_each_lane(shape, axis, |lane| {
        let total: f64 = lane.iter().map(|&i| gout[i]).sum();
        for &i in lane {
            gx[i] = gout[i] - y[i].exp() * total;
        }
    });
    gx
}

/// Lane width when the reduction axis is contiguous in memory.
pub(crate) fn contiguous_lanes(shape: &[usize], axis: usize) -> Option<usize> {
    match (shape.len(), axis) {
        (1, 0) => Some(shape[0]),
        (2, 1) => Some(shape[1]),
        _ => None,
    }
}

/// Visit index lanes along `axis` of a rank-1 or rank-2 shape.
pub(crate) fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    match (shape.len(), axis) {
        (1, 0) => {
            let lane: Vec<usize> = (0..shape[0]).collect();
            f(&lane);
        }
        (2, 1) => {
            let (r, c) = (shape[0], shape[1]);
            for i in 0..r {
                let lane: Vec<usize> = (i * c..(i + 1) * c).collect();
                f(&lane);
            }
        }
        (2, 0) => {
            let (r, c) = (shape[0], shape[1]);
            for j in 0..c {
                let lane: Vec<usize> = (0..r).map(|i| i * c + j).collect();
                f(&lane);
            }
        }
        _ => unreachable!("axis validated at construction"),
    }
}
