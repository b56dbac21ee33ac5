//! Reverse-mode automatic differentiation over a flat computation tape.
//!
//! Nodes hold scalar or small-vector values in a shared arena; inputs always
//! reference earlier nodes, so a single reverse sweep propagates adjoints.
//! Parameters live outside the tape in a flat vector (see
//! [`super::store::ParameterStore`]); `Param`, `MatVec` and `GatherLerp` nodes
//! reference it by offset and scatter gradients back into a caller-provided
//! buffer during [`Tape::backward`].

use crate::real::Real;
use thiserror::Error;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TapeError {
    #[error("input slot {0} is unbound")]
    UnboundInput(usize),
    #[error("binding for input slot {slot} has length {got}, expected {want}")]
    BindingShape { slot: usize, got: usize, want: usize },
    #[error("non-finite value produced at node {0}")]
    NonFinite(usize),
    #[error("backward called before a successful forward evaluation")]
    BackwardBeforeForward,
    #[error("non-finite seed gradient")]
    NonFiniteSeed,
}

/// Corner rows and trilinear weights for one hash-grid interpolation.
#[derive(Debug, Clone)]
pub(crate) struct GatherAux<F> {
    pub table: u32,
    pub feat: u32,
    pub rows: [u32; 8],
    pub weights: [F; 8],
}

#[derive(Debug, Clone)]
enum Op<F> {
    Const,
    Input { slot: u32 },
    Param { offset: u32 },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Pow(NodeId, F),
    Min(NodeId, NodeId),
    Max(NodeId, NodeId),
    Clamp(NodeId, F, F),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softplus(NodeId),
    Scale(NodeId, F),
    AddConst(NodeId, F),
    SumReduce(NodeId),
    Concat { args_off: u32, args_len: u32 },
    Slice { a: NodeId, offset: u32 },
    ExclCumSum(NodeId),
    MatVec { w: u32, rows: u32, cols: u32, x: NodeId },
    GatherLerp { aux: u32 },
    WeightRows { w: NodeId, rows: NodeId, row_len: u32 },
    StopGrad(NodeId),
}

#[derive(Debug, Clone)]
struct Node<F> {
    op: Op<F>,
    off: u32,
    len: u32,
}

/// Computation tape. Single-writer; values are evaluated eagerly as nodes are
/// pushed, and the whole tape can be replayed with fresh inputs/parameters via
/// [`Tape::forward_eval`].
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    vals: Vec<F>,
    adj: Vec<F>,
    input_slots: Vec<NodeId>,
    concat_args: Vec<NodeId>,
    gather_aux: Vec<GatherAux<F>>,
    values_valid: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            vals: Vec::new(),
            adj: Vec::new(),
            input_slots: Vec::new(),
            concat_args: Vec::new(),
            gather_aux: Vec::new(),
            values_valid: true,
        }
    }

    /// Clear all recorded nodes, keeping allocated capacity for reuse.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.adj.clear();
        self.input_slots.clear();
        self.concat_args.clear();
        self.gather_aux.clear();
        self.values_valid = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_count(&self) -> usize {
        self.input_slots.len()
    }

    /// Value of a node after evaluation.
    pub fn value(&self, id: NodeId) -> &[F] {
        let n = &self.nodes[id.index()];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    /// Adjoint of a node after [`Tape::backward`].
    pub fn adjoint(&self, id: NodeId) -> &[F] {
        let n = &self.nodes[id.index()];
        &self.adj[n.off as usize..(n.off + n.len) as usize]
    }

    fn push(&mut self, op: Op<F>, len: usize) -> NodeId {
        debug_assert!(len > 0, "zero-length node");
        let off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, F::zero());
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { op, off, len: len as u32 });
        id
    }

    fn node_len(&self, id: NodeId) -> usize {
        self.nodes[id.index()].len as usize
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, vals: &[F]) -> NodeId {
        let id = self.push(Op::Const, vals.len());
        let n = &self.nodes[id.index()];
        self.vals[n.off as usize..(n.off + n.len) as usize].copy_from_slice(vals);
        id
    }

    pub fn scalar(&mut self, v: F) -> NodeId {
        self.constant(&[v])
    }

    /// Input bound at construction time; rebindable through `forward_eval`.
    pub fn input(&mut self, vals: &[F]) -> NodeId {
        let slot = self.input_slots.len() as u32;
        let id = self.push(Op::Input { slot }, vals.len());
        let n = &self.nodes[id.index()];
        self.vals[n.off as usize..(n.off + n.len) as usize].copy_from_slice(vals);
        self.input_slots.push(id);
        id
    }

    /// Input with no value yet; the tape cannot run backward until a
    /// successful `forward_eval` binds it.
    pub fn record_input(&mut self, len: usize) -> NodeId {
        let slot = self.input_slots.len() as u32;
        let id = self.push(Op::Input { slot }, len);
        let n = &self.nodes[id.index()];
        let span = &mut self.vals[n.off as usize..(n.off + n.len) as usize];
        span.fill(F::nan());
        self.input_slots.push(id);
        self.values_valid = false;
        id
    }

    /// View of a parameter slice; gradients scatter back to the same range.
    pub fn param(&mut self, params: &[F], offset: usize, len: usize) -> NodeId {
        let id = self.push(Op::Param { offset: offset as u32 }, len);
        let n = &self.nodes[id.index()];
        self.vals[n.off as usize..(n.off + n.len) as usize]
            .copy_from_slice(&params[offset..offset + len]);
        id
    }

    // ---- elementwise --------------------------------------------------

    fn binary_len(&self, a: NodeId, b: NodeId) -> usize {
        let (la, lb) = (self.node_len(a), self.node_len(b));
        assert!(
            la == lb || la == 1 || lb == 1,
            "shape mismatch: {} vs {}",
            la,
            lb
        );
        la.max(lb)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        let id = self.push(Op::Add(a, b), len);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        let id = self.push(Op::Sub(a, b), len);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        let id = self.push(Op::Mul(a, b), len);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        let id = self.push(Op::Div(a, b), len);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        let id = self.push(Op::Min(a, b), len);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn max(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.binary_len(a, b);
        let id = self.push(Op::Max(a, b), len);
        self.eval_node(id.index(), &[], None);
        id
    }

    fn unary(&mut self, op: Op<F>, a: NodeId) -> NodeId {
        let len = self.node_len(a);
        let id = self.push(op, len);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Neg(a), a)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Exp(a), a)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log(a), a)
    }

    pub fn powf(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary(Op::Pow(a, k), a)
    }

    pub fn clamp(&mut self, a: NodeId, lo: F, hi: F) -> NodeId {
        self.unary(Op::Clamp(a, lo, hi), a)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sigmoid(a), a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu(a), a)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Softplus(a), a)
    }

    pub fn scale(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary(Op::Scale(a, k), a)
    }

    pub fn add_const(&mut self, a: NodeId, k: F) -> NodeId {
        self.unary(Op::AddConst(a, k), a)
    }

    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::StopGrad(a), a)
    }

    // ---- structure ----------------------------------------------------

    pub fn sum_reduce(&mut self, a: NodeId) -> NodeId {
        let id = self.push(Op::SumReduce(a), 1);
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let args_off = self.concat_args.len() as u32;
        self.concat_args.extend_from_slice(parts);
        let total: usize = parts.iter().map(|&p| self.node_len(p)).sum();
        let id = self.push(
            Op::Concat { args_off, args_len: parts.len() as u32 },
            total,
        );
        self.eval_node(id.index(), &[], None);
        id
    }

    pub fn slice(&mut self, a: NodeId, offset: usize, len: usize) -> NodeId {
        assert!(offset + len <= self.node_len(a), "slice out of range");
        let id = self.push(Op::Slice { a, offset: offset as u32 }, len);
        self.eval_node(id.index(), &[], None);
        id
    }

    /// Exclusive prefix sum: out[i] = sum of a[0..i].
    pub fn excl_cumsum(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::ExclCumSum(a), a)
    }

    /// Dense matrix-vector product against a row-major weight block in the
    /// parameter vector.
    pub fn matvec(
        &mut self,
        params: &[F],
        w_offset: usize,
        rows: usize,
        cols: usize,
        x: NodeId,
    ) -> NodeId {
        assert_eq!(self.node_len(x), cols, "matvec input length mismatch");
        let id = self.push(
            Op::MatVec { w: w_offset as u32, rows: rows as u32, cols: cols as u32, x },
            rows,
        );
        self.eval_node(id.index(), params, None);
        id
    }

    /// Weighted sum of 8 feature rows from a table in the parameter vector;
    /// gradients flow to exactly those rows.
    pub fn gather_lerp(
        &mut self,
        params: &[F],
        table_offset: usize,
        feat: usize,
        rows: [u32; 8],
        weights: [F; 8],
    ) -> NodeId {
        let aux = self.gather_aux.len() as u32;
        self.gather_aux.push(GatherAux {
            table: table_offset as u32,
            feat: feat as u32,
            rows,
            weights,
        });
        let id = self.push(Op::GatherLerp { aux }, feat);
        self.eval_node(id.index(), params, None);
        id
    }

    /// out[c] = sum_i w[i] * rows[i*row_len + c].
    pub fn weight_rows(&mut self, w: NodeId, rows: NodeId, row_len: usize) -> NodeId {
        let n = self.node_len(w);
        assert_eq!(self.node_len(rows), n * row_len, "weight_rows shape mismatch");
        let id = self.push(Op::WeightRows { w, rows, row_len: row_len as u32 }, row_len);
        self.eval_node(id.index(), &[], None);
        id
    }

    // ---- evaluation ---------------------------------------------------

    fn eval_node(&mut self, i: usize, params: &[F], inputs: Option<&[&[F]]>) {
        let node = self.nodes[i].clone();
        let (off, len) = (node.off as usize, node.len as usize);
        let (src, dst_all) = self.vals.split_at_mut(off);
        let dst = &mut dst_all[..len];
        let span = |id: NodeId| -> &[F] {
            let n = &self.nodes[id.index()];
            &src[n.off as usize..(n.off + n.len) as usize]
        };
        match node.op {
            Op::Const => {}
            Op::Input { slot } => {
                if let Some(bindings) = inputs {
                    dst.copy_from_slice(bindings[slot as usize]);
                }
            }
            Op::Param { offset } => {
                dst.copy_from_slice(&params[offset as usize..offset as usize + len]);
            }
            Op::Add(a, b) => ew_binary(span(a), span(b), dst, |x, y| x + y),
            Op::Sub(a, b) => ew_binary(span(a), span(b), dst, |x, y| x - y),
            Op::Mul(a, b) => ew_binary(span(a), span(b), dst, |x, y| x * y),
            Op::Div(a, b) => ew_binary(span(a), span(b), dst, |x, y| x / y),
            Op::Min(a, b) => ew_binary(span(a), span(b), dst, |x, y| if x <= y { x } else { y }),
            Op::Max(a, b) => ew_binary(span(a), span(b), dst, |x, y| if x >= y { x } else { y }),
            Op::Neg(a) => ew_unary(span(a), dst, |x| -x),
            Op::Exp(a) => ew_unary(span(a), dst, |x| x.exp()),
            Op::Log(a) => ew_unary(span(a), dst, |x| x.ln()),
            Op::Pow(a, k) => ew_unary(span(a), dst, |x| x.powf(k)),
            Op::Clamp(a, lo, hi) => ew_unary(span(a), dst, |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            }),
            Op::Sigmoid(a) => ew_unary(span(a), dst, sigmoid),
            Op::Relu(a) => ew_unary(span(a), dst, |x| if x > F::zero() { x } else { F::zero() }),
            Op::Softplus(a) => ew_unary(span(a), dst, softplus),
            Op::Scale(a, k) => ew_unary(span(a), dst, |x| x * k),
            Op::AddConst(a, k) => ew_unary(span(a), dst, |x| x + k),
            Op::StopGrad(a) => dst.copy_from_slice(span(a)),
            Op::SumReduce(a) => dst[0] = span(a).iter().copied().sum(),
            Op::Concat { args_off, args_len } => {
                let mut cur = 0;
                for k in 0..args_len as usize {
                    let part = self.concat_args[args_off as usize + k];
                    let pv = span(part);
                    dst[cur..cur + pv.len()].copy_from_slice(pv);
                    cur += pv.len();
                }
            }
            Op::Slice { a, offset } => {
                dst.copy_from_slice(&span(a)[offset as usize..offset as usize + len]);
            }
            Op::ExclCumSum(a) => {
                let av = span(a);
                let mut acc = F::zero();
                for (d, &x) in dst.iter_mut().zip(av) {
                    *d = acc;
                    acc = acc + x;
                }
            }
            Op::MatVec { w, rows, cols, x } => {
                let xv = span(x);
                let (w, cols) = (w as usize, cols as usize);
                for r in 0..rows as usize {
                    let row = &params[w + r * cols..w + (r + 1) * cols];
                    let mut acc = F::zero();
                    for (wi, xi) in row.iter().zip(xv) {
                        acc = acc + *wi * *xi;
                    }
                    dst[r] = acc;
                }
            }
            Op::GatherLerp { aux } => {
                let g = &self.gather_aux[aux as usize];
                let feat = g.feat as usize;
                dst.fill(F::zero());
                for k in 0..8 {
                    let base = g.table as usize + g.rows[k] as usize * feat;
                    let wk = g.weights[k];
                    for c in 0..feat {
                        dst[c] = dst[c] + wk * params[base + c];
                    }
                }
            }
            Op::WeightRows { w, rows, row_len } => {
                let wv = span(w);
                let rv = span(rows);
                let c = row_len as usize;
                dst.fill(F::zero());
                for (i, &wi) in wv.iter().enumerate() {
                    for (d, &r) in dst.iter_mut().zip(&rv[i * c..(i + 1) * c]) {
                        *d = *d + wi * r;
                    }
                }
            }
        }
    }

    /// Replay the whole tape with fresh parameter values and input bindings.
    ///
    /// Checks every node for non-finite values; on failure the tape is left
    /// invalid and `backward` refuses to run.
    pub fn forward_eval(&mut self, params: &[F], inputs: &[&[F]]) -> Result<(), TapeError> {
        if inputs.len() < self.input_slots.len() {
            return Err(TapeError::UnboundInput(inputs.len()));
        }
        for (slot, &id) in self.input_slots.iter().enumerate() {
            let want = self.node_len(id);
            if inputs[slot].len() != want {
                return Err(TapeError::BindingShape { slot, got: inputs[slot].len(), want });
            }
        }
        self.values_valid = false;
        for i in 0..self.nodes.len() {
            self.eval_node(i, params, Some(inputs));
            let n = &self.nodes[i];
            let span = &self.vals[n.off as usize..(n.off + n.len) as usize];
            if span.iter().any(|v| !v.is_finite()) {
                return Err(TapeError::NonFinite(i));
            }
        }
        self.values_valid = true;
        Ok(())
    }

    /// Reverse sweep from `output`, accumulating parameter adjoints into
    /// `grads` (added, not overwritten). Interior and input adjoints are
    /// readable afterwards via [`Tape::adjoint`].
    pub fn backward(
        &mut self,
        output: NodeId,
        seed: &[F],
        params: &[F],
        grads: &mut [F],
    ) -> Result<(), TapeError> {
        if !self.values_valid {
            return Err(TapeError::BackwardBeforeForward);
        }
        if seed.iter().any(|v| !v.is_finite()) {
            return Err(TapeError::NonFiniteSeed);
        }
        assert_eq!(seed.len(), self.node_len(output), "seed length mismatch");
        self.adj.clear();
        self.adj.resize(self.vals.len(), F::zero());
        {
            let n = &self.nodes[output.index()];
            self.adj[n.off as usize..(n.off + n.len) as usize].copy_from_slice(seed);
        }
        for i in (0..=output.index()).rev() {
            self.backward_node(i, params, grads);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, params: &[F], grads: &mut [F]) {
        let node = self.nodes[i].clone();
        let (off, len) = (node.off as usize, node.len as usize);
        // Upstream adjoints live strictly before `off`; g is this node's adjoint.
        let (adj_src, adj_dst) = self.adj.split_at_mut(off);
        let g: &[F] = &adj_dst[..len];
        if g.iter().all(|v| *v == F::zero()) {
            return;
        }
        let vals = &self.vals;
        let nspan = |id: NodeId| -> (usize, usize) {
            let n = &self.nodes[id.index()];
            (n.off as usize, n.len as usize)
        };
        let val = |id: NodeId| -> &[F] {
            let (o, l) = nspan(id);
            &vals[o..o + l]
        };
        let out: &[F] = &vals[off..off + len];
        match node.op {
            Op::Const | Op::Input { .. } => {}
            Op::Param { offset } => {
                for (k, &gk) in g.iter().enumerate() {
                    grads[offset as usize + k] = grads[offset as usize + k] + gk;
                }
            }
            Op::Add(a, b) => {
                bw_binary(adj_src, nspan(a), nspan(b), g, |_, _, gk| (gk, gk), val(a), val(b));
            }
            Op::Sub(a, b) => {
                bw_binary(adj_src, nspan(a), nspan(b), g, |_, _, gk| (gk, -gk), val(a), val(b));
            }
            Op::Mul(a, b) => {
                bw_binary(adj_src, nspan(a), nspan(b), g, |x, y, gk| (gk * y, gk * x), val(a), val(b));
            }
            Op::Div(a, b) => {
                bw_binary(
                    adj_src,
                    nspan(a),
                    nspan(b),
                    g,
                    |x, y, gk| (gk / y, -gk * x / (y * y)),
                    val(a),
                    val(b),
                );
            }
            Op::Min(a, b) => {
                bw_binary(
                    adj_src,
                    nspan(a),
                    nspan(b),
                    g,
                    |x, y, gk| {
                        if x <= y {
                            (gk, F::zero())
                        } else {
                            (F::zero(), gk)
                        }
                    },
                    val(a),
                    val(b),
                );
            }
            Op::Max(a, b) => {
                bw_binary(
                    adj_src,
                    nspan(a),
                    nspan(b),
                    g,
                    |x, y, gk| {
                        if x >= y {
                            (gk, F::zero())
                        } else {
                            (F::zero(), gk)
                        }
                    },
                    val(a),
                    val(b),
                );
            }
            Op::Neg(a) => bw_unary(adj_src, nspan(a), g, val(a), |_, _, gk| -gk),
            Op::Exp(a) => bw_unary_out(adj_src, nspan(a), g, out, |o, gk| gk * o),
            Op::Log(a) => bw_unary(adj_src, nspan(a), g, val(a), |x, _, gk| gk / x),
            Op::Pow(a, k) => {
                bw_unary(adj_src, nspan(a), g, val(a), |x, _, gk| gk * k * x.powf(k - F::one()))
            }
            Op::Clamp(a, lo, hi) => bw_unary(adj_src, nspan(a), g, val(a), |x, _, gk| {
                if x >= lo && x <= hi {
                    gk
                } else {
                    F::zero()
                }
            }),
            Op::Sigmoid(a) => {
                bw_unary_out(adj_src, nspan(a), g, out, |o, gk| gk * o * (F::one() - o))
            }
            Op::Relu(a) => bw_unary(adj_src, nspan(a), g, val(a), |x, _, gk| {
                if x > F::zero() {
                    gk
                } else {
                    F::zero()
                }
            }),
            Op::Softplus(a) => bw_unary(adj_src, nspan(a), g, val(a), |x, _, gk| gk * sigmoid(x)),
            Op::Scale(a, k) => bw_unary(adj_src, nspan(a), g, val(a), |_, _, gk| gk * k),
            Op::AddConst(a, _) => bw_unary(adj_src, nspan(a), g, val(a), |_, _, gk| gk),
            Op::StopGrad(_) => {}
            Op::SumReduce(a) => {
                let (o, l) = nspan(a);
                for k in 0..l {
                    adj_src[o + k] = adj_src[o + k] + g[0];
                }
            }
            Op::Concat { args_off, args_len } => {
                let mut cur = 0;
                for k in 0..args_len as usize {
                    let part = self.concat_args[args_off as usize + k];
                    let (o, l) = nspan(part);
                    for j in 0..l {
                        adj_src[o + j] = adj_src[o + j] + g[cur + j];
                    }
                    cur += l;
                }
            }
            Op::Slice { a, offset } => {
                let (o, _) = nspan(a);
                for (k, &gk) in g.iter().enumerate() {
                    adj_src[o + offset as usize + k] = adj_src[o + offset as usize + k] + gk;
                }
            }
            Op::ExclCumSum(a) => {
                // d out[i] / d a[j] = 1 for j < i, so da[j] += suffix sum of g.
                let (o, l) = nspan(a);
                let mut acc = F::zero();
                for j in (0..l).rev() {
                    adj_src[o + j] = adj_src[o + j] + acc;
                    acc = acc + g[j];
                }
            }
            Op::MatVec { w, rows, cols, x } => {
                let (xo, _) = nspan(x);
                let xv = val(x);
                let (w, cols) = (w as usize, cols as usize);
                for r in 0..rows as usize {
                    let gr = g[r];
                    if gr == F::zero() {
                        continue;
                    }
                    let wrow = &params[w + r * cols..w + (r + 1) * cols];
                    let grow = &mut grads[w + r * cols..w + (r + 1) * cols];
                    for c in 0..cols {
                        grow[c] = grow[c] + gr * xv[c];
                        adj_src[xo + c] = adj_src[xo + c] + gr * wrow[c];
                    }
                }
            }
            Op::GatherLerp { aux } => {
                let ga = &self.gather_aux[aux as usize];
                let feat = ga.feat as usize;
                for k in 0..8 {
                    let base = ga.table as usize + ga.rows[k] as usize * feat;
                    let wk = ga.weights[k];
                    for c in 0..feat {
                        grads[base + c] = grads[base + c] + wk * g[c];
                    }
                }
            }
            Op::WeightRows { w, rows, row_len } => {
                let (wo, wl) = nspan(w);
                let (ro, _) = nspan(rows);
                let c = row_len as usize;
                let wv = val(w);
                let rv = val(rows);
                for i in 0..wl {
                    let mut dw = F::zero();
                    for (j, &gj) in g.iter().enumerate() {
                        dw = dw + gj * rv[i * c + j];
                        adj_src[ro + i * c + j] = adj_src[ro + i * c + j] + wv[i] * gj;
                    }
                    adj_src[wo + i] = adj_src[wo + i] + dw;
                }
            }
        }
    }
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn softplus<F: Real>(x: F) -> F {
    // max(x, 0) + ln(1 + exp(-|x|)): overflow-free for large |x|.
    let m = if x > F::zero() { x } else { F::zero() };
    m + (F::one() + (-x.abs()).exp()).ln()
}

fn ew_binary<F: Real>(a: &[F], b: &[F], dst: &mut [F], f: impl Fn(F, F) -> F) {
    match (a.len(), b.len()) {
        (la, lb) if la == lb => {
            for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
                *d = f(x, y);
            }
        }
        (1, _) => {
            for (d, &y) in dst.iter_mut().zip(b) {
                *d = f(a[0], y);
            }
        }
        _ => {
            for (d, &x) in dst.iter_mut().zip(a) {
                *d = f(x, b[0]);
            }
        }
    }
}

fn ew_unary<F: Real>(a: &[F], dst: &mut [F], f: impl Fn(F) -> F) {
    for (d, &x) in dst.iter_mut().zip(a) {
        *d = f(x);
    }
}

/// Accumulate adjoints for a broadcast-aware binary op.
#[allow(clippy::too_many_arguments)]
fn bw_binary<F: Real>(
    adj: &mut [F],
    (ao, al): (usize, usize),
    (bo, bl): (usize, usize),
    g: &[F],
    f: impl Fn(F, F, F) -> (F, F),
    av: &[F],
    bv: &[F],
) {
    for (k, &gk) in g.iter().enumerate() {
        let x = if al == 1 { av[0] } else { av[k] };
        let y = if bl == 1 { bv[0] } else { bv[k] };
        let (da, db) = f(x, y, gk);
        let ai = if al == 1 { ao } else { ao + k };
        let bi = if bl == 1 { bo } else { bo + k };
        adj[ai] = adj[ai] + da;
        adj[bi] = adj[bi] + db;
    }
}

fn bw_unary<F: Real>(
    adj: &mut [F],
    (ao, _): (usize, usize),
    g: &[F],
    av: &[F],
    f: impl Fn(F, F, F) -> F,
) {
    for (k, &gk) in g.iter().enumerate() {
        adj[ao + k] = adj[ao + k] + f(av[k], F::zero(), gk);
    }
}

/// Unary backward that only needs the cached output value.
fn bw_unary_out<F: Real>(
    adj: &mut [F],
    (ao, _): (usize, usize),
    g: &[F],
    out: &[F],
    f: impl Fn(F, F) -> F,
) {
    for (k, &gk) in g.iter().enumerate() {
        adj[ao + k] = adj[ao + k] + f(out[k], gk);
    }
}
