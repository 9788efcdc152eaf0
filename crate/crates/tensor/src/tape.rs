//! Define-by-run gradient tape.
//!
//! Every differentiable operation on a [`Var`] appends a node to the tape that
//! owns it. [`Tape::backward`] replays the nodes in reverse recorded order and
//! accumulates adjoints into the nodes' gradient buffers. Nodes are only
//! recorded when at least one input is tracked, so constants and no-grad tapes
//! never retain intermediate values.

use std::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tensor::Tensor;

pub(crate) type NodeId = usize;

/// Saved state needed to replay one operation's adjoint.
pub(crate) enum Op {
    Leaf,
    MatMul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        a_val: Tensor,
        b_val: Tensor,
    },
    Transpose {
        a: NodeId,
        rows: usize,
        cols: usize,
    },
    /// `b` is broadcast over the leading extents of `a`.
    Add {
        a: Option<NodeId>,
        b: Option<NodeId>,
        b_len: usize,
    },
    Mul {
        a: Option<NodeId>,
        b: Option<NodeId>,
        a_val: Tensor,
        b_val: Tensor,
    },
    Scale {
        a: NodeId,
        factor: f64,
    },
    Relu {
        a: NodeId,
        out: Tensor,
    },
    Softmax {
        a: NodeId,
        out: Tensor,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Option<NodeId>,
        gain: Option<NodeId>,
        bias: Option<NodeId>,
        gain_val: Tensor,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        dim: usize,
    },
    Mean {
        a: NodeId,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Std {
        a: NodeId,
        centered: Vec<f64>,
        std: Vec<f64>,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Conv1d {
        x: Option<NodeId>,
        w: Option<NodeId>,
        cols: Vec<f64>,
        w_val: Tensor,
        geometry: ConvGeometry,
    },
    Concat {
        parts: Vec<(Option<NodeId>, usize)>,
        outer: usize,
        inner: usize,
    },
    Narrow {
        a: NodeId,
        outer: usize,
        len_in: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Reshape {
        a: NodeId,
    },
    Sum {
        a: NodeId,
    },
    Dropout {
        a: NodeId,
        mask: Vec<f64>,
    },
    CrossEntropy {
        a: NodeId,
        probs: Vec<f64>,
        target: usize,
    },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub t_in: usize,
    pub c_in: usize,
    pub kernel: usize,
    pub c_out: usize,
    pub stride: usize,
    pub padding: usize,
    pub t_out: usize,
}

struct Node {
    numel: usize,
    op: Op,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
struct TapeState {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Ordered record of primitive operations for one forward pass.
///
/// A tape is confined to the thread that created it. Use one tape per
/// utterance and per step; [`Tape::reset`] clears it for reuse.
pub struct Tape {
    state: RefCell<TapeState>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A recording tape.
    pub fn new() -> Self {
        Self {
            state: RefCell::default(),
            recording: true,
        }
    }

    /// A tape that never records; every [`Var`] it produces is a constant.
    pub fn no_grad() -> Self {
        Self {
            state: RefCell::default(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.state.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Binds a tensor as a graph input. It is tracked only if it has
    /// `requires_grad` set and the tape is recording.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        let value = tensor.detached();
        if self.recording && tensor.requires_grad() {
            let id = self.push(tensor.numel(), Op::Leaf);
            Var {
                tape: self,
                id: Some(id),
                value,
            }
        } else {
            Var {
                tape: self,
                id: None,
                value,
            }
        }
    }

    /// Binds a list of tensors in order.
    pub fn bind(&self, tensors: &[Tensor]) -> Vec<Var<'_>> {
        tensors.iter().map(|t| self.leaf(t)).collect()
    }

    /// An untracked input.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        Var {
            tape: self,
            id: None,
            value: tensor,
        }
    }

    /// Replays adjoints from a scalar `loss` back to every tracked leaf.
    pub fn backward(&self, loss: &Var<'_>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::Contract(
                "loss was recorded on a different tape".into(),
            ));
        }
        if loss.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        let Some(loss_id) = loss.id else {
            return Err(TensorError::Contract(
                "loss does not depend on any tracked tensor".into(),
            ));
        };
        let mut state = self.state.borrow_mut();
        if state.backward_done {
            return Err(TensorError::Contract(
                "backward already ran on this tape; reset it first".into(),
            ));
        }
        state.backward_done = true;
        let nodes = &mut state.nodes;
        nodes[loss_id].grad = Some(vec![1.0]);
        for i in (0..=loss_id).rev() {
            let (before, rest) = nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = node.grad.take() else {
                continue;
            };
            propagate(&node.op, &grad, before);
        }
        Ok(())
    }

    /// Accumulated adjoint of a tracked variable after [`Tape::backward`].
    pub fn grad(&self, var: &Var<'_>) -> Option<Vec<f64>> {
        let id = var.id?;
        self.state.borrow().nodes.get(id)?.grad.clone()
    }

    /// Clears all nodes so the tape can record a new pass.
    pub fn reset(&mut self) {
        let state = self.state.get_mut();
        state.nodes.clear();
        state.backward_done = false;
    }

    fn push(&self, numel: usize, op: Op) -> NodeId {
        let mut state = self.state.borrow_mut();
        state.nodes.push(Node {
            numel,
            op,
            grad: None,
        });
        state.nodes.len() - 1
    }

    /// Wraps an op result, recording `op` only if some input is tracked.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor,
        tracked: bool,
        op: impl FnOnce(&Tensor) -> Op,
    ) -> Var<'t> {
        let id = if self.recording && tracked {
            let op = op(&value);
            Some(self.push(value.numel(), op))
        } else {
            None
        };
        Var {
            tape: self,
            id,
            value,
        }
    }
}

/// A value produced on a [`Tape`].
#[derive(Clone)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: Option<NodeId>,
    pub(crate) value: Tensor,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

fn accumulate(nodes: &mut [Node], id: Option<NodeId>, apply: impl FnOnce(&mut [f64])) {
    if let Some(id) = id {
        let node = &mut nodes[id];
        let numel = node.numel;
        apply(node.grad.get_or_insert_with(|| vec![0.0; numel]));
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(op: &Op, g: &[f64], nodes: &mut [Node]) {
    match op {
        Op::Leaf => {}
        Op::MatMul { a, b, a_val, b_val } => {
            let (m, k) = (a_val.shape()[0], a_val.shape()[1]);
            let n = b_val.shape()[1];
            // dA = G B^T, dB = A^T G
            accumulate(nodes, *a, |da| {
                kernels::gemm(m, n, k, g, false, b_val.data(), true, da, 1.0)
            });
            accumulate(nodes, *b, |db| {
                kernels::gemm(k, m, n, a_val.data(), true, g, false, db, 1.0)
            });
        }
        Op::Transpose { a, rows, cols } => {
            accumulate(nodes, Some(*a), |da| {
                for r in 0..*rows {
                    for c in 0..*cols {
                        da[r * cols + c] += g[c * rows + r];
                    }
                }
            });
        }
        Op::Add { a, b, b_len } => {
            accumulate(nodes, *a, |da| add_into(da, g));
            accumulate(nodes, *b, |db| {
                for chunk in g.chunks_exact(*b_len) {
                    add_into(db, chunk);
                }
            });
        }
        Op::Mul { a, b, a_val, b_val } => {
            accumulate(nodes, *a, |da| {
                for ((d, gi), bi) in da.iter_mut().zip(g).zip(b_val.data()) {
                    *d += gi * bi;
                }
            });
            accumulate(nodes, *b, |db| {
                for ((d, gi), ai) in db.iter_mut().zip(g).zip(a_val.data()) {
                    *d += gi * ai;
                }
            });
        }
        Op::Scale { a, factor } => {
            accumulate(nodes, Some(*a), |da| {
                for (d, gi) in da.iter_mut().zip(g) {
                    *d += factor * gi;
                }
            });
        }
        Op::Relu { a, out } => {
            accumulate(nodes, Some(*a), |da| {
                for ((d, gi), y) in da.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += gi;
                    }
                }
            });
        }
        Op::Softmax {
            a,
            out,
            outer,
            len,
            inner,
        } => {
            let y = out.data();
            accumulate(nodes, Some(*a), |da| {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..*len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..*len {
                            da[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            gain_val,
            normalized,
            inv_std,
            dim,
        } => {
            let dim = *dim;
            let gv = gain_val.data();
            accumulate(nodes, *x, |dx| {
                let mut scaled = vec![0.0; dim];
                for (row, inv) in inv_std.iter().enumerate() {
                    let span = row * dim..(row + 1) * dim;
                    let gr = &g[span.clone()];
                    let xh = &normalized[span.clone()];
                    for j in 0..dim {
                        scaled[j] = gr[j] * gv[j];
                    }
                    let mean_s = scaled.iter().sum::<f64>() / dim as f64;
                    let mean_sx =
                        scaled.iter().zip(xh).map(|(s, h)| s * h).sum::<f64>() / dim as f64;
                    for (j, d) in dx[span].iter_mut().enumerate() {
                        *d += inv * (scaled[j] - mean_s - xh[j] * mean_sx);
                    }
                }
            });
            accumulate(nodes, *gain, |dg| {
                for (gr, xh) in g.chunks_exact(dim).zip(normalized.chunks_exact(dim)) {
                    for j in 0..dim {
                        dg[j] += gr[j] * xh[j];
                    }
                }
            });
            accumulate(nodes, *bias, |db| {
                for gr in g.chunks_exact(dim) {
                    add_into(db, gr);
                }
            });
        }
        Op::Mean {
            a,
            outer,
            len,
            inner,
        } => {
            let scale = 1.0 / *len as f64;
            accumulate(nodes, Some(*a), |da| {
                for o in 0..*outer {
                    for j in 0..*len {
                        for i in 0..*inner {
                            da[o * len * inner + j * inner + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            });
        }
        Op::Std {
            a,
            centered,
            std,
            outer,
            len,
            inner,
        } => {
            let n = *len as f64;
            accumulate(nodes, Some(*a), |da| {
                for o in 0..*outer {
                    for i in 0..*inner {
                        let r = o * inner + i;
                        let coef = g[r] / (n * std[r].max(crate::ops::STD_FLOOR));
                        for j in 0..*len {
                            let at = o * len * inner + j * inner + i;
                            da[at] += coef * centered[at];
                        }
                    }
                }
            });
        }
        Op::Conv1d {
            x,
            w,
            cols,
            w_val,
            geometry: c,
        } => {
            let width = c.kernel * c.c_in;
            accumulate(nodes, *w, |dw| {
                kernels::gemm(width, c.t_out, c.c_out, cols, true, g, false, dw, 1.0)
            });
            accumulate(nodes, *x, |dx| {
                let mut dcols = vec![0.0; c.t_out * width];
                kernels::gemm(
                    c.t_out,
                    c.c_out,
                    width,
                    g,
                    false,
                    w_val.data(),
                    true,
                    &mut dcols,
                    0.0,
                );
                kernels::col2im_add(
                    &dcols, dx, c.t_in, c.c_in, c.kernel, c.stride, c.padding, c.t_out,
                );
            });
        }
        Op::Concat {
            parts,
            outer,
            inner,
        } => {
            let total: usize = parts.iter().map(|p| p.1).sum();
            let mut offset = 0;
            for (id, extent) in parts {
                accumulate(nodes, *id, |dp| {
                    for o in 0..*outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * extent * inner;
                        add_into(
                            &mut dp[dst..dst + extent * inner],
                            &g[src..src + extent * inner],
                        );
                    }
                });
                offset += extent;
            }
        }
        Op::Narrow {
            a,
            outer,
            len_in,
            start,
            len,
            inner,
        } => {
            accumulate(nodes, Some(*a), |da| {
                for o in 0..*outer {
                    let dst = (o * len_in + start) * inner;
                    let src = o * len * inner;
                    add_into(&mut da[dst..dst + len * inner], &g[src..src + len * inner]);
                }
            });
        }
        Op::Reshape { a } => accumulate(nodes, Some(*a), |da| add_into(da, g)),
        Op::Sum { a } => accumulate(nodes, Some(*a), |da| {
            for d in da.iter_mut() {
                *d += g[0];
            }
        }),
        Op::Dropout { a, mask } => accumulate(nodes, Some(*a), |da| {
            for ((d, gi), m) in da.iter_mut().zip(g).zip(mask) {
                *d += gi * m;
            }
        }),
        Op::CrossEntropy { a, probs, target } => accumulate(nodes, Some(*a), |da| {
            for (j, (d, p)) in da.iter_mut().zip(probs).enumerate() {
                let onehot = if j == *target { 1.0 } else { 0.0 };
                *d += g[0] * (p - onehot);
            }
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_twice_is_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::ones(&[3]).with_requires_grad(true));
        let loss = x.sum();
        tape.backward(&loss).unwrap();
        assert!(matches!(
            tape.backward(&loss),
            Err(TensorError::Contract(_))
        ));
    }

    #[test]
    fn reset_allows_a_new_pass() {
        let mut tape = Tape::new();
        let param = Tensor::ones(&[2]).with_requires_grad(true);
        {
            let x = tape.leaf(&param);
            tape.backward(&x.sum()).unwrap();
        }
        tape.reset();
        assert!(tape.is_empty());
        let x = tape.leaf(&param);
        let loss = x.sum();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::ones(&[2, 2]).with_requires_grad(true));
        assert!(matches!(tape.backward(&x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn untracked_loss_is_a_contract_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2]));
        assert!(tape.backward(&x.sum()).is_err());
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let x = tape.leaf(&Tensor::ones(&[4]).with_requires_grad(true));
        let y = x.relu().scale(2.0).sum();
        assert_eq!(y.item(), 8.0);
        assert!(tape.is_empty());
        assert!(!y.is_tracked());
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::filled(&[1], 3.0).with_requires_grad(true));
        let loss = x.add(&x).unwrap().add(&x).unwrap().sum();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&x).unwrap(), vec![3.0]);
    }
}
