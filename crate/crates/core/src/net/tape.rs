//! Reverse-mode differentiation over batched dense layers.
//!
//! Nodes hold `B × n` activations. Parameters live outside the tape and are
//! addressed by index; their gradients accumulate into a [`Gradients`] set.

use crate::linalg::{gemm, Matrix};

use super::posenc::{posenc_backward_into, posenc_into, POSENC_PER_AXIS};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// `x · W + b` with `W` of shape `in × out` and `b` of shape `1 × out`.
    Linear { x: NodeId, w: usize, b: usize },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// `softmax(logits) · centers + offset`.
    Mixture { logits: NodeId, offset: NodeId },
    PosEnc { y: NodeId, periods: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    /// Softmax probabilities for mixture nodes.
    aux: Option<Matrix>,
}

/// Per-parameter gradient buffers, aligned with the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(params: &[Matrix]) -> Self {
        Self {
            grads: params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect(),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.grads.iter().map(Matrix::norm_squared).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g.as_slice().iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id].value
    }

    /// First node whose value contains a non-finite entry.
    pub fn first_non_finite(&self) -> Option<NodeId> {
        self.nodes.iter().position(|n| !n.value.is_finite())
    }

    fn eval(&self, op: &Op, params: &[Matrix], centers: &Matrix) -> (Matrix, Option<Matrix>) {
        match op {
            Op::Input => unreachable!("inputs are not re-evaluated"),
            Op::Linear { x, w, b } => {
                let xv = &self.nodes[*x].value;
                let (wm, bm) = (&params[*w], &params[*b]);
                let mut out = Matrix::zeros(xv.rows(), wm.cols());
                for r in 0..out.rows() {
                    out.row_mut(r).copy_from_slice(bm.row(0));
                }
                gemm(1.0, xv, false, wm, false, 1.0, &mut out);
                (out, None)
            }
            Op::Relu { x } => {
                let mut out = self.nodes[*x].value.clone();
                out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                (out, None)
            }
            Op::Add { a, b } => {
                let mut out = self.nodes[*a].value.clone();
                out.add_assign(&self.nodes[*b].value);
                (out, None)
            }
            Op::Mixture { logits, offset } => {
                let mut probs = self.nodes[*logits].value.clone();
                for r in 0..probs.rows() {
                    let row = probs.row_mut(r);
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= s);
                }
                let mut out = self.nodes[*offset].value.clone();
                gemm(1.0, &probs, false, centers, false, 1.0, &mut out);
                (out, Some(probs))
            }
            Op::PosEnc { y, periods } => {
                let yv = &self.nodes[*y].value;
                let mut out = Matrix::zeros(yv.rows(), 3 * periods.len() * POSENC_PER_AXIS);
                for r in 0..yv.rows() {
                    posenc_into(yv.row(r), periods, out.row_mut(r));
                }
                (out, None)
            }
        }
    }

    fn push(&mut self, op: Op, params: &[Matrix], centers: &Matrix) -> NodeId {
        let (value, aux) = self.eval(&op, params, centers);
        self.nodes.push(Node { op, value, aux });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, x: Matrix) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: x,
            aux: None,
        });
        self.nodes.len() - 1
    }

    pub fn linear(&mut self, params: &[Matrix], x: NodeId, w: usize, b: usize) -> NodeId {
        self.push(Op::Linear { x, w, b }, params, &Matrix::zeros(0, 0))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu { x }, &[], &Matrix::zeros(0, 0))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add { a, b }, &[], &Matrix::zeros(0, 0))
    }

    pub fn mixture(&mut self, logits: NodeId, offset: NodeId, centers: &Matrix) -> NodeId {
        self.push(Op::Mixture { logits, offset }, &[], centers)
    }

    pub fn posenc(&mut self, y: NodeId, periods: &[f64]) -> NodeId {
        self.push(Op::PosEnc { y, periods: periods.to_vec() }, &[], &Matrix::zeros(0, 0))
    }

    /// First node that reads parameter `param`.
    pub fn first_use(&self, param: usize) -> Option<NodeId> {
        self.nodes
            .iter()
            .position(|n| matches!(n.op, Op::Linear { w, b, .. } if w == param || b == param))
    }

    /// Re-evaluates nodes `from..` with the current `params`; earlier values are kept.
    pub fn replay(&mut self, params: &[Matrix], centers: &Matrix, from: NodeId) {
        for id in from..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Input) {
                continue;
            }
            let (value, aux) = self.eval(&self.nodes[id].op, params, centers);
            self.nodes[id].value = value;
            self.nodes[id].aux = aux;
        }
    }

    /// Propagates the given output adjoints back through every node once, in
    /// reverse creation order, and returns parameter gradients.
    pub fn backward(&self, params: &[Matrix], centers: &Matrix, seeds: &[(NodeId, &Matrix)]) -> Gradients {
        let mut grads = Gradients::zeros_like(params);
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            accumulate(&mut adj[*id], g);
        }
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    gemm(1.0, xv, true, &g, false, 1.0, &mut grads.grads[*w]);
                    grads.grads[*b].add_assign(&g.column_sums());
                    if needs_adjoint(&self.nodes[*x].op) {
                        let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                        gemm(1.0, &g, false, &params[*w], true, 0.0, &mut dx);
                        accumulate_owned(&mut adj[*x], dx);
                    }
                }
                Op::Relu { x } => {
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(self.nodes[id].value.as_slice()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate_owned(&mut adj[*x], dx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj[*a], &g);
                    accumulate_owned(&mut adj[*b], g);
                }
                Op::Mixture { logits, offset } => {
                    let probs = self.nodes[id].aux.as_ref().expect("mixture caches probabilities");
                    let mut gp = Matrix::zeros(probs.rows(), probs.cols());
                    gemm(1.0, &g, false, centers, true, 0.0, &mut gp);
                    for r in 0..gp.rows() {
                        let p = probs.row(r);
                        let row = gp.row_mut(r);
                        let mean: f64 = row.iter().zip(p).map(|(a, b)| a * b).sum();
                        for (v, pc) in row.iter_mut().zip(p) {
                            *v = pc * (*v - mean);
                        }
                    }
                    accumulate_owned(&mut adj[*logits], gp);
                    accumulate_owned(&mut adj[*offset], g);
                }
                Op::PosEnc { y, periods } => {
                    let yv = &self.nodes[*y].value;
                    let mut dy = Matrix::zeros(yv.rows(), 3);
                    for r in 0..yv.rows() {
                        posenc_backward_into(yv.row(r), periods, g.row(r), dy.row_mut(r));
                    }
                    accumulate_owned(&mut adj[*y], dy);
                }
            }
        }
        grads
    }
}

fn needs_adjoint(op: &Op) -> bool {
    !matches!(op, Op::Input)
}

fn accumulate(slot: &mut Option<Matrix>, g: &Matrix) {
    match slot {
        Some(s) => s.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_owned(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}
