//! The computation graph (tape) and the reverse sweep.
//!
//! Nodes are appended in evaluation order, so every node's parents have
//! smaller indices and a reverse index walk is a valid topological order.
//! A `Graph` owns plain data only and is `Send`; independent graphs can be
//! built and differentiated on different threads.

use crate::error::{AutodiffError, Result};
use crate::linalg;
use crate::nn;
use crate::tensor::{axis_extents, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor applied to `log` inputs.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        n: usize,
        k: usize,
        m: usize,
    },
    Sum {
        a: Var,
        axis: Option<usize>,
    },
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Sqrt(Var),
    Abs(Var),
    Minimum(Var, Var),
    Softmax {
        a: Var,
        axis: usize,
    },
    LogSoftmax {
        a: Var,
        axis: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherLast {
        a: Var,
        idx: Vec<usize>,
    },
    SelectRows {
        a: Var,
        rows: Vec<usize>,
    },
    BroadcastLast {
        a: Var,
        m: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
    /// Accumulated gradient; only kept for leaves.
    pub(crate) grad: Option<Tensor>,
}

/// A tape of tensor operations supporting reverse-mode differentiation.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that accumulates gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Propagates d(root)/d(leaf) into every gradient-tracking leaf, adding to
    /// whatever those leaves already hold.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(AutodiffError::NotScalar(root_value.shape().to_vec()));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, x) in acc.data_mut().iter_mut().zip(&g) {
                            *a += x;
                        }
                    }
                    None => {
                        node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| reduce_broadcast(gb, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| reduce_broadcast(gb, g, -1.0));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let nb = bv.len();
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] * bv[i % nb];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] += gi * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                let nb = bv.len();
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] / bv[i % nb];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i % nb] -= gi * out[i] / bv[i % nb];
                    }
                });
            }
            Op::Neg(a) => self.acc(grads, *a, |ga| {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x -= gi;
                }
            }),
            Op::Scale(a, c) => self.acc(grads, *a, |ga| {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += c * gi;
                }
            }),
            Op::AddScalar(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::MatMul {
                a,
                b,
                batch,
                n,
                k,
                m,
            } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let b_batched = self.value(*b).rank() == 3;
                let (batch, n, k, m) = (*batch, *n, *k, *m);
                self.acc(grads, *a, |ga| {
                    for bi in 0..batch {
                        let boff = if b_batched { bi * k * m } else { 0 };
                        // dA = dC · Bᵀ
                        linalg::gemm(
                            n,
                            m,
                            k,
                            &g[bi * n * m..],
                            (m as isize, 1),
                            &bv[boff..],
                            (1, m as isize),
                            &mut ga[bi * n * k..],
                            (k as isize, 1),
                        );
                    }
                });
                self.acc(grads, *b, |gb| {
                    for bi in 0..batch {
                        let boff = if b_batched { bi * k * m } else { 0 };
                        // dB = Aᵀ · dC
                        linalg::gemm(
                            k,
                            n,
                            m,
                            &av[bi * n * k..],
                            (1, k as isize),
                            &g[bi * n * m..],
                            (m as isize, 1),
                            &mut gb[boff..],
                            (m as isize, 1),
                        );
                    }
                });
            }
            Op::Sum { a, axis } => {
                let shape = self.value(*a).shape();
                match axis {
                    None => self.acc(grads, *a, |ga| {
                        for x in ga.iter_mut() {
                            *x += g[0];
                        }
                    }),
                    Some(axis) => {
                        let (outer, len, inner) = axis_extents(shape, *axis);
                        self.acc(grads, *a, |ga| {
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        ga[(o * len + l) * inner + i] += g[o * inner + i];
                                    }
                                }
                            }
                        });
                    }
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        if av[i] >= LOG_FLOOR {
                            *x += g[i] / av[i];
                        }
                    }
                });
            }
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i] * out[i];
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] * nn::gelu_grad(av[i]);
                    }
                });
            }
            Op::Sqrt(a) => self.acc(grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    if out[i] > 0.0 {
                        *x += g[i] * 0.5 / out[i];
                    }
                }
            }),
            Op::Abs(a) => {
                let av = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        if av[i] > 0.0 {
                            *x += g[i];
                        } else if av[i] < 0.0 {
                            *x -= g[i];
                        }
                    }
                });
            }
            Op::Minimum(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.acc(grads, *a, |ga| {
                    for (i, x) in ga.iter_mut().enumerate() {
                        if av[i] <= bv[i] {
                            *x += g[i];
                        }
                    }
                });
                self.acc(grads, *b, |gb| {
                    for (i, x) in gb.iter_mut().enumerate() {
                        if av[i] > bv[i] {
                            *x += g[i];
                        }
                    }
                });
            }
            Op::Softmax { a, axis } => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                self.acc(grads, *a, |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                            for l in 0..len {
                                ga[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LogSoftmax { a, axis } => {
                let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                self.acc(grads, *a, |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let total: f64 = (0..len).map(|l| g[at(l)]).sum();
                            for l in 0..len {
                                ga[at(l)] += g[at(l)] - out[at(l)].exp() * total;
                            }
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let shape = node.value.shape();
                let (outer, _, inner) = axis_extents(shape, *axis);
                let total_len = shape[*axis];
                let mut offset = 0;
                for p in parts {
                    let plen = self.value(*p).shape()[*axis];
                    self.acc(grads, *p, |gp| {
                        for o in 0..outer {
                            let src = (o * total_len + offset) * inner;
                            let dst = o * plen * inner;
                            add_into(&mut gp[dst..dst + plen * inner], &g[src..src + plen * inner]);
                        }
                    });
                    offset += plen;
                }
            }
            Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Embedding { table, ids } => {
                let d = node.value.last_dim();
                self.acc(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::GatherLast { a, idx } => {
                let m = self.value(*a).last_dim();
                self.acc(grads, *a, |ga| {
                    for (r, &j) in idx.iter().enumerate() {
                        ga[r * m + j] += g[r];
                    }
                });
            }
            Op::SelectRows { a, rows } => {
                let a_shape = self.value(*a).shape();
                let row: usize = a_shape[1..].iter().product();
                self.acc(grads, *a, |ga| {
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(&mut ga[src * row..(src + 1) * row], &g[r * row..(r + 1) * row]);
                    }
                });
            }
            Op::BroadcastLast { a, m } => self.acc(grads, *a, |ga| {
                for (i, x) in ga.iter_mut().enumerate() {
                    *x += g[i * m..(i + 1) * m].iter().sum::<f64>();
                }
            }),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gv = self.value(*gamma).data();
                let d = gv.len();
                self.acc(grads, *gamma, |gg| {
                    for (r, chunk) in g.chunks(d).enumerate() {
                        for c in 0..d {
                            gg[c] += chunk[c] * xhat[r * d + c];
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for chunk in g.chunks(d) {
                        add_into(gb, chunk);
                    }
                });
                self.acc(grads, *x, |gx| nn::layer_norm_backward(g, gv, xhat, rstd, gx));
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => {
                let dims = nn::AttnDims {
                    batch: *batch,
                    seq: *seq,
                    heads: *heads,
                    width: node.value.last_dim(),
                };
                let (dq, dk, dv) = nn::attention_backward(
                    &dims,
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g,
                );
                self.acc(grads, *q, |gq| add_into(gq, &dq));
                self.acc(grads, *k, |gk| add_into(gk, &dk));
                self.acc(grads, *v, |gv| add_into(gv, &dv));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(buf);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums a full-size gradient back onto an operand repeated over leading axes.
fn reduce_broadcast(dst: &mut [f64], g: &[f64], sign: f64) {
    let n = dst.len();
    for (i, gi) in g.iter().enumerate() {
        dst[i % n] += sign * gi;
    }
}
