use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{stable_sigmoid, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static FAULT: Cell<Option<&'static str>> = const { Cell::new(None) };
}

/// Corrupts the backward rule of the named primitive on the current thread.
///
/// Exists so the gradient-check tooling can prove it catches a broken rule.
/// Pass `None` to restore correct behavior.
#[doc(hidden)]
pub fn inject_gradient_fault(op: Option<&'static str>) {
    FAULT.with(|f| f.set(op));
}

fn fault_active(op: &str) -> bool {
    FAULT.with(|f| f.get() == Some(op))
}

/// Saved forward information needed to apply a node's vector-Jacobian product.
pub(crate) enum Op {
    Leaf,
    Add { lens: [usize; 2] },
    Sub { lens: [usize; 2] },
    Mul { a: Rc<[f64]>, b: Rc<[f64]> },
    Div { a: Rc<[f64]>, b: Rc<[f64]> },
    Affine { scale: f64 },
    Exp { out: Rc<[f64]> },
    Log { a: Rc<[f64]> },
    Pow { a: Rc<[f64]>, k: f64 },
    Sqrt { out: Rc<[f64]> },
    AbsSmooth { a: Rc<[f64]>, out: Rc<[f64]> },
    Sigmoid { out: Rc<[f64]>, beta: f64 },
    Sech2Half { a: Rc<[f64]>, beta: f64 },
    LogSech2Half { a: Rc<[f64]>, beta: f64 },
    Softmax { out: Rc<[f64]>, beta: f64, layout: AxisLayout },
    Sum { layout: AxisLayout },
    Prod { a: Rc<[f64]>, layout: AxisLayout },
    Matmul { a: Rc<[f64]>, b: Rc<[f64]>, m: usize, k: usize, n: usize },
    Gather { idx: Rc<[usize]>, src_len: usize },
    ScatterAdd { idx: Rc<[usize]> },
    Assign { pos: Rc<[usize]>, base_len: usize },
    Select { mask: Rc<[bool]>, lens: [usize; 2] },
    Concat { lens: Vec<usize> },
}

/// `outer x axis x inner` decomposition of a shape around one axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisLayout {
    pub outer: usize,
    pub axis: usize,
    pub inner: usize,
}

impl AxisLayout {
    pub fn new(shape: &[usize], axis: usize) -> Self {
        AxisLayout {
            outer: shape[..axis].iter().product(),
            axis: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }

    pub fn full(len: usize) -> Self {
        AxisLayout {
            outer: 1,
            axis: len,
            inner: 1,
        }
    }

    #[inline]
    pub fn at(&self, o: usize, i: usize, r: usize) -> usize {
        (o * self.axis + i) * self.inner + r
    }

    pub fn reduced_len(&self) -> usize {
        self.outer * self.inner
    }
}

pub(crate) struct Node {
    /// One slot per operand; `None` for untracked (constant) operands.
    pub parents: Vec<Option<usize>>,
    pub op: Op,
}

/// Append-only record of the operations applied to tracked tensors.
///
/// Cloning a `Tape` clones the handle, not the recording. A tape belongs to
/// one execution; it is deliberately `!Send`.
#[derive(Clone, Default)]
pub struct Tape {
    nodes: Rc<RefCell<Vec<Node>>>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_as(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Registers `value` as a differentiable leaf on this tape.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = self.push(Node {
            parents: Vec::new(),
            op: Op::Leaf,
        });
        value.detach().attach(self.clone(), id)
    }

    /// Convenience for `leaf(Tensor::new(shape, data))`.
    pub fn var(&self, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Ok(self.leaf(&Tensor::new(shape, data)?))
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Reverse sweep from `root` seeded with `seed`; returns per-node adjoints.
    pub(crate) fn sweep(&self, root: usize, seed: Vec<f64>) -> Vec<Option<Vec<f64>>> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(root + 1);
        grads.resize_with(root + 1, || None);
        grads[root] = Some(seed);
        for id in (0..=root).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || node.parents.iter().all(Option::is_none) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = vjp(node, &g);
            for (slot, contrib) in node.parents.iter().zip(contributions) {
                let (Some(pid), Some(contrib)) = (slot, contrib) else {
                    continue;
                };
                match &mut grads[*pid] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    empty @ None => *empty = Some(contrib),
                }
            }
            // Keep adjoints of leaves only; interior buffers were taken above.
        }
        grads
    }
}

/// Adjoints keyed by tape node, produced by [`Tensor::backward`].
pub struct Gradients {
    tape: Tape,
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn new(tape: Tape, grads: Vec<Option<Vec<f64>>>) -> Self {
        Gradients { tape, grads }
    }

    /// Gradient with respect to a tracked leaf; `None` if `x` did not influence the loss.
    pub fn get(&self, x: &Tensor) -> Option<&[f64]> {
        let (tape, id) = x.node()?;
        if !tape.same_as(&self.tape) {
            return None;
        }
        self.grads.get(id)?.as_deref()
    }

    /// Like [`get`](Self::get) but returns zeros for leaves the loss does not depend on.
    pub fn wrt(&self, x: &Tensor) -> Vec<f64> {
        self.get(x)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()])
    }
}

/// Sums a gradient of length `out_len` down to a broadcast operand of length `len`.
fn unbroadcast(g: &[f64], len: usize) -> Vec<f64> {
    if len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().sum()]
    }
}

#[inline]
fn bc(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

fn vjp(node: &Node, g: &[f64]) -> Vec<Option<Vec<f64>>> {
    let need = |k: usize| node.parents.get(k).copied().flatten().is_some();
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add { lens } => vec![
            need(0).then(|| unbroadcast(g, lens[0])),
            need(1).then(|| unbroadcast(g, lens[1])),
        ],
        Op::Sub { lens } => vec![
            need(0).then(|| unbroadcast(g, lens[0])),
            need(1).then(|| {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                unbroadcast(&neg, lens[1])
            }),
        ],
        Op::Mul { a, b } => vec![
            need(0).then(|| {
                let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * bc(b, i)).collect();
                unbroadcast(&full, a.len())
            }),
            need(1).then(|| {
                let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * bc(a, i)).collect();
                unbroadcast(&full, b.len())
            }),
        ],
        Op::Div { a, b } => vec![
            need(0).then(|| {
                let full: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi / bc(b, i)).collect();
                unbroadcast(&full, a.len())
            }),
            need(1).then(|| {
                let full: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| {
                        let bi = bc(b, i);
                        -gi * bc(a, i) / (bi * bi)
                    })
                    .collect();
                unbroadcast(&full, b.len())
            }),
        ],
        Op::Affine { scale } => vec![Some(g.iter().map(|v| v * scale).collect())],
        Op::Exp { out } => vec![Some(g.iter().zip(out.iter()).map(|(g, y)| g * y).collect())],
        Op::Log { a } => vec![Some(g.iter().zip(a.iter()).map(|(g, x)| g / x).collect())],
        Op::Pow { a, k } => vec![Some(
            g.iter()
                .zip(a.iter())
                .map(|(g, x)| g * k * x.powf(k - 1.0))
                .collect(),
        )],
        Op::Sqrt { out } => vec![Some(
            g.iter().zip(out.iter()).map(|(g, y)| g * 0.5 / y).collect(),
        )],
        Op::AbsSmooth { a, out } => vec![Some(
            g.iter()
                .zip(a.iter().zip(out.iter()))
                .map(|(g, (x, y))| g * x / y)
                .collect(),
        )],
        Op::Sigmoid { out, beta } => {
            let broken = fault_active("stable_sigmoid");
            vec![Some(
                g.iter()
                    .zip(out.iter())
                    .map(|(g, s)| {
                        let d = g * beta * s * (1.0 - s);
                        if broken {
                            1.5 * d
                        } else {
                            d
                        }
                    })
                    .collect(),
            )]
        }
        Op::Sech2Half { a, beta } => vec![Some(
            g.iter()
                .zip(a.iter())
                .map(|(g, &x)| {
                    // d/dx 4 s (1 - s) with s = sigmoid(beta x), written via the
                    // small tail value q so neither side cancels.
                    let q = stable_sigmoid(-(beta * x).abs());
                    let slope = 4.0 * beta * q * (1.0 - q) * (1.0 - 2.0 * q);
                    if x >= 0.0 {
                        -g * slope
                    } else {
                        g * slope
                    }
                })
                .collect(),
        )],
        Op::LogSech2Half { a, beta } => vec![Some(
            g.iter()
                .zip(a.iter())
                .map(|(g, x)| -g * beta * (0.5 * beta * x).tanh())
                .collect(),
        )],
        Op::Softmax { out, beta, layout } => {
            let mut dx = vec![0.0; out.len()];
            for o in 0..layout.outer {
                for r in 0..layout.inner {
                    let mut dot = 0.0;
                    for i in 0..layout.axis {
                        let k = layout.at(o, i, r);
                        dot += g[k] * out[k];
                    }
                    for i in 0..layout.axis {
                        let k = layout.at(o, i, r);
                        dx[k] = beta * out[k] * (g[k] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::Sum { layout } => {
            let mut dx = vec![0.0; layout.outer * layout.axis * layout.inner];
            for o in 0..layout.outer {
                for i in 0..layout.axis {
                    for r in 0..layout.inner {
                        dx[layout.at(o, i, r)] = g[o * layout.inner + r];
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::Prod { a, layout } => {
            let mut dx = vec![0.0; a.len()];
            let mut prefix = vec![1.0; layout.axis + 1];
            let mut suffix = vec![1.0; layout.axis + 1];
            for o in 0..layout.outer {
                for r in 0..layout.inner {
                    for i in 0..layout.axis {
                        prefix[i + 1] = prefix[i] * a[layout.at(o, i, r)];
                    }
                    for i in (0..layout.axis).rev() {
                        suffix[i] = suffix[i + 1] * a[layout.at(o, i, r)];
                    }
                    let go = g[o * layout.inner + r];
                    for i in 0..layout.axis {
                        dx[layout.at(o, i, r)] = go * prefix[i] * suffix[i + 1];
                    }
                }
            }
            vec![Some(dx)]
        }
        Op::Matmul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let da = need(0).then(|| {
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        for t in 0..k {
                            da[i * k + t] += gij * b[t * n + j];
                        }
                    }
                }
                da
            });
            let db = need(1).then(|| {
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for t in 0..k {
                        let ait = a[i * k + t];
                        for j in 0..n {
                            db[t * n + j] += ait * g[i * n + j];
                        }
                    }
                }
                db
            });
            vec![da, db]
        }
        Op::Gather { idx, src_len } => {
            let mut dx = vec![0.0; *src_len];
            for (gi, &j) in g.iter().zip(idx.iter()) {
                dx[j] += gi;
            }
            vec![Some(dx)]
        }
        Op::ScatterAdd { idx } => vec![Some(idx.iter().map(|&j| g[j]).collect())],
        Op::Assign { pos, base_len } => {
            let base = need(0).then(|| {
                let mut d = g[..*base_len].to_vec();
                for &p in pos.iter() {
                    d[p] = 0.0;
                }
                d
            });
            let src = need(1).then(|| pos.iter().map(|&p| g[p]).collect());
            vec![base, src]
        }
        Op::Select { mask, lens } => {
            let pick = |want: bool, len: usize| {
                let full: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| if mask[i] == want { *gi } else { 0.0 })
                    .collect();
                unbroadcast(&full, len)
            };
            vec![
                need(0).then(|| pick(true, lens[0])),
                need(1).then(|| pick(false, lens[1])),
            ]
        }
        Op::Concat { lens } => {
            let mut out = Vec::with_capacity(lens.len());
            let mut start = 0;
            for (k, &len) in lens.iter().enumerate() {
                out.push(need(k).then(|| g[start..start + len].to_vec()));
                start += len;
            }
            out
        }
    }
}

pub(crate) fn ensure_same_tape(a: &Tape, b: &Tape) -> Result<()> {
    if a.same_as(b) {
        Ok(())
    } else {
        Err(Error::structural("operands are recorded on different tapes"))
    }
}
