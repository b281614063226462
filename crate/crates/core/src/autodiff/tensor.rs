use std::fmt;
use std::rc::Rc;

use super::tape::{ensure_same_tape, AxisLayout, Gradients, Node, Op, Tape};
use crate::error::{check_beta, Error, Result};

#[derive(Clone)]
struct Var {
    tape: Tape,
    id: usize,
}

/// Shaped fp64 array, optionally recorded on a [`Tape`].
///
/// Data is row-major and shared, so clones are cheap. Tensors without a tape
/// node are plain constants.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<[f64]>,
    var: Option<Var>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..])
            .field("tracked", &self.var.is_some())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::structural(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: data.into(),
            var: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Rc::from([v]),
            var: None,
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor {
            shape: vec![v.len()],
            data: v.into(),
            var: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, v: Vec<f64>) -> Result<Self> {
        Tensor::new(&[rows, cols], v)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n].into(),
            var: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn value(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.to_vec()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.var.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.var.as_ref().map(|v| &v.tape)
    }

    pub(crate) fn node(&self) -> Option<(&Tape, usize)> {
        self.var.as_ref().map(|v| (&v.tape, v.id))
    }

    pub(crate) fn attach(mut self, tape: Tape, id: usize) -> Self {
        self.var = Some(Var { tape, id });
        self
    }

    /// Same forward value, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            var: None,
        }
    }

    /// True when both handles denote the same value without inspecting data:
    /// the same tape node, or the same untracked buffer / equal constants.
    pub fn same_as(&self, other: &Tensor) -> bool {
        match (&self.var, &other.var) {
            (Some(a), Some(b)) => a.id == b.id && a.tape.same_as(&b.tape),
            (None, None) => {
                self.shape == other.shape
                    && (Rc::ptr_eq(&self.data, &other.data) || self.data == other.data)
            }
            _ => false,
        }
    }

    /// Reinterprets the buffer with a new shape; keeps tape identity.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            var: self.var.clone(),
        })
    }

    fn common_tape(inputs: &[&Tensor]) -> Result<Option<Tape>> {
        let mut found: Option<&Tape> = None;
        for t in inputs {
            if let Some(tape) = t.tape() {
                match found {
                    Some(f) => ensure_same_tape(f, tape)?,
                    None => found = Some(tape),
                }
            }
        }
        Ok(found.cloned())
    }

    /// Builds the output tensor and, if any input is tracked, records `op`.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: &[&Tensor],
        op: impl FnOnce() -> Op,
    ) -> Result<Tensor> {
        debug_assert!(
            !inputs.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
                || data.iter().all(|v| v.is_finite()),
            "non-finite output from finite inputs"
        );
        let out = Tensor {
            shape,
            data: data.into(),
            var: None,
        };
        let Some(tape) = Self::common_tape(inputs)? else {
            return Ok(out);
        };
        let parents = inputs.iter().map(|t| t.var.as_ref().map(|v| v.id)).collect();
        let id = tape.push(Node {
            parents,
            op: op(),
        });
        Ok(out.attach(tape, id))
    }

    // ---- elementwise -----------------------------------------------------

    fn broadcast_shape(&self, other: &Tensor, op: &'static str) -> Result<Vec<usize>> {
        if self.shape == other.shape || other.is_scalar() {
            Ok(self.shape.clone())
        } else if self.is_scalar() {
            Ok(other.shape.clone())
        } else {
            Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let shape = self.broadcast_shape(other, op)?;
        let n: usize = shape.iter().product();
        let (a, b) = (&self.data, &other.data);
        let data = (0..n)
            .map(|i| {
                let x = if a.len() == 1 { a[0] } else { a[i] };
                let y = if b.len() == 1 { b[0] } else { b[i] };
                f(x, y)
            })
            .collect();
        Ok((shape, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = self.zip_with(other, "add", |x, y| x + y)?;
        let lens = [self.len(), other.len()];
        Tensor::from_op(shape, data, &[self, other], || Op::Add { lens })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = self.zip_with(other, "sub", |x, y| x - y)?;
        let lens = [self.len(), other.len()];
        Tensor::from_op(shape, data, &[self, other], || Op::Sub { lens })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = self.zip_with(other, "mul", |x, y| x * y)?;
        Tensor::from_op(shape, data, &[self, other], || Op::Mul {
            a: self.data.clone(),
            b: other.data.clone(),
        })
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.contains(&0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        let (shape, data) = self.zip_with(other, "div", |x, y| x / y)?;
        Tensor::from_op(shape, data, &[self, other], || Op::Div {
            a: self.data.clone(),
            b: other.data.clone(),
        })
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&self, scale: f64, shift: f64) -> Tensor {
        let data = self.data.iter().map(|v| scale * v + shift).collect();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Affine { scale })
            .expect("single-input op")
    }

    pub fn neg(&self) -> Tensor {
        self.affine(-1.0, 0.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.affine(1.0, c)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.affine(c, 0.0)
    }

    /// `1 - x`, the complement of a probability.
    pub fn one_minus(&self) -> Tensor {
        self.affine(-1.0, 1.0)
    }

    pub fn exp(&self) -> Tensor {
        let data: Vec<f64> = self.data.iter().map(|v| v.exp()).collect();
        let out: Rc<[f64]> = data.clone().into();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Exp { out })
            .expect("single-input op")
    }

    pub fn log(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v <= 0.0) {
            return Err(Error::domain("log", format!("argument {v} is not positive")));
        }
        let data = self.data.iter().map(|v| v.ln()).collect();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Log {
            a: self.data.clone(),
        })
    }

    pub fn powf(&self, k: f64) -> Result<Tensor> {
        if k.fract() != 0.0 && self.data.iter().any(|&v| v < 0.0) {
            return Err(Error::domain("pow_scalar", "non-integer power of a negative value"));
        }
        let data = self.data.iter().map(|v| v.powf(k)).collect();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Pow {
            a: self.data.clone(),
            k,
        })
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("same shape")
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data.iter().find(|&&v| v < 0.0) {
            return Err(Error::domain("sqrt", format!("argument {v} is negative")));
        }
        let data: Vec<f64> = self.data.iter().map(|v| v.sqrt()).collect();
        let out: Rc<[f64]> = data.clone().into();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Sqrt { out })
    }

    /// `sqrt(x^2 + eps^2)`: a smooth stand-in for `|x|`.
    pub fn abs_smooth(&self, eps: f64) -> Result<Tensor> {
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("abs_smooth eps must be positive, got {eps}")));
        }
        let data: Vec<f64> = self.data.iter().map(|v| (v * v + eps * eps).sqrt()).collect();
        let out: Rc<[f64]> = data.clone().into();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::AbsSmooth {
            a: self.data.clone(),
            out,
        })
    }

    /// Logistic CDF `1 / (1 + exp(-beta x))`, evaluated per sign so neither
    /// tail overflows.
    pub fn sigmoid(&self, beta: f64) -> Result<Tensor> {
        check_beta(beta)?;
        let data: Vec<f64> = self.data.iter().map(|&v| stable_sigmoid(beta * v)).collect();
        let out: Rc<[f64]> = data.clone().into();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Sigmoid { out, beta })
    }

    /// `sech^2(beta x / 2)`, computed as `4 s (1 - s)` with `s` the smaller of
    /// `sigmoid(beta x)` and its complement, which keeps both tails accurate
    /// and the result exactly even in `x`.
    pub fn sech2_half(&self, beta: f64) -> Result<Tensor> {
        check_beta(beta)?;
        let data = self
            .data
            .iter()
            .map(|&v| {
                let s = stable_sigmoid(-(beta * v).abs());
                4.0 * s * (1.0 - s)
            })
            .collect();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Sech2Half {
            a: self.data.clone(),
            beta,
        })
    }

    /// `ln sech^2(beta x / 2)`, finite for every finite `x`.
    pub fn log_sech2_half(&self, beta: f64) -> Result<Tensor> {
        check_beta(beta)?;
        let data = self
            .data
            .iter()
            .map(|&v| {
                let y = (0.5 * beta * v).abs();
                2.0 * (std::f64::consts::LN_2 - y - (-2.0 * y).exp().ln_1p())
            })
            .collect();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::LogSech2Half {
            a: self.data.clone(),
            beta,
        })
    }

    /// Elementwise choice between `self` (where `mask`) and `other`.
    /// The mask is a constant; gradients flow to the chosen operand only.
    pub fn select(mask: &[bool], a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let shape = a.broadcast_shape(b, "select")?;
        let n: usize = shape.iter().product();
        if mask.len() != n {
            return Err(Error::Shape {
                op: "select",
                lhs: vec![mask.len()],
                rhs: shape,
            });
        }
        let pick = |t: &Tensor, i: usize| if t.len() == 1 { t.data[0] } else { t.data[i] };
        let data = (0..n)
            .map(|i| if mask[i] { pick(a, i) } else { pick(b, i) })
            .collect();
        let lens = [a.len(), b.len()];
        Tensor::from_op(shape, data, &[a, b], || Op::Select {
            mask: mask.into(),
            lens,
        })
    }

    // ---- reductions ------------------------------------------------------

    fn layout(&self, axis: Option<usize>, op: &'static str) -> Result<(AxisLayout, Vec<usize>)> {
        match axis {
            None => Ok((AxisLayout::full(self.len()), Vec::new())),
            Some(a) if a < self.rank() => {
                let mut shape = self.shape.clone();
                shape.remove(a);
                Ok((AxisLayout::new(&self.shape, a), shape))
            }
            Some(a) => Err(Error::structural(format!(
                "{op}: axis {a} out of range for shape {:?}",
                self.shape
            ))),
        }
    }

    /// Sum over `axis`, or over everything when `axis` is `None`.
    pub fn sum_axis(&self, axis: Option<usize>) -> Result<Tensor> {
        let (layout, shape) = self.layout(axis, "sum")?;
        let mut data = vec![0.0; layout.reduced_len()];
        for o in 0..layout.outer {
            for i in 0..layout.axis {
                for r in 0..layout.inner {
                    data[o * layout.inner + r] += self.data[layout.at(o, i, r)];
                }
            }
        }
        Tensor::from_op(shape, data, &[self], || Op::Sum { layout })
    }

    pub fn sum(&self) -> Tensor {
        self.sum_axis(None).expect("full reduction")
    }

    pub fn mean_axis(&self, axis: Option<usize>) -> Result<Tensor> {
        let n = match axis {
            None => self.len(),
            Some(a) => *self.shape.get(a).unwrap_or(&0),
        };
        if n == 0 {
            return Err(Error::structural("mean over an empty axis"));
        }
        Ok(self.sum_axis(axis)?.mul_scalar(1.0 / n as f64))
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.mean_axis(None)
    }

    /// Product over `axis`; the gradient uses exclusion products so zero
    /// entries are handled exactly.
    pub fn prod_axis(&self, axis: Option<usize>) -> Result<Tensor> {
        let (layout, shape) = self.layout(axis, "product")?;
        let mut data = vec![1.0; layout.reduced_len()];
        for o in 0..layout.outer {
            for i in 0..layout.axis {
                for r in 0..layout.inner {
                    data[o * layout.inner + r] *= self.data[layout.at(o, i, r)];
                }
            }
        }
        Tensor::from_op(shape, data, &[self], || Op::Prod {
            a: self.data.clone(),
            layout,
        })
    }

    pub fn prod(&self) -> Tensor {
        self.prod_axis(None).expect("full reduction")
    }

    pub fn dot(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self.mul(other)?.sum())
    }

    /// `softmax(beta x)` along `axis`, with max-subtraction.
    pub fn softmax(&self, beta: f64, axis: usize) -> Result<Tensor> {
        check_beta(beta)?;
        let (layout, _) = self.layout(Some(axis), "softmax")?;
        if layout.axis == 0 {
            return Err(Error::structural("softmax over an empty axis"));
        }
        let mut data = vec![0.0; self.len()];
        for o in 0..layout.outer {
            for r in 0..layout.inner {
                let mut m = f64::NEG_INFINITY;
                for i in 0..layout.axis {
                    m = m.max(beta * self.data[layout.at(o, i, r)]);
                }
                let mut z = 0.0;
                for i in 0..layout.axis {
                    let k = layout.at(o, i, r);
                    let e = (beta * self.data[k] - m).exp();
                    data[k] = e;
                    z += e;
                }
                for i in 0..layout.axis {
                    data[layout.at(o, i, r)] /= z;
                }
            }
        }
        let out: Rc<[f64]> = data.clone().into();
        Tensor::from_op(self.shape.clone(), data, &[self], || Op::Softmax {
            out,
            beta,
            layout,
        })
    }

    /// Matrix product for operands of rank at most two.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: other.shape.clone(),
        };
        let (m, k) = match self.shape.as_slice() {
            [k] => (1, *k),
            [m, k] => (*m, *k),
            _ => return Err(mismatch()),
        };
        let (k2, n) = match other.shape.as_slice() {
            [k] => (*k, 1),
            [k, n] => (*k, *n),
            _ => return Err(mismatch()),
        };
        if k != k2 {
            return Err(mismatch());
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for t in 0..k {
                let a = self.data[i * k + t];
                for j in 0..n {
                    data[i * n + j] += a * other.data[t * n + j];
                }
            }
        }
        let shape = match (self.rank(), other.rank()) {
            (1, 1) => vec![],
            (1, _) => vec![n],
            (_, 1) => vec![m],
            _ => vec![m, n],
        };
        Tensor::from_op(shape, data, &[self, other], || Op::Matmul {
            a: self.data.clone(),
            b: other.data.clone(),
            m,
            k,
            n,
        })
    }

    // ---- structural ------------------------------------------------------

    /// Flat-index gather: `out[i] = self[idx[i]]`, reshaped to `shape`.
    pub fn gather(&self, idx: &[usize], shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != idx.len() {
            return Err(Error::structural(format!(
                "gather: {} indices cannot fill shape {shape:?}",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= self.len()) {
            return Err(Error::structural(format!(
                "gather: index {bad} out of range for length {}",
                self.len()
            )));
        }
        let data = idx.iter().map(|&j| self.data[j]).collect();
        Tensor::from_op(shape.to_vec(), data, &[self], || Op::Gather {
            idx: idx.into(),
            src_len: self.len(),
        })
    }

    /// Single element at a flat index, as a scalar tensor.
    pub fn at(&self, flat: usize) -> Result<Tensor> {
        self.gather(&[flat], &[])
    }

    /// `out = zeros(shape); out[idx[i]] += self[i]`.
    pub fn scatter_add(&self, idx: &[usize], shape: &[usize]) -> Result<Tensor> {
        if idx.len() != self.len() {
            return Err(Error::structural("scatter_add: index count must match source length"));
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0.0; n];
        for (v, &j) in self.data.iter().zip(idx) {
            if j >= n {
                return Err(Error::structural(format!("scatter_add: index {j} out of range")));
            }
            data[j] += v;
        }
        Tensor::from_op(shape.to_vec(), data, &[self], || Op::ScatterAdd { idx: idx.into() })
    }

    /// Copy of `self` with `self[pos[i]] = src[i]`; positions must be distinct.
    pub fn assign(&self, pos: &[usize], src: &Tensor) -> Result<Tensor> {
        if pos.len() != src.len() {
            return Err(Error::structural("assign: position count must match source length"));
        }
        let mut data = self.data.to_vec();
        for (k, &p) in pos.iter().enumerate() {
            if p >= data.len() {
                return Err(Error::structural(format!("assign: position {p} out of range")));
            }
            data[p] = src.data[k];
        }
        debug_assert!(
            {
                let mut seen = pos.to_vec();
                seen.sort_unstable();
                seen.windows(2).all(|w| w[0] != w[1])
            },
            "assign positions must be distinct"
        );
        Tensor::from_op(self.shape.clone(), data, &[self, src], || Op::Assign {
            pos: pos.into(),
            base_len: self.len(),
        })
    }

    /// Flat concatenation of `parts`, reshaped to `shape`.
    pub fn concat(parts: &[Tensor], shape: &[usize]) -> Result<Tensor> {
        let total: usize = parts.iter().map(Tensor::len).sum();
        if shape.iter().product::<usize>() != total {
            return Err(Error::structural(format!(
                "concat: {total} values cannot fill shape {shape:?}"
            )));
        }
        let mut data = Vec::with_capacity(total);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let lens = parts.iter().map(Tensor::len).collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::from_op(shape.to_vec(), data, &refs, || Op::Concat { lens })
    }

    /// Stacks scalars (or equal-length vectors) into a vector (or matrix).
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::structural("stack of zero tensors"));
        };
        if parts.iter().any(|p| p.shape != first.shape) {
            return Err(Error::structural("stack: parts differ in shape"));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::concat(parts, &shape)
    }

    // ---- differentiation -------------------------------------------------

    /// Reverse-mode sweep from this scalar loss.
    pub fn backward(&self) -> Result<Gradients> {
        if self.len() != 1 {
            return Err(Error::structural(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape
            )));
        }
        let Some(var) = &self.var else {
            return Err(Error::structural("backward on an untracked tensor"));
        };
        let grads = var.tape.sweep(var.id, vec![1.0]);
        Ok(Gradients::new(var.tape.clone(), grads))
    }
}

/// Logistic function at unit temperature, evaluated per sign.
pub fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
