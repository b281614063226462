//! Minimal reverse-mode automatic differentiation over fp64 tensors.
//!
//! Operations on tensors recorded on a [`Tape`] append nodes; calling
//! [`Tensor::backward`] on a scalar walks the tape once in reverse and
//! returns [`Gradients`] for the leaves. Broadcasting is limited to a
//! one-element operand combined with a tensor of any shape.
//!
//! ```
//! use algorelax::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::scalar(3.0));
//! let loss = x.mul(&x).unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.wrt(&x), vec![6.0]);
//! ```

mod tape;
mod tensor;

pub use tape::{inject_gradient_fault, Gradients, Tape};
pub use tensor::{stable_sigmoid, Tensor};

use crate::error::{Error, Result};

/// The elementwise primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    PowScalar(f64),
    Sqrt,
    AbsSmooth(f64),
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div)
    }

    pub fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Div => "div",
            Elementwise::Neg => "neg",
            Elementwise::Exp => "exp",
            Elementwise::Log => "log",
            Elementwise::PowScalar(_) => "pow_scalar",
            Elementwise::Sqrt => "sqrt",
            Elementwise::AbsSmooth(_) => "abs_smooth",
        }
    }
}

/// Applies an elementwise primitive; `b` is required exactly for binary kinds.
pub fn elementwise(kind: Elementwise, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    match (kind.is_binary(), b) {
        (true, None) => {
            return Err(Error::structural(format!("{} needs two operands", kind.name())))
        }
        (false, Some(_)) => {
            return Err(Error::structural(format!("{} takes one operand", kind.name())))
        }
        _ => {}
    }
    match kind {
        Elementwise::Add => a.add(b.unwrap()),
        Elementwise::Sub => a.sub(b.unwrap()),
        Elementwise::Mul => a.mul(b.unwrap()),
        Elementwise::Div => a.div(b.unwrap()),
        Elementwise::Neg => Ok(a.neg()),
        Elementwise::Exp => Ok(a.exp()),
        Elementwise::Log => a.log(),
        Elementwise::PowScalar(k) => a.powf(k),
        Elementwise::Sqrt => a.sqrt(),
        Elementwise::AbsSmooth(eps) => a.abs_smooth(eps),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Product,
}

pub fn reduce(kind: Reduction, x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    match kind {
        Reduction::Sum => x.sum_axis(axis),
        Reduction::Mean => x.mean_axis(axis),
        Reduction::Product => x.prod_axis(axis),
    }
}

/// Central-difference gradient of a scalar function at `x`.
///
/// `f` is called with untracked tensors of `x`'s shape, twice per coordinate.
pub fn finite_difference_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    let base = x.to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::new(x.shape(), plus)?)?;
        let fm = f(&Tensor::new(x.shape(), minus)?)?;
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

/// Evaluates `f` on a fresh tape with `x` as the only leaf and returns the
/// scalar value together with its analytic gradient.
pub fn value_and_grad<F>(f: F, x: &Tensor) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x);
    let out = f(&leaf)?;
    if !out.is_tracked() {
        return Ok((out.item(), vec![0.0; x.len()]));
    }
    let grads = out.backward()?;
    Ok((out.item(), grads.wrt(&leaf)))
}

/// Largest componentwise deviation between two gradients, relative to the
/// larger of their max-norms (floored at 1e-6 so all-zero gradients compare
/// absolutely).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-6_f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}
