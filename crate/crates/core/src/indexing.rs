//! Reading and writing tensors at relaxed positions.
//!
//! Real-valued reads interpolate with a logistic kernel over every valid
//! index. Categorical reads and writes weight cells by per-axis marginal
//! distributions.

use crate::autodiff::Tensor;
use crate::error::{check_beta, Error, Result};
use crate::relax::CategoricalDistribution;

/// Where to read in a tensor.
#[derive(Debug, Clone)]
pub enum IndexQuery {
    /// Exact integer position.
    Hard(Vec<usize>),
    /// Fractional coordinates, one per axis.
    Real { coords: Tensor, beta: f64 },
    /// A marginal distribution per axis.
    Categorical(Vec<CategoricalDistribution>),
}

impl IndexQuery {
    pub fn read(&self, a: &Tensor) -> Result<Tensor> {
        match self {
            IndexQuery::Hard(idx) => read_hard(a, idx),
            IndexQuery::Real { coords, beta } => read_real(a, coords, *beta),
            IndexQuery::Categorical(w) => read_categorical(a, w),
        }
    }
}

fn flat_index(shape: &[usize], idx: &[usize]) -> Result<usize> {
    if idx.len() != shape.len() {
        return Err(Error::structural(format!(
            "index of rank {} into tensor of shape {shape:?}",
            idx.len()
        )));
    }
    let mut flat = 0;
    for (&i, &n) in idx.iter().zip(shape) {
        if i >= n {
            return Err(Error::structural(format!(
                "index {idx:?} out of bounds for shape {shape:?}"
            )));
        }
        flat = flat * n + i;
    }
    Ok(flat)
}

/// Exact element read; the gradient flows to that element only.
pub fn read_hard(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    a.at(flat_index(a.shape(), idx)?)
}

/// Exact element store.
pub fn write_hard(a: &Tensor, idx: &[usize], v: &Tensor) -> Result<Tensor> {
    if !v.is_scalar() {
        return Err(Error::structural("stored value must be a scalar"));
    }
    let flat = flat_index(a.shape(), idx)?;
    a.assign(&[flat], &v.reshape(&[1])?)
}

/// Logistic density `(beta/4) sech^2(beta t / 2)`.
///
/// A vector of offsets gives one density per entry. A matrix of shape
/// `[m, d]` holds `m` points in `d` dimensions and gives the product of the
/// per-dimension densities for each point.
pub fn logistic_kernel(offsets: &Tensor, beta: f64) -> Result<Tensor> {
    check_beta(beta)?;
    let g = offsets.sech2_half(beta)?.mul_scalar(beta / 4.0);
    match offsets.rank() {
        0 | 1 => Ok(g),
        2 => g.prod_axis(Some(1)),
        r => Err(Error::structural(format!("kernel offsets must have rank <= 2, got {r}"))),
    }
}

/// Outer product of per-axis vectors, shaped like the tensor they index.
fn outer(parts: &[Tensor]) -> Result<Tensor> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        let (m, n) = (acc.len(), p.len());
        acc = acc.reshape(&[m, 1])?.matmul(&p.reshape(&[1, n])?)?;
        acc = acc.reshape(&[m * n])?;
    }
    let shape: Vec<usize> = parts.iter().map(Tensor::len).collect();
    acc.reshape(&shape)
}

/// Reads `a` at fractional coordinates `i` (one per axis).
///
/// The forward value is `sum_j g(j - i) a_j / sum_j g(j - i)` over all valid
/// integer tuples `j`, where `g` is the product of 1-D logistic densities.
/// The normalizer is treated as a constant in the backward pass, so the
/// gradient with respect to `i` is `sum_j g'(j - i) a_j / sum_j g(j - i)`,
/// not the derivative of the normalized forward value.
///
/// The kernel is evaluated in log space so that far or sharp queries do not
/// underflow the normalizer.
pub fn read_real(a: &Tensor, i: &Tensor, beta: f64) -> Result<Tensor> {
    check_beta(beta)?;
    if a.is_empty() {
        return Err(Error::structural("read_real on an empty tensor"));
    }
    let rank = a.rank().max(1);
    if i.len() != rank {
        return Err(Error::Shape {
            op: "read_real",
            lhs: a.shape().to_vec(),
            rhs: i.shape().to_vec(),
        });
    }
    let extents: Vec<usize> = if a.rank() == 0 { vec![1] } else { a.shape().to_vec() };
    let mut log_parts = Vec::with_capacity(rank);
    for (d, &n) in extents.iter().enumerate() {
        let grid = Tensor::vector((0..n).map(|j| j as f64).collect());
        let t = grid.sub(&i.at(d)?)?;
        log_parts.push(t.log_sech2_half(beta)?);
    }
    // log g(j - i) = sum_d log g_d up to the constant d * ln(beta/4).
    let log_g = outer_sum(&log_parts)?;
    let lg = log_g.value();
    let peak = lg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = lg.iter().map(|v| (v - peak).exp()).collect();
    let z: f64 = unnorm.iter().sum();
    let w = Tensor::new(log_g.shape(), unnorm.iter().map(|u| u / z).collect())?;
    // w * (1 + log g - detach(log g)): the forward value is w, and the
    // derivative is w * d(log g) = g' / (detached normalizer).
    let tilt = log_g.sub(&log_g.detach())?.add_scalar(1.0);
    let flat_a = a.reshape(&[a.len()])?;
    let flat_k = w.mul(&tilt)?.reshape(&[a.len()])?;
    flat_k.dot(&flat_a)
}

/// `out[j] = sum_d parts[d][j_d]`, shaped `[len_0, len_1, ...]`.
fn outer_sum(parts: &[Tensor]) -> Result<Tensor> {
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        let (m, n) = (acc.len(), p.len());
        let left: Vec<usize> = (0..m * n).map(|k| k / n).collect();
        let right: Vec<usize> = (0..m * n).map(|k| k % n).collect();
        acc = acc.gather(&left, &[m * n])?.add(&p.gather(&right, &[m * n])?)?;
    }
    let shape: Vec<usize> = parts.iter().map(Tensor::len).collect();
    acc.reshape(&shape)
}

fn check_weights(a: &Tensor, w: &[CategoricalDistribution]) -> Result<()> {
    let extents: Vec<usize> = w.iter().map(CategoricalDistribution::len).collect();
    if extents != a.shape() {
        return Err(Error::Shape {
            op: "categorical index",
            lhs: a.shape().to_vec(),
            rhs: extents,
        });
    }
    Ok(())
}

/// `sum_j (prod_axes w_axis[j_axis]) a_j`.
pub fn read_categorical(a: &Tensor, w: &[CategoricalDistribution]) -> Result<Tensor> {
    check_weights(a, w)?;
    if w.is_empty() {
        return Ok(a.clone());
    }
    let mut rest = a.clone();
    for dist in w {
        let n = dist.len();
        let tail = rest.len() / n;
        rest = dist.weights().matmul(&rest.reshape(&[n, tail])?)?;
    }
    rest.reshape(&[])
}

/// Soft store: `a'_j = (1 - m_j) a_j + m_j v` with `m_j = prod_axes w_axis[j_axis]`.
pub fn write_categorical(
    a: &Tensor,
    w: &[CategoricalDistribution],
    v: &Tensor,
) -> Result<Tensor> {
    check_weights(a, w)?;
    if !v.is_scalar() {
        return Err(Error::structural("stored value must be a scalar"));
    }
    if w.is_empty() {
        return Ok(v.clone());
    }
    let parts: Vec<Tensor> = w.iter().map(|d| d.weights().clone()).collect();
    let m = outer(&parts)?;
    a.add(&m.mul(&v.sub(a)?)?)
}
