//! Finite-difference gradient suites over every relaxed primitive, the
//! indexing operators, the program executor and the four algorithms.
//!
//! Each check draws seeded random instances, evaluates the analytic gradient
//! on a fresh tape and compares it with central differences (or, for the
//! detached-normalizer path of real-valued indexing, with its hand-derived
//! rule). The report is deterministic for a given seed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::algorithms::{
    bellman_ford, bubble_sort, levenshtein, rasterize_euclidean, rasterize_three_edges,
    signed_point_triangle_distance, transform_and_projection, Camera, Mesh2DProjection,
};
use crate::autodiff::{finite_difference_grad, relative_error, value_and_grad, Tensor};
use crate::error::{Error, Result};
use crate::indexing::{
    logistic_kernel, read_categorical, read_hard, read_real, write_categorical, write_hard,
};
use crate::program::{run, Condition, Expr, IndexMode, Mode, State, Statement};
use crate::relax::{
    cat_prob_eq, prob_and, prob_eq, prob_gt, prob_lt, prob_or, soft_argmax, soft_max, soft_min,
    soft_min_rows, CategoricalDistribution,
};

/// Maximum relative error accepted by every check.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-5;
pub const DEFAULT_INSTANCES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Primitives,
    Indexing,
    Program,
    Algorithms,
    All,
}

impl Scope {
    pub fn name(self) -> &'static str {
        match self {
            Scope::Primitives => "primitives",
            Scope::Indexing => "indexing",
            Scope::Program => "program",
            Scope::Algorithms => "algorithms",
            Scope::All => "all",
        }
    }

    fn covers(self, group: Scope) -> bool {
        self == Scope::All || self == group
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Scope::Primitives, Scope::Indexing, Scope::Program, Scope::Algorithms, Scope::All]
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown gradcheck scope '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub group: String,
    /// `finite_difference` or `hand_derived_rule`.
    pub oracle: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub scope: String,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    pub checks: Vec<CheckOutcome>,
    pub failed: Vec<String>,
    pub passed: bool,
}

type Loss = Box<dyn Fn(&Tensor) -> Result<Tensor>>;
type Rule = Box<dyn Fn(&[f64]) -> Vec<f64>>;

/// One random instance: a point `x` and a scalar loss of it.
struct Instance {
    x: Tensor,
    f: Loss,
    /// Expected gradient when finite differences are not the right oracle.
    rule: Option<Rule>,
}

impl Instance {
    fn fd(x: Tensor, f: impl Fn(&Tensor) -> Result<Tensor> + 'static) -> Self {
        Instance { x, f: Box::new(f), rule: None }
    }
}

type Generator = fn(&mut ChaCha8Rng) -> Instance;

struct Check {
    name: &'static str,
    group: Scope,
    gen: Generator,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn vec_in(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::vector(uniform(rng, n, lo, hi))
}

/// Scalarizes any output by a fixed random projection.
fn project(out: &Tensor, w: &[f64]) -> Result<Tensor> {
    out.reshape(&[out.len()])?.dot(&Tensor::vector(w.to_vec()))
}

/// Splits a flat parameter vector into consecutive pieces of the given shapes.
fn split(x: &Tensor, shapes: &[&[usize]]) -> Result<Vec<Tensor>> {
    let mut start = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let idx: Vec<usize> = (start..start + n).collect();
            start += n;
            x.gather(&idx, s)
        })
        .collect()
}

/// Unary check on a random vector; `f` maps the vector to any tensor.
fn unary(
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
    f: impl Fn(&Tensor) -> Result<Tensor> + 'static,
) -> Instance {
    let n = rng.random_range(1..6);
    let x = vec_in(rng, n, lo, hi);
    let probe = f(&x).map(|t| t.len()).unwrap_or(1);
    let w = uniform(rng, probe, -1.0, 1.0);
    Instance::fd(x, move |x| project(&f(x)?, &w))
}

/// Binary check: both operands packed into one vector.
fn binary(
    rng: &mut ChaCha8Rng,
    (alo, ahi): (f64, f64),
    (blo, bhi): (f64, f64),
    f: impl Fn(&Tensor, &Tensor) -> Result<Tensor> + 'static,
) -> Instance {
    let n = rng.random_range(1..6);
    let mut data = uniform(rng, n, alo, ahi);
    data.extend(uniform(rng, n, blo, bhi));
    let g = move |x: &Tensor| -> Result<Tensor> {
        let p = split(x, &[&[n], &[n]])?;
        f(&p[0], &p[1])
    };
    let x = Tensor::vector(data);
    let probe = g(&x).map(|t| t.len()).unwrap_or(1);
    let w = uniform(rng, probe, -1.0, 1.0);
    Instance::fd(x, move |x| project(&g(x)?, &w))
}

fn beta_in(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.5..4.0)
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    uniform(rng, n, 0.05, 0.95)
}

const PRIMITIVES: &[Check] = &[
    Check { name: "add", group: Scope::Primitives, gen: |r| binary(r, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.add(b)) },
    Check { name: "sub", group: Scope::Primitives, gen: |r| binary(r, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.sub(b)) },
    Check { name: "mul", group: Scope::Primitives, gen: |r| binary(r, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.mul(b)) },
    Check { name: "div", group: Scope::Primitives, gen: |r| binary(r, (-2.0, 2.0), (0.5, 2.0), |a, b| a.div(b)) },
    Check { name: "scalar_broadcast", group: Scope::Primitives, gen: gen_broadcast },
    Check { name: "neg", group: Scope::Primitives, gen: |r| unary(r, -2.0, 2.0, |x| Ok(x.neg())) },
    Check { name: "exp", group: Scope::Primitives, gen: |r| unary(r, -2.0, 2.0, |x| Ok(x.exp())) },
    Check { name: "log", group: Scope::Primitives, gen: |r| unary(r, 0.2, 3.0, |x| x.log()) },
    Check { name: "pow_scalar", group: Scope::Primitives, gen: gen_pow },
    Check { name: "sqrt", group: Scope::Primitives, gen: |r| unary(r, 0.2, 3.0, |x| x.sqrt()) },
    Check { name: "abs_smooth", group: Scope::Primitives, gen: |r| unary(r, -2.0, 2.0, |x| x.abs_smooth(0.1)) },
    Check { name: "stable_sigmoid", group: Scope::Primitives, gen: |r| { let b = beta_in(r); unary(r, -3.0, 3.0, move |x| x.sigmoid(b)) } },
    Check { name: "sech2_half", group: Scope::Primitives, gen: |r| { let b = beta_in(r); unary(r, -3.0, 3.0, move |x| x.sech2_half(b)) } },
    Check { name: "log_sech2_half", group: Scope::Primitives, gen: |r| { let b = beta_in(r); unary(r, -3.0, 3.0, move |x| x.log_sech2_half(b)) } },
    Check { name: "softmax", group: Scope::Primitives, gen: gen_softmax },
    Check { name: "sum", group: Scope::Primitives, gen: |r| unary(r, -2.0, 2.0, |x| Ok(x.sum())) },
    Check { name: "mean", group: Scope::Primitives, gen: |r| unary(r, -2.0, 2.0, |x| x.mean()) },
    Check { name: "product", group: Scope::Primitives, gen: gen_product },
    Check { name: "matmul", group: Scope::Primitives, gen: gen_matmul },
    Check { name: "dot", group: Scope::Primitives, gen: |r| binary(r, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.dot(b)) },
    Check { name: "gather", group: Scope::Primitives, gen: gen_gather },
    Check { name: "scatter_add", group: Scope::Primitives, gen: gen_scatter },
    Check { name: "assign", group: Scope::Primitives, gen: gen_assign },
    Check { name: "select", group: Scope::Primitives, gen: gen_select },
    Check { name: "concat", group: Scope::Primitives, gen: |r| binary(r, (-2.0, 2.0), (-2.0, 2.0), |a, b| { let n = a.len() + b.len(); Tensor::concat(&[a.square(), b.exp()], &[n]) }) },
    Check { name: "prob_lt", group: Scope::Primitives, gen: |r| { let b = beta_in(r); binary(r, (-2.0, 2.0), (-2.0, 2.0), move |x, y| Ok(prob_lt(x, y, b)?.into_tensor())) } },
    Check { name: "prob_gt", group: Scope::Primitives, gen: |r| { let b = beta_in(r); binary(r, (-2.0, 2.0), (-2.0, 2.0), move |x, y| Ok(prob_gt(x, y, b)?.into_tensor())) } },
    Check { name: "prob_eq", group: Scope::Primitives, gen: |r| { let b = beta_in(r); binary(r, (-2.0, 2.0), (-2.0, 2.0), move |x, y| Ok(prob_eq(x, y, b)?.into_tensor())) } },
    Check { name: "prob_and", group: Scope::Primitives, gen: gen_and },
    Check { name: "prob_or", group: Scope::Primitives, gen: gen_or },
    Check { name: "soft_argmax", group: Scope::Primitives, gen: |r| { let b = beta_in(r); unary(r, -2.0, 2.0, move |x| Ok(soft_argmax(x, b)?.weights().clone())) } },
    Check { name: "soft_max", group: Scope::Primitives, gen: |r| { let b = beta_in(r); unary(r, -2.0, 2.0, move |x| soft_max(x, b)) } },
    Check { name: "soft_min", group: Scope::Primitives, gen: |r| { let b = beta_in(r); unary(r, -2.0, 2.0, move |x| soft_min(x, b)) } },
    Check { name: "soft_min_rows", group: Scope::Primitives, gen: gen_soft_min_rows },
    Check { name: "cat_prob_eq_inner", group: Scope::Primitives, gen: |r| gen_cat_eq(r, true) },
    Check { name: "cat_prob_eq_cosine", group: Scope::Primitives, gen: |r| gen_cat_eq(r, false) },
];

fn gen_broadcast(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..6);
    let x = vec_in(rng, n + 1, -2.0, 2.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[], &[n]])?;
        let out = p[1].mul(&p[0])?.add(&p[0])?.sub(&p[1].div(&p[0].square().add_scalar(1.0))?)?;
        project(&out, &w)
    })
}

fn gen_pow(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(-2.0..3.0);
    unary(rng, 0.3, 2.0, move |x| x.powf(k))
}

fn gen_softmax(rng: &mut ChaCha8Rng) -> Instance {
    let (m, n) = (rng.random_range(1..4), rng.random_range(1..5));
    let beta = beta_in(rng);
    let axis = rng.random_range(0..2);
    let x = Tensor::new(&[m, n], uniform(rng, m * n, -2.0, 2.0)).unwrap();
    let w = uniform(rng, m * n, -1.0, 1.0);
    Instance::fd(x, move |x| project(&x.softmax(beta, axis)?, &w))
}

fn gen_product(rng: &mut ChaCha8Rng) -> Instance {
    let (m, n) = (rng.random_range(1..4), rng.random_range(1..5));
    let mut data = uniform(rng, m * n, -2.0, 2.0);
    // Exact zeros exercise the exclusion-product rule.
    if rng.random_bool(0.5) {
        let k = rng.random_range(0..m * n);
        data[k] = 0.0;
    }
    let axis = match rng.random_range(0..3) {
        0 => None,
        a => Some(a - 1),
    };
    let x = Tensor::new(&[m, n], data).unwrap();
    let len = x.prod_axis(axis).unwrap().len();
    let w = uniform(rng, len, -1.0, 1.0);
    Instance::fd(x, move |x| project(&x.prod_axis(axis)?, &w))
}

fn gen_matmul(rng: &mut ChaCha8Rng) -> Instance {
    let (m, k, n) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..4));
    let x = vec_in(rng, m * k + k * n, -2.0, 2.0);
    let w = uniform(rng, m * n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[m, k], &[k, n]])?;
        project(&p[0].matmul(&p[1])?, &w)
    })
}

fn gen_gather(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..6);
    let idx: Vec<usize> = (0..rng.random_range(1..9)).map(|_| rng.random_range(0..n)).collect();
    let x = vec_in(rng, n, -2.0, 2.0);
    let w = uniform(rng, idx.len(), -1.0, 1.0);
    Instance::fd(x, move |x| project(&x.square().gather(&idx, &[idx.len()])?, &w))
}

fn gen_scatter(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..6);
    let out = rng.random_range(1..5);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..out)).collect();
    let x = vec_in(rng, n, -2.0, 2.0);
    let w = uniform(rng, out, -1.0, 1.0);
    Instance::fd(x, move |x| project(&x.square().scatter_add(&idx, &[out])?.exp(), &w))
}

fn gen_assign(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..6);
    let pos = vec![rng.random_range(0..n)];
    let x = vec_in(rng, n + 1, -2.0, 2.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[n], &[1]])?;
        project(&p[0].assign(&pos, &p[1].exp())?.square(), &w)
    })
}

fn gen_select(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(1..6);
    let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let x = vec_in(rng, 2 * n, -2.0, 2.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[n], &[n]])?;
        project(&Tensor::select(&mask, &p[0].square(), &p[1].exp())?, &w)
    })
}

fn gen_and(rng: &mut ChaCha8Rng) -> Instance {
    let x = Tensor::vector(probs(rng, 2));
    Instance::fd(x, |x| {
        let p = split(x, &[&[], &[]])?;
        let (a, b) = (crate::relax::Probability::new(p[0].clone()), crate::relax::Probability::new(p[1].clone()));
        Ok(prob_and(&a, &b)?.into_tensor())
    })
}

fn gen_or(rng: &mut ChaCha8Rng) -> Instance {
    let x = Tensor::vector(probs(rng, 2));
    Instance::fd(x, |x| {
        let p = split(x, &[&[], &[]])?;
        let (a, b) = (crate::relax::Probability::new(p[0].clone()), crate::relax::Probability::new(p[1].clone()));
        Ok(prob_or(&a, &b)?.into_tensor())
    })
}

fn gen_soft_min_rows(rng: &mut ChaCha8Rng) -> Instance {
    let (m, n) = (rng.random_range(1..4), rng.random_range(1..6));
    let beta = beta_in(rng);
    let x = Tensor::new(&[m, n], uniform(rng, m * n, -2.0, 2.0)).unwrap();
    let w = uniform(rng, m + m * n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let (mins, weights) = soft_min_rows(x, beta)?;
        let n = mins.len() + weights.len();
        project(&Tensor::concat(&[mins, weights.reshape(&[weights.len()])?], &[n])?, &w)
    })
}

/// Two categorical distributions from softmax logits; the one-hot form uses
/// a fixed one-hot `y`.
fn gen_cat_eq(rng: &mut ChaCha8Rng, one_hot: bool) -> Instance {
    let k = rng.random_range(2..6);
    let beta = beta_in(rng);
    let hot = rng.random_range(0..k);
    let x = vec_in(rng, 2 * k, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[k], &[k]])?;
        let a = CategoricalDistribution::new(p[0].softmax(beta, 0)?)?;
        let b = if one_hot {
            CategoricalDistribution::one_hot(k, hot)?
        } else {
            CategoricalDistribution::new(p[1].softmax(beta, 0)?)?
        };
        Ok(cat_prob_eq(&a, &b, one_hot)?.into_tensor())
    })
}

const INDEXING: &[Check] = &[
    Check { name: "read_hard", group: Scope::Indexing, gen: gen_read_hard },
    Check { name: "write_hard", group: Scope::Indexing, gen: gen_write_hard },
    Check { name: "logistic_kernel", group: Scope::Indexing, gen: gen_kernel },
    Check { name: "read_real_values", group: Scope::Indexing, gen: gen_read_real_values },
    Check { name: "read_real_coords", group: Scope::Indexing, gen: gen_read_real_coords },
    Check { name: "read_categorical", group: Scope::Indexing, gen: gen_read_categorical },
    Check { name: "write_categorical", group: Scope::Indexing, gen: gen_write_categorical },
];

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.random_range(1..3)).map(|_| rng.random_range(1..5)).collect()
}

fn gen_read_hard(rng: &mut ChaCha8Rng) -> Instance {
    let shape = random_shape(rng);
    let idx: Vec<usize> = shape.iter().map(|&n| rng.random_range(0..n)).collect();
    let n: usize = shape.iter().product();
    let x = Tensor::new(&shape, uniform(rng, n, -2.0, 2.0)).unwrap();
    Instance::fd(x, move |x| Ok(read_hard(&x.exp(), &idx)?.square()))
}

fn gen_write_hard(rng: &mut ChaCha8Rng) -> Instance {
    let shape = random_shape(rng);
    let idx: Vec<usize> = shape.iter().map(|&n| rng.random_range(0..n)).collect();
    let n: usize = shape.iter().product();
    let x = vec_in(rng, n + 1, -2.0, 2.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&shape, &[]])?;
        project(&write_hard(&p[0], &idx, &p[1].square())?.exp(), &w)
    })
}

fn gen_kernel(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let (m, d) = (rng.random_range(1..5), rng.random_range(1..4));
    let matrix = rng.random_bool(0.5);
    let shape = if matrix { vec![m, d] } else { vec![m] };
    let n: usize = shape.iter().product();
    let x = Tensor::new(&shape, uniform(rng, n, -3.0, 3.0)).unwrap();
    let w = uniform(rng, m, -1.0, 1.0);
    Instance::fd(x, move |x| project(&logistic_kernel(x, beta)?, &w))
}

/// The normalizer does not depend on the values, so finite differences are
/// the right oracle for this gradient.
fn gen_read_real_values(rng: &mut ChaCha8Rng) -> Instance {
    let shape = random_shape(rng);
    let n: usize = shape.iter().product();
    let beta = beta_in(rng);
    let i = Tensor::vector(shape.iter().map(|&e| rng.random_range(-0.5..e as f64 - 0.5)).collect());
    let x = Tensor::new(&shape, uniform(rng, n, -2.0, 2.0)).unwrap();
    Instance::fd(x, move |x| read_real(&x.square(), &i, beta))
}

/// Coordinates go through the detached normalizer, so the oracle is the
/// hand-derived rule `sum_j w_j a_j d(log g_j)/di` with `w` the normalized
/// kernel and `d(log g_j)/di_d = beta tanh(beta (j_d - i_d) / 2)`.
fn gen_read_real_coords(rng: &mut ChaCha8Rng) -> Instance {
    let shape = random_shape(rng);
    let n: usize = shape.iter().product();
    let beta = beta_in(rng);
    let a = uniform(rng, n, -2.0, 2.0);
    let x = Tensor::vector(shape.iter().map(|&e| rng.random_range(-0.5..e as f64 - 0.5)).collect());
    let at = Tensor::new(&shape, a.clone()).unwrap();
    let shape2 = shape.clone();
    let rule: Rule = Box::new(move |i: &[f64]| {
        let coords: Vec<Vec<usize>> = (0..n)
            .map(|flat| {
                let mut rem = flat;
                let mut c = vec![0; shape2.len()];
                for d in (0..shape2.len()).rev() {
                    c[d] = rem % shape2[d];
                    rem /= shape2[d];
                }
                c
            })
            .collect();
        let sech2 = |t: f64| 1.0 / t.cosh().powi(2);
        let g: Vec<f64> = coords
            .iter()
            .map(|c| c.iter().zip(i).map(|(&j, &id)| sech2(beta * (j as f64 - id) / 2.0)).product())
            .collect();
        let z: f64 = g.iter().sum();
        (0..i.len())
            .map(|d| {
                coords
                    .iter()
                    .zip(&g)
                    .zip(&a)
                    .map(|((c, gj), aj)| {
                        gj / z * aj * beta * (beta * (c[d] as f64 - i[d]) / 2.0).tanh()
                    })
                    .sum()
            })
            .collect()
    });
    Instance { x, f: Box::new(move |i| read_real(&at, i, beta)), rule: Some(rule) }
}

fn categorical_axes(x: &Tensor, shape: &[usize], offset: usize) -> Result<Vec<CategoricalDistribution>> {
    let mut start = offset;
    shape
        .iter()
        .map(|&e| {
            let logits = x.gather(&(start..start + e).collect::<Vec<_>>(), &[e])?;
            start += e;
            CategoricalDistribution::new(logits.softmax(1.0, 0)?)
        })
        .collect()
}

fn gen_read_categorical(rng: &mut ChaCha8Rng) -> Instance {
    let shape = random_shape(rng);
    let n: usize = shape.iter().product();
    let logits: usize = shape.iter().sum();
    let x = vec_in(rng, n + logits, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let a = x.gather(&(0..n).collect::<Vec<_>>(), &shape)?;
        read_categorical(&a, &categorical_axes(x, &shape, n)?)
    })
}

fn gen_write_categorical(rng: &mut ChaCha8Rng) -> Instance {
    let shape = random_shape(rng);
    let n: usize = shape.iter().product();
    let logits: usize = shape.iter().sum();
    let x = vec_in(rng, n + logits + 1, -2.0, 2.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let a = x.gather(&(0..n).collect::<Vec<_>>(), &shape)?;
        let v = x.at(n + logits)?;
        project(&write_categorical(&a, &categorical_axes(x, &shape, n)?, &v)?, &w)
    })
}

const PROGRAM: &[Check] = &[
    Check { name: "if_blend", group: Scope::Program, gen: gen_if_blend },
    Check { name: "nested_if", group: Scope::Program, gen: gen_nested_if },
    Check { name: "compound_conditions", group: Scope::Program, gen: gen_compound },
    Check { name: "lane_condition", group: Scope::Program, gen: gen_lanes },
    Check { name: "while_series", group: Scope::Program, gen: gen_while },
    Check { name: "for_with_if", group: Scope::Program, gen: gen_for_if },
    Check { name: "categorical_condition", group: Scope::Program, gen: gen_cat_condition },
    Check { name: "index_statements", group: Scope::Program, gen: gen_index_statements },
];

fn scalars(x: &Tensor, names: &[&str]) -> Result<State> {
    names
        .iter()
        .enumerate()
        .map(|(k, n)| Ok((n.to_string(), x.at(k)?)))
        .collect()
}

fn run_relaxed(program: &Statement, s: &State, beta: f64, out: &str) -> Result<Tensor> {
    Ok(run(program, s, beta, Mode::Relaxed)?.0[out].clone())
}

fn poly(name: &'static str, out: &'static str, k: f64) -> Statement {
    Statement::compute(&[name], &[out], move |v, _| Ok(vec![v[0].square().mul_scalar(k).add_scalar(1.0)]))
}

fn gen_if_blend(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let program = Statement::if_else(
        Condition::lt(Expr::var("x"), Expr::var("c")),
        poly("x", "y", 2.0),
        Statement::compute(&["c", "x"], &["y"], |v, _| Ok(vec![v[0].mul(&v[1])?])),
    );
    let x = vec_in(rng, 3, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let s = scalars(x, &["x", "c", "y"])?;
        run_relaxed(&program, &s, beta, "y")
    })
}

fn gen_nested_if(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let program = Statement::seq(vec![
        Statement::if_else(
            Condition::gt(Expr::var("a"), Expr::var("b")),
            Statement::if_else(
                Condition::eq(Expr::var("a"), Expr::var("c")),
                poly("c", "y", 1.5),
                poly("b", "y", -0.5),
            ),
            Statement::assign("y", Expr::var("a")),
        ),
        Statement::if_then(Condition::lt(Expr::var("y"), Expr::var("c")), poly("y", "y", 0.3)),
    ]);
    let x = vec_in(rng, 4, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let s = scalars(x, &["a", "b", "c", "y"])?;
        run_relaxed(&program, &s, beta, "y")
    })
}

fn gen_compound(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let cond = Condition::lt(Expr::var("a"), Expr::var("b"))
        .and(Condition::gt(Expr::var("b"), Expr::var("c")).not())
        .or(Condition::eq(Expr::var("a"), Expr::var("c")));
    let program = Statement::if_else(cond, poly("a", "y", 1.0), poly("c", "y", -1.0));
    let x = vec_in(rng, 4, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let s = scalars(x, &["a", "b", "c", "y"])?;
        run_relaxed(&program, &s, beta, "y")
    })
}

fn gen_lanes(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let n = rng.random_range(2..6);
    let program = Statement::if_else(
        Condition::lt(Expr::var("v"), Expr::var("t")),
        poly("v", "v", 0.5),
        Statement::compute(&["v", "t"], &["v"], |v, _| Ok(vec![v[0].mul(&v[1])?])),
    );
    let x = vec_in(rng, 2 * n, -2.0, 2.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[n], &[n]])?;
        let s: State = [("v".to_string(), p[0].clone()), ("t".to_string(), p[1].clone())].into();
        project(&run_relaxed(&program, &s, beta, "v")?, &w)
    })
}

/// A fixed number of relaxed iterations (no early stop), so the output is
/// smooth in the inputs.
fn gen_while(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let iters = rng.random_range(2..8);
    let program = Statement::while_with(
        Condition::lt(Expr::var("x"), Expr::var("limit")),
        Statement::compute(&["x", "step"], &["x"], |v, _| Ok(vec![v[0].add(&v[1].square())?])),
        iters,
        f64::MIN_POSITIVE,
    );
    let x = Tensor::vector(vec![
        rng.random_range(-1.0..1.0),
        rng.random_range(1.0..3.0),
        rng.random_range(0.5..1.2),
    ]);
    Instance::fd(x, move |x| {
        let s = scalars(x, &["x", "limit", "step"])?;
        run_relaxed(&program, &s, beta, "x")
    })
}

fn gen_for_if(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let n = rng.random_range(2..6);
    let program = Statement::for_loop(
        "i",
        Expr::constant(n as f64),
        Statement::if_then(
            Condition::gt(Expr::elem("v", Expr::var("i")), Expr::var("acc")),
            Statement::compute(&["acc", "v", "i"], &["acc"], |v, _| {
                let vi = v[1].at(v[2].item() as usize)?;
                Ok(vec![v[0].add(&vi)?.mul_scalar(0.5)])
            }),
        ),
    );
    let x = vec_in(rng, n + 1, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[n], &[]])?;
        let s: State = [("v".to_string(), p[0].clone()), ("acc".to_string(), p[1].clone())].into();
        run_relaxed(&program, &s, beta, "acc")
    })
}

fn gen_cat_condition(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let k = rng.random_range(2..5);
    let program = Statement::if_else(
        Condition::CatEq { x: Expr::var("p"), y: Expr::var("q"), y_one_hot: false },
        poly("z", "z", 1.0),
        Statement::assign("z", Expr::var("z")),
    );
    let x = vec_in(rng, 2 * k + 1, -2.0, 2.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[k], &[k], &[]])?;
        let s: State = [
            ("p".to_string(), p[0].softmax(1.0, 0)?),
            ("q".to_string(), p[1].softmax(1.0, 0)?),
            ("z".to_string(), p[2].clone()),
        ]
        .into();
        run_relaxed(&program, &s, beta, "z")
    })
}

/// A real-valued read followed by a categorical store, checked with respect
/// to the stored tensor's values and the stored value.
fn gen_index_statements(rng: &mut ChaCha8Rng) -> Instance {
    let beta = beta_in(rng);
    let n = rng.random_range(2..6);
    let pos = rng.random_range(0.0..(n - 1) as f64);
    let program = Statement::seq(vec![
        Statement::IndexRead {
            target: "r".into(),
            source: "a".into(),
            index: vec![Expr::var("i")],
            mode: IndexMode::Real { beta: None },
        },
        Statement::IndexAssign {
            source: "a".into(),
            index: vec![Expr::var("w")],
            value: Expr::var("r"),
            mode: IndexMode::Categorical,
        },
    ]);
    let x = vec_in(rng, 2 * n, -2.0, 2.0);
    let wproj = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let p = split(x, &[&[n], &[n]])?;
        let s: State = [
            ("a".to_string(), p[0].clone()),
            ("w".to_string(), p[1].softmax(1.0, 0)?),
            ("i".to_string(), Tensor::scalar(pos)),
            ("r".to_string(), Tensor::scalar(0.0)),
        ]
        .into();
        project(&run_relaxed(&program, &s, beta, "a")?, &wproj)
    })
}

const ALGORITHMS: &[Check] = &[
    Check { name: "bubble_sort", group: Scope::Algorithms, gen: gen_sort },
    Check { name: "bellman_ford", group: Scope::Algorithms, gen: gen_shortest_path },
    Check { name: "levenshtein", group: Scope::Algorithms, gen: gen_levenshtein },
    Check { name: "rasterize_three_edges", group: Scope::Algorithms, gen: |r| gen_raster(r, false) },
    Check { name: "rasterize_euclidean", group: Scope::Algorithms, gen: |r| gen_raster(r, true) },
    Check { name: "signed_point_triangle_distance", group: Scope::Algorithms, gen: gen_signed_distance },
    Check { name: "transform_and_projection", group: Scope::Algorithms, gen: gen_projection },
];

fn gen_sort(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..6);
    let x = vec_in(rng, n, -1.0, 1.0);
    let w = uniform(rng, n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let r = bubble_sort(x, 8.0, Mode::Relaxed)?;
        project(&r.relaxed_sequence, &w)?.add(r.unsorted_probability.tensor())
    })
}

fn gen_shortest_path(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..4);
    let x = Tensor::new(&[n, n], uniform(rng, n * n, 0.1, 1.0)).unwrap();
    let w = uniform(rng, n * n, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let r = bellman_ford(x, 25.0, Mode::Relaxed, None)?;
        project(&r.path_map, &w)?.add(&r.distances.at((n + 2) * (n + 2) - n - 4)?.mul_scalar(0.1))
    })
}

fn gen_levenshtein(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(2..4);
    let (n, m) = (rng.random_range(1..4), rng.random_range(1..4));
    let hot: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let x = vec_in(rng, n * k, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let a = (0..n)
            .map(|i| {
                let logits = x.gather(&(i * k..(i + 1) * k).collect::<Vec<_>>(), &[k])?;
                CategoricalDistribution::new(logits.softmax(1.0, 0)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let b = crate::algorithms::one_hot_string(&hot, k)?;
        Ok(levenshtein(&a, &b, 9.0, Mode::Relaxed, true)?.distance)
    })
}

fn random_triangle(rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v = uniform(rng, 6, 0.1, 0.9);
        let area = 0.5 * ((v[2] - v[0]) * (v[5] - v[1]) - (v[3] - v[1]) * (v[4] - v[0]));
        if area.abs() > 0.02 {
            return v;
        }
    }
}

fn gen_raster(rng: &mut ChaCha8Rng, euclidean: bool) -> Instance {
    let res = 6;
    let x = Tensor::new(&[1, 3, 2], random_triangle(rng)).unwrap();
    let w = uniform(rng, res * res, -1.0, 1.0);
    Instance::fd(x, move |x| {
        let mesh = Mesh2DProjection::new(x.clone())?;
        let img = if euclidean {
            rasterize_euclidean(&mesh, res, 20.0, Mode::Relaxed)?
        } else {
            rasterize_three_edges(&mesh, res, 20.0, Mode::Relaxed)?
        };
        project(&img.image, &w)
    })
}

fn gen_signed_distance(rng: &mut ChaCha8Rng) -> Instance {
    let mut data = random_triangle(rng);
    data.extend(uniform(rng, 2, -0.2, 1.2));
    Instance::fd(Tensor::vector(data), |x| {
        let p = split(x, &[&[3, 2], &[2]])?;
        signed_point_triangle_distance(&p[1], &p[0])
    })
}

fn gen_projection(rng: &mut ChaCha8Rng) -> Instance {
    let nv = 3;
    let mut data = Vec::new();
    for _ in 0..nv {
        data.extend(uniform(rng, 2, -0.5, 0.5));
        data.push(rng.random_range(1.5..3.0));
    }
    let x = Tensor::new(&[nv, 3], data).unwrap();
    let (a, b): (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let camera = Camera {
        rotation: [[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]],
        translation: [b, -b, 0.5],
        focal: rng.random_range(0.5..2.0),
    };
    let w = uniform(rng, 6, -1.0, 1.0);
    Instance::fd(x, move |x| project(&transform_and_projection(x, &[[0, 1, 2]], &camera)?.triangles, &w))
}

/// FNV-1a, so each check's stream depends only on the seed and its name.
fn stream_seed(seed: u64, name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325 ^ seed, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn run_check(check: &Check, seed: u64, instances: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, check.name));
    let mut worst = 0.0_f64;
    let mut error = None;
    let mut oracle = "finite_difference";
    for _ in 0..instances {
        let inst = (check.gen)(&mut rng);
        let outcome = (|| -> Result<f64> {
            let (_, analytic) = value_and_grad(|x| (inst.f)(x), &inst.x)?;
            let expected = match &inst.rule {
                Some(rule) => {
                    oracle = "hand_derived_rule";
                    rule(inst.x.value())
                }
                None => finite_difference_grad(|x| Ok((inst.f)(x)?.item()), &inst.x, STEP)?,
            };
            Ok(relative_error(&analytic, &expected))
        })();
        match outcome {
            Ok(e) if e.is_finite() => worst = worst.max(e),
            Ok(_) => {
                worst = f64::INFINITY;
                error = Some("non-finite gradient".to_string());
                break;
            }
            Err(e) => {
                worst = f64::INFINITY;
                error = Some(e.to_string());
                break;
            }
        }
    }
    CheckOutcome {
        name: check.name.to_string(),
        group: check.group.name().to_string(),
        oracle: oracle.to_string(),
        instances,
        max_relative_error: worst,
        passed: error.is_none() && worst <= TOLERANCE,
        error,
    }
}

/// Runs every check in `scope` with `instances` random draws each.
pub fn run_gradcheck(scope: Scope, seed: u64, instances: usize) -> GradcheckReport {
    let checks: Vec<CheckOutcome> = [PRIMITIVES, INDEXING, PROGRAM, ALGORITHMS]
        .into_iter()
        .flatten()
        .filter(|c| scope.covers(c.group))
        .map(|c| run_check(c, seed, instances))
        .collect();
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    GradcheckReport {
        scope: scope.name().to_string(),
        seed,
        tolerance: TOLERANCE,
        step: STEP,
        passed: failed.is_empty(),
        failed,
        checks,
    }
}
