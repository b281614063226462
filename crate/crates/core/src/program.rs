//! Relaxable programs and their executor.
//!
//! A [`Statement`] tree is run against a [`State`] (variable name to tensor).
//! In relaxed mode an `If` runs both branches on copies of the state and
//! blends them by the condition probability; a `While` becomes a series over
//! the number of iterations, each state weighted by the probability that the
//! loop stops exactly there. Paths are merged at the end of each statement,
//! so the cost stays linear in the program size. Hard mode runs the same tree
//! with exact booleans.
//!
//! ```
//! use algorelax::program::{run, Condition, Expr, Mode, Statement, State};
//! use algorelax::autodiff::Tensor;
//!
//! // while x < 3: x = x + 1
//! let prog = Statement::while_loop(
//!     Condition::lt(Expr::var("x"), Expr::constant(3.0)),
//!     Statement::assign("x", Expr::var("x").add_const(1.0)),
//!     50,
//! );
//! let mut s = State::new();
//! s.insert("x".into(), Tensor::scalar(0.0));
//! let (out, _) = run(&prog, &s, 1e6, Mode::Hard).unwrap();
//! assert_eq!(out["x"].item(), 3.0);
//! ```

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{check_beta, Error, Result};
use crate::indexing;
use crate::relax::{self, CategoricalDistribution, Probability};

/// The program's variables.
pub type State = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Relaxed,
    Hard,
}

/// Looks up a variable.
pub fn get<'a>(s: &'a State, name: &str) -> Result<&'a Tensor> {
    s.get(name).ok_or_else(|| Error::Unbound(name.to_string()))
}

type ExprFn = dyn Fn(&State) -> Result<Tensor> + Send + Sync;
type ComputeFn = dyn Fn(&State, &Ctx) -> Result<Vec<Tensor>> + Send + Sync;

/// An operand: a smooth function of the state.
#[derive(Clone)]
pub struct Expr(Arc<ExprFn>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Expr(..)")
    }
}

impl Expr {
    pub fn new(f: impl Fn(&State) -> Result<Tensor> + Send + Sync + 'static) -> Self {
        Expr(Arc::new(f))
    }

    pub fn var(name: &str) -> Self {
        let name = name.to_string();
        Expr::new(move |s| get(s, &name).cloned())
    }

    pub fn constant(v: f64) -> Self {
        Expr::new(move |_| Ok(Tensor::scalar(v)))
    }

    /// Element `i` (flat) of a variable.
    pub fn at(name: &str, i: usize) -> Self {
        let name = name.to_string();
        Expr::new(move |s| get(s, &name)?.at(i))
    }

    /// Element of a variable at the (integer-valued) flat position `index`.
    pub fn elem(name: &str, index: Expr) -> Self {
        let name = name.to_string();
        Expr::new(move |s| {
            let i = index.eval(s)?;
            let k = i.item();
            if !(k >= 0.0 && k.fract() == 0.0) {
                return Err(Error::structural(format!("element index must be a nonnegative integer, got {k}")));
            }
            get(s, &name)?.at(k as usize)
        })
    }

    pub fn add_const(self, c: f64) -> Self {
        Expr::new(move |s| Ok(self.eval(s)?.add_scalar(c)))
    }

    pub fn eval(&self, s: &State) -> Result<Tensor> {
        (self.0)(s)
    }
}

/// A branch or loop condition.
#[derive(Clone, Debug)]
pub enum Condition {
    Lt(Expr, Expr),
    Gt(Expr, Expr),
    Eq(Expr, Expr),
    /// Agreement of two categorical variables; `y_one_hot` selects the
    /// inner-product form over cosine similarity.
    CatEq { x: Expr, y: Expr, y_one_hot: bool },
    /// A variable that already holds the probability.
    Prob(Expr),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
    Not(Box<Condition>),
    /// Records every evaluation of the inner condition under a name in the
    /// [`RunReport`].
    Tagged(String, Box<Condition>),
}

impl Condition {
    pub fn lt(a: Expr, b: Expr) -> Self {
        Condition::Lt(a, b)
    }

    pub fn gt(a: Expr, b: Expr) -> Self {
        Condition::Gt(a, b)
    }

    pub fn eq(a: Expr, b: Expr) -> Self {
        Condition::Eq(a, b)
    }

    pub fn prob(p: Expr) -> Self {
        Condition::Prob(p)
    }

    pub fn and(self, other: Condition) -> Self {
        Condition::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Condition) -> Self {
        Condition::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Condition::Not(Box::new(self))
    }

    pub fn tagged(self, tag: &str) -> Self {
        Condition::Tagged(tag.to_string(), Box::new(self))
    }
}

/// How an index expression addresses a tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IndexMode {
    /// Integer coordinates.
    Hard,
    /// Fractional coordinates read through the logistic kernel. `None` uses
    /// the run's inverse temperature.
    Real { beta: Option<f64> },
    /// One categorical distribution per axis.
    Categorical,
}

/// A smooth update: evaluates `f` and stores its outputs under `writes`.
/// Every name in `reads` must be bound when the statement runs.
#[derive(Clone)]
pub struct Compute {
    pub reads: Vec<String>,
    pub writes: Vec<String>,
    f: Arc<ComputeFn>,
}

impl fmt::Debug for Compute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Compute")
            .field("reads", &self.reads)
            .field("writes", &self.writes)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum Statement {
    Sequence(Vec<Statement>),
    Compute(Compute),
    If {
        cond: Condition,
        then: Box<Statement>,
        otherwise: Option<Box<Statement>>,
    },
    While {
        cond: Condition,
        body: Box<Statement>,
        max_iter: usize,
        mass_eps: f64,
    },
    /// `body` runs `bound` times with `counter` bound to the exact integers
    /// `0..bound`. The bound is evaluated once, before the loop.
    For {
        counter: String,
        bound: Expr,
        body: Box<Statement>,
    },
    /// `target = source[index]`; one index expression per axis.
    IndexRead {
        target: String,
        source: String,
        index: Vec<Expr>,
        mode: IndexMode,
    },
    /// `source[index] = value`.
    IndexAssign {
        source: String,
        index: Vec<Expr>,
        value: Expr,
        mode: IndexMode,
    },
}

pub const DEFAULT_MASS_EPS: f64 = 1e-6;

impl Statement {
    pub fn seq(children: Vec<Statement>) -> Self {
        Statement::Sequence(children)
    }

    pub fn compute(
        reads: &[&str],
        writes: &[&str],
        f: impl Fn(&[Tensor], &Ctx) -> Result<Vec<Tensor>> + Send + Sync + 'static,
    ) -> Self {
        let reads: Vec<String> = reads.iter().map(|s| s.to_string()).collect();
        let names = reads.clone();
        Statement::Compute(Compute {
            reads,
            writes: writes.iter().map(|s| s.to_string()).collect(),
            f: Arc::new(move |s, ctx| {
                let args = names
                    .iter()
                    .map(|n| get(s, n).cloned())
                    .collect::<Result<Vec<_>>>()?;
                f(&args, ctx)
            }),
        })
    }

    /// `name = expr`.
    pub fn assign(name: &str, expr: Expr) -> Self {
        Statement::Compute(Compute {
            reads: Vec::new(),
            writes: vec![name.to_string()],
            f: Arc::new(move |s, _| Ok(vec![expr.eval(s)?])),
        })
    }

    pub fn if_then(cond: Condition, then: Statement) -> Self {
        Statement::If {
            cond,
            then: Box::new(then),
            otherwise: None,
        }
    }

    pub fn if_else(cond: Condition, then: Statement, otherwise: Statement) -> Self {
        Statement::If {
            cond,
            then: Box::new(then),
            otherwise: Some(Box::new(otherwise)),
        }
    }

    pub fn while_loop(cond: Condition, body: Statement, max_iter: usize) -> Self {
        Self::while_with(cond, body, max_iter, DEFAULT_MASS_EPS)
    }

    pub fn while_with(cond: Condition, body: Statement, max_iter: usize, mass_eps: f64) -> Self {
        Statement::While {
            cond,
            body: Box::new(body),
            max_iter,
            mass_eps,
        }
    }

    pub fn for_loop(counter: &str, bound: Expr, body: Statement) -> Self {
        Statement::For {
            counter: counter.to_string(),
            bound,
            body: Box::new(body),
        }
    }
}

/// Side information collected during a run.
#[derive(Debug, Default, Clone)]
pub struct RunReport {
    /// Truncated loops and similar non-fatal events.
    pub warnings: Vec<String>,
    /// Every evaluation of each tagged condition, in execution order.
    pub tagged: BTreeMap<String, Vec<Tensor>>,
}

impl RunReport {
    pub fn probabilities(&self, tag: &str) -> &[Tensor] {
        self.tagged.get(tag).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Execution context handed to compute bodies: the inverse temperature, the
/// mode, and mode-aware comparators and selectors.
pub struct Ctx {
    beta: f64,
    mode: Mode,
    report: RefCell<RunReport>,
    accesses: Cell<usize>,
}

fn indicator(mask: impl Iterator<Item = bool>, shape: &[usize]) -> Result<Tensor> {
    Tensor::new(shape, mask.map(|b| if b { 1.0 } else { 0.0 }).collect())
}

fn broadcast_pair(a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::Shape {
            op: "compare",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

impl Ctx {
    pub fn new(beta: f64, mode: Mode) -> Result<Self> {
        check_beta(beta)?;
        Ok(Ctx {
            beta,
            mode,
            report: RefCell::new(RunReport::default()),
            accesses: Cell::new(0),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_hard(&self) -> bool {
        self.mode == Mode::Hard
    }

    pub fn warn(&self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.report.borrow_mut().warnings.push(msg);
    }

    fn count(&self, a: &Tensor, b: &Tensor) {
        self.accesses.set(self.accesses.get() + 2 * a.len().max(b.len()));
    }

    fn hard_compare(&self, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> bool) -> Result<Tensor> {
        let shape = broadcast_pair(a, b)?;
        let n: usize = shape.iter().product();
        let pick = |t: &Tensor, i: usize| if t.len() == 1 { t.value()[0] } else { t.value()[i] };
        indicator((0..n).map(|i| f(pick(a, i), pick(b, i))), &shape)
    }

    /// `P[a < b]`, elementwise; exact 0/1 in hard mode.
    pub fn lt(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.count(a, b);
        match self.mode {
            Mode::Relaxed => Ok(relax::prob_lt(a, b, self.beta)?.into_tensor()),
            Mode::Hard => self.hard_compare(a, b, |x, y| x < y),
        }
    }

    pub fn gt(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.lt(b, a)
    }

    pub fn eq(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.count(a, b);
        match self.mode {
            Mode::Relaxed => Ok(relax::prob_eq(a, b, self.beta)?.into_tensor()),
            Mode::Hard => self.hard_compare(a, b, |x, y| x == y),
        }
    }

    /// Soft minimum of a vector; the exact minimum in hard mode.
    pub fn min(&self, x: &Tensor) -> Result<Tensor> {
        match self.mode {
            Mode::Relaxed => relax::soft_min(x, self.beta),
            Mode::Hard => relax::hard_min(x),
        }
    }

    pub fn max(&self, x: &Tensor) -> Result<Tensor> {
        match self.mode {
            Mode::Relaxed => relax::soft_max(x, self.beta),
            Mode::Hard => relax::hard_max(x),
        }
    }

    /// Row-wise minimum of a matrix and the row-wise selection weights
    /// (one-hot in hard mode).
    pub fn min_rows(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        match self.mode {
            Mode::Relaxed => relax::soft_min_rows(x, self.beta),
            Mode::Hard => {
                if x.rank() != 2 {
                    return Err(Error::structural("min_rows expects a matrix"));
                }
                let (r, c) = (x.shape()[0], x.shape()[1]);
                let v = x.value();
                let picks: Vec<usize> = (0..r)
                    .map(|i| i * c + relax::hard_argmin(&v[i * c..(i + 1) * c]))
                    .collect();
                let mut w = vec![0.0; r * c];
                for &p in &picks {
                    w[p] = 1.0;
                }
                Ok((x.gather(&picks, &[r])?, Tensor::new(&[r, c], w)?))
            }
        }
    }

    fn eval_cond(&self, cond: &Condition, s: &State) -> Result<Tensor> {
        match cond {
            Condition::Lt(a, b) => self.lt(&a.eval(s)?, &b.eval(s)?),
            Condition::Gt(a, b) => self.gt(&a.eval(s)?, &b.eval(s)?),
            Condition::Eq(a, b) => self.eq(&a.eval(s)?, &b.eval(s)?),
            Condition::CatEq { x, y, y_one_hot } => {
                let x = CategoricalDistribution::new(x.eval(s)?)?;
                let y = CategoricalDistribution::new(y.eval(s)?)?;
                self.count(x.weights(), y.weights());
                match self.mode {
                    Mode::Relaxed => Ok(relax::cat_prob_eq(&x, &y, *y_one_hot)?.into_tensor()),
                    Mode::Hard => Ok(Tensor::scalar(if x.argmax() == y.argmax() { 1.0 } else { 0.0 })),
                }
            }
            Condition::Prob(p) => {
                let p = p.eval(s)?;
                match self.mode {
                    Mode::Relaxed => Ok(Probability::new(p).into_tensor()),
                    Mode::Hard => indicator(p.value().iter().map(|v| *v > 0.5), p.shape()),
                }
            }
            Condition::And(a, b) => self.eval_cond(a, s)?.mul(&self.eval_cond(b, s)?),
            Condition::Or(a, b) => {
                let p = Probability::new(self.eval_cond(a, s)?);
                let q = Probability::new(self.eval_cond(b, s)?);
                Ok(relax::prob_or(&p, &q)?.into_tensor())
            }
            Condition::Not(a) => Ok(self.eval_cond(a, s)?.one_minus()),
            Condition::Tagged(tag, inner) => {
                let p = self.eval_cond(inner, s)?;
                self.report
                    .borrow_mut()
                    .tagged
                    .entry(tag.clone())
                    .or_default()
                    .push(p.clone());
                Ok(p)
            }
        }
    }

    fn exec(&self, stmt: &Statement, mut s: State) -> Result<State> {
        match stmt {
            Statement::Sequence(children) => {
                for c in children {
                    s = self.exec(c, s)?;
                }
                Ok(s)
            }
            Statement::Compute(c) => {
                for r in &c.reads {
                    get(&s, r)?;
                }
                let outs = (c.f)(&s, self)?;
                if outs.len() != c.writes.len() {
                    return Err(Error::structural(format!(
                        "compute declared {} outputs but produced {}",
                        c.writes.len(),
                        outs.len()
                    )));
                }
                for (name, v) in c.writes.iter().zip(outs) {
                    s.insert(name.clone(), v);
                }
                Ok(s)
            }
            Statement::If {
                cond,
                then,
                otherwise,
            } => self.exec_if(cond, then, otherwise.as_deref(), s),
            Statement::While {
                cond,
                body,
                max_iter,
                mass_eps,
            } => self.exec_while(cond, body, s, *max_iter, *mass_eps),
            Statement::For {
                counter,
                bound,
                body,
            } => self.exec_for(counter, bound, body, s),
            Statement::IndexRead {
                target,
                source,
                index,
                mode,
            } => {
                let src = get(&s, source)?;
                let v = self.read(src, index, *mode, &s)?;
                s.insert(target.clone(), v);
                Ok(s)
            }
            Statement::IndexAssign {
                source,
                index,
                value,
                mode,
            } => {
                let src = get(&s, source)?;
                let v = value.eval(&s)?;
                let out = self.write(src, index, &v, *mode, &s)?;
                s.insert(source.clone(), out);
                Ok(s)
            }
        }
    }

    fn exec_if(
        &self,
        cond: &Condition,
        then: &Statement,
        otherwise: Option<&Statement>,
        s: State,
    ) -> Result<State> {
        let p = self.eval_cond(cond, &s)?;
        let run_else = |s: State| match otherwise {
            Some(g) => self.exec(g, s),
            None => Ok(s),
        };
        let taken = |v: f64| v > 0.5;
        if self.is_hard() && p.is_scalar() {
            return if taken(p.item()) {
                self.exec(then, s)
            } else {
                run_else(s)
            };
        }
        if !p.is_tracked() && p.value().iter().all(|v| *v == 1.0) {
            return self.exec(then, s);
        }
        if !p.is_tracked() && p.value().iter().all(|v| *v == 0.0) {
            return run_else(s);
        }
        let t = self.exec(then, s.clone())?;
        let e = run_else(s)?;
        if self.is_hard() {
            let mask: Vec<bool> = p.value().iter().map(|v| taken(*v)).collect();
            return select_states(&mask, &t, &e);
        }
        merge_weighted(&[p.clone(), p.one_minus()], &[t, e])
    }

    fn exec_while(
        &self,
        cond: &Condition,
        body: &Statement,
        mut s: State,
        max_iter: usize,
        mass_eps: f64,
    ) -> Result<State> {
        if max_iter == 0 {
            return Err(Error::Parameter("while loop needs max_iter >= 1".into()));
        }
        if !(mass_eps > 0.0 && mass_eps < 1.0) {
            return Err(Error::Parameter(format!("mass_eps must lie in (0, 1), got {mass_eps}")));
        }
        let mut weights = Vec::new();
        let mut states = Vec::new();
        let mut reach = Tensor::scalar(1.0);
        for i in 0..=max_iter {
            let c = self.eval_cond(cond, &s)?;
            if self.is_hard() && c.is_scalar() {
                // Plain loop: no series needed when the outcome is certain.
                if c.item() <= 0.5 {
                    return Ok(s);
                }
                if i == max_iter {
                    self.warn(format!("while loop truncated at {max_iter} iterations"));
                    return Ok(s);
                }
                s = self.exec(body, s)?;
                continue;
            }
            let cont = reach.mul(&c)?;
            let residual = cont.value().iter().cloned().fold(0.0, f64::max);
            if residual < mass_eps || i == max_iter {
                if i == max_iter && residual >= 0.01 {
                    self.warn(format!(
                        "while loop truncated at {max_iter} iterations with residual mass {residual:.4}"
                    ));
                }
                weights.push(reach);
                states.push(s);
                break;
            }
            weights.push(reach.sub(&cont)?);
            states.push(s.clone());
            s = self.exec(body, s)?;
            reach = cont;
        }
        merge_weighted(&weights, &states)
    }

    fn exec_for(&self, counter: &str, bound: &Expr, body: &Statement, mut s: State) -> Result<State> {
        let b = bound.eval(&s)?;
        if !b.is_scalar() {
            return Err(Error::structural("for-loop bound must be a scalar"));
        }
        let n = b.item();
        if !(n >= 0.0 && n.fract() == 0.0 && n.is_finite()) {
            return Err(Error::structural(format!(
                "for-loop bound must be a nonnegative integer, got {n}"
            )));
        }
        let saved = s.remove(counter);
        for k in 0..n as usize {
            s.insert(counter.to_string(), Tensor::scalar(k as f64));
            s = self.exec(body, s)?;
        }
        s.remove(counter);
        if let Some(v) = saved {
            s.insert(counter.to_string(), v);
        }
        Ok(s)
    }

    fn integer_coords(&self, index: &[Expr], s: &State) -> Result<Vec<usize>> {
        index
            .iter()
            .map(|e| {
                let v = e.eval(s)?;
                let x = if v.is_scalar() { v.item() } else { f64::NAN };
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::structural(format!("hard index must be a nonnegative integer, got {:?}", v.value())))
                }
            })
            .collect()
    }

    fn real_coords(&self, index: &[Expr], s: &State) -> Result<Tensor> {
        let parts = index
            .iter()
            .map(|e| e.eval(s)?.reshape(&[1]))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&parts, &[parts.len()])
    }

    fn distributions(&self, index: &[Expr], s: &State) -> Result<Vec<CategoricalDistribution>> {
        index
            .iter()
            .map(|e| CategoricalDistribution::new(e.eval(s)?))
            .collect()
    }

    fn read(&self, src: &Tensor, index: &[Expr], mode: IndexMode, s: &State) -> Result<Tensor> {
        match (mode, self.mode) {
            (IndexMode::Hard, _) => indexing::read_hard(src, &self.integer_coords(index, s)?),
            (IndexMode::Real { beta }, Mode::Relaxed) => {
                indexing::read_real(src, &self.real_coords(index, s)?, beta.unwrap_or(self.beta))
            }
            (IndexMode::Real { .. }, Mode::Hard) => {
                let coords = self.real_coords(index, s)?;
                let idx: Vec<usize> = coords
                    .value()
                    .iter()
                    .zip(src.shape())
                    .map(|(c, &n)| c.round().clamp(0.0, (n - 1) as f64) as usize)
                    .collect();
                indexing::read_hard(src, &idx)
            }
            (IndexMode::Categorical, Mode::Relaxed) => {
                indexing::read_categorical(src, &self.distributions(index, s)?)
            }
            (IndexMode::Categorical, Mode::Hard) => {
                let idx: Vec<usize> = self.distributions(index, s)?.iter().map(|d| d.argmax()).collect();
                indexing::read_hard(src, &idx)
            }
        }
    }

    fn write(&self, src: &Tensor, index: &[Expr], v: &Tensor, mode: IndexMode, s: &State) -> Result<Tensor> {
        match (mode, self.mode) {
            (IndexMode::Hard, _) => indexing::write_hard(src, &self.integer_coords(index, s)?, v),
            (IndexMode::Real { .. }, _) => Err(Error::structural(
                "writes at real-valued coordinates are not defined; use a categorical index",
            )),
            (IndexMode::Categorical, Mode::Relaxed) => {
                indexing::write_categorical(src, &self.distributions(index, s)?, v)
            }
            (IndexMode::Categorical, Mode::Hard) => {
                let idx: Vec<usize> = self.distributions(index, s)?.iter().map(|d| d.argmax()).collect();
                indexing::write_hard(src, &idx, v)
            }
        }
    }
}

fn same_keys(a: &State, b: &State) -> Result<()> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let only_a: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
        let only_b: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
        return Err(Error::structural(format!(
            "paths bind different variables: {only_a:?} vs {only_b:?}; declare them before branching"
        )));
    }
    Ok(())
}

fn select_states(mask: &[bool], t: &State, e: &State) -> Result<State> {
    same_keys(t, e)?;
    let mut out = State::new();
    for (k, tv) in t {
        let ev = &e[k];
        let v = if tv.same_as(ev) {
            tv.clone()
        } else if tv.len() == mask.len() && ev.len() == mask.len() {
            Tensor::select(mask, tv, ev)?
        } else {
            return Err(Error::structural(format!(
                "variable `{k}` of shape {:?} changed under a {}-lane condition",
                tv.shape(),
                mask.len()
            )));
        };
        out.insert(k.clone(), v);
    }
    Ok(out)
}

/// Per-variable convex combination with tensor weights (scalar, or one
/// weight per lane of the variables).
fn merge_weighted(weights: &[Tensor], states: &[State]) -> Result<State> {
    let Some(first) = states.first() else {
        return Err(Error::structural("merge of zero states"));
    };
    if weights.len() != states.len() {
        return Err(Error::structural("one weight per state is required"));
    }
    for s in &states[1..] {
        same_keys(first, s)?;
    }
    let mut out = State::new();
    for (k, v0) in first {
        if states[1..].iter().all(|s| s[k].same_as(v0)) {
            out.insert(k.clone(), v0.clone());
            continue;
        }
        let mut acc: Option<Tensor> = None;
        for (w, s) in weights.iter().zip(states) {
            if !w.is_tracked() && w.value().iter().all(|x| *x == 0.0) {
                continue;
            }
            let v = &s[k];
            if !(w.is_scalar() || w.shape() == v.shape()) {
                return Err(Error::structural(format!(
                    "variable `{k}` of shape {:?} cannot be blended by weights of shape {:?}",
                    v.shape(),
                    w.shape()
                )));
            }
            let term = v.mul(w)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        let merged = match acc {
            Some(a) => a,
            None => Tensor::zeros(v0.shape()),
        };
        out.insert(k.clone(), merged);
    }
    Ok(out)
}

/// Convex combination of whole states.
///
/// The weights must sum to one (within 1e-6) and every state must bind the
/// same variables. Variables that are identical in all states are passed
/// through untouched.
pub fn merge_states(weights: &[Probability], states: &[State]) -> Result<State> {
    let total: f64 = weights.iter().map(Probability::value).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Parameter(format!("merge weights sum to {total}, not 1")));
    }
    let w: Vec<Tensor> = weights.iter().map(|p| p.tensor().clone()).collect();
    merge_weighted(&w, states)
}

/// Runs `program` from `initial` and returns the final state and the report.
pub fn run(program: &Statement, initial: &State, beta: f64, mode: Mode) -> Result<(State, RunReport)> {
    let ctx = Ctx::new(beta, mode)?;
    let out = ctx.exec(program, initial.clone())?;
    Ok((out, ctx.report.into_inner()))
}

/// Inverse temperature `sqrt(k)`, where `k` counts the relaxed variable
/// accesses made by comparators in a hard execution of the program.
pub fn beta_heuristic(program: &Statement, initial: &State) -> Result<f64> {
    let ctx = Ctx::new(1.0, Mode::Hard)?;
    ctx.exec(program, initial.clone())?;
    let k = ctx.accesses.get();
    if k == 0 {
        return Err(Error::Parameter("program performs no relaxed comparisons".into()));
    }
    Ok((k as f64).sqrt())
}

#[cfg(test)]
mod tests;
