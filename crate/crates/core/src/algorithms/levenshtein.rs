use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::indexing::write_hard;
use crate::program::{beta_heuristic, run, Condition, Expr, IndexMode, Mode, RunReport, State, Statement};
use crate::relax::CategoricalDistribution;

/// Output of an edit-distance run.
#[derive(Debug, Clone)]
pub struct LDResult {
    /// `(n+1) x (m+1)` dynamic-programming table.
    pub dp_matrix: Tensor,
    pub distance: Tensor,
    pub report: RunReport,
}

fn row(name: &'static str, counter: &'static str, k: usize) -> Expr {
    Expr::new(move |s| {
        let i = crate::program::get(s, counter)?.item() as usize;
        let idx: Vec<usize> = (i * k..(i + 1) * k).collect();
        crate::program::get(s, name)?.gather(&idx, &[k])
    })
}

/// The edit-distance program over strings `s` (`[n, k]`) and `t` (`[m, k]`),
/// each row a distribution over `k` symbols.
pub fn levenshtein_program(k: usize, t_one_hot: bool) -> Statement {
    let border = |counter: &'static str, at: fn(f64) -> [f64; 2]| {
        Statement::IndexAssign {
            source: "d".into(),
            index: vec![
                Expr::new(move |s| Ok(Tensor::scalar(at(crate::program::get(s, counter)?.item())[0]))),
                Expr::new(move |s| Ok(Tensor::scalar(at(crate::program::get(s, counter)?.item())[1]))),
            ],
            value: Expr::var(counter).add_const(1.0),
            mode: IndexMode::Hard,
        }
    };
    let cell = Statement::compute(&["d", "i", "j", "subs_cost"], &["d"], |v, ctx| {
        let (d, i, j, sub) = (&v[0], v[1].item() as usize, v[2].item() as usize, &v[3]);
        let w = d.shape()[1];
        let at = |r: usize, c: usize| d.at(r * w + c);
        let cands = Tensor::concat(
            &[
                at(i, j + 1)?.add_scalar(1.0).reshape(&[1])?,
                at(i + 1, j)?.add_scalar(1.0).reshape(&[1])?,
                at(i, j)?.add(sub)?.reshape(&[1])?,
            ],
            &[3],
        )?;
        Ok(vec![write_hard(d, &[i + 1, j + 1], &ctx.min(&cands)?)?])
    });
    Statement::seq(vec![
        Statement::for_loop("i", Expr::var("n"), border("i", |i| [i + 1.0, 0.0])),
        Statement::for_loop("j", Expr::var("m"), border("j", |j| [0.0, j + 1.0])),
        Statement::for_loop(
            "j",
            Expr::var("m"),
            Statement::for_loop(
                "i",
                Expr::var("n"),
                Statement::seq(vec![
                    Statement::if_else(
                        Condition::CatEq {
                            x: row("s", "i", k),
                            y: row("t", "j", k),
                            y_one_hot: t_one_hot,
                        },
                        Statement::assign("subs_cost", Expr::constant(0.0)),
                        Statement::assign("subs_cost", Expr::constant(1.0)),
                    ),
                    cell,
                ]),
            ),
        ),
    ])
}

fn stack_rows(seq: &[CategoricalDistribution], k: usize) -> Result<Tensor> {
    if seq.is_empty() {
        return Tensor::new(&[0, k], vec![]);
    }
    let parts: Vec<Tensor> = seq.iter().map(|c| c.weights().clone()).collect();
    Tensor::concat(&parts, &[seq.len(), k])
}

fn setup(
    a: &[CategoricalDistribution],
    b: &[CategoricalDistribution],
    b_one_hot: bool,
) -> Result<(Statement, State)> {
    let k = a.first().or(b.first()).map_or(1, CategoricalDistribution::len);
    if a.iter().chain(b).any(|c| c.len() != k) {
        return Err(Error::structural("all symbols must share one alphabet size"));
    }
    let (n, m) = (a.len(), b.len());
    let mut s = State::new();
    s.insert("s".into(), stack_rows(a, k)?);
    s.insert("t".into(), stack_rows(b, k)?);
    s.insert("n".into(), Tensor::scalar(n as f64));
    s.insert("m".into(), Tensor::scalar(m as f64));
    s.insert("d".into(), Tensor::zeros(&[n + 1, m + 1]));
    s.insert("subs_cost".into(), Tensor::scalar(0.0));
    Ok((levenshtein_program(k, b_one_hot), s))
}

/// Relaxed edit distance between two sequences of symbol distributions.
///
/// `b_one_hot` declares that every element of `b` is one-hot, which selects
/// the inner-product form of categorical equality; otherwise cosine
/// similarity is used.
pub fn levenshtein(
    a: &[CategoricalDistribution],
    b: &[CategoricalDistribution],
    beta: f64,
    mode: Mode,
    b_one_hot: bool,
) -> Result<LDResult> {
    let (program, s) = setup(a, b, b_one_hot)?;
    let (n, m) = (a.len(), b.len());
    let (out, report) = run(&program, &s, beta, mode)?;
    let d = out["d"].clone();
    Ok(LDResult {
        distance: d.at(n * (m + 1) + m)?,
        dp_matrix: d,
        report,
    })
}

/// The square-root access-count heuristic for this pair of strings.
pub fn heuristic_beta(
    a: &[CategoricalDistribution],
    b: &[CategoricalDistribution],
    b_one_hot: bool,
) -> Result<f64> {
    let (program, s) = setup(a, b, b_one_hot)?;
    beta_heuristic(&program, &s)
}

/// One-hot encoding of a symbol string.
pub fn one_hot_string(symbols: &[usize], k: usize) -> Result<Vec<CategoricalDistribution>> {
    symbols.iter().map(|&c| CategoricalDistribution::one_hot(k, c)).collect()
}
