use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::program::{beta_heuristic, run, Condition, Expr, IndexMode, Mode, RunReport, State, Statement};

use super::reference::NEIGHBORS;

/// Output of a grid shortest-path run.
#[derive(Debug, Clone)]
pub struct GridPathResult {
    /// Padded `(n+2) x (n+2)` distance table.
    pub distances: Tensor,
    /// `n x n` probability that each cell lies on the path.
    pub path_map: Tensor,
    /// `[n*n, 8]` selection weights over each interior cell's neighbors, in
    /// the order of [`NEIGHBORS`].
    pub neighbor_weights: Tensor,
    pub report: RunReport,
}

/// Stop the backtrace once the source has collected this much mass.
const SOURCE_MASS_EPS: f64 = 1e-12;

struct Grid {
    n: usize,
    /// Padded flat index of every interior cell, row-major.
    interior: Vec<usize>,
    /// `[n*n, 8]` padded flat indices of the neighbors of each interior cell.
    neighbors: Vec<usize>,
    source: usize,
    goal: usize,
}

impl Grid {
    fn new(n: usize) -> Self {
        let w = n + 2;
        let interior: Vec<usize> = (1..=n).flat_map(|r| (1..=n).map(move |c| r * w + c)).collect();
        let neighbors = interior
            .iter()
            .flat_map(|&p| {
                let (r, c) = ((p / w) as isize, (p % w) as isize);
                NEIGHBORS
                    .iter()
                    .map(move |(dr, dc)| ((r + dr) * w as isize + c + dc) as usize)
            })
            .collect();
        Grid {
            n,
            interior,
            neighbors,
            source: w + 1,
            goal: n * w + n,
        }
    }

    fn padded_len(&self) -> usize {
        (self.n + 2) * (self.n + 2)
    }
}

/// Relaxation sweeps: every interior cell becomes its cost plus the (soft)
/// minimum over its 8 neighbors, with the source pinned to zero.
fn sweep_program(grid: Arc<Grid>, iters: usize) -> Statement {
    let sweep = Statement::compute(&["D", "cost"], &["D", "arg_D"], move |v, ctx| {
        let (d, cost) = (&v[0], &v[1]);
        let m = grid.n * grid.n;
        let nb = d.gather(&grid.neighbors, &[m, 8])?;
        let (mins, weights) = ctx.min_rows(&nb)?;
        let updated = d.assign(&grid.interior, &cost.add(&mins)?)?;
        let pinned = updated.assign(&[grid.source], &Tensor::zeros(&[1]))?;
        Ok(vec![pinned, weights])
    });
    Statement::for_loop("_sweep", Expr::constant(iters as f64), sweep)
}

/// Backtrace of the marginal position distribution from the goal.
fn backtrace_program(grid: Arc<Grid>, max_iter: usize) -> Statement {
    let g = grid.clone();
    let step = Statement::compute(&["pos", "arg_D"], &["pos"], move |v, _| {
        let (pos, w) = (&v[0], &v[1]);
        let m = g.n * g.n;
        // Mass at each interior cell spreads over its neighbors by the
        // selection weights; the source keeps its mass.
        let rows: Vec<usize> = g.interior.iter().flat_map(|&p| [p; 8]).collect();
        let keep: Vec<f64> = g
            .interior
            .iter()
            .flat_map(|&p| [if p == g.source { 0.0 } else { 1.0 }; 8])
            .collect();
        let flows = pos
            .gather(&rows, &[m * 8])?
            .mul(&Tensor::vector(keep))?
            .mul(&w.reshape(&[m * 8])?)?;
        let spread = flows.scatter_add(&g.neighbors, &[g.padded_len()])?;
        let stay = pos.at(g.source)?.reshape(&[1])?.scatter_add(&[g.source], &[g.padded_len()])?;
        Ok(vec![spread.add(&stay)?])
    });
    let src = grid.source;
    let not_done = Expr::new(move |s| {
        let reached = crate::program::get(s, "path")?.value()[src];
        Ok(Tensor::scalar(if reached < 1.0 - SOURCE_MASS_EPS { 1.0 } else { 0.0 }))
    });
    let body = Statement::seq(vec![
        Statement::IndexAssign {
            source: "path".into(),
            index: vec![Expr::var("pos")],
            value: Expr::constant(1.0),
            mode: IndexMode::Categorical,
        },
        step,
    ]);
    Statement::while_with(Condition::prob(not_done), body, max_iter, 0.5)
}

fn setup(cost: &Tensor, iters: Option<usize>) -> Result<(Arc<Grid>, Statement, State)> {
    if cost.rank() != 2 || cost.shape()[0] != cost.shape()[1] {
        return Err(Error::structural(format!("cost must be square, got {:?}", cost.shape())));
    }
    let n = cost.shape()[0];
    if n < 2 {
        return Err(Error::structural("grid must be at least 2 x 2"));
    }
    if cost.value().iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::domain("bellman_ford", "costs must be finite and non-negative"));
    }
    let grid = Arc::new(Grid::new(n));
    let max_cost = cost.value().iter().cloned().fold(1.0, f64::max);
    let sentinel = 1e3 * max_cost * (n * n) as f64;
    let mut d0 = vec![sentinel; grid.padded_len()];
    d0[grid.source] = 0.0;
    let mut pos0 = vec![0.0; grid.padded_len()];
    pos0[grid.goal] = 1.0;

    let mut s = State::new();
    s.insert("cost".into(), cost.reshape(&[n * n])?);
    s.insert("D".into(), Tensor::vector(d0));
    s.insert("arg_D".into(), Tensor::zeros(&[n * n, 8]));
    s.insert("path".into(), Tensor::zeros(&[grid.padded_len()]));
    s.insert("pos".into(), Tensor::vector(pos0));

    let program = Statement::seq(vec![
        sweep_program(grid.clone(), iters.unwrap_or(n * n)),
        backtrace_program(grid.clone(), 50 * n * n),
    ]);
    Ok((grid, program, s))
}

/// Bellman-Ford on an `n x n` grid of node costs with 8-neighborhood moves
/// from the top-left to the bottom-right cell, followed by a relaxed path
/// reconstruction.
///
/// Outside cells and not-yet-reached cells hold a large finite sentinel so
/// gradients stay finite.
pub fn bellman_ford(cost: &Tensor, beta: f64, mode: Mode, iters: Option<usize>) -> Result<GridPathResult> {
    let (grid, program, s) = setup(cost, iters)?;
    let n = grid.n;
    let (out, report) = run(&program, &s, beta, mode)?;
    let path = out["path"].gather(&grid.interior, &[n, n])?;
    Ok(GridPathResult {
        distances: out["D"].reshape(&[n + 2, n + 2])?,
        path_map: path,
        neighbor_weights: out["arg_D"].clone(),
        report,
    })
}

/// The square-root access-count heuristic for this grid.
pub fn heuristic_beta(cost: &Tensor) -> Result<f64> {
    let (_, program, s) = setup(cost, None)?;
    beta_heuristic(&program, &s)
}
