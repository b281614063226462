//! Desk-scale algorithmic supervision: a model's predictions are fed
//! through a relaxed algorithm and the loss is applied to the algorithm's
//! output. Synthetic data stands in for the image datasets.

mod config;
mod levenshtein;
mod metrics;
mod model;
mod optim;
mod shortest_path;
mod silhouette;
mod sorting;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};

pub use config::{ExperimentConfig, ModelKind, RendererKind, SilhouetteLoss, TaskKind};
pub use levenshtein::train_levenshtein;
pub use metrics::{hungarian_match_accuracy, iou, soft_iou};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use shortest_path::train_shortest_path;
pub use silhouette::train_silhouette;
pub use sorting::train_sorting;

/// Outcome of a training run.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    /// Training loss before each update.
    pub loss_trace: Vec<f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Distinct warnings raised by relaxed runs (e.g. loop truncation).
    pub warnings: Vec<String>,
    /// Excluded from serialization so that metrics files are reproducible.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    /// Named `[H, W]` images in `[0, 1]` produced by the run.
    #[serde(skip)]
    pub images: Vec<(String, Tensor)>,
}

/// Runs the task named by `cfg`.
pub fn train(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let start = std::time::Instant::now();
    let cfg = cfg.resolve()?;
    let mut report = match cfg.task {
        TaskKind::Sorting => train_sorting(&cfg),
        TaskKind::ShortestPath => train_shortest_path(&cfg),
        TaskKind::Levenshtein => train_levenshtein(&cfg),
        TaskKind::Silhouette => train_silhouette(&cfg),
    }?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Distinct warnings, in first-seen order.
#[derive(Default)]
pub(crate) struct Warnings {
    seen: BTreeSet<String>,
    list: Vec<String>,
}

impl Warnings {
    pub(crate) fn extend(&mut self, msgs: &[String]) {
        for m in msgs {
            if self.seen.insert(m.clone()) {
                self.list.push(m.clone());
            }
        }
    }

    pub(crate) fn into_vec(self) -> Vec<String> {
        self.list
    }
}

/// Adam over a flat parameter vector. `loss` receives the tracked
/// parameters and the iteration number.
pub(crate) fn optimize(
    init: Vec<f64>,
    lr: f64,
    iterations: usize,
    mut loss: impl FnMut(&Tensor, usize) -> Result<Tensor>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut params = init;
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(params.clone()));
        let l = loss(&x, it)?;
        if !l.item().is_finite() {
            return Err(Error::domain("training", format!("non-finite loss at iteration {it}")));
        }
        trace.push(l.item());
        if l.is_tracked() {
            let g = l.backward()?.wrt(&x);
            adam_step(&mut params, &g, &mut state, lr)?;
        }
    }
    Ok((params, trace))
}

/// Mean of per-instance losses.
pub(crate) fn mean_loss(terms: Vec<Tensor>) -> Result<Tensor> {
    if terms.is_empty() {
        return Err(Error::structural("empty batch"));
    }
    let k = terms.len() as f64;
    let mut acc = Tensor::scalar(0.0);
    for t in terms {
        acc = acc.add(&t)?;
    }
    Ok(acc.mul_scalar(1.0 / k))
}
