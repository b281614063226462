use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algorithms::sort::{bubble_sort, heuristic_beta};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::program::Mode;

use super::model::{batch, gaussian, Net};
use super::{mean_loss, optimize, ExperimentConfig, MetricsReport, ModelKind, TaskKind, Warnings};

/// Items with hidden values `w . x` and sequences over them, each listed in
/// ascending hidden order.
struct Data {
    w: Vec<f64>,
    features: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    train: Vec<Vec<usize>>,
    test: Vec<Vec<usize>>,
}

fn sequences(rng: &mut ChaCha8Rng, count: usize, items: std::ops::Range<usize>, n: usize, hidden: &[f64]) -> Vec<Vec<usize>> {
    (0..count)
        .map(|_| {
            let mut seq: Vec<usize> = batch(rng, items.len(), n).into_iter().map(|i| items.start + i).collect();
            seq.sort_by(|a, b| hidden[*a].total_cmp(&hidden[*b]));
            seq
        })
        .collect()
}

fn make_data(cfg: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Data {
    let (pool, d, n) = (cfg.pool_size.unwrap(), cfg.feature_dim.unwrap(), cfg.n.unwrap());
    let train_count = cfg.train_instances.unwrap();
    let direct = cfg.model == Some(ModelKind::DirectParameters);
    // Direct scores: every training sequence owns its n items, so there is
    // nothing held out. Feature models share a pool and are tested on fresh items.
    let total = if direct { train_count * n } else { 2 * pool };
    let w = gaussian(rng, d, 1.0);
    let features: Vec<Vec<f64>> = (0..total).map(|_| gaussian(rng, d, 1.0)).collect();
    let hidden: Vec<f64> = features.iter().map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
    let ascending = |mut seq: Vec<usize>| {
        seq.sort_by(|a, b| hidden[*a].total_cmp(&hidden[*b]));
        seq
    };
    let (train, test) = if direct {
        ((0..train_count).map(|k| ascending((k * n..(k + 1) * n).collect())).collect(), Vec::new())
    } else {
        (
            sequences(rng, train_count, 0..pool, n, &hidden),
            sequences(rng, cfg.test_instances.unwrap(), pool..total, n, &hidden),
        )
    };
    Data { w, features, hidden, train, test }
}

/// Predicted scores of every item.
fn scores(cfg: &ExperimentConfig, params: &Tensor, data: &Data) -> Result<Tensor> {
    match cfg.model.unwrap() {
        ModelKind::DirectParameters => Ok(params.clone()),
        kind => {
            let net = Net::new(kind, cfg.feature_dim.unwrap(), 1);
            let out = net.forward(params, &data.features)?;
            out.reshape(&[data.features.len()])
        }
    }
}

/// Fraction of sequences ranked exactly, and of positions ranked correctly.
fn ranking_metrics(all: &[f64], seqs: &[Vec<usize>]) -> (f64, f64) {
    let (mut exact, mut elems, mut total) = (0usize, 0usize, 0usize);
    for seq in seqs {
        let mut order: Vec<usize> = (0..seq.len()).collect();
        order.sort_by(|a, b| all[seq[*a]].total_cmp(&all[seq[*b]]));
        let right = order.iter().enumerate().filter(|(pos, k)| *pos == **k).count();
        exact += (right == seq.len()) as usize;
        elems += right;
        total += seq.len();
    }
    (exact as f64 / seqs.len() as f64, elems as f64 / total as f64)
}

fn sequence_loss(all: &Tensor, seq: &[usize], beta: f64, warn: &mut Warnings) -> Result<Tensor> {
    let s = all.gather(seq, &[seq.len()])?;
    let r = bubble_sort(&s, beta, Mode::Relaxed)?;
    warn.extend(&r.report.warnings);
    Ok(r.unsorted_probability.into_tensor())
}

/// Trains item scores so that relaxed bubble sort finds every supervised
/// sequence already sorted.
pub fn train_sorting(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let cfg = cfg.resolve()?;
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let data = make_data(&cfg, &mut data_rng);
    let kind = cfg.model.unwrap();
    let init = match (kind, cfg.oracle_init) {
        (ModelKind::DirectParameters, true) => data.hidden.clone(),
        (ModelKind::DirectParameters, false) => gaussian(&mut init_rng, data.hidden.len(), 0.01),
        (ModelKind::Linear, true) => data.w.iter().copied().chain([0.0]).collect(),
        (_, _) => Net::new(kind, cfg.feature_dim.unwrap(), 1).init(&mut init_rng, 0.1),
    };
    let beta = match cfg.beta {
        Some(b) => b,
        None => heuristic_beta(&Tensor::vector(vec![0.0; cfg.n.unwrap()]))?,
    };
    let mut warn = Warnings::default();
    let bs = cfg.batch_size.unwrap();
    let (params, trace) = optimize(init, cfg.learning_rate.unwrap(), cfg.iterations.unwrap(), |p, _| {
        let all = scores(&cfg, p, &data)?;
        let terms = batch(&mut batch_rng, data.train.len(), bs)
            .into_iter()
            .map(|k| sequence_loss(&all, &data.train[k], beta, &mut warn))
            .collect::<Result<Vec<_>>>()?;
        mean_loss(terms)
    })?;

    let p = Tensor::vector(params);
    let all = scores(&cfg, &p, &data)?;
    let final_loss = mean_loss(
        data.train
            .iter()
            .map(|s| sequence_loss(&all, s, beta, &mut warn))
            .collect::<Result<Vec<_>>>()?,
    )?
    .item();
    let (em, el) = ranking_metrics(all.value(), &data.train);
    let mut metrics = BTreeMap::from([
        ("beta".to_string(), beta),
        ("final_loss".to_string(), final_loss),
        ("exact_match".to_string(), em),
        ("element_accuracy".to_string(), el),
    ]);
    if !data.test.is_empty() {
        let (tem, tel) = ranking_metrics(all.value(), &data.test);
        metrics.insert("heldout_exact_match".to_string(), tem);
        metrics.insert("heldout_element_accuracy".to_string(), tel);
    }
    Ok(MetricsReport {
        task: TaskKind::Sorting,
        loss_trace: trace,
        metrics,
        warnings: warn.into_vec(),
        wall_clock_seconds: 0.0,
        images: Vec::new(),
    })
}
