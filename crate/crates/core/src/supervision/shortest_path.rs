use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algorithms::reference::{grid_shortest_path, path_cost};
use crate::algorithms::shortest_path::{bellman_ford, heuristic_beta};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::program::Mode;

use super::model::{batch, uniform_vec, Net};
use super::{mean_loss, optimize, ExperimentConfig, MetricsReport, ModelKind, TaskKind, Warnings};

/// One terrain: per-cell features, hidden costs and the optimal path.
struct Terrain {
    features: Vec<Vec<f64>>,
    cost: Vec<f64>,
    path: Vec<f64>,
}

/// Hidden log-costs are affine in the features, so costs stay positive.
struct Hidden {
    w: Vec<f64>,
    b: f64,
}

impl Hidden {
    fn cost(&self, f: &[f64]) -> f64 {
        (f.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b).exp()
    }
}

fn terrain(rng: &mut ChaCha8Rng, hidden: &Hidden, n: usize, d: usize) -> Terrain {
    let features: Vec<Vec<f64>> = (0..n * n).map(|_| uniform_vec(rng, d, 0.0, 1.0)).collect();
    let cost: Vec<f64> = features.iter().map(|f| hidden.cost(f)).collect();
    let (_, mask) = grid_shortest_path(&cost, n);
    let path = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    Terrain { features, cost, path }
}

fn predicted_costs(net: &Net, params: &Tensor, t: &Terrain, n: usize) -> Result<Tensor> {
    net.forward(params, &t.features)?.exp().reshape(&[n, n])
}

fn terrain_loss(net: &Net, p: &Tensor, t: &Terrain, n: usize, beta: f64, warn: &mut Warnings) -> Result<Tensor> {
    let c = predicted_costs(net, p, t, n)?;
    let r = bellman_ford(&c, beta, Mode::Relaxed, None)?;
    warn.extend(&r.report.warnings);
    let diff = r.path_map.reshape(&[n * n])?.sub(&Tensor::vector(t.path.clone()))?;
    Ok(diff.square().sum())
}

/// Trains a cost model so that the relaxed shortest path through its
/// predicted costs matches the supervised path (squared error per cell).
pub fn train_shortest_path(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let cfg = cfg.resolve()?;
    let (n, d) = (cfg.grid_size.unwrap(), cfg.feature_dim.unwrap());
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let hidden = Hidden {
        w: uniform_vec(&mut data_rng, d, -1.5, 1.5),
        b: 0.0,
    };
    let train: Vec<Terrain> = (0..cfg.train_instances.unwrap()).map(|_| terrain(&mut data_rng, &hidden, n, d)).collect();
    let test: Vec<Terrain> = (0..cfg.test_instances.unwrap()).map(|_| terrain(&mut data_rng, &hidden, n, d)).collect();

    let kind = cfg.model.unwrap();
    let net = Net::new(kind, d, 1);
    let init = if cfg.oracle_init && kind == ModelKind::Linear {
        hidden.w.iter().copied().chain([hidden.b]).collect()
    } else {
        net.init(&mut init_rng, 0.1)
    };
    let beta = match cfg.beta {
        Some(b) => b,
        None => heuristic_beta(&Tensor::new(&[n, n], train[0].cost.clone())?)?,
    };
    let mut warn = Warnings::default();
    let bs = cfg.batch_size.unwrap();
    let (params, trace) = optimize(init, cfg.learning_rate.unwrap(), cfg.iterations.unwrap(), |p, _| {
        let terms = batch(&mut batch_rng, train.len(), bs)
            .into_iter()
            .map(|k| terrain_loss(&net, p, &train[k], n, beta, &mut warn))
            .collect::<Result<Vec<_>>>()?;
        mean_loss(terms)
    })?;

    let p = Tensor::vector(params);
    let final_loss = mean_loss(
        train
            .iter()
            .map(|t| terrain_loss(&net, &p, t, n, beta, &mut warn))
            .collect::<Result<Vec<_>>>()?,
    )?
    .item();
    let (mut exact, mut ratio) = (0usize, 0.0);
    for t in &test {
        let c = predicted_costs(&net, &p, t, n)?;
        let hard = bellman_ford(&c, 1.0, Mode::Hard, None)?;
        let mask: Vec<bool> = hard.path_map.value().iter().map(|v| *v == 1.0).collect();
        exact += (hard.path_map.value() == t.path.as_slice()) as usize;
        let truth: Vec<bool> = t.path.iter().map(|v| *v == 1.0).collect();
        ratio += path_cost(&t.cost, &mask) / path_cost(&t.cost, &truth);
    }
    let metrics = BTreeMap::from([
        ("beta".to_string(), beta),
        ("final_loss".to_string(), final_loss),
        ("exact_match".to_string(), exact as f64 / test.len() as f64),
        ("cost_ratio".to_string(), ratio / test.len() as f64),
    ]);
    Ok(MetricsReport {
        task: TaskKind::ShortestPath,
        loss_trace: trace,
        metrics,
        warnings: warn.into_vec(),
        wall_clock_seconds: 0.0,
        images: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(iterations: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(TaskKind::ShortestPath);
        c.beta = Some(25.0);
        c.grid_size = Some(4);
        c.iterations = Some(iterations);
        c.train_instances = Some(20);
        c.test_instances = Some(20);
        c
    }

    #[test]
    fn oracle_costs_find_every_path() {
        let mut c = small(0);
        c.oracle_init = true;
        let r = train_shortest_path(&c).unwrap();
        assert_eq!(r.metrics["exact_match"], 1.0);
        assert!((r.metrics["cost_ratio"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_ratio_is_at_least_one() {
        let r = train_shortest_path(&small(20)).unwrap();
        assert!(r.metrics["cost_ratio"] >= 1.0 - 1e-12);
        assert!((0.0..=1.0).contains(&r.metrics["exact_match"]));
        assert_eq!(r.loss_trace.len(), 20);
    }
}
