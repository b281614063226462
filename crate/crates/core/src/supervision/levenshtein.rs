use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algorithms::levenshtein::{heuristic_beta, levenshtein};
use crate::algorithms::reference;
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::program::Mode;
use crate::relax::{hard_argmax, CategoricalDistribution};

use super::metrics::hungarian_match_accuracy;
use super::model::{batch, gaussian, Net};
use super::{mean_loss, optimize, ExperimentConfig, MetricsReport, ModelKind, TaskKind, Warnings};

const CLUSTER_RADIUS: f64 = 1.5;
const CLUSTER_SD: f64 = 0.5;

/// Class means evenly spaced on a circle in the first two feature axes.
struct Clusters {
    means: Vec<Vec<f64>>,
}

impl Clusters {
    fn new(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Self {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let means = (0..k)
            .map(|c| {
                let a = phase + std::f64::consts::TAU * c as f64 / k as f64;
                let mut m = vec![0.0; d];
                m[0] = CLUSTER_RADIUS * a.cos();
                if d > 1 {
                    m[1] = CLUSTER_RADIUS * a.sin();
                }
                m
            })
            .collect();
        Clusters { means }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, class: usize) -> Vec<f64> {
        let noise = gaussian(rng, self.means[class].len(), CLUSTER_SD);
        self.means[class].iter().zip(noise).map(|(m, e)| m + e).collect()
    }
}

/// A pair of strings of character features and their true distance.
struct Pair {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    distance: f64,
}

/// A random string, a copy edited by two to four insertions or deletions,
/// both cropped to `len`.
fn pair(rng: &mut ChaCha8Rng, clusters: &Clusters, len: usize, k: usize) -> Pair {
    let base: Vec<usize> = (0..len + 4).map(|_| rng.random_range(0..k)).collect();
    let mut edited = base.clone();
    for _ in 0..rng.random_range(2..=4) {
        if rng.random_bool(0.5) && edited.len() > 1 {
            let at = rng.random_range(0..edited.len());
            edited.remove(at);
        } else {
            let at = rng.random_range(0..=edited.len());
            edited.insert(at, rng.random_range(0..k));
        }
    }
    let (sa, sb) = (&base[..len], &edited[..len.min(edited.len())]);
    Pair {
        a: sa.iter().map(|&c| clusters.sample(rng, c)).collect(),
        b: sb.iter().map(|&c| clusters.sample(rng, c)).collect(),
        distance: reference::levenshtein(sa, sb) as f64,
    }
}

fn distributions(net: &Net, p: &Tensor, x: &[Vec<f64>]) -> Result<Vec<CategoricalDistribution>> {
    let probs = net.forward(p, x)?.softmax(1.0, 1)?;
    let k = probs.shape()[1];
    (0..x.len())
        .map(|r| CategoricalDistribution::new(probs.gather(&(r * k..(r + 1) * k).collect::<Vec<_>>(), &[k])?))
        .collect()
}

fn pair_loss(net: &Net, p: &Tensor, pair: &Pair, beta: f64, warn: &mut Warnings) -> Result<Tensor> {
    let a = distributions(net, p, &pair.a)?;
    let b = distributions(net, p, &pair.b)?;
    let r = levenshtein(&a, &b, beta, Mode::Relaxed, false)?;
    warn.extend(&r.report.warnings);
    Ok(r.distance.add_scalar(-pair.distance).square())
}

/// Trains a character classifier from edit distances alone: the relaxed
/// distance between the predicted class distributions of two strings is
/// regressed onto the true distance.
pub fn train_levenshtein(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let cfg = cfg.resolve()?;
    let (len, k, d) = (cfg.string_length.unwrap(), cfg.num_classes.unwrap(), cfg.feature_dim.unwrap());
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let clusters = Clusters::new(&mut data_rng, k, d);
    let train: Vec<Pair> = (0..cfg.train_instances.unwrap()).map(|_| pair(&mut data_rng, &clusters, len, k)).collect();
    let test_labels: Vec<usize> = (0..cfg.test_instances.unwrap()).map(|_| data_rng.random_range(0..k)).collect();
    let test_x: Vec<Vec<f64>> = test_labels.iter().map(|&c| clusters.sample(&mut data_rng, c)).collect();

    let kind = cfg.model.unwrap();
    let net = Net::new(kind, d, k);
    let init = if cfg.oracle_init && kind == ModelKind::Linear {
        // Nearest-mean classifier, sharpened: logit_c = s (mu_c . x - |mu_c|^2 / 2).
        let s = 20.0;
        let mut w = vec![0.0; (d + 1) * k];
        for (c, mu) in clusters.means.iter().enumerate() {
            for (j, m) in mu.iter().enumerate() {
                w[j * k + c] = s * m;
            }
            w[d * k + c] = -s * mu.iter().map(|m| m * m).sum::<f64>() / 2.0;
        }
        w
    } else {
        net.init(&mut init_rng, 0.1)
    };
    let beta = match cfg.beta {
        Some(b) => b,
        None => {
            let one = |n: usize| (0..n).map(|_| CategoricalDistribution::uniform(k)).collect::<Result<Vec<_>>>();
            heuristic_beta(&one(len)?, &one(len)?, false)?
        }
    };
    let mut warn = Warnings::default();
    let bs = cfg.batch_size.unwrap();
    let (params, trace) = optimize(init, cfg.learning_rate.unwrap(), cfg.iterations.unwrap(), |p, _| {
        let terms = batch(&mut batch_rng, train.len(), bs)
            .into_iter()
            .map(|i| pair_loss(&net, p, &train[i], beta, &mut warn))
            .collect::<Result<Vec<_>>>()?;
        mean_loss(terms)
    })?;

    let p = Tensor::vector(params);
    let final_loss = mean_loss(
        train
            .iter()
            .map(|t| pair_loss(&net, &p, t, beta, &mut warn))
            .collect::<Result<Vec<_>>>()?,
    )?
    .item();
    let logits = net.forward(&p, &test_x)?;
    let pred: Vec<usize> = logits.value().chunks(k).map(hard_argmax).collect();
    let (top1, f1) = hungarian_match_accuracy(&pred, &test_labels, k)?;
    let metrics = BTreeMap::from([
        ("beta".to_string(), beta),
        ("final_loss".to_string(), final_loss),
        ("top1".to_string(), top1),
        ("f1".to_string(), f1),
    ]);
    Ok(MetricsReport {
        task: TaskKind::Levenshtein,
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
    use crate::algorithms::one_hot_string;

    #[test]
    fn ground_truth_one_hot_classes_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let base: Vec<usize> = (0..8).map(|_| rng.random_range(0..2)).collect();
            let other: Vec<usize> = (0..8).map(|_| rng.random_range(0..2)).collect();
            let a = one_hot_string(&base, 2).unwrap();
            let b = one_hot_string(&other, 2).unwrap();
            let relaxed = levenshtein(&a, &b, 1e6, Mode::Relaxed, false).unwrap().distance.item();
            let hard = reference::levenshtein(&base, &other) as f64;
            assert!((relaxed - hard).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_pairs_respect_the_edit_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let clusters = Clusters::new(&mut rng, 2, 2);
        for _ in 0..100 {
            let p = pair(&mut rng, &clusters, 8, 2);
            assert_eq!(p.a.len(), 8);
            assert!(p.distance <= 8.0);
        }
    }

    #[test]
    fn oracle_classifier_is_accurate_and_has_small_loss() {
        let mut c = ExperimentConfig::new(TaskKind::Levenshtein);
        c.beta = Some(9.0);
        c.iterations = Some(0);
        c.train_instances = Some(10);
        c.oracle_init = true;
        let r = train_levenshtein(&c).unwrap();
        assert_eq!(r.metrics["top1"], 1.0);
        assert!(r.metrics["final_loss"] < 0.05, "{}", r.metrics["final_loss"]);
    }
}
