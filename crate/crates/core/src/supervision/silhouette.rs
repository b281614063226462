use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::algorithms::raster::{heuristic_beta, rasterize_euclidean, rasterize_three_edges, Mesh2DProjection};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::program::Mode;

use super::metrics::{iou, soft_iou};
use super::{optimize, ExperimentConfig, MetricsReport, RendererKind, SilhouetteLoss, TaskKind, Warnings};

/// A counter-clockwise triangle inside `[0.15, 0.85]^2` with area at least 0.05.
fn random_triangle(rng: &mut ChaCha8Rng) -> [[f64; 2]; 3] {
    loop {
        let mut t = [[0.0_f64; 2]; 3];
        for v in &mut t {
            *v = [rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)];
        }
        let area = 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0]));
        if area.abs() >= 0.05 {
            if area < 0.0 {
                t.swap(1, 2);
            }
            return t;
        }
    }
}

/// Shrinks the target toward its centroid, rotates it and jitters every
/// vertex, so the start overlaps the target without matching it.
fn perturbed(rng: &mut ChaCha8Rng, t: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let cx = (t[0][0] + t[1][0] + t[2][0]) / 3.0;
    let cy = (t[0][1] + t[1][1] + t[2][1]) / 3.0;
    let angle: f64 = rng.random_range(-0.4..0.4);
    let scale = rng.random_range(0.6..0.8);
    let (s, c) = angle.sin_cos();
    t.map(|[x, y]| {
        let (dx, dy) = ((x - cx) * scale, (y - cy) * scale);
        [
            cx + c * dx - s * dy + rng.random_range(-0.04..0.04),
            cy + s * dx + c * dy + rng.random_range(-0.04..0.04),
        ]
    })
}

fn render(kind: RendererKind, mesh: &Mesh2DProjection, res: usize, beta: f64, mode: Mode) -> Result<crate::algorithms::Rendered> {
    match kind {
        RendererKind::Euclidean => rasterize_euclidean(mesh, res, beta, mode),
        RendererKind::ThreeEdges => rasterize_three_edges(mesh, res, beta, mode),
    }
}

/// Fits free triangle vertices so that the relaxed silhouette matches a
/// binary target rendered from hidden triangles.
pub fn train_silhouette(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let cfg = cfg.resolve()?;
    let (res, count) = (cfg.resolution.unwrap(), cfg.triangles.unwrap());
    let kind = cfg.renderer.unwrap();
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let targets: Vec<[[f64; 2]; 3]> = (0..count).map(|_| random_triangle(&mut data_rng)).collect();
    let target_mesh = Mesh2DProjection::from_points(&targets)?;
    let target = render(kind, &target_mesh, res, 1.0, Mode::Hard)?.image;
    let init: Vec<f64> = if cfg.oracle_init {
        targets.iter().flatten().flatten().copied().collect()
    } else {
        targets.iter().flat_map(|t| perturbed(&mut init_rng, t)).flatten().collect()
    };
    let beta = match cfg.beta {
        Some(b) => b,
        None => heuristic_beta(&target_mesh, res, kind == RendererKind::Euclidean)?,
    };
    let loss_kind = cfg.loss.unwrap();
    let mut warn = Warnings::default();
    let loss_of = |p: &Tensor, warn: &mut Warnings| -> Result<Tensor> {
        let mesh = Mesh2DProjection::new(p.reshape(&[count, 3, 2])?)?;
        let r = render(kind, &mesh, res, beta, Mode::Relaxed)?;
        warn.extend(&r.report.warnings);
        match loss_kind {
            SilhouetteLoss::L2 => r.image.sub(&target)?.square().mean(),
            SilhouetteLoss::SoftIou => Ok(soft_iou(&r.image, &target)?.one_minus()),
        }
    };
    let (params, trace) = optimize(init, cfg.learning_rate.unwrap(), cfg.iterations.unwrap(), |p, _| {
        loss_of(p, &mut warn)
    })?;

    let p = Tensor::vector(params);
    let final_loss = loss_of(&p, &mut warn)?.item();
    let mesh = Mesh2DProjection::new(p.reshape(&[count, 3, 2])?)?;
    let hard = render(kind, &mesh, res, 1.0, Mode::Hard)?.image;
    let relaxed = render(kind, &mesh, res, beta, Mode::Relaxed)?.image;
    let metrics = BTreeMap::from([
        ("beta".to_string(), beta),
        ("final_loss".to_string(), final_loss),
        ("iou".to_string(), iou(&hard, &target)?),
        ("soft_iou".to_string(), soft_iou(&relaxed, &target)?.item()),
    ]);
    Ok(MetricsReport {
        task: TaskKind::Silhouette,
        loss_trace: trace,
        metrics,
        warnings: warn.into_vec(),
        wall_clock_seconds: 0.0,
        images: vec![
            ("target".to_string(), target),
            ("fit_hard".to_string(), hard),
            ("fit_relaxed".to_string(), relaxed),
        ],
    })
}
