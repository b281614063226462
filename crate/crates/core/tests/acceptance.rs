//! End-to-end acceptance suite: one pass/fail line per criterion, with its
//! runtime against the budget.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{clear_of_edges, random_mesh, separated, unambiguous};

use algorelax::algorithms::raster::{rasterize_euclidean, rasterize_three_edges, Mesh2DProjection};
use algorelax::algorithms::{bellman_ford, bubble_sort, levenshtein, one_hot_string, reference, swap_count_hard};
use algorelax::autodiff::Tensor;
use algorelax::gradcheck::{run_gradcheck, Scope};
use algorelax::program::{get, run, Condition, Expr, Mode, State, Statement};
use algorelax::supervision::{train, ExperimentConfig, RendererKind, TaskKind};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

const HARD_BETA: f64 = 1e6;

// ---------------------------------------------------------------- 1

fn gradients() -> Outcome {
    let r = run_gradcheck(Scope::All, 0, 100);
    let few = r.checks.iter().filter(|c| c.instances < 100).map(|c| c.name.clone()).collect::<Vec<_>>();
    let worst = r.checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    let rule = r.checks.iter().filter(|c| c.oracle != "finite_difference").map(|c| c.name.as_str()).join(",");
    outcome(
        r.passed && few.is_empty(),
        format!(
            "{} checks, worst relative error {worst:.2e}, failed {:?}, under 100 instances {:?}, hand-rule oracle: {rule}",
            r.checks.len(),
            r.failed,
            few
        ),
    )
}

// ---------------------------------------------------------------- 2

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn hard_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |k: &'static str, v: f64| {
        let e = worst.entry(k).or_insert(0.0);
        *e = e.max(v);
    };
    for _ in 0..100 {
        let n = rng.random_range(2..=7);
        let v = separated(&mut rng, n, -5.0, 5.0);
        let r = bubble_sort(&Tensor::vector(v.clone()), HARD_BETA, Mode::Relaxed).unwrap();
        note("sort", max_abs_diff(r.relaxed_sequence.value(), &reference::bubble_sort(&v).0));
    }
    for _ in 0..100 {
        let k = rng.random_range(2..=4);
        let a: Vec<usize> = (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..k)).collect();
        let b: Vec<usize> = (0..rng.random_range(1..=8)).map(|_| rng.random_range(0..k)).collect();
        let d = levenshtein(&one_hot_string(&a, k).unwrap(), &one_hot_string(&b, k).unwrap(), HARD_BETA, Mode::Relaxed, true)
            .unwrap()
            .distance
            .item();
        note("levenshtein", (d - reference::levenshtein(&a, &b) as f64).abs());
    }
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let cost = loop {
            let c: Vec<f64> = (0..n * n).map(|_| rng.random_range(1.0..10.0)).collect();
            if unambiguous(&c, n) {
                break c;
            }
        };
        let (dist, path) = reference::grid_shortest_path(&cost, n);
        let r = bellman_ford(&Tensor::new(&[n, n], cost.clone()).unwrap(), HARD_BETA, Mode::Relaxed, None).unwrap();
        let mask: Vec<f64> = path.iter().map(|p| f64::from(u8::from(*p))).collect();
        note("bellman_ford_path", max_abs_diff(r.path_map.value(), &mask));
        let m = n + 2;
        let interior: Vec<f64> = (0..n * n).map(|v| r.distances.value()[(v / n + 1) * m + v % n + 1]).collect();
        note("bellman_ford_distance", max_abs_diff(&interior, &dist));
    }
    let res = 16;
    for _ in 0..100 {
        let mesh = loop {
            let count = rng.random_range(1..=3);
            let m = random_mesh(&mut rng, count);
            if clear_of_edges(&m, res) {
                break m;
            }
        };
        let truth: Vec<f64> = reference::coverage(&mesh, res).iter().map(|p| f64::from(u8::from(*p))).collect();
        let proj = Mesh2DProjection::from_points(&mesh).unwrap();
        let te = rasterize_three_edges(&proj, res, HARD_BETA, Mode::Relaxed).unwrap();
        let eu = rasterize_euclidean(&proj, res, HARD_BETA, Mode::Relaxed).unwrap();
        note("three_edges", max_abs_diff(te.image.value(), &truth));
        note("euclidean", max_abs_diff(eu.image.value(), &truth));
    }
    let passed = worst.values().all(|e| *e <= 1e-6);
    outcome(passed, format!("max abs error per oracle {worst:?}"))
}

// ---------------------------------------------------------------- 3

const MC_BETA: f64 = 2.0;
const MC_SAMPLES: usize = 100_000;

/// One draw of a `Logistic(0, 1/beta)` perturbation.
fn noise(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.sample(Open01);
    (u / (1.0 - u)).ln() / MC_BETA
}

/// `a < b` with fresh noise on this evaluation.
fn lt(rng: &mut ChaCha8Rng, a: f64, b: f64) -> bool {
    a + noise(rng) < b
}

fn gt(rng: &mut ChaCha8Rng, a: f64, b: f64) -> bool {
    lt(rng, b, a)
}

fn scalar_state(vars: &[(&str, f64)]) -> State {
    vars.iter().map(|(k, v)| (k.to_string(), Tensor::scalar(*v))).collect()
}

fn binary(a: &str, b: &str, f: fn(f64, f64) -> f64) -> Expr {
    let (a, b) = (a.to_string(), b.to_string());
    Expr::new(move |s| Ok(Tensor::scalar(f(get(s, &a)?.item(), get(s, &b)?.item()))))
}

fn var(n: &str) -> Expr {
    Expr::var(n)
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>>;

struct McProgram {
    name: &'static str,
    program: Statement,
    state: State,
    outputs: Vec<&'static str>,
    sample: Sampler,
}

fn mc_corpus() -> Vec<McProgram> {
    let (x, y) = (0.3, -0.4);
    vec![
        McProgram {
            name: "two_level_if",
            program: Statement::if_else(
                Condition::lt(var("x"), c(0.5)),
                Statement::if_else(
                    Condition::gt(var("y"), c(-1.0)),
                    Statement::assign("z", var("y").add_const(2.0)),
                    Statement::assign("z", c(-3.0)),
                ),
                Statement::assign("z", c(4.0)),
            ),
            state: scalar_state(&[("x", x), ("y", y), ("z", 0.0)]),
            outputs: vec!["z"],
            sample: Box::new(move |r| {
                let z = if lt(r, x, 0.5) {
                    if gt(r, y, -1.0) {
                        y + 2.0
                    } else {
                        -3.0
                    }
                } else {
                    4.0
                };
                vec![z]
            }),
        },
        McProgram {
            name: "three_level_if_comparing_variables",
            program: Statement::if_else(
                Condition::lt(var("x"), var("y").add_const(1.0)),
                Statement::if_else(
                    Condition::gt(var("x"), var("y")),
                    Statement::assign("z", binary("x", "y", |a, b| a * b)),
                    Statement::if_else(
                        Condition::lt(var("y"), c(0.0)),
                        Statement::seq(vec![Statement::assign("z", c(1.0)), Statement::assign("w", c(5.0))]),
                        Statement::assign("z", c(-1.0)),
                    ),
                ),
                Statement::assign("w", c(-2.0)),
            ),
            state: scalar_state(&[("x", x), ("y", y), ("z", 0.5), ("w", 0.0)]),
            outputs: vec!["z", "w"],
            sample: Box::new(move |r| {
                let (mut z, mut w) = (0.5, 0.0);
                if lt(r, x, y + 1.0) {
                    if gt(r, x, y) {
                        z = x * y;
                    } else if lt(r, y, 0.0) {
                        z = 1.0;
                        w = 5.0;
                    } else {
                        z = -1.0;
                    }
                } else {
                    w = -2.0;
                }
                vec![z, w]
            }),
        },
        McProgram {
            name: "compound_condition",
            program: Statement::if_else(
                Condition::lt(var("x"), c(0.0))
                    .and(Condition::gt(var("y"), c(-0.5)))
                    .or(Condition::gt(var("x"), var("y")).not()),
                Statement::assign("z", var("x").add_const(10.0)),
                Statement::assign("z", var("y")),
            ),
            state: scalar_state(&[("x", x), ("y", y), ("z", 0.0)]),
            outputs: vec!["z"],
            sample: Box::new(move |r| {
                let p = lt(r, x, 0.0);
                let q = gt(r, y, -0.5);
                let s = !gt(r, x, y);
                vec![if (p && q) || s { x + 10.0 } else { y }]
            }),
        },
        McProgram {
            name: "while_counter",
            program: Statement::while_with(
                Condition::lt(var("x"), c(3.0)),
                Statement::seq(vec![
                    Statement::assign("x", var("x").add_const(0.7)),
                    Statement::assign("n", var("n").add_const(1.0)),
                ]),
                100,
                1e-15,
            ),
            state: scalar_state(&[("x", 0.0), ("n", 0.0)]),
            outputs: vec!["x", "n"],
            sample: Box::new(|r| {
                let (mut x, mut n) = (0.0, 0.0);
                let mut guard = 0;
                while guard < 100 && lt(r, x, 3.0) {
                    x += 0.7;
                    n += 1.0;
                    guard += 1;
                }
                vec![x, n]
            }),
        },
        McProgram {
            name: "while_with_nested_if",
            program: Statement::while_with(
                Condition::lt(var("x"), c(2.5)),
                Statement::seq(vec![
                    Statement::if_else(
                        Condition::lt(var("y"), var("x")),
                        Statement::assign("s", binary("s", "x", |s, x| s + x)),
                        Statement::assign("s", var("s").add_const(-1.0)),
                    ),
                    Statement::assign("x", var("x").add_const(0.5)),
                ]),
                100,
                1e-15,
            ),
            state: scalar_state(&[("x", -0.5), ("y", 0.6), ("s", 0.0)]),
            outputs: vec!["s", "x"],
            sample: Box::new(|r| {
                let (mut x, mut s) = (-0.5, 0.0);
                let mut guard = 0;
                while guard < 100 && lt(r, x, 2.5) {
                    if lt(r, 0.6, x) {
                        s += x;
                    } else {
                        s -= 1.0;
                    }
                    x += 0.5;
                    guard += 1;
                }
                vec![s, x]
            }),
        },
        McProgram {
            name: "if_inside_then_and_else",
            program: Statement::if_else(
                Condition::gt(var("x"), var("y")),
                Statement::if_else(
                    Condition::lt(var("x"), c(0.2)).not(),
                    Statement::assign("z", c(7.0)),
                    Statement::assign("z", c(-7.0)),
                ),
                Statement::if_else(
                    Condition::gt(var("y"), c(0.0)).or(Condition::lt(var("x"), c(-1.0))),
                    Statement::assign("z", c(2.0)),
                    Statement::assign("z", c(3.0)),
                ),
            ),
            state: scalar_state(&[("x", x), ("y", y), ("z", 0.0)]),
            outputs: vec!["z"],
            sample: Box::new(move |r| {
                let z = if gt(r, x, y) {
                    if !lt(r, x, 0.2) {
                        7.0
                    } else {
                        -7.0
                    }
                } else if gt(r, y, 0.0) || lt(r, x, -1.0) {
                    2.0
                } else {
                    3.0
                };
                vec![z]
            }),
        },
    ]
}

/// Standard errors between each relaxed output (run at `beta`) and its
/// Monte-Carlo estimate under noise at `MC_BETA`.
fn expectation_scores(beta: f64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scores = Vec::new();
    for p in mc_corpus() {
        let (out, _) = run(&p.program, &p.state, beta, Mode::Relaxed).unwrap();
        let k = p.outputs.len();
        let (mut sum, mut sq) = (vec![0.0; k], vec![0.0; k]);
        for _ in 0..MC_SAMPLES {
            for (j, v) in (p.sample)(&mut rng).into_iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        for (j, name) in p.outputs.iter().enumerate() {
            let m = sum[j] / MC_SAMPLES as f64;
            let var = (sq[j] / MC_SAMPLES as f64 - m * m).max(0.0) * MC_SAMPLES as f64 / (MC_SAMPLES - 1) as f64;
            let se = (var / MC_SAMPLES as f64).sqrt();
            let relaxed = out[*name].item();
            let z = if se > 0.0 {
                (relaxed - m).abs() / se
            } else if relaxed == m {
                0.0
            } else {
                f64::INFINITY
            };
            scores.push((format!("{}.{name}", p.name), z));
        }
    }
    scores
}

fn expectations() -> Outcome {
    let scores = expectation_scores(MC_BETA);
    let passed = scores.iter().all(|(_, z)| *z <= 3.0);
    outcome(passed, scores.iter().map(|(n, z)| format!("{n}: {z:.2} SE")).join(", "))
}

// ---------------------------------------------------------------- 4

fn inversions() -> Outcome {
    let mut cases = 0;
    let mut bad = Vec::new();
    for n in 1..=6 {
        for perm in (0..n).permutations(n) {
            let v: Vec<f64> = perm.iter().map(|&i| i as f64).collect();
            cases += 1;
            if swap_count_hard(&v).unwrap() != reference::inversion_count(&v) {
                bad.push(perm);
            }
        }
    }
    let n6 = (1..=6).product::<usize>();
    outcome(bad.is_empty(), format!("{cases} permutations (n=6: {n6}), mismatches {bad:?}"))
}

// ---------------------------------------------------------------- 5-8

fn sorting() -> Outcome {
    let mut c = ExperimentConfig::new(TaskKind::Sorting);
    c.beta = Some(8.0);
    c.iterations = Some(2000);
    let r = train(&c).unwrap();
    let em = r.metrics["exact_match"];
    outcome(em >= 0.99, format!("exact match {em:.3} over {} sequences", c.resolve().unwrap().train_instances.unwrap()))
}

fn shortest_path() -> Outcome {
    let mut c = ExperimentConfig::new(TaskKind::ShortestPath);
    c.beta = Some(25.0);
    let r = train(&c).unwrap();
    let (em, ratio) = (r.metrics["exact_match"], r.metrics["cost_ratio"]);
    outcome(em >= 0.80 && ratio <= 1.01, format!("held-out exact match {em:.3}, cost ratio {ratio:.5}"))
}

fn levenshtein_supervision() -> Outcome {
    let top1: Vec<f64> = (0..5)
        .map(|seed| {
            let mut c = ExperimentConfig::new(TaskKind::Levenshtein);
            c.beta = Some(9.0);
            c.seed = seed;
            train(&c).unwrap().metrics["top1"]
        })
        .collect();
    let mean = top1.iter().sum::<f64>() / top1.len() as f64;
    outcome(mean >= 0.90, format!("mean Hungarian top-1 {mean:.3} over seeds {top1:?}"))
}

fn silhouette() -> Outcome {
    let mut c = ExperimentConfig::new(TaskKind::Silhouette);
    c.beta = Some(200.0);
    c.resolution = Some(32);
    c.triangles = Some(1);
    c.renderer = Some(RendererKind::Euclidean);
    let iou = train(&c).unwrap().metrics["iou"];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut differing = 0;
    for _ in 0..50 {
        let count = rng.random_range(1..=4);
        let mesh = random_mesh(&mut rng, count);
        let proj = Mesh2DProjection::from_points(&mesh).unwrap();
        let a = rasterize_three_edges(&proj, 32, 1.0, Mode::Hard).unwrap();
        let b = rasterize_euclidean(&proj, 32, 1.0, Mode::Hard).unwrap();
        differing += usize::from(a.image.value() != b.image.value());
    }
    outcome(iou >= 0.95 && differing == 0, format!("hard IoU {iou:.3}, renderers disagree on {differing}/50 meshes"))
}

// ---------------------------------------------------------------- 9

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_algorelax"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// File contents of a run directory; manifests lose their timestamp and
/// wall clock, which are expected to differ.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .sorted()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                let m = v.as_object_mut().unwrap();
                m.remove("timestamp");
                m.remove("wall_clock_seconds");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect()
}

fn determinism() -> Outcome {
    let commands: [&[&str]; 3] = [
        &["gradcheck", "--scope", "program", "--seed", "5", "--instances", "20", "--out", "run"],
        &["demo", "shortest_path", "--seed", "4", "--out", "run"],
        &["train", "--task", "sorting", "--iterations", "200", "--seed", "9", "--out", "run"],
    ];
    let mut lines = Vec::new();
    let mut passed = true;
    for args in commands {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ok = run_cli(a.path(), args) && run_cli(b.path(), args);
        let (sa, sb) = (snapshot(&a.path().join("run")), snapshot(&b.path().join("run")));
        let same = ok && sa == sb && sa.len() >= 2;
        passed &= same;
        lines.push(format!("{} ({} files): {}", args[0], sa.len(), if same { "identical" } else { "DIFFERENT" }));
    }
    outcome(passed, lines.join(", "))
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome, u64);
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradients, 300),
        ("hard-mode oracles", hard_oracles, 120),
        ("expectation exactness", expectations, 180),
        ("swap count equals inversions", inversions, 10),
        ("sorting supervision", sorting, 60),
        ("shortest-path supervision", shortest_path, 300),
        ("levenshtein supervision", levenshtein_supervision, 300),
        ("silhouette supervision", silhouette, 180),
        ("cli determinism", determinism, 300),
    ];
    let mut failures = Vec::new();
    for (i, (name, f, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let ok = o.passed && took <= Duration::from_secs(budget);
        println!(
            "criterion {} {name}: {} ({:.1}s of {budget}s) {}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
        if !ok {
            failures.push(i + 1);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}

#[test]
fn logistic_noise_matches_the_sigmoid() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hits = (0..MC_SAMPLES).filter(|_| lt(&mut rng, 0.3, 0.5)).count() as f64 / MC_SAMPLES as f64;
    let p = 1.0 / (1.0 + (-MC_BETA * 0.2_f64).exp());
    assert!((hits - p).abs() < 4.0 * (p * (1.0 - p) / MC_SAMPLES as f64).sqrt());
}


#[test]
fn monte_carlo_oracle_rejects_a_wrong_temperature() {
    let scores = expectation_scores(1.5 * MC_BETA);
    let rejected = scores.iter().filter(|(_, z)| *z > 3.0).count();
    assert!(rejected * 2 > scores.len(), "{scores:?}");
}
