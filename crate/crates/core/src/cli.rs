//! Command-line workflows: gradient checks, single-instance demos and
//! training runs. Every command that writes files also writes a
//! `manifest.json` describing how to reproduce them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::algorithms::raster::{rasterize_euclidean, rasterize_three_edges, Camera, Mesh2DProjection};
use crate::algorithms::{bellman_ford, bubble_sort, levenshtein, one_hot_string, reference, transform_and_projection};
use crate::autodiff::{inject_gradient_fault, Tensor};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, Scope, DEFAULT_INSTANCES};
use crate::io::{loss_csv, parse_obj, write_pgm};
use crate::program::Mode;
use crate::supervision::{train, ExperimentConfig, ModelKind, TaskKind};

/// Exit code for a completed run.
pub const EXIT_OK: u8 = 0;
/// Exit code when a verification check fails.
pub const EXIT_CHECK_FAILED: u8 = 1;
/// Exit code for usage, input and configuration errors.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "algorelax", version, about = "Relaxed discrete algorithms and algorithmic supervision")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference gradient checks; prints a JSON report.
    Gradcheck(GradcheckArgs),
    /// Runs one algorithm on a single instance and writes its outputs.
    Demo(DemoArgs),
    /// Runs a supervision experiment from a JSON config.
    Train(TrainArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "all")]
    pub scope: Scope,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per check.
    #[arg(long, default_value_t = DEFAULT_INSTANCES)]
    pub instances: usize,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Deliberately corrupt one backward rule (self-test of the suite).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoAlgorithm {
    Sort,
    Levenshtein,
    #[value(name = "shortest_path", alias = "shortest-path")]
    ShortestPath,
    Render,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Relaxed,
    Hard,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererArg {
    Euclidean,
    #[value(name = "three_edges", alias = "three-edges")]
    ThreeEdges,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    pub algorithm: DemoAlgorithm,
    /// JSON instance (OBJ mesh for `render`); a seeded instance otherwise.
    pub input: Option<PathBuf>,
    /// Inverse temperature; each demo has its own default.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "demo_out")]
    pub out: PathBuf,
    /// Image side length for `render`.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub renderer: RendererArg,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Experiment config (JSON). Without it, `--task` selects the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = parse_model)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[arg(long, default_value = "train_out")]
    #[serde(skip)]
    pub out: PathBuf,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    parse_enum(s)
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    parse_enum(s)
}

/// Written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved config or demo parameters.
    pub config: Value,
    /// Config file, when one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    /// Command-line values that override the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overrides: Option<Value>,
    pub seed: u64,
    pub out: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    fn new(command: &str, config: Value, seed: u64, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            config_path: None,
            overrides: None,
            seed,
            out: out.display().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Io(e.to_string()))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T) -> Result<()> {
    fs::write(dir.join(name), to_json(v)?)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

/// Runs one parsed command and returns its exit code.
pub fn execute(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Demo(a) => cmd_demo(a),
        Command::Train(a) => cmd_train(a),
    }
}

/// Runs the gradient-check suites; exit code 1 if any check fails.
pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let fault: Option<&'static str> = match a.inject_fault.as_deref() {
        None => None,
        Some(name) => Some(Box::leak(name.to_string().into_boxed_str())),
    };
    inject_gradient_fault(fault);
    let report = run_gradcheck(a.scope, a.seed, a.instances);
    inject_gradient_fault(None);
    let text = to_json(&report)?;
    print!("{text}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("gradcheck.json"), &text)?;
        let config = json!({ "scope": a.scope.name(), "instances": a.instances });
        write_json(out, "manifest.json", &RunManifest::new("gradcheck", config, a.seed, out))?;
    }
    if !report.passed {
        eprintln!("gradient check failed: {}", report.failed.join(", "));
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(EXIT_OK)
}

fn modes(m: ModeArg) -> (bool, bool) {
    (m != ModeArg::Hard, m != ModeArg::Relaxed)
}

/// Runs a demo and writes its JSON, PGM and manifest files.
pub fn cmd_demo(a: &DemoArgs) -> Result<u8> {
    if let Some(b) = a.beta {
        crate::error::check_beta(b)?;
    }
    let input = a.input.as_deref().map(read_text).transpose()?;
    fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (name, result) = match a.algorithm {
        DemoAlgorithm::Sort => ("sort", demo_sort(a, input.as_deref(), &mut rng)?),
        DemoAlgorithm::Levenshtein => ("levenshtein", demo_levenshtein(a, input.as_deref())?),
        DemoAlgorithm::ShortestPath => ("shortest_path", demo_shortest_path(a, input.as_deref(), &mut rng)?),
        DemoAlgorithm::Render => ("render", demo_render(a, input.as_deref(), &mut rng)?),
    };
    let text = to_json(&result)?;
    print!("{text}");
    fs::write(a.out.join(format!("{name}.json")), &text)?;
    let config = json!({
        "algorithm": name,
        "input": a.input.as_ref().map(|p| p.display().to_string()),
        "beta": a.beta,
        "mode": a.mode,
        "resolution": a.resolution,
        "renderer": a.renderer,
    });
    write_json(&a.out, "manifest.json", &RunManifest::new("demo", config, a.seed, &a.out))?;
    Ok(EXIT_OK)
}

fn number_list(v: &Value, what: &str) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| Error::Parameter(format!("{what} must be an array of numbers")))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::Parameter(format!("{what} must contain only numbers"))))
        .collect()
}

/// Input: `[3, 1, 2]` or `{"values": [3, 1, 2]}`.
fn demo_sort(a: &DemoArgs, input: Option<&str>, rng: &mut ChaCha8Rng) -> Result<Value> {
    let values = match input {
        Some(text) => {
            let v = parse_json(text)?;
            number_list(v.get("values").unwrap_or(&v), "values")?
        }
        None => (0..6).map(|_| (rng.random_range(0.0..10.0_f64) * 100.0).round() / 100.0).collect(),
    };
    let beta = a.beta.unwrap_or(8.0);
    let scores = Tensor::vector(values.clone());
    let (relaxed, hard) = modes(a.mode);
    let mut out = json!({ "input": values, "beta": beta });
    if relaxed {
        let r = bubble_sort(&scores, beta, Mode::Relaxed)?;
        out["relaxed"] = json!({
            "sequence": r.relaxed_sequence.value(),
            "unsorted_probability": r.unsorted_probability.value(),
            "swap_probabilities": r.swap_probabilities.iter().map(Tensor::item).collect::<Vec<_>>(),
        });
    }
    if hard {
        let r = bubble_sort(&scores, beta, Mode::Hard)?;
        out["hard"] = json!({
            "sequence": r.relaxed_sequence.value(),
            "unsorted_probability": r.unsorted_probability.value(),
            "swaps": reference::bubble_sort(&values).1,
        });
    }
    Ok(out)
}

/// Input: `{"a": "kitten", "b": "sitting"}`; the alphabet is the set of
/// characters of both strings.
fn demo_levenshtein(a: &DemoArgs, input: Option<&str>) -> Result<Value> {
    let (sa, sb) = match input {
        Some(text) => {
            let v = parse_json(text)?;
            let s = |k: &str| {
                v.get(k)
                    .and_then(Value::as_str)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Parameter(format!("field `{k}` must be a string")))
            };
            (s("a")?, s("b")?)
        }
        None => ("kitten".to_string(), "sitting".to_string()),
    };
    let mut alphabet: Vec<char> = sa.chars().chain(sb.chars()).collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    if alphabet.is_empty() {
        return Err(Error::Parameter("both strings are empty".into()));
    }
    let code = |s: &str| -> Vec<usize> { s.chars().map(|c| alphabet.binary_search(&c).unwrap()).collect() };
    let (ca, cb) = (code(&sa), code(&sb));
    let k = alphabet.len();
    let (da, db) = (one_hot_string(&ca, k)?, one_hot_string(&cb, k)?);
    let beta = a.beta.unwrap_or(9.0);
    let (relaxed, hard) = modes(a.mode);
    let mut out = json!({ "a": sa, "b": sb, "beta": beta, "reference": reference::levenshtein(&ca, &cb) });
    for (on, mode, key) in [(relaxed, Mode::Relaxed, "relaxed"), (hard, Mode::Hard, "hard")] {
        if on {
            let r = levenshtein(&da, &db, beta, mode, true)?;
            let cols = db.len() + 1;
            let table: Vec<&[f64]> = r.dp_matrix.value().chunks(cols).collect();
            out[key] = json!({ "distance": r.distance.item(), "table": table });
        }
    }
    Ok(out)
}

fn rows(t: &Tensor) -> Vec<&[f64]> {
    t.value().chunks(*t.shape().last().unwrap_or(&1)).collect()
}

/// Input: `{"cost": [[...], ...]}`, a square grid of positive costs.
/// Without `--beta`, relaxed maps are written for both 1.5 and 0.25.
fn demo_shortest_path(a: &DemoArgs, input: Option<&str>, rng: &mut ChaCha8Rng) -> Result<Value> {
    let (n, cost) = match input {
        Some(text) => {
            let v = parse_json(text)?;
            let grid = v
                .get("cost")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Parameter("field `cost` must be an array of rows".into()))?;
            let n = grid.len();
            let mut flat = Vec::with_capacity(n * n);
            for r in grid {
                let row = number_list(r, "cost rows")?;
                if row.len() != n {
                    return Err(Error::Parameter(format!("cost grid must be square, got a row of {} in {n} rows", row.len())));
                }
                flat.extend(row);
            }
            (n, flat)
        }
        None => (8, (0..64).map(|_| (rng.random_range(0.0..2.5_f64)).exp()).collect()),
    };
    let cost_t = Tensor::new(&[n, n], cost.clone())?;
    let max = cost.iter().cloned().fold(f64::MIN, f64::max);
    write_pgm(&a.out.join("cost.pgm"), &cost_t.affine(1.0 / max, 0.0))?;
    let (relaxed, hard) = modes(a.mode);
    let (_, truth) = reference::grid_shortest_path(&cost, n);
    let mut out = json!({ "n": n, "cost": rows(&cost_t), "reference_cost": reference::path_cost(&cost, &truth) });
    if relaxed {
        let betas = a.beta.map_or(vec![1.5, 0.25], |b| vec![b]);
        let mut maps = Vec::new();
        for beta in betas {
            let r = bellman_ford(&cost_t, beta, Mode::Relaxed, None)?;
            write_pgm(&a.out.join(format!("path_beta_{beta}.pgm")), &r.path_map)?;
            maps.push(json!({ "beta": beta, "path_map": rows(&r.path_map), "warnings": r.report.warnings }));
        }
        out["relaxed"] = Value::Array(maps);
    }
    if hard {
        let r = bellman_ford(&cost_t, 1.0, Mode::Hard, None)?;
        write_pgm(&a.out.join("path_hard.pgm"), &r.path_map)?;
        let mask: Vec<bool> = r.path_map.value().iter().map(|v| *v == 1.0).collect();
        out["hard"] = json!({ "path_map": rows(&r.path_map), "path_cost": reference::path_cost(&cost, &mask) });
    }
    Ok(out)
}

/// Centers the mesh, scales it into the unit sphere and views it from
/// three units down the optical axis.
fn project_obj(text: &str) -> Result<Mesh2DProjection> {
    let mesh = parse_obj(text)?;
    if mesh.faces.is_empty() {
        return Err(Error::Parameter("mesh has no faces".into()));
    }
    let nv = mesh.vertices.len() as f64;
    let mut c = [0.0; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            c[k] += v[k] / nv;
        }
    }
    let radius = mesh
        .vertices
        .iter()
        .map(|v| (0..3).map(|k| (v[k] - c[k]).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
        .max(1e-12);
    let data = mesh.vertices.iter().flat_map(|v| (0..3).map(move |k| (v[k] - c[k]) / radius)).collect();
    let camera = Camera {
        translation: [0.0, 0.0, 3.0],
        ..Camera::identity(1.0)
    };
    transform_and_projection(&Tensor::new(&[mesh.vertices.len(), 3], data)?, &mesh.faces, &camera)
}

/// Input: an OBJ mesh; otherwise two seeded triangles.
fn demo_render(a: &DemoArgs, input: Option<&str>, rng: &mut ChaCha8Rng) -> Result<Value> {
    let mesh = match input {
        Some(text) => project_obj(text)?,
        None => {
            let tris: Vec<[[f64; 2]; 3]> = (0..2)
                .map(|_| [0; 3].map(|_| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)]))
                .collect();
            Mesh2DProjection::from_points(&tris)?
        }
    };
    let beta = a.beta.unwrap_or(200.0);
    let render = |mode| match a.renderer {
        RendererArg::Euclidean => rasterize_euclidean(&mesh, a.resolution, beta, mode),
        RendererArg::ThreeEdges => rasterize_three_edges(&mesh, a.resolution, beta, mode),
    };
    let (relaxed, hard) = modes(a.mode);
    let mut out = json!({ "triangles": mesh.len(), "resolution": a.resolution, "beta": beta, "renderer": a.renderer });
    for (on, mode, key) in [(relaxed, Mode::Relaxed, "relaxed"), (hard, Mode::Hard, "hard")] {
        if on {
            let r = render(mode)?;
            write_pgm(&a.out.join(format!("render_{key}.pgm")), &r.image)?;
            let v = r.image.value();
            out[key] = json!({
                "coverage": v.iter().sum::<f64>() / v.len() as f64,
                "partial_pixels": v.iter().filter(|p| **p > 0.0 && **p < 1.0).count(),
                "warnings": r.report.warnings,
            });
        }
    }
    Ok(out)
}

/// Loads the config (or task defaults), applies overrides, trains and
/// writes `metrics.json`, `loss.csv`, any images and the manifest.
pub fn cmd_train(a: &TrainArgs) -> Result<u8> {
    let mut cfg = match (&a.config, a.task) {
        (Some(path), _) => ExperimentConfig::from_json(&read_text(path)?)?,
        (None, Some(task)) => ExperimentConfig::new(task),
        (None, None) => return Err(Error::Parameter("either --config or --task is required".into())),
    };
    if let Some(task) = a.task {
        if task != cfg.task {
            return Err(Error::Parameter("field `task`: --task disagrees with the config file".into()));
        }
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.beta.is_some() {
        cfg.beta = a.beta;
    }
    if a.iterations.is_some() {
        cfg.iterations = a.iterations;
    }
    if a.learning_rate.is_some() {
        cfg.learning_rate = a.learning_rate;
    }
    if a.model.is_some() {
        cfg.model = a.model;
    }
    let resolved = cfg.resolve()?;
    let report = train(&resolved)?;
    fs::create_dir_all(&a.out)?;
    let metrics = to_json(&report)?;
    fs::write(a.out.join("metrics.json"), &metrics)?;
    fs::write(a.out.join("loss.csv"), loss_csv(&report.loss_trace))?;
    for (name, image) in &report.images {
        write_pgm(&a.out.join(format!("{name}.pgm")), image)?;
    }
    let config = serde_json::to_value(&resolved).map_err(|e| Error::Io(e.to_string()))?;
    let mut manifest = RunManifest::new("train", config, resolved.seed, &a.out);
    manifest.config_path = a.config.as_ref().map(|p| p.display().to_string());
    manifest.overrides = Some(serde_json::to_value(a).map_err(|e| Error::Io(e.to_string()))?);
    let mut manifest = serde_json::to_value(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    manifest["wall_clock_seconds"] = json!(report.wall_clock_seconds);
    write_json(&a.out, "manifest.json", &manifest)?;
    print!("{}", to_json(&json!({ "task": report.task, "metrics": report.metrics }))?);
    Ok(EXIT_OK)
}

