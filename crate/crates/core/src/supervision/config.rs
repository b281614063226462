use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Sorting,
    ShortestPath,
    Levenshtein,
    Silhouette,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One trainable value per item (scores, or triangle vertices).
    DirectParameters,
    /// A single affine layer over item features.
    Linear,
    /// One hidden sigmoid layer over item features.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SilhouetteLoss {
    L2,
    SoftIou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererKind {
    Euclidean,
    ThreeEdges,
}

/// Declarative description of one supervision run. Unset fields take
/// task-specific defaults in [`ExperimentConfig::resolve`]; an unset `beta`
/// uses the square-root access-count heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    /// Training instances per update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Sorting: sequence length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Sorting with feature models: number of training items the sequences
    /// draw from. Direct scores give every sequence its own items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub string_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triangles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<SilhouetteLoss>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renderer: Option<RendererKind>,
    /// Start from the parameters that generated the data.
    #[serde(default)]
    pub oracle_init: bool,
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parameter(format!("field `{name}`: {msg}"))
}

fn positive(name: &str, v: Option<usize>) -> Result<()> {
    match v {
        Some(0) => Err(field(name, "must be positive")),
        _ => Ok(()),
    }
}

impl ExperimentConfig {
    pub fn new(task: TaskKind) -> Self {
        ExperimentConfig {
            task,
            beta: None,
            learning_rate: None,
            iterations: None,
            seed: 0,
            model: None,
            batch_size: None,
            n: None,
            pool_size: None,
            train_instances: None,
            test_instances: None,
            grid_size: None,
            feature_dim: None,
            string_length: None,
            num_classes: None,
            resolution: None,
            triangles: None,
            loss: None,
            renderer: None,
            oracle_init: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    /// Validates the config and fills every unset field except `beta` with
    /// the task default.
    pub fn resolve(&self) -> Result<Self> {
        let mut c = self.clone();
        let d = |v: &mut Option<usize>, x: usize| *v = Some(v.unwrap_or(x));
        match c.task {
            TaskKind::Sorting => {
                c.model.get_or_insert(ModelKind::DirectParameters);
                d(&mut c.n, 5);
                d(&mut c.pool_size, 100);
                d(&mut c.train_instances, 100);
                d(&mut c.test_instances, 100);
                d(&mut c.feature_dim, 4);
                d(&mut c.iterations, 2000);
                d(&mut c.batch_size, 25);
            }
            TaskKind::ShortestPath => {
                c.model.get_or_insert(ModelKind::Linear);
                d(&mut c.grid_size, 6);
                d(&mut c.feature_dim, 3);
                d(&mut c.train_instances, 200);
                d(&mut c.test_instances, 100);
                d(&mut c.iterations, 3000);
                d(&mut c.batch_size, 4);
            }
            TaskKind::Levenshtein => {
                c.model.get_or_insert(ModelKind::Linear);
                d(&mut c.string_length, 8);
                d(&mut c.num_classes, 2);
                d(&mut c.feature_dim, 8);
                d(&mut c.train_instances, 200);
                d(&mut c.test_instances, 500);
                d(&mut c.iterations, 300);
                d(&mut c.batch_size, 8);
            }
            TaskKind::Silhouette => {
                c.model.get_or_insert(ModelKind::DirectParameters);
                d(&mut c.resolution, 32);
                d(&mut c.triangles, 1);
                d(&mut c.iterations, 300);
                c.loss.get_or_insert(SilhouetteLoss::L2);
                c.renderer.get_or_insert(RendererKind::Euclidean);
            }
        }
        let model = c.model.expect("set above");
        c.learning_rate.get_or_insert(match model {
            ModelKind::Mlp => 1e-4,
            _ => 1e-2,
        });
        let allowed: &[ModelKind] = match c.task {
            TaskKind::Sorting => &[ModelKind::DirectParameters, ModelKind::Linear, ModelKind::Mlp],
            TaskKind::ShortestPath | TaskKind::Levenshtein => &[ModelKind::Linear, ModelKind::Mlp],
            TaskKind::Silhouette => &[ModelKind::DirectParameters],
        };
        if !allowed.contains(&model) {
            return Err(field("model", format!("{model:?} is not available for {:?}", c.task)));
        }
        if let Some(b) = c.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(field("beta", format!("must be positive and finite, got {b}")));
            }
        }
        let lr = c.learning_rate.expect("set above");
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(field("learning_rate", format!("must be positive and finite, got {lr}")));
        }
        for (name, v) in [
            ("batch_size", c.batch_size),
            ("n", c.n),
            ("pool_size", c.pool_size),
            ("train_instances", c.train_instances),
            ("test_instances", c.test_instances),
            ("grid_size", c.grid_size),
            ("feature_dim", c.feature_dim),
            ("string_length", c.string_length),
            ("num_classes", c.num_classes),
            ("resolution", c.resolution),
            ("triangles", c.triangles),
        ] {
            positive(name, v)?;
        }
        if c.task == TaskKind::Sorting && c.n > c.pool_size {
            return Err(field("n", "sequence length exceeds pool_size"));
        }
        if c.task == TaskKind::Sorting && c.n < Some(2) {
            return Err(field("n", "sequences need at least two items"));
        }
        if c.task == TaskKind::ShortestPath && c.grid_size < Some(2) {
            return Err(field("grid_size", "grids must be at least 2 x 2"));
        }
        if c.task == TaskKind::Levenshtein && !(2..=8).contains(&c.num_classes.unwrap_or(0)) {
            return Err(field("num_classes", "must lie in 2..=8"));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let c = ExperimentConfig::from_json(r#"{"task": "sorting", "beta": 8.0, "seed": 3}"#).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.n, Some(5));
        assert_eq!(r.model, Some(ModelKind::DirectParameters));
        assert_eq!(r.learning_rate, Some(1e-2));
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), r);
    }

    #[test]
    fn field_level_errors() {
        let e = ExperimentConfig::from_json(r#"{"task": "sorting", "bogus": 1}"#).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }), "{e}");
        let e = ExperimentConfig::from_json(r#"{"task": "sorting", "beta": -1}"#)
            .unwrap()
            .resolve()
            .unwrap_err();
        assert!(e.to_string().contains("`beta`"));
        let mut c = ExperimentConfig::new(TaskKind::Silhouette);
        c.model = Some(ModelKind::Linear);
        assert!(c.resolve().unwrap_err().to_string().contains("`model`"));
        let mut c = ExperimentConfig::new(TaskKind::Sorting);
        c.n = Some(0);
        assert!(c.resolve().unwrap_err().to_string().contains("`n`"));
    }
}
