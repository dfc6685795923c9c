//! TOML run configuration shared by the CLI subcommands.
//!
//! ```toml
//! seed = 7
//! method = "forest"
//!
//! [data]
//! arm = "arm"
//! outcomes = ["y1", "y2"]
//! covariates = [{ name = "age" }, { name = "site", kind = "categorical" }]
//!
//! [[score]]
//! kind = "binary"
//!
//! [[score]]
//! kind = "continuous"
//! threshold = 3.0
//!
//! [forest]
//! n_trees = 100
//! ```
//!
//! Unknown keys are rejected. Forest and bagging seeds are derived from the
//! top-level `seed`; the `seed` fields of those sections are not consulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CsvSchema, DEFAULT_PAIR_BUDGET};
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_BOOTSTRAP, DEFAULT_CALIBRATION_BINS, DEFAULT_FOLDS};
use crate::forest::ForestConfig;
use crate::itr::BaggingConfig;
use crate::knn::{Metric, DEFAULT_NEIGHBOR_EXPONENT};
use crate::score::{PriorityLevel, ScoreSpec};
use crate::sim::{Method, Pipeline};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnSettings {
    pub c: Option<usize>,
    pub e: Option<usize>,
    pub exponent: f64,
    pub metric: Metric,
}

impl Default for KnnSettings {
    fn default() -> Self {
        KnnSettings {
            c: None,
            e: None,
            exponent: DEFAULT_NEIGHBOR_EXPONENT,
            metric: Metric::Euclidean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSettings {
    pub folds: usize,
    pub bootstrap: usize,
    pub calibration_bins: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            folds: DEFAULT_FOLDS,
            bootstrap: DEFAULT_BOOTSTRAP,
            calibration_bins: DEFAULT_CALIBRATION_BINS,
        }
    }
}

fn default_budget() -> u64 {
    DEFAULT_PAIR_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_budget")]
    pub pair_budget: u64,
    pub data: CsvSchema,
    /// Priority levels, highest first.
    pub score: Vec<PriorityLevel>,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default)]
    pub bagging: BaggingConfig,
    #[serde(default)]
    pub knn: KnnSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn score_spec(&self) -> Result<ScoreSpec> {
        ScoreSpec::new(self.score.clone())
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.score_spec()?;
        if spec.len() != self.data.outcomes.len() {
            return Err(Error::Config(format!(
                "{} score levels but {} outcome columns",
                spec.len(),
                self.data.outcomes.len()
            )));
        }
        if self.data.covariates.is_empty() {
            return Err(Error::Config("at least one covariate column is required".into()));
        }
        if !(self.knn.exponent > 0.0 && self.knn.exponent <= 1.0) {
            return Err(Error::Config(format!("knn exponent must lie in (0, 1], got {}", self.knn.exponent)));
        }
        if self.knn.c == Some(0) || self.knn.e == Some(0) {
            return Err(Error::Config("knn neighbour counts must be at least 1".into()));
        }
        if self.evaluation.folds < 2 || self.evaluation.bootstrap < 2 || self.evaluation.calibration_bins < 2 {
            return Err(Error::Config("folds, bootstrap and calibration_bins must each be at least 2".into()));
        }
        if self.bagging.bags == 0 {
            return Err(Error::Config("bagging.bags must be at least 1".into()));
        }
        if let Some(q) = self.bagging.q {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config(format!("bagging.q must lie in (0, 1], got {q}")));
            }
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 || self.forest.mtry == Some(0) {
            return Err(Error::Config("forest n_trees, min_leaf and mtry must be at least 1".into()));
        }
        Ok(())
    }

    /// The estimation pipeline selected by `method`.
    pub fn pipeline(&self) -> Pipeline {
        match self.method {
            Method::Forest => Pipeline::FullPairs { forest: self.forest.clone() },
            Method::Bagged => Pipeline::Bagged {
                bagging: self.bagging.clone(),
                forest: self.forest.clone(),
            },
            Method::Knn => Pipeline::Knn {
                c: self.knn.c,
                e: self.knn.e,
                exponent: self.knn.exponent,
                metric: self.knn.metric,
            },
        }
    }
}
