//! Individualized treatment rules for prioritized composite outcomes.
//!
//! Outcomes are compared with a generalized pairwise comparison score, and a
//! treatment rule recommends the experimental arm wherever the estimated
//! individualized pairwise benefit is positive.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod itr;
pub mod knn;
pub mod learner;
pub mod persist;
pub mod score;
pub mod seed;
pub mod sim;

pub use data::{net_benefit, Arm, Subject, TrialDataset};
pub use error::{Error, Result};
pub use forest::{ForestConfig, RandomForest};
pub use itr::{BaggingConfig, IpbPredictor, ItrModel, Variant};
pub use knn::{KnnConfig, KnnModel, Metric};
pub use learner::{ClassProbabilities, PairLearner, ProbabilisticClassifier};
pub use score::{score, Direction, OutcomeKind, PriorityLevel, Score, ScoreSpec};
