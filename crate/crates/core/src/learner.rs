//! Probabilistic classifiers over pair features `(x, u)` with labels in
//! `{-1, 0, +1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::Score;

/// Class probabilities in the order `(-1, 0, +1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p_minus: f64,
    pub p_zero: f64,
    pub p_plus: f64,
}

impl ClassProbabilities {
    pub fn from_array(p: [f64; 3]) -> Self {
        ClassProbabilities {
            p_minus: p[0],
            p_zero: p[1],
            p_plus: p[2],
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.p_minus, self.p_zero, self.p_plus]
    }

    pub fn get(&self, s: Score) -> f64 {
        self.to_array()[s.class_index()]
    }

    /// `p(+1) - p(-1)`.
    pub fn benefit(&self) -> f64 {
        self.p_plus - self.p_minus
    }

    pub fn is_valid(&self) -> bool {
        let p = self.to_array();
        p.iter().all(|x| (0.0..=1.0).contains(x)) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

pub trait ProbabilisticClassifier: Send + Sync {
    fn n_features(&self) -> usize;

    fn predict_proba(&self, features: &[f64]) -> Result<ClassProbabilities>;

    /// Probabilities for the pair `(x, u)`; features are `x` followed by `u`.
    fn predict_pair(&self, x: &[f64], u: &[f64]) -> Result<ClassProbabilities> {
        let mut f = Vec::with_capacity(x.len() + u.len());
        f.extend_from_slice(x);
        f.extend_from_slice(u);
        self.predict_proba(&f)
    }
}

/// Which `(control, experimental)` index pairs make up a training set.
#[derive(Clone, Debug, PartialEq)]
pub enum PairRows {
    /// Every control against every experimental subject, control index outer.
    Product { m: usize, n: usize },
    /// An explicit list of matched pairs.
    Matched(Vec<(usize, usize)>),
}

impl PairRows {
    pub fn len(&self) -> usize {
        match self {
            PairRows::Product { m, n } => m * n,
            PairRows::Matched(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> (usize, usize) {
        match self {
            PairRows::Product { n, .. } => (row / n, row % n),
            PairRows::Matched(v) => v[row],
        }
    }
}

/// Pair-feature training data without materializing the `(x, u)` rows.
#[derive(Clone, Debug)]
pub struct PairTrainingSet<'a> {
    pub x: Vec<&'a [f64]>,
    pub u: Vec<&'a [f64]>,
    pub rows: PairRows,
    pub labels: Vec<Score>,
}

impl<'a> PairTrainingSet<'a> {
    pub fn new(
        x: Vec<&'a [f64]>,
        u: Vec<&'a [f64]>,
        rows: PairRows,
        labels: Vec<Score>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::Shape {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::Domain("cannot train on an empty pair set".into()));
        }
        let d = x.first().map_or(0, |r| r.len());
        if x.iter().chain(&u).any(|r| r.len() != d) {
            return Err(Error::Domain("covariate rows differ in length".into()));
        }
        match &rows {
            PairRows::Product { m, n } if *m != x.len() || *n != u.len() => {
                return Err(Error::Shape {
                    expected: m * n,
                    found: x.len() * u.len(),
                })
            }
            PairRows::Matched(v) if v.iter().any(|&(i, j)| i >= x.len() || j >= u.len()) => {
                return Err(Error::Domain("matched pair index out of range".into()))
            }
            _ => {}
        }
        Ok(PairTrainingSet { x, u, rows, labels })
    }

    /// Covariate dimension `d`; features have length `2d`.
    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_row(&self, row: usize) -> Vec<f64> {
        let (i, j) = self.rows.get(row);
        let mut f = self.x[i].to_vec();
        f.extend_from_slice(self.u[j]);
        f
    }
}

/// A training recipe that turns a pair set into a classifier. Any learner
/// satisfying this contract can back the full-pairs and bagged pipelines.
pub trait PairLearner: Sync {
    type Model: ProbabilisticClassifier;

    fn fit_pairs(&self, pairs: &PairTrainingSet<'_>, seed: u64) -> Result<Self::Model>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benefit_is_plus_minus_difference() {
        let p = ClassProbabilities::from_array([0.1, 0.3, 0.6]);
        assert!((p.benefit() - 0.5).abs() < 1e-15);
        assert!(p.is_valid());
        assert_eq!(p.get(Score::Neutral), 0.3);
        assert_eq!(ClassProbabilities::from_array([0.2, 0.6, 0.2]).benefit(), 0.0);
    }

    #[test]
    fn product_rows_index_control_major() {
        let rows = PairRows::Product { m: 2, n: 3 };
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.get(4), (1, 1));
    }

    #[test]
    fn training_set_validation() {
        let a = [1.0];
        let b = [2.0];
        let x = vec![&a[..]];
        let u = vec![&b[..]];
        assert!(PairTrainingSet::new(x.clone(), u.clone(), PairRows::Product { m: 1, n: 1 }, vec![])
            .is_err());
        assert!(PairTrainingSet::new(
            x.clone(),
            u.clone(),
            PairRows::Matched(vec![(0, 1)]),
            vec![Score::Neutral]
        )
        .is_err());
        let set = PairTrainingSet::new(x, u, PairRows::Matched(vec![(0, 0)]), vec![Score::Neutral])
            .unwrap();
        assert_eq!(set.feature_row(0), vec![1.0, 2.0]);
    }
}
