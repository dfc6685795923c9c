//! Two-sample conditional U-statistic built on nearest neighbours.
//!
//! `delta_hat(x, u)` averages the pair score over the `c` controls nearest to
//! `x` crossed with the `e` experimental subjects nearest to `u`, i.e. all
//! selected pairs get weight `1 / (c e)`. Distance ties are broken by the
//! original subject index, lower index first.

use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::score::{score, ScoreSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Chebyshev distance, `max_k |a_k - b_k|`.
    MaxNorm,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Metric::MaxNorm => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        }
    }
}

/// Neighbour counts: `c` controls and `e` experimental subjects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub c: usize,
    pub e: usize,
    #[serde(default)]
    pub metric: Metric,
}

pub const DEFAULT_NEIGHBOR_EXPONENT: f64 = 0.6;

/// `ceil(m^0.6)` and `ceil(n^0.6)`, clamped to the arm sizes.
pub fn default_neighbor_counts(m: usize, n: usize) -> (usize, usize) {
    neighbor_counts_with_exponent(m, n, DEFAULT_NEIGHBOR_EXPONENT)
}

pub fn neighbor_counts_with_exponent(m: usize, n: usize, exponent: f64) -> (usize, usize) {
    let count = |size: usize| -> usize {
        let t = (size.max(1) as f64).powf(exponent);
        // Exact powers such as 1024^0.6 = 64 must not round up.
        let r = t.round();
        let k = if (t - r).abs() <= 1e-9 * r.max(1.0) { r } else { t.ceil() };
        (k as usize).clamp(1, size.max(1))
    };
    (count(m), count(n))
}

/// Indices of the `k` points closest to `query`, sorted by distance then index.
pub fn neighbors(points: &[Vec<f64>], query: &[f64], k: usize, metric: Metric) -> Result<Vec<usize>> {
    let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    neighbors_of(&refs, query, k, metric)
}

pub(crate) fn neighbors_of(points: &[&[f64]], query: &[f64], k: usize, metric: Metric) -> Result<Vec<usize>> {
    if k == 0 || k > points.len() {
        return Err(Error::Domain(format!(
            "neighbour count {k} must lie in 1..={}",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| p.len() != query.len()) {
        return Err(Error::Shape {
            expected: p.len(),
            found: query.len(),
        });
    }
    let mut keyed: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (metric.distance(p, query), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < keyed.len() {
        keyed.select_nth_unstable_by(k - 1, cmp);
        keyed.truncate(k);
    }
    keyed.sort_unstable_by(cmp);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    data: TrialDataset,
    config: KnnConfig,
    spec: ScoreSpec,
}

impl KnnModel {
    pub fn new(data: TrialDataset, spec: ScoreSpec, config: KnnConfig) -> Result<Self> {
        data.check_spec(&spec)?;
        if config.c == 0 || config.c > data.m() {
            return Err(Error::Domain(format!(
                "control neighbour count c = {} must lie in 1..={}",
                config.c,
                data.m()
            )));
        }
        if config.e == 0 || config.e > data.n() {
            return Err(Error::Domain(format!(
                "experimental neighbour count e = {} must lie in 1..={}",
                config.e,
                data.n()
            )));
        }
        Ok(KnnModel { data, config, spec })
    }

    /// Uses `default_neighbor_counts` for the dataset's arm sizes.
    pub fn with_default_counts(data: TrialDataset, spec: ScoreSpec, metric: Metric) -> Result<Self> {
        let (c, e) = default_neighbor_counts(data.m(), data.n());
        KnnModel::new(data, spec, KnnConfig { c, e, metric })
    }

    pub fn config(&self) -> &KnnConfig {
        &self.config
    }

    pub fn data(&self) -> &TrialDataset {
        &self.data
    }

    pub fn spec(&self) -> &ScoreSpec {
        &self.spec
    }

    pub fn control_neighbors(&self, x: &[f64]) -> Result<Vec<usize>> {
        let pts: Vec<&[f64]> = self.data.control().iter().map(|s| s.covariates.as_slice()).collect();
        neighbors_of(&pts, x, self.config.c, self.config.metric)
    }

    pub fn experimental_neighbors(&self, u: &[f64]) -> Result<Vec<usize>> {
        let pts: Vec<&[f64]> = self
            .data
            .experimental()
            .iter()
            .map(|s| s.covariates.as_slice())
            .collect();
        neighbors_of(&pts, u, self.config.e, self.config.metric)
    }

    pub fn delta_hat(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let ci = self.control_neighbors(x)?;
        let ej = self.experimental_neighbors(u)?;
        let (ctrl, exp) = (self.data.control(), self.data.experimental());
        let mut total = 0i64;
        for &i in &ci {
            for &j in &ej {
                total += i64::from(score(&self.spec, &ctrl[i].outcomes, &exp[j].outcomes)?.value());
            }
        }
        Ok(total as f64 / (ci.len() * ej.len()) as f64)
    }

    pub fn ipb_hat(&self, x: &[f64]) -> Result<f64> {
        self.delta_hat(x, x)
    }

    pub fn rule(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.ipb_hat(x)? > 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::PriorityLevel;

    fn binary() -> ScoreSpec {
        ScoreSpec::new(vec![PriorityLevel::binary()]).unwrap()
    }

    #[test]
    fn index_breaks_distance_ties() {
        let pts = vec![vec![2.0], vec![1.0], vec![-1.0]];
        assert_eq!(neighbors(&pts, &[0.0], 2, Metric::Euclidean).unwrap(), vec![1, 2]);
        assert_eq!(neighbors(&pts, &[0.0], 3, Metric::Euclidean).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn exact_match_wins_and_duplicates_keep_lowest_index() {
        let pts = vec![vec![5.0, 5.0], vec![1.0, 2.0], vec![1.0, 2.0]];
        assert_eq!(neighbors(&pts, &[1.0, 2.0], 1, Metric::MaxNorm).unwrap(), vec![1]);
        assert!(neighbors(&pts, &[1.0, 2.0], 4, Metric::Euclidean).is_err());
        assert!(neighbors(&pts, &[1.0, 2.0], 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn default_counts() {
        assert_eq!(default_neighbor_counts(1, 1), (1, 1));
        assert_eq!(default_neighbor_counts(1024, 1024), (64, 64));
        assert_eq!(default_neighbor_counts(400, 400), (37, 37));
        assert_eq!(default_neighbor_counts(2, 3), (2, 2));
    }

    fn toy() -> TrialDataset {
        TrialDataset::from_arrays(
            vec![vec![0.0], vec![3.0]],
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.5], vec![10.0]],
            vec![vec![1.0], vec![0.0]],
        )
        .unwrap()
    }

    #[test]
    fn full_neighbourhoods_give_net_benefit() {
        let data = toy();
        let theta = crate::data::net_benefit(&data, &binary()).unwrap();
        let m = KnnModel::new(data, binary(), KnnConfig { c: 2, e: 2, metric: Metric::Euclidean }).unwrap();
        assert_eq!(m.delta_hat(&[7.0], &[-4.0]).unwrap(), theta);
        assert_eq!(m.ipb_hat(&[100.0]).unwrap(), theta);
    }

    #[test]
    fn single_neighbour_pair_score() {
        let m = KnnModel::new(toy(), binary(), KnnConfig { c: 1, e: 1, metric: Metric::Euclidean }).unwrap();
        // nearest control to 2.9 is index 1 (y=1); nearest experimental to 9 is index 1 (v=0)
        assert_eq!(m.delta_hat(&[2.9], &[9.0]).unwrap(), -1.0);
        assert_eq!(m.delta_hat(&[0.1], &[0.0]).unwrap(), 1.0);
        assert_eq!(m.rule(&[0.1]).unwrap(), 1);
    }

    #[test]
    fn hand_weighted_mean() {
        // c=1, e=2: control 0 (y=0) is nearest to x=0, both experimentals
        // used: scores sigma(0,1)=+1, sigma(0,0)=0, mean 0.5.
        let m = KnnModel::new(toy(), binary(), KnnConfig { c: 1, e: 2, metric: Metric::Euclidean }).unwrap();
        assert_eq!(m.delta_hat(&[0.0], &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn invalid_counts_rejected() {
        assert!(KnnModel::new(toy(), binary(), KnnConfig { c: 3, e: 1, metric: Metric::Euclidean }).is_err());
        assert!(KnnModel::new(toy(), binary(), KnnConfig { c: 1, e: 0, metric: Metric::Euclidean }).is_err());
    }

    #[test]
    fn rule_boundary_is_strict() {
        // Balanced outcomes give IPB exactly 0.
        let data = TrialDataset::from_arrays(
            vec![vec![0.0], vec![0.0]],
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap();
        let m = KnnModel::new(data, binary(), KnnConfig { c: 2, e: 2, metric: Metric::Euclidean }).unwrap();
        assert_eq!(m.ipb_hat(&[0.0]).unwrap(), 0.0);
        assert_eq!(m.rule(&[0.0]).unwrap(), 0);
    }
}
