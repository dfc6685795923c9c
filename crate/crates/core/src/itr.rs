//! Individualized pairwise benefit (IPB) estimation from pair classifiers.
//!
//! Both pipelines train a classifier for the pair label `sigma(Y, V)` given
//! `(x, u)` and read the IPB off the diagonal, `p(+1 | x, x) - p(-1 | x, x)`:
//!
//! * full pairs: one classifier on all `m * n` cross-arm pairs;
//! * bagged: `b` classifiers, each on an iid sample of matched pairs whose
//!   size is Binomial(min(m, n), q), averaged.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_pair_budget, pair_scores, CovariateEncoding, TrialDataset, DEFAULT_PAIR_BUDGET};
use crate::error::{Error, Result};
use crate::forest::{ForestConfig, RandomForest};
use crate::knn::{KnnConfig, KnnModel};
use crate::learner::{ClassProbabilities, PairLearner, PairRows, PairTrainingSet, ProbabilisticClassifier};
use crate::score::{score, Score, ScoreSpec};
use crate::seed::{derive_seed, rng_for};

/// Anything that yields an IPB estimate for an encoded covariate vector.
pub trait IpbPredictor: Sync {
    fn ipb(&self, x: &[f64]) -> Result<f64>;

    /// `1` iff the estimated IPB is strictly positive.
    fn rule(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.ipb(x)? > 0.0))
    }
}

impl IpbPredictor for KnnModel {
    fn ipb(&self, x: &[f64]) -> Result<f64> {
        self.ipb_hat(x)
    }
}

impl<F> IpbPredictor for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn ipb(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaggingConfig {
    pub bags: usize,
    /// Subsampling probability; `None` means `min(m, n)^(-1/4)`.
    pub q: Option<f64>,
    pub seed: u64,
}

impl Default for BaggingConfig {
    fn default() -> Self {
        BaggingConfig {
            bags: 50,
            q: None,
            seed: 0,
        }
    }
}

impl BaggingConfig {
    pub fn q_for(&self, k: usize) -> f64 {
        self.q.unwrap_or_else(|| default_subsampling_probability(k))
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.bags == 0 {
            return Err(Error::InvalidValue("bag count must be at least 1".into()));
        }
        let q = self.q_for(k);
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidValue(format!("q must lie in (0, 1], got {q}")));
        }
        Ok(())
    }

    /// Seed of bag `v`; the subsample and the learner of that bag derive from it.
    pub fn bag_seed(&self, v: usize) -> u64 {
        derive_seed(self.seed, "bag", v as u64)
    }
}

/// `k^(-1/4)`, so that the expected bag size `k^(3/4)` still diverges.
pub fn default_subsampling_probability(k: usize) -> f64 {
    (k.max(1) as f64).powf(-0.25)
}

/// Control indices `alpha` (distinct, random order) matched position-wise
/// with experimental indices `beta` (distinct, increasing).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subsample {
    pub alpha: Vec<usize>,
    pub beta: Vec<usize>,
}

impl Subsample {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Draws `l ~ Binomial(min(m, n), q)` conditioned on `l >= 1`, a uniform
/// injection `alpha: [l] -> [m]` and a uniform increasing injection
/// `beta: [l] -> [n]`.
pub fn draw_subsample<R: Rng + ?Sized>(m: usize, n: usize, q: f64, rng: &mut R) -> Result<Subsample> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidValue(format!("q must lie in (0, 1], got {q}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Domain("both arms need at least one subject".into()));
    }
    let k = m.min(n);
    let binom = Binomial::new(k as u64, q).map_err(|e| Error::InvalidValue(e.to_string()))?;
    let l = loop {
        let l = binom.sample(rng) as usize;
        if l >= 1 {
            break l;
        }
    };
    let alpha = index::sample(rng, m, l).into_vec();
    let mut beta = index::sample(rng, n, l).into_vec();
    beta.sort_unstable();
    Ok(Subsample { alpha, beta })
}

/// Averages of per-bag classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaggedEnsemble<C> {
    pub learners: Vec<C>,
    /// Number of matched pairs each learner was trained on.
    pub sizes: Vec<usize>,
}

impl<C: ProbabilisticClassifier> BaggedEnsemble<C> {
    pub fn predict_pair(&self, x: &[f64], u: &[f64]) -> Result<ClassProbabilities> {
        let mut acc = [0.0; 3];
        for l in &self.learners {
            let p = l.predict_pair(x, u)?.to_array();
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        let b = self.learners.len() as f64;
        Ok(ClassProbabilities::from_array(acc.map(|a| a / b)))
    }

    /// Mean over bags of `p(+1) - p(-1)` at `(x, x)`.
    pub fn ipb(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for l in &self.learners {
            total += l.predict_pair(x, x)?.benefit();
        }
        Ok(total / self.learners.len() as f64)
    }
}

impl<C: ProbabilisticClassifier> IpbPredictor for BaggedEnsemble<C> {
    fn ipb(&self, x: &[f64]) -> Result<f64> {
        BaggedEnsemble::ipb(self, x)
    }
}

fn covariate_refs(data: &TrialDataset) -> (Vec<&[f64]>, Vec<&[f64]>) {
    (
        data.control().iter().map(|s| s.covariates.as_slice()).collect(),
        data.experimental().iter().map(|s| s.covariates.as_slice()).collect(),
    )
}

/// Trains `learner` on every cross-arm pair.
pub fn fit_full_pairs_with<L: PairLearner>(
    data: &TrialDataset,
    spec: &ScoreSpec,
    learner: &L,
    seed: u64,
    budget: u64,
) -> Result<L::Model> {
    check_pair_budget(data.m() as u128 * data.n() as u128, budget)?;
    let labels = pair_scores(data, spec)?;
    let (x, u) = covariate_refs(data);
    let set = PairTrainingSet::new(x, u, PairRows::Product { m: data.m(), n: data.n() }, labels)?;
    learner.fit_pairs(&set, seed)
}

/// The matched pairs `(alpha_i, beta_i)` with their scores.
pub fn matched_pairs(data: &TrialDataset, spec: &ScoreSpec, sub: &Subsample) -> Result<(Vec<(usize, usize)>, Vec<Score>)> {
    let rows: Vec<(usize, usize)> = sub.alpha.iter().copied().zip(sub.beta.iter().copied()).collect();
    let labels = rows
        .iter()
        .map(|&(i, j)| score(spec, &data.control()[i].outcomes, &data.experimental()[j].outcomes))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, labels))
}

/// One bag per seed; bags are trained in parallel and kept in seed order.
pub fn fit_bags_with_seeds<L>(
    data: &TrialDataset,
    spec: &ScoreSpec,
    q: f64,
    learner: &L,
    bag_seeds: &[u64],
) -> Result<BaggedEnsemble<L::Model>>
where
    L: PairLearner,
    L::Model: Send,
{
    data.check_spec(spec)?;
    if bag_seeds.is_empty() {
        return Err(Error::InvalidValue("bag count must be at least 1".into()));
    }
    let (x, u) = covariate_refs(data);
    let fitted = bag_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = rng_for(s, "subsample", 0);
            let sub = draw_subsample(data.m(), data.n(), q, &mut rng)?;
            let (rows, labels) = matched_pairs(data, spec, &sub)?;
            let set = PairTrainingSet::new(x.clone(), u.clone(), PairRows::Matched(rows), labels)?;
            let model = learner.fit_pairs(&set, derive_seed(s, "learner", 0))?;
            Ok((model, sub.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (learners, sizes) = fitted.into_iter().unzip();
    Ok(BaggedEnsemble { learners, sizes })
}

pub fn fit_bagged_with<L>(
    data: &TrialDataset,
    spec: &ScoreSpec,
    bag: &BaggingConfig,
    learner: &L,
) -> Result<BaggedEnsemble<L::Model>>
where
    L: PairLearner,
    L::Model: Send,
{
    let k = data.m().min(data.n());
    bag.validate(k)?;
    let seeds: Vec<u64> = (0..bag.bags).map(|v| bag.bag_seed(v)).collect();
    fit_bags_with_seeds(data, spec, bag.q_for(k), learner, &seeds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Knn,
    FullPairs,
    Bagged,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Knn => "knn",
            Variant::FullPairs => "full_pairs",
            Variant::Bagged => "bagged",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Estimator {
    Knn {
        model: KnnModel,
    },
    FullPairs {
        config: ForestConfig,
        forest: RandomForest,
    },
    Bagged {
        bagging: BaggingConfig,
        q: f64,
        base: ForestConfig,
        ensemble: BaggedEnsemble<RandomForest>,
    },
}

/// A fitted individualized treatment rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItrModel {
    pub(crate) estimator: Estimator,
    pub(crate) spec: ScoreSpec,
    pub(crate) encoding: CovariateEncoding,
}

impl ItrModel {
    pub fn from_parts(estimator: Estimator, spec: ScoreSpec, encoding: CovariateEncoding) -> Self {
        ItrModel {
            estimator,
            spec,
            encoding,
        }
    }

    pub fn variant(&self) -> Variant {
        match self.estimator {
            Estimator::Knn { .. } => Variant::Knn,
            Estimator::FullPairs { .. } => Variant::FullPairs,
            Estimator::Bagged { .. } => Variant::Bagged,
        }
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn spec(&self) -> &ScoreSpec {
        &self.spec
    }

    pub fn encoding(&self) -> &CovariateEncoding {
        &self.encoding
    }

    pub fn dim(&self) -> usize {
        self.encoding.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Class probabilities of the pair `(x, u)` on the encoded scale. For the
    /// kNN variant these are the label frequencies among neighbour pairs.
    pub fn pair_probabilities(&self, x: &[f64], u: &[f64]) -> Result<ClassProbabilities> {
        self.check_dim(x)?;
        self.check_dim(u)?;
        match &self.estimator {
            Estimator::Knn { model } => {
                let ci = model.control_neighbors(x)?;
                let ej = model.experimental_neighbors(u)?;
                let (ctrl, exp) = (model.data().control(), model.data().experimental());
                let mut counts = [0usize; 3];
                for &i in &ci {
                    for &j in &ej {
                        counts[score(&self.spec, &ctrl[i].outcomes, &exp[j].outcomes)?.class_index()] += 1;
                    }
                }
                let total = (ci.len() * ej.len()) as f64;
                Ok(ClassProbabilities::from_array(counts.map(|c| c as f64 / total)))
            }
            Estimator::FullPairs { forest, .. } => forest.predict_pair(x, u),
            Estimator::Bagged { ensemble, .. } => ensemble.predict_pair(x, u),
        }
    }

    /// IPB for an already encoded covariate vector.
    pub fn ipb_encoded(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let v = match &self.estimator {
            Estimator::Knn { model } => model.ipb_hat(x)?,
            Estimator::FullPairs { forest, .. } => forest.predict_pair(x, x)?.benefit(),
            Estimator::Bagged { ensemble, .. } => ensemble.ipb(x)?,
        };
        Ok(v)
    }

    pub fn rule_encoded(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.ipb_encoded(x)? > 0.0))
    }

    /// IPB for a raw covariate row given in the encoding's column order.
    pub fn ipb(&self, raw: &[&str]) -> Result<f64> {
        let row = self.encoding.encode(raw)?;
        self.ipb_encoded(&row.values)
    }

    pub fn rule(&self, raw: &[&str]) -> Result<u8> {
        Ok(u8::from(self.ipb(raw)? > 0.0))
    }
}

impl IpbPredictor for ItrModel {
    fn ipb(&self, x: &[f64]) -> Result<f64> {
        self.ipb_encoded(x)
    }
}

pub fn fit_knn(data: &TrialDataset, spec: &ScoreSpec, config: KnnConfig) -> Result<ItrModel> {
    let model = KnnModel::new(data.clone(), spec.clone(), config)?;
    Ok(ItrModel::from_parts(
        Estimator::Knn { model },
        spec.clone(),
        data.encoding().clone(),
    ))
}

pub fn fit_full_pairs(data: &TrialDataset, spec: &ScoreSpec, config: &ForestConfig) -> Result<ItrModel> {
    fit_full_pairs_with_budget(data, spec, config, DEFAULT_PAIR_BUDGET)
}

pub fn fit_full_pairs_with_budget(
    data: &TrialDataset,
    spec: &ScoreSpec,
    config: &ForestConfig,
    budget: u64,
) -> Result<ItrModel> {
    let forest = fit_full_pairs_with(data, spec, config, config.seed, budget)?;
    Ok(ItrModel::from_parts(
        Estimator::FullPairs {
            config: config.clone(),
            forest,
        },
        spec.clone(),
        data.encoding().clone(),
    ))
}

pub fn fit_bagged(
    data: &TrialDataset,
    spec: &ScoreSpec,
    bag: &BaggingConfig,
    base: &ForestConfig,
) -> Result<ItrModel> {
    let ensemble = fit_bagged_with(data, spec, bag, base)?;
    Ok(ItrModel::from_parts(
        Estimator::Bagged {
            bagging: bag.clone(),
            q: bag.q_for(data.m().min(data.n())),
            base: base.clone(),
            ensemble,
        },
        spec.clone(),
        data.encoding().clone(),
    ))
}
