//! Synthetic trials with known pairwise benefit.
//!
//! Eight correlated covariates come from `Z ~ N(0, O D O^T)` with
//! `D = diag(1 + 0.3 i)` and a Haar-distributed rotation `O`:
//! `X1 = Z1`, `X2..X4 = exp(Z2..Z4)`, `X5..X8 = 1{Z5..Z8 > 0}`, plus the
//! intercept `X0 = 1`. Two outcome models are available:
//!
//! * scenario one, two binary outcomes drawn jointly from a softmax over the
//!   categories `11, 10, 01, 00` (coefficients `a11, a10, a01` for control,
//!   `b11, b10, b01` for treated, category `00` pinned at zero);
//! * scenario two, a Bernoulli outcome `Y1` with `P(Y1 = 1) = 1 / (1 + exp(a.x))`
//!   followed by `Y2 | Y1 ~ Binomial(25, 1 / (1 + exp(b.x + Y1 g.x)))`, and
//!   `(t, k, r)` in place of `(a, b, g)` under treatment. It is scored with a
//!   binary level and then a continuous level with threshold 3.
//!
//! Both outcome laws have finite support, so the oracle `Delta(x, u)` is an
//! exact double sum over it.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_against_oracle, mean, sample_sd, CalibrationBin, MetricsReport, DEFAULT_CALIBRATION_BINS};
use crate::forest::ForestConfig;
use crate::itr::{fit_bagged, fit_full_pairs, fit_knn, BaggingConfig, ItrModel};
use crate::knn::{neighbor_counts_with_exponent, KnnConfig, Metric, DEFAULT_NEIGHBOR_EXPONENT};
use crate::score::{score, Direction, PriorityLevel, ScoreSpec};
use crate::seed::{derive_seed, rng_for};

/// Latent Gaussian dimension.
pub const LATENT_DIM: usize = 8;
/// Covariate vector length including the intercept.
pub const COVARIATE_DIM: usize = 9;
pub const BINOMIAL_TRIALS: u64 = 25;
pub const SCENARIO_TWO_DELTA: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    One,
    Two,
}

impl Scenario {
    pub fn from_number(k: u8) -> Result<Self> {
        match k {
            1 => Ok(Scenario::One),
            2 => Ok(Scenario::Two),
            _ => Err(Error::InvalidValue(format!("scenario must be 1 or 2, got {k}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Scenario::One => 1,
            Scenario::Two => 2,
        }
    }

    pub fn score_spec(self) -> ScoreSpec {
        let levels = match self {
            Scenario::One => vec![PriorityLevel::binary(), PriorityLevel::binary()],
            Scenario::Two => vec![
                PriorityLevel::binary(),
                PriorityLevel::continuous(Direction::HigherIsBetter, SCENARIO_TWO_DELTA)
                    .expect("positive threshold"),
            ],
        };
        ScoreSpec::new(levels).expect("non-empty")
    }

    /// All outcome vectors with positive probability, in law order.
    pub fn support(self) -> Vec<[f64; 2]> {
        match self {
            Scenario::One => vec![[1.0, 1.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]],
            Scenario::Two => (0..2)
                .flat_map(|a| (0..=BINOMIAL_TRIALS).map(move |k| [a as f64, k as f64]))
                .collect(),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub scenario: Scenario,
    pub seed: u64,
    /// Row-major 8x8 orthogonal matrix.
    pub rotation: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Six rows of nine coefficients, in the order listed in the module docs.
    pub coefficients: Vec<Vec<f64>>,
    /// Continuous-level threshold of the scenario's score (0 for scenario one).
    pub delta: f64,
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of `diag(R)` folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn make_params(scenario: Scenario, seed: u64) -> ScenarioParams {
    let o = haar_orthogonal(LATENT_DIM, &mut rng_for(seed, "rotation", 0));
    let mut crng = rng_for(seed, "coefficients", 0);
    let unif = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
    let coefficients = (0..6)
        .map(|_| (0..COVARIATE_DIM).map(|_| unif.sample(&mut crng)).collect())
        .collect();
    ScenarioParams {
        scenario,
        seed,
        rotation: (0..LATENT_DIM).map(|i| o.row(i).iter().copied().collect()).collect(),
        eigenvalues: (1..=LATENT_DIM).map(|i| 1.0 + 0.3 * i as f64).collect(),
        coefficients,
        delta: match scenario {
            Scenario::One => 0.0,
            Scenario::Two => SCENARIO_TWO_DELTA,
        },
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn logistic_decreasing(t: f64) -> f64 {
    1.0 / (1.0 + t.exp())
}

/// `C(n, k) p^k (1 - p)^(n - k)` for `k = 0..=n`.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let mut coef = 1.0f64;
    (0..=n)
        .map(|k| {
            if k > 0 {
                coef = coef * (n - k + 1) as f64 / k as f64;
            }
            coef * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        })
        .collect()
}

impl ScenarioParams {
    pub fn rotation_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(LATENT_DIM, LATENT_DIM, |i, j| self.rotation[i][j])
    }

    /// `O D O^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let o = self.rotation_matrix();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(self.eigenvalues.clone()));
        &o * d * o.transpose()
    }

    /// Sorted eigenvalues of the covariance, recomputed numerically.
    pub fn covariance_spectrum(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.covariance()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Latent Gaussian draw `O D^(1/2) eps`.
    pub fn sample_latent<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; LATENT_DIM] {
        let eps: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut z = [0.0; LATENT_DIM];
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = dot(&self.rotation[i], &eps);
        }
        z
    }

    pub fn sample_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        covariates_from_latent(&self.sample_latent(rng))
    }

    fn block(&self, k: usize) -> &[f64] {
        &self.coefficients[k]
    }

    /// Law of the outcome under control at `x`, indexed like `Scenario::support`.
    pub fn control_law(&self, x: &[f64]) -> Vec<f64> {
        self.law(x, 0)
    }

    /// Law of the outcome under treatment at `u`.
    pub fn treated_law(&self, u: &[f64]) -> Vec<f64> {
        self.law(u, 3)
    }

    fn law(&self, x: &[f64], offset: usize) -> Vec<f64> {
        match self.scenario {
            Scenario::One => {
                let t = [
                    dot(self.block(offset), x),
                    dot(self.block(offset + 1), x),
                    dot(self.block(offset + 2), x),
                    0.0,
                ];
                let mx = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e = t.map(|v| (v - mx).exp());
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            }
            Scenario::Two => {
                let (p1, p2) = self.scenario_two_probs(x, offset);
                let mut out = Vec::with_capacity(2 * (BINOMIAL_TRIALS as usize + 1));
                for (a, w) in [(0usize, 1.0 - p1), (1, p1)] {
                    out.extend(binomial_pmf(BINOMIAL_TRIALS, p2[a]).into_iter().map(|pk| w * pk));
                }
                out
            }
        }
    }

    /// `P(Y1 = 1)` and the binomial success probability given `Y1 = 0, 1`.
    fn scenario_two_probs(&self, x: &[f64], offset: usize) -> (f64, [f64; 2]) {
        let p1 = logistic_decreasing(dot(self.block(offset), x));
        let base = dot(self.block(offset + 1), x);
        let inter = dot(self.block(offset + 2), x);
        (p1, [logistic_decreasing(base), logistic_decreasing(base + inter)])
    }

    pub fn sample_control_outcome<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> [f64; 2] {
        self.sample_outcome(x, 0, rng)
    }

    pub fn sample_treated_outcome<R: Rng + ?Sized>(&self, u: &[f64], rng: &mut R) -> [f64; 2] {
        self.sample_outcome(u, 3, rng)
    }

    fn sample_outcome<R: Rng + ?Sized>(&self, x: &[f64], offset: usize, rng: &mut R) -> [f64; 2] {
        match self.scenario {
            Scenario::One => {
                let law = self.law(x, offset);
                let support = Scenario::One.support();
                let r: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in law.iter().enumerate() {
                    acc += p;
                    if r < acc {
                        return support[k];
                    }
                }
                support[law.len() - 1]
            }
            Scenario::Two => {
                let (p1, p2) = self.scenario_two_probs(x, offset);
                let a = usize::from(rng.random::<f64>() < p1);
                let k = Binomial::new(BINOMIAL_TRIALS, p2[a]).expect("probability in [0, 1]").sample(rng);
                [a as f64, k as f64]
            }
        }
    }
}

/// `(1, Z1, exp(Z2), exp(Z3), exp(Z4), 1{Z5 > 0}, ..., 1{Z8 > 0})`.
pub fn covariates_from_latent(z: &[f64; LATENT_DIM]) -> Vec<f64> {
    let mut x = Vec::with_capacity(COVARIATE_DIM);
    x.push(1.0);
    x.push(z[0]);
    x.extend(z[1..4].iter().map(|v| v.exp()));
    x.extend(z[4..8].iter().map(|&v| f64::from(u8::from(v > 0.0))));
    x
}

/// Exact pairwise benefit tables for one parameter draw.
#[derive(Clone, Debug)]
pub struct Oracle {
    params: ScenarioParams,
    /// `sigma(y_a, v_b)` over the support, row-major.
    sigma: Vec<i8>,
    size: usize,
}

impl Oracle {
    pub fn new(params: &ScenarioParams) -> Self {
        let support = params.scenario.support();
        let spec = params.scenario.score_spec();
        let size = support.len();
        let mut sigma = Vec::with_capacity(size * size);
        for y in &support {
            for v in &support {
                sigma.push(score(&spec, y, v).expect("support is in the score domain").value());
            }
        }
        Oracle { params: params.clone(), sigma, size }
    }

    pub fn params(&self) -> &ScenarioParams {
        &self.params
    }

    /// `sum_{y, v} sigma(y, v) p_y q_v` for laws over the support.
    pub fn delta_from_laws(&self, p: &[f64], q: &[f64]) -> f64 {
        let mut total = 0.0;
        for (a, pa) in p.iter().enumerate() {
            for (b, qb) in q.iter().enumerate() {
                total += f64::from(self.sigma[a * self.size + b]) * pa * qb;
            }
        }
        total
    }

    /// `Delta(x, u)`, clamped to `[-1, 1]` against rounding on near-degenerate laws.
    fn clamped(&self, p: &[f64], q: &[f64]) -> f64 {
        self.delta_from_laws(p, q).clamp(-1.0, 1.0)
    }

    pub fn delta(&self, x: &[f64], u: &[f64]) -> f64 {
        self.clamped(&self.params.control_law(x), &self.params.treated_law(u))
    }

    /// The same double sum with the two laws exchanged: treated law at `u` on
    /// the first argument, control law at `x` on the second.
    pub fn delta_swapped(&self, u: &[f64], x: &[f64]) -> f64 {
        self.clamped(&self.params.treated_law(u), &self.params.control_law(x))
    }

    pub fn ipb(&self, x: &[f64]) -> f64 {
        self.delta(x, x)
    }
}

pub fn oracle_delta(params: &ScenarioParams, x: &[f64], u: &[f64]) -> Result<f64> {
    for v in [x, u] {
        if v.len() != COVARIATE_DIM {
            return Err(Error::Shape { expected: COVARIATE_DIM, found: v.len() });
        }
        if v[0] != 1.0 {
            return Err(Error::Domain("covariate vectors start with the intercept 1".into()));
        }
    }
    Ok(Oracle::new(params).delta(x, u))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSubject {
    /// `X0..X8` with `X0 = 1`.
    pub covariates: Vec<f64>,
    pub y0: [f64; 2],
    pub y1: [f64; 2],
    pub oracle_ipb: f64,
}

/// `size` iid subjects. Subject `i` of stream `stream` draws from its own
/// generator, so the result does not depend on the thread count.
pub fn sample_population(params: &ScenarioParams, size: usize, stream: u64) -> Result<Vec<SimulatedSubject>> {
    if size == 0 {
        return Err(Error::InvalidValue("population size must be at least 1".into()));
    }
    let oracle = Oracle::new(params);
    let base = derive_seed(params.seed, "population", stream);
    Ok((0..size)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(base, "subject", i as u64);
            let covariates = params.sample_covariates(&mut rng);
            let y0 = params.sample_control_outcome(&covariates, &mut rng);
            let y1 = params.sample_treated_outcome(&covariates, &mut rng);
            let oracle_ipb = oracle.ipb(&covariates);
            SimulatedSubject { covariates, y0, y1, oracle_ipb }
        })
        .collect())
}

/// Model features of a simulated subject: the covariates without the intercept.
pub fn features(subject: &SimulatedSubject) -> Vec<f64> {
    subject.covariates[1..].to_vec()
}

/// First half control (observing `Y(0)`), second half experimental (observing `Y(1)`).
pub fn split_trial(subjects: &[SimulatedSubject]) -> Result<TrialDataset> {
    if subjects.len() < 2 {
        return Err(Error::Domain("a trial needs at least two subjects".into()));
    }
    let half = subjects.len() / 2;
    let (ctrl, exp) = subjects.split_at(half);
    TrialDataset::from_arrays(
        ctrl.iter().map(features).collect(),
        ctrl.iter().map(|s| s.y0.to_vec()).collect(),
        exp.iter().map(features).collect(),
        exp.iter().map(|s| s.y1.to_vec()).collect(),
    )
}

/// Arm assignment used by `split_trial`: 0 for the first half, 1 otherwise.
pub fn trial_arm(index: usize, size: usize) -> u8 {
    u8::from(index >= size / 2)
}

/// Estimation method names used by configuration files and the CLI.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Knn,
    /// Random forest on all cross-arm pairs.
    #[default]
    Forest,
    Bagged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pipeline {
    FullPairs {
        #[serde(default)]
        forest: ForestConfig,
    },
    Bagged {
        #[serde(default)]
        bagging: BaggingConfig,
        #[serde(default)]
        forest: ForestConfig,
    },
    Knn {
        /// Neighbour counts; unset counts use `ceil(size^exponent)`.
        #[serde(default)]
        c: Option<usize>,
        #[serde(default)]
        e: Option<usize>,
        #[serde(default = "default_exponent")]
        exponent: f64,
        #[serde(default)]
        metric: Metric,
    },
}

fn default_exponent() -> f64 {
    DEFAULT_NEIGHBOR_EXPONENT
}

impl Pipeline {
    pub fn method(&self) -> Method {
        match self {
            Pipeline::FullPairs { .. } => Method::Forest,
            Pipeline::Bagged { .. } => Method::Bagged,
            Pipeline::Knn { .. } => Method::Knn,
        }
    }

    /// Fits with the forest and bagging seeds re-derived from `seed`.
    pub fn fit(&self, data: &TrialDataset, spec: &ScoreSpec, seed: u64) -> Result<ItrModel> {
        let seeded = |f: &ForestConfig| ForestConfig { seed: derive_seed(seed, "forest", 0), ..f.clone() };
        match self {
            Pipeline::FullPairs { forest } => fit_full_pairs(data, spec, &seeded(forest)),
            Pipeline::Bagged { bagging, forest } => {
                let bag = BaggingConfig { seed: derive_seed(seed, "bagging", 0), ..bagging.clone() };
                fit_bagged(data, spec, &bag, &seeded(forest))
            }
            Pipeline::Knn { c, e, exponent, metric } => {
                let (dc, de) = neighbor_counts_with_exponent(data.m(), data.n(), *exponent);
                let config = KnnConfig { c: c.unwrap_or(dc), e: e.unwrap_or(de), metric: *metric };
                fit_knn(data, spec, config)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub scenario: Scenario,
    pub train_sizes: Vec<usize>,
    pub iterations: usize,
    pub eval_size: usize,
    pub seed: u64,
    pub pipeline: Pipeline,
    #[serde(default = "default_bins")]
    pub calibration_bins: usize,
}

fn default_bins() -> usize {
    DEFAULT_CALIBRATION_BINS
}

/// Mean and standard deviation of one metric over the iterations where it is defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Summary> {
        (!values.is_empty()).then(|| Summary { mean: mean(values), sd: sample_sd(values), n: values.len() })
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ({:.2})", self.mean, self.sd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub train_size: usize,
    pub iteration: usize,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub train_size: usize,
    pub iterations: usize,
    pub metrics: BTreeMap<String, Summary>,
    /// Calibration pooled over iterations.
    pub calibration: Vec<CalibrationBin>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: BenchmarkConfig,
    /// Oracle `AIPB(r0, r_opt)` on the evaluation population.
    pub oracle_aipb: f64,
    pub cells: Vec<CellReport>,
    pub iterations: Vec<IterationRecord>,
}

pub const TABLE_METRICS: [&str; 6] = ["rmse_ipb", "aipb_bias", "auc", "mcc", "specificity", "sensitivity"];

fn metric_values(r: &MetricsReport) -> Vec<(String, Option<f64>)> {
    let mut v = vec![("rmse_ipb".to_string(), r.rmse_ipb), ("aipb_bias".to_string(), r.aipb_bias)];
    if let Some(c) = &r.classification {
        v.push(("auc".into(), c.auc));
        v.push(("mcc".into(), c.mcc));
        v.push(("sensitivity".into(), c.sensitivity));
        v.push(("specificity".into(), c.specificity));
        for (o, row) in c.confusion.iter().enumerate() {
            for (p, x) in row.iter().enumerate() {
                v.push((format!("confusion_best{o}_recommended{p}"), Some(*x)));
            }
        }
    }
    v
}

fn pool_calibration(reports: &[&MetricsReport]) -> Vec<CalibrationBin> {
    let mut acc: BTreeMap<u64, (f64, f64, f64, usize)> = BTreeMap::new();
    for r in reports {
        for b in &r.calibration {
            let e = acc.entry(b.bin_center.to_bits()).or_insert((b.bin_center, 0.0, 0.0, 0));
            e.1 += b.mean_predicted * b.count as f64;
            e.2 += b.mean_oracle * b.count as f64;
            e.3 += b.count;
        }
    }
    let mut bins: Vec<CalibrationBin> = acc
        .into_values()
        .map(|(c, sp, so, n)| CalibrationBin {
            bin_center: c,
            mean_predicted: sp / n as f64,
            mean_oracle: so / n as f64,
            count: n,
        })
        .collect();
    bins.sort_by(|a, b| a.bin_center.total_cmp(&b.bin_center));
    bins
}

/// Monte Carlo campaign: for each training size and iteration a fresh trial
/// is drawn, split in half between the arms, fitted and scored against the
/// oracle on one shared evaluation population.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<CampaignReport> {
    if config.iterations == 0 {
        return Err(Error::InvalidValue("iterations must be at least 1".into()));
    }
    if config.train_sizes.is_empty() || config.train_sizes.iter().any(|&n| n < 2) {
        return Err(Error::InvalidValue("training sizes must each be at least 2".into()));
    }
    let params = make_params(config.scenario, config.seed);
    let eval = sample_population(&params, config.eval_size, u64::MAX)?;
    let eval_x: Vec<Vec<f64>> = eval.iter().map(features).collect();
    let oracle: Vec<f64> = eval.iter().map(|s| s.oracle_ipb).collect();
    let oracle_aipb = crate::eval::aipb_hat(&crate::eval::RuleSpec::Constant0, &crate::eval::RuleSpec::Model, &oracle)?;
    let spec = config.scenario.score_spec();

    let jobs: Vec<(usize, usize)> = config
        .train_sizes
        .iter()
        .flat_map(|&n| (0..config.iterations).map(move |it| (n, it)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(size, it)| -> Result<IterationRecord> {
            let stream = derive_seed(size as u64, "iteration", it as u64);
            let pop = sample_population(&params, size, stream)?;
            let trial = split_trial(&pop)?;
            let model = config
                .pipeline
                .fit(&trial, &spec, derive_seed(config.seed, "fit", stream))
                .map_err(|e| Error::Domain(format!("training size {size}, iteration {it}: {e}")))?;
            let predicted = eval_x.par_iter().map(|x| model.ipb_encoded(x)).collect::<Result<Vec<f64>>>()?;
            let report = evaluate_against_oracle(&predicted, &oracle, config.calibration_bins)?;
            Ok(IterationRecord { train_size: size, iteration: it, report })
        })
        .collect::<Result<Vec<_>>>()?;

    let cells = config
        .train_sizes
        .iter()
        .map(|&size| {
            let reports: Vec<&MetricsReport> =
                records.iter().filter(|r| r.train_size == size).map(|r| &r.report).collect();
            let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &reports {
                for (k, v) in metric_values(r) {
                    let e = values.entry(k).or_default();
                    if let Some(v) = v {
                        e.push(v);
                    }
                }
            }
            CellReport {
                train_size: size,
                iterations: reports.len(),
                metrics: values.into_iter().filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s))).collect(),
                calibration: pool_calibration(&reports),
            }
        })
        .collect();
    Ok(CampaignReport { config: config.clone(), oracle_aipb, cells, iterations: records })
}

impl CampaignReport {
    pub fn cell(&self, train_size: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.train_size == train_size)
    }

    /// Text table with one column per training size and `mean (sd)` cells.
    pub fn table(&self) -> String {
        let mut out = format!(
            "Scenario {}  oracle AIPB(r0, r_opt) = {:.2}\n{:<14}",
            self.config.scenario, self.oracle_aipb, "Trial of size"
        );
        for c in &self.cells {
            out.push_str(&format!("{:>14}", c.train_size));
        }
        out.push('\n');
        for m in TABLE_METRICS {
            out.push_str(&format!("{m:<14}"));
            for c in &self.cells {
                let cell = c.metrics.get(m).map_or_else(|| "NA".to_string(), |s| s.to_string());
                out.push_str(&format!("{cell:>14}"));
            }
            out.push('\n');
        }
        out
    }

    /// `train_size,metric,mean,sd,n` rows.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Csv { path: "<summary>".into(), source: e };
        w.write_record(["train_size", "metric", "mean", "sd", "n"]).map_err(wrap)?;
        for c in &self.cells {
            for (k, s) in &c.metrics {
                w.write_record([c.train_size.to_string(), k.clone(), s.mean.to_string(), s.sd.to_string(), s.n.to_string()])
                    .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| Error::io("writing summary", e))
    }

    /// `train_size,bin_center,mean_predicted,mean_oracle,count` rows.
    pub fn write_calibration_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Csv { path: "<calibration>".into(), source: e };
        w.write_record(["train_size", "bin_center", "mean_predicted", "mean_oracle", "count"]).map_err(wrap)?;
        for c in &self.cells {
            for b in &c.calibration {
                w.write_record([
                    c.train_size.to_string(),
                    b.bin_center.to_string(),
                    b.mean_predicted.to_string(),
                    b.mean_oracle.to_string(),
                    b.count.to_string(),
                ])
                .map_err(wrap)?;
            }
        }
        w.flush().map_err(|e| Error::io("writing calibration", e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
