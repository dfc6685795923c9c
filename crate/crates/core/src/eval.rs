//! Metrics against an oracle, AIPB estimation, resampling and the discrete
//! proportion in favour.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::forest::ForestConfig;
use crate::itr::{IpbPredictor, ItrModel};
use crate::score::{score, ScoreSpec};
use crate::seed::{derive_seed, rng_for};

pub const DEFAULT_FOLDS: usize = 3;
pub const DEFAULT_BOOTSTRAP: usize = 200;
pub const DEFAULT_CALIBRATION_BINS: usize = 20;
const MAX_RETRIES: usize = 10;

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape { expected: a, found: b });
    }
    Ok(())
}

pub fn rmse_ipb(predicted: &[f64], oracle: &[f64]) -> Result<f64> {
    check_aligned(predicted.len(), oracle.len())?;
    if predicted.is_empty() {
        return Err(Error::Domain("RMSE of an empty sequence".into()));
    }
    let sse: f64 = predicted.iter().zip(oracle).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

/// A treatment rule evaluated row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "actions", rename_all = "snake_case")]
pub enum RuleSpec {
    /// Everyone gets control.
    Constant0,
    /// Everyone gets the experimental treatment.
    Constant1,
    /// The plug-in rule `1{ipb > 0}` of whatever IPB values it is paired with.
    Model,
    /// Fixed per-row actions.
    OracleTable(Vec<u8>),
}

impl RuleSpec {
    /// Actions for rows whose IPB values are `ipb`.
    pub fn actions(&self, ipb: &[f64]) -> Result<Vec<u8>> {
        Ok(match self {
            RuleSpec::Constant0 => vec![0; ipb.len()],
            RuleSpec::Constant1 => vec![1; ipb.len()],
            RuleSpec::Model => ipb.iter().map(|&v| u8::from(v > 0.0)).collect(),
            RuleSpec::OracleTable(t) => {
                check_aligned(ipb.len(), t.len())?;
                if let Some(a) = t.iter().find(|&&a| a > 1) {
                    return Err(Error::Domain(format!("rule action {a} is not 0 or 1")));
                }
                t.clone()
            }
        })
    }

    fn subset(&self, rows: &[usize]) -> RuleSpec {
        match self {
            RuleSpec::OracleTable(t) => RuleSpec::OracleTable(rows.iter().map(|&i| t.get(i).copied().unwrap_or(2)).collect()),
            other => other.clone(),
        }
    }
}

/// G-computation estimate `mean((s(x) - r(x)) * ipb(x))`.
pub fn aipb_hat(r: &RuleSpec, s: &RuleSpec, ipb_values: &[f64]) -> Result<f64> {
    if ipb_values.is_empty() {
        return Err(Error::Domain("AIPB over an empty sample".into()));
    }
    let ra = r.actions(ipb_values)?;
    let sa = s.actions(ipb_values)?;
    let total: f64 = ipb_values
        .iter()
        .zip(ra.iter().zip(&sa))
        .map(|(v, (&a, &b))| (f64::from(b) - f64::from(a)) * v)
        .sum();
    Ok(total / ipb_values.len() as f64)
}

/// Shuffled fold labels, assigned round-robin within each arm.
pub fn stratified_folds(data: &TrialDataset, folds: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if folds < 2 {
        return Err(Error::InvalidValue(format!("need at least 2 folds, got {folds}")));
    }
    if data.m() < folds || data.n() < folds {
        return Err(Error::Domain(format!(
            "each arm needs at least {folds} subjects for {folds}-fold cross-fitting (m = {}, n = {})",
            data.m(),
            data.n()
        )));
    }
    let assign = |size: usize, arm: u64| {
        let mut order: Vec<usize> = (0..size).collect();
        order.shuffle(&mut rng_for(seed, "folds", arm));
        let mut label = vec![0; size];
        for (pos, &i) in order.iter().enumerate() {
            label[i] = pos % folds;
        }
        label
    };
    Ok((assign(data.m(), 0), assign(data.n(), 1)))
}

/// Out-of-fold IPB values, controls first, with the fold of each subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutOfFold {
    pub ipb: Vec<f64>,
    pub fold: Vec<usize>,
}

/// For each fold, fits `fit_fn` on the other folds and predicts the held-out
/// subjects of both arms.
pub fn crossfit_ipb<P, F>(data: &TrialDataset, folds: usize, seed: u64, fit_fn: F) -> Result<OutOfFold>
where
    P: IpbPredictor,
    F: Fn(&TrialDataset, usize) -> Result<P>,
{
    let (cf, ef) = stratified_folds(data, folds, seed)?;
    let m = data.m();
    let mut ipb = vec![0.0; m + data.n()];
    for k in 0..folds {
        let pick = |labels: &[usize], inside: bool| -> Vec<usize> {
            (0..labels.len()).filter(|&i| (labels[i] == k) == inside).collect()
        };
        let train = data.select(&pick(&cf, false), &pick(&ef, false))?;
        let model = fit_fn(&train, k)?;
        for i in pick(&cf, true) {
            ipb[i] = model.ipb(&data.control()[i].covariates)?;
        }
        for j in pick(&ef, true) {
            ipb[m + j] = model.ipb(&data.experimental()[j].covariates)?;
        }
    }
    Ok(OutOfFold { ipb, fold: cf.into_iter().chain(ef).collect() })
}

/// Per-fold and averaged cross-fitted AIPB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFit {
    pub estimate: f64,
    pub folds: Vec<f64>,
}

impl OutOfFold {
    /// AIPB of `(r, s)` within each fold, then averaged over folds. Table
    /// rules are indexed over controls then experimentals.
    pub fn aipb(&self, r: &RuleSpec, s: &RuleSpec) -> Result<CrossFit> {
        let folds = self.fold.iter().max().map_or(0, |k| k + 1);
        let per_fold = (0..folds)
            .map(|k| {
                let rows: Vec<usize> = (0..self.fold.len()).filter(|&i| self.fold[i] == k).collect();
                let v: Vec<f64> = rows.iter().map(|&i| self.ipb[i]).collect();
                aipb_hat(&r.subset(&rows), &s.subset(&rows), &v)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(CrossFit { estimate: mean(&per_fold), folds: per_fold })
    }
}

/// Cross-fitted AIPB of `(r, s)`: for each fold, `fit_fn` is trained on the
/// other folds and its IPB values on the held-out subjects of both arms feed
/// `aipb_hat`. Table rules are indexed over controls then experimentals.
pub fn aipb_crossfit<P, F>(
    data: &TrialDataset,
    r: &RuleSpec,
    s: &RuleSpec,
    folds: usize,
    seed: u64,
    fit_fn: F,
) -> Result<CrossFit>
where
    P: IpbPredictor,
    F: Fn(&TrialDataset, usize) -> Result<P>,
{
    crossfit_ipb(data, folds, seed, fit_fn)?.aipb(r, s)
}

/// Standard error of `mean((s - r) ipb)` with the per-subject IPB values held
/// fixed: subjects are resampled within arm and the rules are not refitted.
pub fn conditional_aipb_se(
    ipb: &[f64],
    m: usize,
    r: &RuleSpec,
    s: &RuleSpec,
    b_boot: usize,
    seed: u64,
) -> Result<Bootstrap> {
    check_aligned(ipb.len(), r.actions(ipb)?.len())?;
    if m == 0 || m >= ipb.len() {
        return Err(Error::Domain("both arms need at least one subject".into()));
    }
    let ra = r.actions(ipb)?;
    let sa = s.actions(ipb)?;
    let contrib: Vec<f64> = (0..ipb.len()).map(|i| (f64::from(sa[i]) - f64::from(ra[i])) * ipb[i]).collect();
    let (ctrl, exp) = contrib.split_at(m);
    let data = TrialDataset::from_arrays(
        ctrl.iter().map(|&c| vec![c]).collect(),
        vec![vec![0.0]; ctrl.len()],
        exp.iter().map(|&c| vec![c]).collect(),
        vec![vec![0.0]; exp.len()],
    )?;
    bootstrap_se(&data, b_boot, seed, |d, _| {
        Ok(mean(&d.all_subjects().map(|x| x.covariates[0]).collect::<Vec<_>>()))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub estimate: f64,
    pub se: f64,
    pub replicates: Vec<f64>,
    /// Replicate draws discarded because the statistic failed on them.
    pub failed_draws: usize,
}

/// Resamples each arm with replacement, keeping `m` and `n`.
pub fn resample_within_arms<R: Rng + ?Sized>(data: &TrialDataset, rng: &mut R) -> Result<TrialDataset> {
    let ci: Vec<usize> = (0..data.m()).map(|_| rng.random_range(0..data.m())).collect();
    let ei: Vec<usize> = (0..data.n()).map(|_| rng.random_range(0..data.n())).collect();
    data.select(&ci, &ei)
}

/// Bootstrap standard error of `statistic`, the sample standard deviation of
/// `b_boot` within-arm replicates. Replicate `v` draws from its own stream;
/// a failing draw is replaced from a retry stream, at most ten times. The
/// statistic receives the replicate index, or `usize::MAX` for the full data.
pub fn bootstrap_se<F>(data: &TrialDataset, b_boot: usize, seed: u64, statistic: F) -> Result<Bootstrap>
where
    F: Fn(&TrialDataset, usize) -> Result<f64> + Sync,
{
    if b_boot < 2 {
        return Err(Error::InvalidValue(format!("need at least 2 bootstrap replicates, got {b_boot}")));
    }
    let estimate = statistic(data, usize::MAX)?;
    let draws = (0..b_boot)
        .into_par_iter()
        .map(|v| {
            let base = derive_seed(seed, "bootstrap", v as u64);
            let mut last = None;
            for attempt in 0..=MAX_RETRIES {
                let mut rng = rng_for(base, "attempt", attempt as u64);
                let sample = resample_within_arms(data, &mut rng)?;
                match statistic(&sample, v) {
                    Ok(x) => return Ok((x, attempt)),
                    Err(e) => {
                        warn!("bootstrap replicate {v} attempt {attempt} failed: {e}");
                        last = Some(e);
                    }
                }
            }
            Err(Error::Domain(format!(
                "bootstrap replicate {v} failed {} times: {}",
                MAX_RETRIES + 1,
                last.map(|e| e.to_string()).unwrap_or_default()
            )))
        })
        .collect::<Result<Vec<(f64, usize)>>>()?;
    let failed_draws = draws.iter().map(|d| d.1).sum();
    let replicates: Vec<f64> = draws.into_iter().map(|d| d.0).collect();
    Ok(Bootstrap {
        estimate,
        se: sample_sd(&replicates),
        replicates,
        failed_draws,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Rule quality against the oracle rule; `None` marks an undefined value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub auc: Option<f64>,
    pub mcc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Proportions; rows are the oracle's best treatment (0, 1), columns the
    /// recommended one.
    pub confusion: [[f64; 2]; 2],
}

/// Mann-Whitney AUC with midranks, so every tied positive-negative pair counts 1/2.
pub fn auc(score: &[f64], labels: &[u8]) -> Result<Option<f64>> {
    check_aligned(score.len(), labels.len())?;
    if score.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[a].total_cmp(&score[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && score[order[j + 1]] == score[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok(Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

pub fn classification_metrics(predicted_rule: &[u8], predicted_score: &[f64], oracle_rule: &[u8]) -> Result<ClassificationReport> {
    check_aligned(oracle_rule.len(), predicted_rule.len())?;
    check_aligned(oracle_rule.len(), predicted_score.len())?;
    if oracle_rule.is_empty() {
        return Err(Error::Domain("classification metrics of an empty sample".into()));
    }
    if predicted_rule.iter().chain(oracle_rule).any(|&a| a > 1) {
        return Err(Error::Domain("rule actions must be 0 or 1".into()));
    }
    let mut c = [[0u64; 2]; 2];
    for (&o, &p) in oracle_rule.iter().zip(predicted_rule) {
        c[o as usize][p as usize] += 1;
    }
    let [[tn, fp], [fn_, tp]] = c.map(|r| r.map(|v| v as f64));
    let total = tn + fp + fn_ + tp;
    let single_class = tp + fn_ == 0.0 || tn + fp == 0.0;
    let mcc = if single_class {
        None
    } else {
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        Some(if denom == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / denom })
    };
    Ok(ClassificationReport {
        auc: auc(predicted_score, oracle_rule)?,
        mcc,
        sensitivity: (tp + fn_ > 0.0).then(|| tp / (tp + fn_)),
        specificity: (tn + fp > 0.0).then(|| tn / (tn + fp)),
        confusion: [[tn / total, fp / total], [fn_ / total, tp / total]],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin_center: f64,
    pub mean_predicted: f64,
    pub mean_oracle: f64,
    pub count: usize,
}

/// Equal-width bins on `[-1, 1]` over the predicted values; empty bins are omitted.
pub fn calibration_curve(predicted: &[f64], oracle: &[f64], bins: usize) -> Result<Vec<CalibrationBin>> {
    check_aligned(predicted.len(), oracle.len())?;
    if bins < 2 {
        return Err(Error::InvalidValue(format!("need at least 2 bins, got {bins}")));
    }
    if let Some(v) = predicted.iter().chain(oracle).find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("value {v} outside [-1, 1]")));
    }
    let width = 2.0 / bins as f64;
    let mut acc = vec![(0.0, 0.0, 0usize); bins];
    for (&p, &o) in predicted.iter().zip(oracle) {
        let b = (((p + 1.0) / width).floor() as usize).min(bins - 1);
        acc[b].0 += p;
        acc[b].1 += o;
        acc[b].2 += 1;
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .filter(|(_, a)| a.2 > 0)
        .map(|(b, (sp, so, n))| CalibrationBin {
            bin_center: -1.0 + (b as f64 + 0.5) * width,
            mean_predicted: sp / n as f64,
            mean_oracle: so / n as f64,
            count: n,
        })
        .collect())
}

/// Discrete proportion in favour, `sum p_k^2 (q_k+ - q_k-) / sum p_k^2`, over
/// strata present in both arms. Strata seen in one arm only are dropped with
/// a warning.
pub fn gamma_discrete<S>(control_strata: &[S], experimental_strata: &[S], data: &TrialDataset, spec: &ScoreSpec) -> Result<f64>
where
    S: Ord + Clone + Debug,
{
    check_aligned(data.m(), control_strata.len())?;
    check_aligned(data.n(), experimental_strata.len())?;
    data.check_spec(spec)?;
    let mut groups: BTreeMap<&S, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, s) in control_strata.iter().enumerate() {
        groups.entry(s).or_default().0.push(i);
    }
    for (j, s) in experimental_strata.iter().enumerate() {
        groups.entry(s).or_default().1.push(j);
    }
    let total = (data.m() + data.n()) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (s, (ci, ej)) in &groups {
        if ci.is_empty() || ej.is_empty() {
            warn!("stratum {s:?} is missing from one arm and is dropped");
            continue;
        }
        let mut net = 0i64;
        for &i in ci {
            for &j in ej {
                net += i64::from(score(spec, &data.control()[i].outcomes, &data.experimental()[j].outcomes)?.value());
            }
        }
        let p = (ci.len() + ej.len()) as f64 / total;
        num += p * p * (net as f64 / (ci.len() * ej.len()) as f64);
        den += p * p;
    }
    if den == 0.0 {
        return Err(Error::Domain("no stratum is present in both arms".into()));
    }
    Ok(num / den)
}

/// Mean multiclass log-loss of the model's pair probabilities over all
/// cross-arm pairs of `data`. Probabilities are floored at `1e-15`.
pub fn pair_log_loss(model: &ItrModel, data: &TrialDataset, spec: &ScoreSpec) -> Result<f64> {
    let losses = data
        .control()
        .par_iter()
        .map(|c| {
            let mut total = 0.0;
            for e in data.experimental() {
                let label = score(spec, &c.outcomes, &e.outcomes)?;
                let p = model.pair_probabilities(&c.covariates, &e.covariates)?.get(label);
                total -= p.max(1e-15).ln();
            }
            Ok(total)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / (data.m() * data.n()) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub log_loss: f64,
    pub fold_losses: Vec<f64>,
}

/// Arm-stratified `folds`-fold cross-validation of forest settings by pair
/// log-loss on the held-out pairs. Returns every cell and the index of the
/// best one (first on ties).
pub fn cv_forest_grid<F>(
    data: &TrialDataset,
    spec: &ScoreSpec,
    grid: &[ForestConfig],
    folds: usize,
    seed: u64,
    fit: F,
) -> Result<(Vec<CvCell>, usize)>
where
    F: Fn(&TrialDataset, &ForestConfig) -> Result<ItrModel>,
{
    if grid.is_empty() {
        return Err(Error::InvalidValue("empty tuning grid".into()));
    }
    let (cf, ef) = stratified_folds(data, folds, seed)?;
    let splits = (0..folds)
        .map(|k| {
            let pick = |labels: &[usize], inside: bool| -> Vec<usize> {
                (0..labels.len()).filter(|&i| (labels[i] == k) == inside).collect()
            };
            Ok((
                data.select(&pick(&cf, false), &pick(&ef, false))?,
                data.select(&pick(&cf, true), &pick(&ef, true))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(grid.len());
    for config in grid {
        let fold_losses = splits
            .iter()
            .map(|(train, test)| pair_log_loss(&fit(train, config)?, test, spec))
            .collect::<Result<Vec<f64>>>()?;
        cells.push(CvCell {
            n_trees: config.n_trees,
            mtry: config.mtry,
            log_loss: mean(&fold_losses),
            fold_losses,
        });
    }
    let best = (0..cells.len())
        .min_by(|&a, &b| cells[a].log_loss.total_cmp(&cells[b].log_loss).then(a.cmp(&b)))
        .expect("non-empty grid");
    Ok((cells, best))
}

/// An AIPB entry of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AipbEntry {
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub rmse_ipb: Option<f64>,
    /// Estimated minus oracle `AIPB(r0, r_opt)`.
    pub aipb_bias: Option<f64>,
    pub aipb: BTreeMap<String, AipbEntry>,
    pub classification: Option<ClassificationReport>,
    pub calibration: Vec<CalibrationBin>,
}

/// Scores model IPB values against oracle IPB values on the same rows.
pub fn evaluate_against_oracle(predicted: &[f64], oracle: &[f64], bins: usize) -> Result<MetricsReport> {
    let rmse = rmse_ipb(predicted, oracle)?;
    let est = aipb_hat(&RuleSpec::Constant0, &RuleSpec::Model, predicted)?;
    let truth = aipb_hat(&RuleSpec::Constant0, &RuleSpec::Model, oracle)?;
    let pred_rule: Vec<u8> = predicted.iter().map(|&v| u8::from(v > 0.0)).collect();
    let oracle_rule: Vec<u8> = oracle.iter().map(|&v| u8::from(v > 0.0)).collect();
    let mut aipb = BTreeMap::new();
    aipb.insert("r0_vs_estimated_rule".to_string(), AipbEntry { estimate: est, se: None });
    aipb.insert("r0_vs_oracle_rule".to_string(), AipbEntry { estimate: truth, se: None });
    Ok(MetricsReport {
        n: predicted.len(),
        rmse_ipb: Some(rmse),
        aipb_bias: Some(est - truth),
        aipb,
        classification: Some(classification_metrics(&pred_rule, predicted, &oracle_rule)?),
        calibration: calibration_curve(predicted, oracle, bins)?,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl MetricsReport {
    /// Flat `(metric, value)` rows; undefined values are `NA`.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("n".to_string(), self.n.to_string()),
            ("rmse_ipb".to_string(), cell(self.rmse_ipb)),
            ("aipb_bias".to_string(), cell(self.aipb_bias)),
        ];
        for (name, e) in &self.aipb {
            rows.push((format!("aipb_{name}"), e.estimate.to_string()));
            rows.push((format!("aipb_{name}_se"), cell(e.se)));
        }
        if let Some(c) = &self.classification {
            rows.push(("auc".into(), cell(c.auc)));
            rows.push(("mcc".into(), cell(c.mcc)));
            rows.push(("sensitivity".into(), cell(c.sensitivity)));
            rows.push(("specificity".into(), cell(c.specificity)));
            for (o, row) in c.confusion.iter().enumerate() {
                for (p, v) in row.iter().enumerate() {
                    rows.push((format!("confusion_best{o}_recommended{p}"), v.to_string()));
                }
            }
        }
        rows
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let wrap = |e: csv::Error| Error::Csv { path: "<metrics>".into(), source: e };
        w.write_record(["metric", "value"]).map_err(wrap)?;
        for (k, v) in self.rows() {
            w.write_record([k, v]).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::io("writing metrics", e))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn write_calibration_csv<W: Write>(bins: &[CalibrationBin], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let wrap = |e: csv::Error| Error::Csv { path: "<calibration>".into(), source: e };
    for b in bins {
        w.serialize(b).map_err(wrap)?;
    }
    if bins.is_empty() {
        w.write_record(["bin_center", "mean_predicted", "mean_oracle", "count"]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing calibration", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::net_benefit;
    use crate::score::PriorityLevel;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_ipb(&[0.1, -0.3], &[0.1, -0.3]).unwrap(), 0.0);
        assert!(close(rmse_ipb(&[0.5, 1.0], &[0.0, 0.5]).unwrap(), 0.5, 1e-15));
        assert!(close(rmse_ipb(&[0.2, -0.4], &[0.0, 0.0]).unwrap(), (0.1f64).sqrt(), 1e-15));
        assert!(rmse_ipb(&[0.0], &[]).is_err());
        assert!(rmse_ipb(&[], &[]).is_err());
    }

    #[test]
    fn aipb_examples() {
        let v = [0.3, -0.2, 0.5, -0.1];
        assert_eq!(aipb_hat(&RuleSpec::Model, &RuleSpec::Model, &v).unwrap(), 0.0);
        assert!(close(aipb_hat(&RuleSpec::Constant0, &RuleSpec::Constant1, &v).unwrap(), 0.125, 1e-15));
        let opt = aipb_hat(&RuleSpec::Constant0, &RuleSpec::Model, &v).unwrap();
        assert!(close(opt, 0.2, 1e-15));
        assert!(aipb_hat(&RuleSpec::Constant0, &RuleSpec::OracleTable(vec![1, 0]), &v).is_err());
        assert!(aipb_hat(&RuleSpec::Constant0, &RuleSpec::OracleTable(vec![1, 0, 2, 0]), &v).is_err());
    }

    proptest! {
        #[test]
        fn aipb_antisymmetric_and_optimal(
            rows in prop::collection::vec((-1.0f64..1.0, 0u8..2, 0u8..2), 1..60)
        ) {
            let v: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let r = RuleSpec::OracleTable(rows.iter().map(|r| r.1).collect());
            let s = RuleSpec::OracleTable(rows.iter().map(|r| r.2).collect());
            prop_assert_eq!(aipb_hat(&r, &s, &v).unwrap(), -aipb_hat(&s, &r, &v).unwrap());
            prop_assert!(aipb_hat(&r, &RuleSpec::Model, &v).unwrap() >= 0.0);
        }

        #[test]
        fn auc_invariant_under_monotone_map(
            rows in prop::collection::vec((-5.0f64..5.0, 0u8..2), 2..50)
        ) {
            let s: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let l: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let t: Vec<f64> = s.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }

        #[test]
        fn confusion_and_mcc_properties(
            rows in prop::collection::vec((0u8..2, 0u8..2, -1.0f64..1.0), 1..80)
        ) {
            let o: Vec<u8> = rows.iter().map(|r| r.0).collect();
            let p: Vec<u8> = rows.iter().map(|r| r.1).collect();
            let sc: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let rep = classification_metrics(&p, &sc, &o).unwrap();
            let total: f64 = rep.confusion.iter().flatten().sum();
            prop_assert!(close(total, 1.0, 1e-12));
            for v in [rep.auc, rep.sensitivity, rep.specificity].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let Some(m) = rep.mcc {
                prop_assert!((-1.0..=1.0).contains(&m));
                let flipped: Vec<u8> = p.iter().map(|a| 1 - a).collect();
                let neg = classification_metrics(&flipped, &sc, &o).unwrap().mcc.unwrap();
                prop_assert!(close(neg, -m, 1e-12));
            }
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.2], &[1, 0, 0]).unwrap(), Some(1.0));
        assert_eq!(auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), Some(0.5));
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]).unwrap(), None);
        // one tie between classes: pairs (a,c) correct, (b,c) tied
        assert_eq!(auc(&[0.9, 0.5, 0.5], &[1, 1, 0]).unwrap(), Some(0.75));
    }

    #[test]
    fn perfect_predictions() {
        let o = [1, 0, 1, 1, 0];
        let s = [0.4, -0.2, 0.1, 0.9, -0.5];
        let rep = classification_metrics(&o, &s, &o).unwrap();
        assert_eq!(rep.auc, Some(1.0));
        assert_eq!(rep.mcc, Some(1.0));
        assert_eq!(rep.sensitivity, Some(1.0));
        assert_eq!(rep.specificity, Some(1.0));
        assert_eq!(rep.confusion, [[0.4, 0.0], [0.0, 0.6]]);
    }

    #[test]
    fn single_class_oracle_is_undefined() {
        let rep = classification_metrics(&[1, 0], &[0.2, -0.1], &[1, 1]).unwrap();
        assert_eq!(rep.auc, None);
        assert_eq!(rep.mcc, None);
        assert_eq!(rep.specificity, None);
        assert_eq!(rep.sensitivity, Some(0.5));
        let rep = classification_metrics(&[1, 1], &[0.2, 0.1], &[1, 0]).unwrap();
        assert_eq!(rep.mcc, Some(0.0));
    }

    #[test]
    fn calibration_examples() {
        let t = calibration_curve(&[-0.5, -0.5, 0.5], &[-0.4, -0.6, 0.8], 2).unwrap();
        assert_eq!(t.len(), 2);
        assert!(close(t[0].mean_predicted, -0.5, 1e-15) && close(t[0].mean_oracle, -0.5, 1e-15));
        assert_eq!((t[0].count, t[0].bin_center), (2, -0.5));
        assert_eq!((t[1].mean_predicted, t[1].mean_oracle, t[1].count), (0.5, 0.8, 1));
        let one = calibration_curve(&[0.11, 0.12, 0.13], &[0.0; 3], 20).unwrap();
        assert_eq!(one.len(), 1);
        let edge = calibration_curve(&[1.0, -1.0], &[1.0, -1.0], 4).unwrap();
        assert_eq!(edge.iter().map(|b| b.count).sum::<usize>(), 2);
        assert!(calibration_curve(&[1.5], &[0.0], 4).is_err());
        assert!(calibration_curve(&[0.5], &[0.0], 1).is_err());
    }

    fn strata_data() -> TrialDataset {
        // stratum a: controls y=0,1 ; experimentals v=1 ; stratum b: control y=1 ; experimental v=0
        TrialDataset::from_arrays(
            vec![vec![0.0]; 3],
            vec![vec![0.0], vec![1.0], vec![1.0]],
            vec![vec![0.0]; 2],
            vec![vec![1.0], vec![0.0]],
        )
        .unwrap()
    }

    #[test]
    fn gamma_single_stratum_is_net_benefit() {
        let spec = ScoreSpec::new(vec![PriorityLevel::binary()]).unwrap();
        let d = strata_data();
        let g = gamma_discrete(&[0; 3], &[0; 2], &d, &spec).unwrap();
        assert_eq!(g, net_benefit(&d, &spec).unwrap());
    }

    #[test]
    fn gamma_two_strata() {
        let spec = ScoreSpec::new(vec![PriorityLevel::binary()]).unwrap();
        let d = strata_data();
        // a: 3 subjects, pairs (0,1)->+1, (1,1)->0 : net 0.5 ; b: 2 subjects, (1,0) -> -1
        let g = gamma_discrete(&["a", "a", "b"], &["a", "b"], &d, &spec).unwrap();
        let (pa, pb) = (3.0 / 5.0, 2.0 / 5.0);
        let want = (pa * pa * 0.5 + pb * pb * -1.0) / (pa * pa + pb * pb);
        assert!(close(g, want, 1e-12));
        let dropped = gamma_discrete(&["a", "a", "c"], &["a", "b"], &d, &spec).unwrap();
        assert_eq!(dropped, 0.5);
        assert!(gamma_discrete(&["x"; 3], &["y"; 2], &d, &spec).is_err());
    }

    #[test]
    fn crossfit_constant_predictor() {
        let xs: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let ys: Vec<Vec<f64>> = (0..9).map(|i| vec![(i % 2) as f64]).collect();
        let d = TrialDataset::from_arrays(xs.clone(), ys.clone(), xs, ys).unwrap();
        let fit = |_: &TrialDataset, _: usize| Ok(|_: &[f64]| Ok(0.37));
        let cf = aipb_crossfit(&d, &RuleSpec::Constant0, &RuleSpec::Constant1, 3, 5, fit).unwrap();
        assert!(close(cf.estimate, 0.37, 1e-15));
        assert_eq!(cf.folds.len(), 3);
        let small = d.select(&[0, 1], &[0, 1, 2]).unwrap();
        assert!(aipb_crossfit(&small, &RuleSpec::Constant0, &RuleSpec::Constant1, 3, 5, fit).is_err());
    }

    #[test]
    fn out_of_fold_values_and_conditional_se() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 - 5.5]).collect();
        let ys: Vec<Vec<f64>> = vec![vec![0.0]; 12];
        let d = TrialDataset::from_arrays(xs.clone(), ys.clone(), xs, ys).unwrap();
        let fit = |train: &TrialDataset, _: usize| {
            let shift = train.m() as f64;
            Ok(move |x: &[f64]| Ok((x[0] + shift) / 100.0))
        };
        let oof = crossfit_ipb(&d, 3, 2, fit).unwrap();
        assert_eq!(oof.ipb.len(), 24);
        for (i, v) in oof.ipb.iter().enumerate() {
            let x = if i < 12 { i } else { i - 12 } as f64 - 5.5;
            assert!(close(*v, (x + 8.0) / 100.0, 1e-15));
        }
        let a = oof.aipb(&RuleSpec::Constant0, &RuleSpec::Model).unwrap();
        let b = aipb_crossfit(&d, &RuleSpec::Constant0, &RuleSpec::Model, 3, 2, fit).unwrap();
        assert_eq!(a, b);
        let se = conditional_aipb_se(&oof.ipb, 12, &RuleSpec::Constant0, &RuleSpec::Constant1, 50, 1).unwrap();
        assert!(se.se > 0.0 && close(se.estimate, mean(&oof.ipb), 1e-15));
        let zero = conditional_aipb_se(&oof.ipb, 12, &RuleSpec::Model, &RuleSpec::Model, 10, 1).unwrap();
        assert_eq!(zero.se, 0.0);
    }

    #[test]
    fn cv_prefers_informative_forest() {
        use crate::itr::fit_full_pairs;
        // experimental outcome depends on the covariate; control outcome fixed at 0
        // a wide gap at the class boundary keeps every fold's threshold inside it
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![if i < 20 { i } else { i + 80 } as f64]).collect();
        let ys = vec![vec![0.0]; 40];
        let vs: Vec<Vec<f64>> = (0..40).map(|i| vec![f64::from(u8::from(i >= 20))]).collect();
        let d = TrialDataset::from_arrays(xs.clone(), ys, xs, vs).unwrap();
        let spec = ScoreSpec::new(vec![PriorityLevel::binary()]).unwrap();
        let grid = [
            ForestConfig { n_trees: 5, max_depth: Some(1), min_leaf: 1, ..Default::default() },
            ForestConfig { n_trees: 5, max_depth: Some(1), min_leaf: 1000, ..Default::default() },
        ];
        let (cells, best) = cv_forest_grid(&d, &spec, &grid, 5, 3, |t, c| fit_full_pairs(t, &spec, c)).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(best, 0);
        assert!(cells[0].log_loss < cells[1].log_loss);
    }

    #[test]
    fn folds_are_balanced_within_arm() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let d = TrialDataset::from_arrays(xs.clone(), vec![vec![0.0]; 10], xs[..7].to_vec(), vec![vec![0.0]; 7]).unwrap();
        let (c, e) = stratified_folds(&d, 3, 1).unwrap();
        for k in 0..3 {
            let nc = c.iter().filter(|&&f| f == k).count();
            let ne = e.iter().filter(|&&f| f == k).count();
            assert!((3..=4).contains(&nc) && (2..=3).contains(&ne));
        }
        assert_eq!(stratified_folds(&d, 3, 1).unwrap(), (c, e));
    }

    #[test]
    fn bootstrap_behaviour() {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.7).sin()]).collect();
        let d = TrialDataset::from_arrays(xs.clone(), vec![vec![0.0]; 50], xs, vec![vec![0.0]; 50]).unwrap();
        let constant = bootstrap_se(&d, 20, 1, |_, _| Ok(2.0)).unwrap();
        assert_eq!((constant.estimate, constant.se), (2.0, 0.0));

        let ctrl_mean = |s: &TrialDataset, _: usize| Ok(mean(&s.control().iter().map(|x| x.covariates[0]).collect::<Vec<_>>()));
        let a = bootstrap_se(&d, 400, 9, ctrl_mean).unwrap();
        let b = bootstrap_se(&d, 400, 9, ctrl_mean).unwrap();
        assert_eq!(a, b);
        let vals: Vec<f64> = d.control().iter().map(|x| x.covariates[0]).collect();
        let pop_sd = (vals.iter().map(|v| (v - mean(&vals)).powi(2)).sum::<f64>() / 50.0).sqrt();
        let want = pop_sd / 50f64.sqrt();
        assert!((a.se / want - 1.0).abs() < 0.3, "{} vs {}", a.se, want);

        let flaky = |_: &TrialDataset, v: usize| if v == 3 { Err(Error::Domain("no".into())) } else { Ok(1.0) };
        assert!(bootstrap_se(&d, 5, 1, flaky).is_err());
        assert!(bootstrap_se(&d, 1, 1, ctrl_mean).is_err());
    }

    #[test]
    fn report_round_trip() {
        let rep = evaluate_against_oracle(&[0.2, -0.3, 0.4], &[0.1, -0.2, -0.1], 20).unwrap();
        assert_eq!(rep.n, 3);
        let json = rep.to_json().unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,value\n"));
        assert!(text.contains("auc,"));
    }
}
