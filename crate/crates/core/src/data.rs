//! Two-arm trial data: CSV ingestion, covariate encoding, pair building and
//! the global net benefit.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{score, Score, ScoreSpec};

/// Default cap on the number of materialized pairs.
pub const DEFAULT_PAIR_BUDGET: u64 = 50_000_000;

/// Cell values treated as missing.
const MISSING_MARKERS: [&str; 4] = ["", "NA", "NaN", "nan"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Experimental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub covariates: Vec<f64>,
    pub outcomes: Vec<f64>,
    pub arm: Arm,
}

impl Subject {
    pub fn new(arm: Arm, covariates: Vec<f64>, outcomes: Vec<f64>) -> Self {
        Subject {
            covariates,
            outcomes,
            arm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoding {
    Numeric {
        standardization: Option<Standardization>,
    },
    /// Dummy coding; the first category is the reference and gets no indicator.
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub encoding: ColumnEncoding,
}

impl CovariateColumn {
    fn width(&self) -> usize {
        match &self.encoding {
            ColumnEncoding::Numeric { .. } => 1,
            ColumnEncoding::Categorical { categories } => categories.len() - 1,
        }
    }
}

/// Maps raw covariate cells to the numeric design vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateEncoding {
    columns: Vec<CovariateColumn>,
}

/// An encoded covariate row plus the number of categorical cells whose
/// category was never seen during fitting.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRow {
    pub values: Vec<f64>,
    pub unseen_categories: usize,
}

impl CovariateEncoding {
    pub fn new(columns: Vec<CovariateColumn>) -> Result<Self> {
        for col in &columns {
            match &col.encoding {
                ColumnEncoding::Categorical { categories } if categories.is_empty() => {
                    return Err(Error::InvalidValue(format!(
                        "categorical column {} has no categories",
                        col.name
                    )))
                }
                ColumnEncoding::Numeric {
                    standardization: Some(s),
                } if !(s.sd > 0.0 && s.sd.is_finite() && s.mean.is_finite()) => {
                    return Err(Error::InvalidValue(format!(
                        "column {} has invalid standardization {:?}",
                        col.name, s
                    )))
                }
                _ => {}
            }
        }
        Ok(CovariateEncoding { columns })
    }

    /// `d` unstandardized numeric columns named `x1..xd`.
    pub fn identity(d: usize) -> Self {
        CovariateEncoding {
            columns: (1..=d)
                .map(|k| CovariateColumn {
                    name: format!("x{k}"),
                    encoding: ColumnEncoding::Numeric {
                        standardization: None,
                    },
                })
                .collect(),
        }
    }

    pub fn columns(&self) -> &[CovariateColumn] {
        &self.columns
    }

    pub fn dim(&self) -> usize {
        self.columns.iter().map(CovariateColumn::width).sum()
    }

    /// Names of the encoded features, e.g. `site=B` for a dummy indicator.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for col in &self.columns {
            match &col.encoding {
                ColumnEncoding::Numeric { .. } => names.push(col.name.clone()),
                ColumnEncoding::Categorical { categories } => {
                    names.extend(categories[1..].iter().map(|c| format!("{}={c}", col.name)))
                }
            }
        }
        names
    }

    /// Encodes raw cells given in column order.
    pub fn encode(&self, raw: &[&str]) -> Result<EncodedRow> {
        if raw.len() != self.columns.len() {
            return Err(Error::Shape {
                expected: self.columns.len(),
                found: raw.len(),
            });
        }
        let mut values = Vec::with_capacity(self.dim());
        let mut unseen = 0;
        for (col, cell) in self.columns.iter().zip(raw) {
            let cell = cell.trim();
            if is_missing(cell) {
                return Err(Error::Domain(format!("missing value in column {}", col.name)));
            }
            match &col.encoding {
                ColumnEncoding::Numeric { standardization } => {
                    let x = parse_finite(cell).ok_or_else(|| {
                        Error::Domain(format!("column {}: cannot parse {cell:?}", col.name))
                    })?;
                    values.push(match standardization {
                        Some(s) => (x - s.mean) / s.sd,
                        None => x,
                    });
                }
                ColumnEncoding::Categorical { categories } => {
                    let start = values.len();
                    values.extend(std::iter::repeat_n(0.0, categories.len() - 1));
                    match categories.iter().position(|c| c == cell) {
                        Some(0) => {}
                        Some(k) => values[start + k - 1] = 1.0,
                        None => unseen += 1,
                    }
                }
            }
        }
        Ok(EncodedRow {
            values,
            unseen_categories: unseen,
        })
    }

    /// Column positions of the covariates in a CSV header.
    pub fn locate(&self, headers: &csv::StringRecord) -> Result<Vec<usize>> {
        self.columns
            .iter()
            .map(|c| column_index(headers, &c.name))
            .collect()
    }
}

fn is_missing(cell: &str) -> bool {
    MISSING_MARKERS.contains(&cell)
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|x| x.is_finite())
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Ingest(format!("unknown column {name:?}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: ColumnKind,
}

fn default_kind() -> ColumnKind {
    ColumnKind::Numeric
}

/// Column roles of a trial CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Treatment column with values 0 (control) and 1 (experimental).
    pub arm: String,
    /// Outcome columns in priority order.
    pub outcomes: Vec<String>,
    pub covariates: Vec<CovariateSpec>,
    /// z-score numeric covariates with pooled-arm moments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    control: Vec<Subject>,
    experimental: Vec<Subject>,
    encoding: CovariateEncoding,
}

impl TrialDataset {
    pub fn new(
        control: Vec<Subject>,
        experimental: Vec<Subject>,
        encoding: CovariateEncoding,
    ) -> Result<Self> {
        if control.is_empty() {
            return Err(Error::Ingest("control arm empty".into()));
        }
        if experimental.is_empty() {
            return Err(Error::Ingest("experimental arm empty".into()));
        }
        let d = encoding.dim();
        let k = control[0].outcomes.len();
        for (arm, subjects) in [(Arm::Control, &control), (Arm::Experimental, &experimental)] {
            for s in subjects.iter() {
                if s.arm != arm {
                    return Err(Error::InvalidValue(format!(
                        "subject tagged {:?} placed in the {:?} arm",
                        s.arm, arm
                    )));
                }
                if s.covariates.len() != d {
                    return Err(Error::Shape {
                        expected: d,
                        found: s.covariates.len(),
                    });
                }
                if s.outcomes.len() != k {
                    return Err(Error::Shape {
                        expected: k,
                        found: s.outcomes.len(),
                    });
                }
                if s.covariates.iter().chain(&s.outcomes).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidValue("non-finite subject value".into()));
                }
            }
        }
        Ok(TrialDataset {
            control,
            experimental,
            encoding,
        })
    }

    /// Builds a dataset from plain arrays with an identity encoding.
    pub fn from_arrays(
        control_x: Vec<Vec<f64>>,
        control_y: Vec<Vec<f64>>,
        experimental_u: Vec<Vec<f64>>,
        experimental_v: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if control_x.len() != control_y.len() {
            return Err(Error::Shape {
                expected: control_x.len(),
                found: control_y.len(),
            });
        }
        if experimental_u.len() != experimental_v.len() {
            return Err(Error::Shape {
                expected: experimental_u.len(),
                found: experimental_v.len(),
            });
        }
        let d = control_x.first().map_or(0, Vec::len);
        let control = control_x
            .into_iter()
            .zip(control_y)
            .map(|(x, y)| Subject::new(Arm::Control, x, y))
            .collect();
        let experimental = experimental_u
            .into_iter()
            .zip(experimental_v)
            .map(|(u, v)| Subject::new(Arm::Experimental, u, v))
            .collect();
        TrialDataset::new(control, experimental, CovariateEncoding::identity(d))
    }

    pub fn control(&self) -> &[Subject] {
        &self.control
    }

    pub fn experimental(&self) -> &[Subject] {
        &self.experimental
    }

    pub fn arm(&self, arm: Arm) -> &[Subject] {
        match arm {
            Arm::Control => &self.control,
            Arm::Experimental => &self.experimental,
        }
    }

    pub fn encoding(&self) -> &CovariateEncoding {
        &self.encoding
    }

    /// Number of control subjects.
    pub fn m(&self) -> usize {
        self.control.len()
    }

    /// Number of experimental subjects.
    pub fn n(&self) -> usize {
        self.experimental.len()
    }

    /// Encoded covariate dimension.
    pub fn dim(&self) -> usize {
        self.encoding.dim()
    }

    pub fn n_outcomes(&self) -> usize {
        self.control[0].outcomes.len()
    }

    pub fn check_spec(&self, spec: &ScoreSpec) -> Result<()> {
        if spec.len() != self.n_outcomes() {
            return Err(Error::Shape {
                expected: spec.len(),
                found: self.n_outcomes(),
            });
        }
        Ok(())
    }

    /// Keeps the listed subjects of each arm (indices may repeat).
    pub fn select(&self, control_idx: &[usize], experimental_idx: &[usize]) -> Result<Self> {
        let pick = |src: &[Subject], idx: &[usize]| -> Result<Vec<Subject>> {
            idx.iter()
                .map(|&i| {
                    src.get(i).cloned().ok_or_else(|| {
                        Error::Domain(format!("subject index {i} out of range"))
                    })
                })
                .collect()
        };
        TrialDataset::new(
            pick(&self.control, control_idx)?,
            pick(&self.experimental, experimental_idx)?,
            self.encoding.clone(),
        )
    }

    /// The same subjects with the arm labels exchanged.
    pub fn swapped(&self) -> Self {
        let relabel = |src: &[Subject], arm| {
            src.iter()
                .map(|s| Subject {
                    arm,
                    ..s.clone()
                })
                .collect()
        };
        TrialDataset {
            control: relabel(&self.experimental, Arm::Control),
            experimental: relabel(&self.control, Arm::Experimental),
            encoding: self.encoding.clone(),
        }
    }

    pub fn all_subjects(&self) -> impl Iterator<Item = &Subject> {
        self.control.iter().chain(&self.experimental)
    }
}

/// Reads a trial CSV from disk.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TrialDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    ingest_reader(file, schema).map_err(|e| match e {
        Error::Ingest(msg) => Error::Ingest(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct RawRow {
    line: usize,
    arm: Arm,
    outcomes: Vec<f64>,
    covariates: Vec<String>,
}

/// Reads trial data from any CSV source. Row numbers in errors count the
/// header as row 1.
pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<TrialDataset> {
    if schema.outcomes.is_empty() {
        return Err(Error::Config("schema lists no outcome columns".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingest(format!("cannot read header: {e}")))?
        .clone();
    let arm_col = column_index(&headers, &schema.arm)?;
    let outcome_cols = schema
        .outcomes
        .iter()
        .map(|n| column_index(&headers, n))
        .collect::<Result<Vec<_>>>()?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, &c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut missing_rows = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Ingest(format!("row {line}: {e}")))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();

        let mut missing = is_missing(cell(arm_col));
        let arm = if missing {
            Arm::Control
        } else {
            match parse_finite(cell(arm_col)) {
                Some(a) if a == 0.0 => Arm::Control,
                Some(a) if a == 1.0 => Arm::Experimental,
                _ => {
                    return Err(Error::Ingest(format!(
                        "row {line}: arm value {:?} in column {:?} is not 0 or 1",
                        cell(arm_col),
                        schema.arm
                    )))
                }
            }
        };
        let mut outcomes = Vec::with_capacity(outcome_cols.len());
        for (&c, name) in outcome_cols.iter().zip(&schema.outcomes) {
            if is_missing(cell(c)) {
                missing = true;
                continue;
            }
            outcomes.push(parse_finite(cell(c)).ok_or_else(|| {
                Error::Ingest(format!(
                    "row {line}: cannot parse outcome {name:?} value {:?}",
                    cell(c)
                ))
            })?);
        }
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (&c, spec) in cov_cols.iter().zip(&schema.covariates) {
            let v = cell(c);
            if is_missing(v) {
                missing = true;
            } else if spec.kind == ColumnKind::Numeric && parse_finite(v).is_none() {
                return Err(Error::Ingest(format!(
                    "row {line}: cannot parse numeric covariate {:?} value {v:?}",
                    spec.name
                )));
            }
            covariates.push(v.to_string());
        }
        if missing {
            missing_rows.push(line);
        } else {
            rows.push(RawRow {
                line,
                arm,
                outcomes,
                covariates,
            });
        }
    }
    if !missing_rows.is_empty() {
        let listed: Vec<String> = missing_rows.iter().take(20).map(|r| r.to_string()).collect();
        return Err(Error::Ingest(format!(
            "{} row(s) with missing values (imputation is not supported): rows {}{}",
            missing_rows.len(),
            listed.join(", "),
            if missing_rows.len() > 20 { ", ..." } else { "" }
        )));
    }

    let standardize = schema.standardize.unwrap_or(false);
    let mut columns = Vec::with_capacity(schema.covariates.len());
    for (k, spec) in schema.covariates.iter().enumerate() {
        let encoding = match spec.kind {
            ColumnKind::Numeric => {
                let standardization = if standardize {
                    let xs: Vec<f64> = rows
                        .iter()
                        .map(|r| parse_finite(&r.covariates[k]).unwrap_or(0.0))
                        .collect();
                    pooled_standardization(&xs)
                } else {
                    None
                };
                ColumnEncoding::Numeric { standardization }
            }
            ColumnKind::Categorical => {
                let categories: BTreeSet<&str> =
                    rows.iter().map(|r| r.covariates[k].as_str()).collect();
                if categories.is_empty() {
                    return Err(Error::Ingest(format!(
                        "categorical column {:?} has no observed values",
                        spec.name
                    )));
                }
                ColumnEncoding::Categorical {
                    categories: categories.into_iter().map(String::from).collect(),
                }
            }
        };
        columns.push(CovariateColumn {
            name: spec.name.clone(),
            encoding,
        });
    }
    let encoding = CovariateEncoding::new(columns)?;

    let mut control = Vec::new();
    let mut experimental = Vec::new();
    for row in rows {
        let raw: Vec<&str> = row.covariates.iter().map(String::as_str).collect();
        let encoded = encoding
            .encode(&raw)
            .map_err(|e| Error::Ingest(format!("row {}: {e}", row.line)))?;
        let subject = Subject::new(row.arm, encoded.values, row.outcomes);
        match row.arm {
            Arm::Control => control.push(subject),
            Arm::Experimental => experimental.push(subject),
        }
    }
    TrialDataset::new(control, experimental, encoding)
}

/// Mean and sample standard deviation; `None` for constant or single-value
/// columns, which are then left on their raw scale.
fn pooled_standardization(xs: &[f64]) -> Option<Standardization> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (sd > 0.0 && sd.is_finite()).then_some(Standardization { mean, sd })
}

/// A (control covariates, experimental covariates, score) triple.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub s: Score,
}

pub fn check_pair_budget(pairs: u128, budget: u64) -> Result<()> {
    if pairs > u128::from(budget) {
        return Err(Error::PairBudget { pairs, budget });
    }
    Ok(())
}

/// Scores of all `m * n` cross-arm pairs, control index outer.
pub fn pair_scores(data: &TrialDataset, spec: &ScoreSpec) -> Result<Vec<Score>> {
    data.check_spec(spec)?;
    let rows: Vec<Vec<Score>> = data
        .control
        .par_iter()
        .map(|c| {
            data.experimental
                .iter()
                .map(|e| score(spec, &c.outcomes, &e.outcomes))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

/// All cross-arm pair records in `(i, j)` order, control index outer.
pub fn build_pairs(data: &TrialDataset, spec: &ScoreSpec, budget: u64) -> Result<Vec<PairRecord>> {
    check_pair_budget(data.m() as u128 * data.n() as u128, budget)?;
    let scores = pair_scores(data, spec)?;
    let n = data.n();
    Ok(scores
        .into_iter()
        .enumerate()
        .map(|(p, s)| PairRecord {
            x: data.control[p / n].covariates.clone(),
            u: data.experimental[p % n].covariates.clone(),
            s,
        })
        .collect())
}

/// Mean pairwise score over every cross-arm pair.
pub fn net_benefit(data: &TrialDataset, spec: &ScoreSpec) -> Result<f64> {
    data.check_spec(spec)?;
    let total: i64 = data
        .control
        .par_iter()
        .map(|c| {
            data.experimental.iter().try_fold(0i64, |acc, e| {
                Ok::<_, Error>(acc + i64::from(score(spec, &c.outcomes, &e.outcomes)?.value()))
            })
        })
        .collect::<Result<Vec<i64>>>()?
        .into_iter()
        .sum();
    Ok(total as f64 / (data.m() as f64 * data.n() as f64))
}

/// Writes pairs as CSV with columns `x_1..x_d, u_1..u_d, sigma`.
pub fn write_pairs_csv<W: Write>(pairs: &[PairRecord], writer: W) -> Result<()> {
    let d = pairs.first().map_or(0, |p| p.x.len());
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<pairs>".into(),
        source: e,
    };
    let header: Vec<String> = (1..=d)
        .map(|k| format!("x_{k}"))
        .chain((1..=d).map(|k| format!("u_{k}")))
        .chain(std::iter::once("sigma".to_string()))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for p in pairs {
        let row: Vec<String> = p
            .x
            .iter()
            .chain(&p.u)
            .map(|v| v.to_string())
            .chain(std::iter::once(p.s.value().to_string()))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing pairs", e))?;
    Ok(())
}
