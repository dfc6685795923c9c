use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gpc_itr::config::RunConfig;
use gpc_itr::data::{ingest_csv, ColumnKind, CovariateSpec, CsvSchema, TrialDataset};
use gpc_itr::eval::{
    bootstrap_se, conditional_aipb_se, crossfit_ipb, cv_forest_grid, evaluate_against_oracle, write_calibration_csv,
    AipbEntry, CvCell, MetricsReport, RuleSpec,
};
use gpc_itr::itr::{Estimator, ItrModel};
use gpc_itr::persist::{load_model, save_model};
use gpc_itr::seed::derive_seed;
use gpc_itr::sim::{
    make_params, run_benchmark, sample_population, trial_arm, BenchmarkConfig, Method, Pipeline, Scenario,
};
use gpc_itr::{net_benefit, Error, ForestConfig};

const THREADS_ENV: &str = "GPC_ITR_THREADS";

/// Individualized treatment rules for prioritized outcomes.
#[derive(Parser)]
#[command(name = "gpc-itr", version)]
struct Cli {
    /// Worker threads; overrides GPC_ITR_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic trial and evaluation population with oracle IPB.
    Simulate(SimulateArgs),
    /// Fit a treatment rule and write a model file.
    Fit(FitArgs),
    /// Predict IPB and recommended treatment for each CSV row.
    Predict(PredictArgs),
    /// Score predictions against an oracle, or cross-fit AIPB on trial data.
    Evaluate(EvaluateArgs),
    /// Net benefit of the experimental arm with a bootstrap standard error.
    Netbenefit(NetBenefitArgs),
    /// Monte Carlo campaign on a simulated scenario.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Default)]
struct ModelOverrides {
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Master seed for every random component.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    mtry: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    bags: Option<usize>,
    /// Subsampling probability of the bagged method.
    #[arg(long)]
    q: Option<f64>,
    /// Control neighbours of the kNN method.
    #[arg(long)]
    c: Option<usize>,
    /// Experimental neighbours of the kNN method.
    #[arg(long)]
    e: Option<usize>,
    #[arg(long)]
    pair_budget: Option<u64>,
}

impl ModelOverrides {
    fn apply(&self, config: &mut RunConfig) {
        if let Some(m) = self.method {
            config.method = m;
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.trees {
            config.forest.n_trees = t;
        }
        if self.mtry.is_some() {
            config.forest.mtry = self.mtry;
        }
        if let Some(l) = self.min_leaf {
            config.forest.min_leaf = l;
        }
        if self.max_depth.is_some() {
            config.forest.max_depth = self.max_depth;
        }
        if let Some(b) = self.bags {
            config.bagging.bags = b;
        }
        if self.q.is_some() {
            config.bagging.q = self.q;
        }
        if self.c.is_some() {
            config.knn.c = self.c;
        }
        if self.e.is_some() {
            config.knn.e = self.e;
        }
        if let Some(b) = self.pair_budget {
            config.pair_budget = b;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: u8,
    /// Training trial size, split evenly between the arms.
    #[arg(long)]
    n: usize,
    /// Evaluation population size.
    #[arg(long = "eval", default_value_t = 10_000)]
    eval_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: ModelOverrides,
    /// Cross-validated forest grid, e.g. `trees=100,200 mtry=4,8`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUES")]
    cv_grid: Vec<String>,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    /// Fit report (JSON).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SeMode {
    /// Hold the cross-fitted IPB values fixed and resample subjects.
    Conditional,
    /// Repeat the whole cross-fit on every bootstrap replicate.
    Refit,
}

#[derive(Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["predictions", "data"])))]
struct EvaluateArgs {
    /// Predictions joined with oracle IPB values.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "ipb")]
    ipb_col: String,
    #[arg(long, default_value = "oracle_ipb")]
    oracle_col: String,
    /// Trial data for cross-fitted AIPB.
    #[arg(long, requires = "config")]
    data: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ModelOverrides,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long, value_enum, default_value = "conditional")]
    se: SeMode,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Args)]
struct NetBenefitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Column of discrete strata; adds the proportion in favour.
    #[arg(long)]
    strata: Option<String>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: u8,
    #[arg(long, value_delimiter = ',', default_values_t = [400usize, 2000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long = "eval", default_value_t = 10_000)]
    eval_size: usize,
    #[command(flatten)]
    overrides: ModelOverrides,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Directory for summary.csv, calibration.csv and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> Failure {
    let context = context.into();
    move |e| Failure::Lib(Error::Io { context, source: e })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(io_err(format!("creating {}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err(format!("writing {}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn load_config(path: &Path, overrides: &ModelOverrides) -> CliResult<RunConfig> {
    let mut config = RunConfig::load(path)?;
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn simulated_config(scenario: Scenario, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        method: Method::Forest,
        pair_budget: gpc_itr::data::DEFAULT_PAIR_BUDGET,
        data: CsvSchema {
            arm: "arm".into(),
            outcomes: vec!["y1".into(), "y2".into()],
            covariates: (1..=8)
                .map(|k| CovariateSpec { name: format!("x{k}"), kind: ColumnKind::Numeric })
                .collect(),
            standardize: None,
        },
        score: scenario.score_spec().levels().to_vec(),
        forest: ForestConfig::default(),
        bagging: Default::default(),
        knn: Default::default(),
        evaluation: Default::default(),
    }
}

fn write_population(path: &Path, subjects: &[gpc_itr::sim::SimulatedSubject]) -> CliResult<()> {
    let wrap = |e: csv::Error| Failure::Lib(Error::Csv { path: path.to_path_buf(), source: e });
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (0..9).map(|k| format!("x{k}")).collect();
    header.extend(["y1", "y2", "arm", "oracle_ipb"].map(String::from));
    w.write_record(&header).map_err(wrap)?;
    for (i, s) in subjects.iter().enumerate() {
        let arm = trial_arm(i, subjects.len());
        let y = if arm == 0 { s.y0 } else { s.y1 };
        let mut row: Vec<String> = s.covariates.iter().map(|v| v.to_string()).collect();
        row.extend([y[0].to_string(), y[1].to_string(), arm.to_string(), s.oracle_ipb.to_string()]);
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err(format!("writing {}", path.display())))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    if args.n < 2 || args.eval_size < 1 {
        return Err(Error::InvalidValue("--n must be at least 2 and --eval at least 1".into()).into());
    }
    let scenario = Scenario::from_number(args.scenario)?;
    let params = make_params(scenario, args.seed);
    let train = sample_population(&params, args.n, 0)?;
    let eval = sample_population(&params, args.eval_size, 1)?;
    fs::create_dir_all(&args.out).map_err(io_err(format!("creating {}", args.out.display())))?;
    write_population(&args.out.join("train.csv"), &train)?;
    write_population(&args.out.join("eval.csv"), &eval)?;
    write_text(&args.out.join("params.json"), &to_json(&params)?)?;
    write_text(&args.out.join("config.toml"), &simulated_config(scenario, args.seed).to_toml_string()?)?;

    let oracle: Vec<f64> = eval.iter().map(|s| s.oracle_ipb).collect();
    let positive = oracle.iter().filter(|&&v| v > 0.0).count() as f64 / oracle.len() as f64;
    let aipb = gpc_itr::eval::aipb_hat(&RuleSpec::Constant0, &RuleSpec::Model, &oracle)?;
    let spectrum: Vec<String> = params.covariance_spectrum().iter().map(|v| format!("{v:.2}")).collect();
    println!("scenario {scenario}, seed {}", args.seed);
    println!("covariance spectrum [{}]", spectrum.join(", "));
    println!("train {} rows ({} control, {} experimental)", args.n, args.n / 2, args.n - args.n / 2);
    println!("eval {} rows, oracle rule positive share {positive:.4}", args.eval_size);
    println!("oracle AIPB(r0, r_opt) {aipb:.4}");
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    method: Method,
    seed: u64,
    control: usize,
    experimental: usize,
    features: Vec<String>,
    pipeline: Pipeline,
    #[serde(skip_serializing_if = "Option::is_none")]
    bag_sizes: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv: Option<CvReport>,
}

#[derive(Serialize)]
struct CvReport {
    folds: usize,
    cells: Vec<CvCell>,
    selected: usize,
}

fn parse_grid(items: &[String], base: &ForestConfig) -> CliResult<Vec<ForestConfig>> {
    let mut trees = vec![base.n_trees];
    let mut mtry = vec![base.mtry];
    for item in items {
        let (key, values) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("grid entry {item:?} is not KEY=V1,V2")))?;
        let parsed = values
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Failure::Usage(format!("grid entry {item:?} has a non-integer value")))?;
        if parsed.is_empty() || parsed.contains(&0) {
            return Err(Failure::Usage(format!("grid entry {item:?} needs positive values")));
        }
        match key.trim() {
            "trees" => trees = parsed,
            "mtry" => mtry = parsed.into_iter().map(Some).collect(),
            other => return Err(Failure::Usage(format!("unknown grid key {other:?}; use trees or mtry"))),
        }
    }
    Ok(trees
        .iter()
        .flat_map(|&t| mtry.iter().map(move |&m| ForestConfig { n_trees: t, mtry: m, ..base.clone() }))
        .collect())
}

fn cell_name(c: &CvCell) -> String {
    format!("trees={} mtry={}", c.n_trees, c.mtry.map_or("auto".to_string(), |m| m.to_string()))
}

fn pipeline_with_forest(config: &RunConfig, forest: &ForestConfig) -> Pipeline {
    let mut c = config.clone();
    c.forest = forest.clone();
    c.pipeline()
}

fn fit_with(config: &RunConfig, pipeline: &Pipeline, data: &TrialDataset, seed: u64) -> gpc_itr::Result<ItrModel> {
    if matches!(pipeline, Pipeline::FullPairs { .. }) {
        gpc_itr::data::check_pair_budget(data.m() as u128 * data.n() as u128, config.pair_budget)?;
    }
    pipeline.fit(data, &config.score_spec()?, seed)
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let mut config = load_config(&args.config, &args.overrides)?;
    let data = ingest_csv(&args.data, &config.data)?;
    let spec = config.score_spec()?;
    let mut cv = None;
    if !args.cv_grid.is_empty() {
        if config.method == Method::Knn {
            return Err(Failure::Usage("--cv-grid tunes forests; it does not apply to --method knn".into()));
        }
        let grid = parse_grid(&args.cv_grid, &config.forest)?;
        let cv_seed = derive_seed(config.seed, "cv", 0);
        let (cells, best) = cv_forest_grid(&data, &spec, &grid, args.cv_folds, cv_seed, |train, forest| {
            fit_with(&config, &pipeline_with_forest(&config, forest), train, config.seed)
        })?;
        for c in &cells {
            println!("cv {:<24} log-loss {:.6}", cell_name(c), c.log_loss);
        }
        println!("selected {}", cell_name(&cells[best]));
        config.forest = grid[best].clone();
        cv = Some(CvReport { folds: args.cv_folds, cells, selected: best });
    }
    let pipeline = config.pipeline();
    let model = fit_with(&config, &pipeline, &data, config.seed)?;
    save_model(&model, &args.out)?;
    let bag_sizes = match model.estimator() {
        Estimator::Bagged { ensemble, .. } => Some(ensemble.sizes.clone()),
        _ => None,
    };
    let report = FitReport {
        method: config.method,
        seed: config.seed,
        control: data.m(),
        experimental: data.n(),
        features: data.encoding().feature_names(),
        pipeline,
        bag_sizes,
        cv,
    };
    if let Some(path) = &args.report {
        write_text(path, &to_json(&report)?)?;
    }
    println!(
        "fitted {} model on {} control and {} experimental subjects, wrote {}",
        model.variant(),
        data.m(),
        data.n(),
        args.out.display()
    );
    Ok(())
}

fn open_csv(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Failure::Lib(Error::Csv { path: path.to_path_buf(), source: e }))
}

fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    let model = load_model(&args.model)?;
    let mut rdr = open_csv(&args.data)?;
    let csv_err = |e: csv::Error| Failure::Lib(Error::Csv { path: args.data.clone(), source: e });
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols = model.encoding().locate(&headers).map_err(|e| match e {
        Error::Ingest(msg) => Error::Ingest(format!("{}: {msg}", args.data.display())),
        other => other,
    })?;

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut unseen_rows = 0usize;
    for (k, record) in rdr.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(csv_err)?;
        let raw: Vec<&str> = cols.iter().map(|&c| record.get(c).unwrap_or("")).collect();
        let result = model
            .encoding()
            .encode(&raw)
            .and_then(|enc| Ok((model.ipb_encoded(&enc.values)?, enc.unseen_categories)));
        match result {
            Ok((ipb, unseen)) => {
                unseen_rows += usize::from(unseen > 0);
                rows.push((record, ipb));
            }
            Err(e) => failures.push(format!("row {line}: {e}")),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("{f}");
        }
        return Err(Error::Ingest(format!("{} rows could not be encoded", failures.len())).into());
    }
    if unseen_rows > 0 {
        eprintln!("warning: {unseen_rows} rows had unseen categories and were encoded as the reference category");
    }

    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let out_name = args.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let wrap = |e: csv::Error| Failure::Lib(Error::Csv { path: out_name.clone(), source: e });
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = headers.iter().collect();
    header.extend(["ipb", "rule"]);
    w.write_record(&header).map_err(wrap)?;
    for (record, ipb) in &rows {
        let mut row: Vec<String> = record.iter().map(String::from).collect();
        row.push(ipb.to_string());
        row.push(u8::from(*ipb > 0.0).to_string());
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(io_err("writing predictions"))?;
    Ok(())
}

fn read_columns(path: &Path, names: &[&str]) -> CliResult<Vec<Vec<f64>>> {
    let mut rdr = open_csv(path)?;
    let csv_err = |e: csv::Error| Failure::Lib(Error::Csv { path: path.to_path_buf(), source: e });
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| Failure::Lib(Error::Ingest(format!("{}: no column {n:?}", path.display()))))
        })
        .collect::<CliResult<Vec<usize>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (c, &i) in idx.iter().enumerate() {
            let cell = record.get(i).unwrap_or("").trim();
            let v = cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Failure::Lib(Error::Ingest(format!("{}: row {}: cannot parse {cell:?} in {}", path.display(), k + 2, names[c])))
            })?;
            cols[c].push(v);
        }
    }
    Ok(cols)
}

fn emit_report(report: &MetricsReport, args: &EvaluateArgs) -> CliResult<()> {
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    io::stdout().write_all(&buf).map_err(io_err("writing to stdout"))?;
    if let Some(p) = &args.csv {
        let mut w = create(p)?;
        w.write_all(&buf).and_then(|_| w.flush()).map_err(io_err(format!("writing {}", p.display())))?;
    }
    if let Some(p) = &args.json {
        write_text(p, &to_json(report)?)?;
    }
    if let Some(p) = &args.calibration {
        write_calibration_csv(&report.calibration, create(p)?)?;
    }
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    if let Some(pred) = &args.predictions {
        let cols = read_columns(pred, &[&args.ipb_col, &args.oracle_col])?;
        if cols[0].is_empty() {
            return Err(Error::Domain(format!("{}: no rows to evaluate", pred.display())).into());
        }
        let report = evaluate_against_oracle(&cols[0], &cols[1], args.bins.unwrap_or(20))?;
        if report.classification.as_ref().is_some_and(|c| c.auc.is_none()) {
            eprintln!("warning: the oracle rule has a single class; AUC, MCC and one of sensitivity/specificity are NA");
        }
        return emit_report(&report, args);
    }

    let data_path = args.data.as_ref().expect("clap group");
    let config_path = args.config.as_ref().expect("clap requires");
    let config = load_config(config_path, &args.overrides)?;
    let data = ingest_csv(data_path, &config.data)?;
    let folds = args.folds.unwrap_or(config.evaluation.folds);
    let b_boot = args.bootstrap.unwrap_or(config.evaluation.bootstrap);
    let pipeline = config.pipeline();
    let fold_seed = derive_seed(config.seed, "crossfit", 0);
    let fit = |train: &TrialDataset, k: usize| fit_with(&config, &pipeline, train, derive_seed(config.seed, "crossfit_fit", k as u64));
    let oof = crossfit_ipb(&data, folds, fold_seed, fit)?;
    let pairs = [
        ("r0_vs_estimated_rule", RuleSpec::Constant0, RuleSpec::Model),
        ("r1_vs_estimated_rule", RuleSpec::Constant1, RuleSpec::Model),
        ("r0_vs_r1", RuleSpec::Constant0, RuleSpec::Constant1),
    ];
    let boot_seed = derive_seed(config.seed, "bootstrap_se", 0);
    let mut aipb = BTreeMap::new();
    for (name, r, s) in pairs {
        let estimate = oof.aipb(&r, &s)?.estimate;
        let se = match args.se {
            SeMode::Conditional => conditional_aipb_se(&oof.ipb, data.m(), &r, &s, b_boot, boot_seed)?.se,
            SeMode::Refit => {
                bootstrap_se(&data, b_boot, boot_seed, |sample, _| {
                    crossfit_ipb(sample, folds, fold_seed, fit)?.aipb(&r, &s).map(|c| c.estimate)
                })?
                .se
            }
        };
        aipb.insert(name.to_string(), AipbEntry { estimate, se: Some(se) });
    }
    let report = MetricsReport { n: data.m() + data.n(), aipb, ..Default::default() };
    emit_report(&report, args)
}

#[derive(Serialize)]
struct NetBenefitReport {
    control: usize,
    experimental: usize,
    net_benefit: f64,
    se: f64,
    bootstrap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

fn read_strata(path: &Path, schema: &CsvSchema, column: &str) -> CliResult<(Vec<String>, Vec<String>)> {
    let mut rdr = open_csv(path)?;
    let csv_err = |e: csv::Error| Failure::Lib(Error::Csv { path: path.to_path_buf(), source: e });
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let find = |n: &str| {
        headers
            .iter()
            .position(|h| h.trim() == n)
            .ok_or_else(|| Failure::Lib(Error::Ingest(format!("{}: no column {n:?}", path.display()))))
    };
    let (arm, strat) = (find(&schema.arm)?, find(column)?);
    let (mut c, mut e) = (Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let label = record.get(strat).unwrap_or("").trim().to_string();
        match record.get(arm).unwrap_or("").trim() {
            "0" => c.push(label),
            _ => e.push(label),
        }
    }
    Ok((c, e))
}

fn cmd_netbenefit(args: &NetBenefitArgs) -> CliResult<()> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let data = ingest_csv(&args.data, &config.data)?;
    let spec = config.score_spec()?;
    let b_boot = args.bootstrap.unwrap_or(config.evaluation.bootstrap);
    let boot = bootstrap_se(&data, b_boot, derive_seed(config.seed, "netbenefit", 0), |d, _| net_benefit(d, &spec))?;
    let gamma = match &args.strata {
        Some(col) => {
            let (c, e) = read_strata(&args.data, &config.data, col)?;
            Some(gpc_itr::eval::gamma_discrete(&c, &e, &data, &spec)?)
        }
        None => None,
    };
    let report = NetBenefitReport {
        control: data.m(),
        experimental: data.n(),
        net_benefit: boot.estimate,
        se: boot.se,
        bootstrap: b_boot,
        gamma,
    };
    println!("net_benefit {}", report.net_benefit);
    println!("se {}", report.se);
    if let Some(g) = gamma {
        println!("gamma {g}");
    }
    if let Some(p) = &args.json {
        write_text(p, &to_json(&report)?)?;
    }
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    let scenario = Scenario::from_number(args.scenario)?;
    let mut config = simulated_config(scenario, 0);
    args.overrides.apply(&mut config);
    config.validate()?;
    let bench = BenchmarkConfig {
        scenario,
        train_sizes: args.sizes.clone(),
        iterations: args.iterations,
        eval_size: args.eval_size,
        seed: config.seed,
        pipeline: config.pipeline(),
        calibration_bins: args.bins,
    };
    let report = run_benchmark(&bench)?;
    print!("{}", report.table());
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        report.write_summary_csv(create(&dir.join("summary.csv"))?)?;
        report.write_calibration_csv(create(&dir.join("calibration.csv"))?)?;
        write_text(&dir.join("report.json"), &to_json(&report)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Netbenefit(a) => cmd_netbenefit(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 3 } else { 4 })
        }
    }
}
