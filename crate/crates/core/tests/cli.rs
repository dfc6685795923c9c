use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gpc(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gpc-itr"));
    cmd.args(args).env_remove("GPC_ITR_THREADS").env("RUST_LOG", "off");
    if let Some(t) = threads {
        cmd.env("GPC_ITR_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gpc(args, None);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, scenario: &str, n: &str, eval: &str, seed: &str) {
    ok(&["simulate", "--scenario", scenario, "--n", n, "--eval", eval, "--seed", seed, "--out", p(dir)]);
}

#[test]
fn simulate_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    simulate(a.path(), "2", "60", "40", "11");
    simulate(b.path(), "2", "60", "40", "11");
    for f in ["train.csv", "eval.csv", "config.toml", "params.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let train = fs::read_to_string(a.path().join("train.csv")).unwrap();
    let mut lines = train.lines();
    assert_eq!(lines.next().unwrap(), "x0,x1,x2,x3,x4,x5,x6,x7,x8,y1,y2,arm,oracle_ipb");
    let arms: Vec<&str> = lines.map(|l| l.split(',').nth(11).unwrap()).collect();
    assert_eq!(arms.len(), 60);
    assert!(arms[..30].iter().all(|&a| a == "0") && arms[30..].iter().all(|&a| a == "1"));
}

#[test]
fn fit_predict_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulate(d, "1", "120", "200", "7");
    let (train, eval, config) = (d.join("train.csv"), d.join("eval.csv"), d.join("config.toml"));
    let model = d.join("model.bin");
    let report = d.join("fit.json");
    ok(&["fit", "--data", p(&train), "--config", p(&config), "--trees", "15", "--out", p(&model), "--report", p(&report)]);
    let fit: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(fit["control"], 60);
    assert_eq!(fit["features"].as_array().unwrap().len(), 8);

    let pred = d.join("pred.csv");
    ok(&["predict", "--model", p(&model), "--data", p(&eval), "--out", p(&pred)]);
    let mut rdr = csv::Reader::from_path(&pred).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(headers.len(), 15);
    assert_eq!(&headers[13], "ipb");
    assert_eq!(&headers[14], "rule");
    let mut rows = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        let ipb: f64 = r[13].parse().unwrap();
        assert!((-1.0..=1.0).contains(&ipb));
        assert_eq!(&r[14], if ipb > 0.0 { "1" } else { "0" });
        rows += 1;
    }
    assert_eq!(rows, 200);

    let json = d.join("metrics.json");
    let cal = d.join("cal.csv");
    let table = ok(&["evaluate", "--predictions", p(&pred), "--json", p(&json), "--calibration", p(&cal)]);
    assert!(table.starts_with("metric,value\nn,200\n"));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let auc = metrics["classification"]["auc"].as_f64().unwrap();
    assert!(auc > 0.5, "auc {auc}");
    assert!(fs::read_to_string(&cal).unwrap().starts_with("bin_center,"));
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulate(d, "2", "80", "50", "5");
    let (train, eval, config) = (d.join("train.csv"), d.join("eval.csv"), d.join("config.toml"));
    let mut seen: Vec<Vec<Vec<u8>>> = Vec::new();
    for t in ["1", "3"] {
        let model = d.join(format!("m{t}.bin"));
        let pred = d.join(format!("p{t}.csv"));
        let bench = d.join(format!("bench{t}"));
        let run = |args: &[&str]| {
            let out = gpc(args, Some(t));
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out.stdout
        };
        run(&["fit", "--data", p(&train), "--config", p(&config), "--method", "bagged", "--bags", "4", "--trees", "8", "--out", p(&model)]);
        run(&["predict", "--model", p(&model), "--data", p(&eval), "--out", p(&pred)]);
        let cross = run(&["evaluate", "--data", p(&train), "--config", p(&config), "--trees", "8", "--bootstrap", "10"]);
        let table = run(&[
            "benchmark", "--scenario", "1", "--sizes", "40,60", "--iterations", "2", "--eval", "100", "--trees", "5", "--out", p(&bench),
        ]);
        seen.push(vec![
            fs::read(&model).unwrap(),
            fs::read(&pred).unwrap(),
            cross,
            table,
            fs::read(bench.join("summary.csv")).unwrap(),
            fs::read(bench.join("report.json")).unwrap(),
        ]);
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulate(d, "1", "20", "10", "1");
    let (train, config) = (d.join("train.csv"), d.join("config.toml"));
    let model = d.join("m.bin");

    assert_eq!(gpc(&["fit", "--nonsense"], None).status.code(), Some(2));
    assert_eq!(gpc(&["simulate", "--scenario", "3", "--n", "10", "--out", p(d)], None).status.code(), Some(2));
    assert_eq!(gpc(&["simulate", "--scenario", "1", "--n", "10", "--out", p(d)], Some("zero")).status.code(), Some(2));

    let knn = gpc(&["fit", "--data", p(&train), "--config", p(&config), "--method", "knn", "--c", "11", "--out", p(&model)], None);
    assert_eq!(knn.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&knn.stderr).contains("c = 11"));

    let budget = gpc(&["fit", "--data", p(&train), "--config", p(&config), "--pair-budget", "99", "--out", p(&model)], None);
    assert_eq!(budget.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&budget.stderr).contains("--method bagged"));

    let missing = gpc(&["netbenefit", "--data", p(&d.join("absent.csv")), "--config", p(&config)], None);
    assert_eq!(missing.status.code(), Some(4));
    let not_model = gpc(&["predict", "--model", p(&config), "--data", p(&train)], None);
    assert_eq!(not_model.status.code(), Some(3));
}

#[test]
fn predict_edge_cases() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulate(d, "1", "40", "10", "2");
    let (train, config) = (d.join("train.csv"), d.join("config.toml"));
    let model = d.join("m.bin");
    ok(&["fit", "--data", p(&train), "--config", p(&config), "--method", "knn", "--out", p(&model)]);

    let text = fs::read_to_string(&train).unwrap();
    let header = text.lines().next().unwrap();
    let empty = d.join("empty.csv");
    fs::write(&empty, format!("{header}\n")).unwrap();
    let out = ok(&["predict", "--model", p(&model), "--data", p(&empty)]);
    assert_eq!(out, format!("{header},ipb,rule\n"));

    let mut lines: Vec<String> = text.lines().take(4).map(String::from).collect();
    let mut cells: Vec<&str> = lines[2].split(',').collect();
    cells[3] = "oops";
    lines[2] = cells.join(",");
    let bad = d.join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let res = gpc(&["predict", "--model", p(&model), "--data", p(&bad)], None);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("row 3"), "{err}");
    assert!(res.stdout.is_empty());
}

#[test]
fn netbenefit_single_pair_and_strata() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let config = d.join("config.toml");
    fs::write(
        &config,
        "[data]\narm = \"arm\"\noutcomes = [\"y\"]\ncovariates = [{ name = \"x\" }]\n\n[[score]]\nkind = \"binary\"\n",
    )
    .unwrap();
    let one = d.join("one.csv");
    fs::write(&one, "x,y,arm\n0.5,0,0\n1.5,1,1\n").unwrap();
    let out = ok(&["netbenefit", "--data", p(&one), "--config", p(&config), "--bootstrap", "20"]);
    assert_eq!(out, "net_benefit 1\nse 0\n");

    let strata = d.join("strata.csv");
    fs::write(&strata, "x,y,arm,site\n0,0,0,a\n0,1,0,b\n0,1,1,a\n0,0,1,b\n0,1,1,b\n").unwrap();
    let json = d.join("nb.json");
    ok(&["netbenefit", "--data", p(&strata), "--config", p(&config), "--strata", "site", "--json", p(&json)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let nb = v["net_benefit"].as_f64().unwrap();
    assert!((nb - (1.0 + 0.0 - 1.0 + 0.0 + 0.0 + 1.0) / 6.0).abs() < 1e-12);
    assert!(v["gamma"].as_f64().is_some());
}

#[test]
fn evaluate_perfect_and_single_class_predictions() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let perfect = d.join("perfect.csv");
    fs::write(&perfect, "ipb,oracle_ipb\n0.4,0.4\n-0.2,-0.2\n0.1,0.1\n-0.5,-0.5\n").unwrap();
    let table = ok(&["evaluate", "--predictions", p(&perfect)]);
    assert!(table.lines().any(|l| l == "auc,1"), "{table}");
    assert!(table.lines().any(|l| l == "rmse_ipb,0"), "{table}");

    let single = d.join("single.csv");
    fs::write(&single, "ipb,oracle_ipb\n0.4,0.3\n-0.2,0.1\n").unwrap();
    let out = gpc(&["evaluate", "--predictions", p(&single)], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("auc,NA"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("single class"));

    let missing = gpc(&["evaluate", "--predictions", p(&single), "--oracle-col", "truth"], None);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn benchmark_table_uses_mean_sd_cells() {
    let dir = TempDir::new().unwrap();
    let out = ok(&[
        "benchmark", "--scenario", "2", "--sizes", "40", "--iterations", "2", "--eval", "200", "--trees", "5",
        "--out", p(dir.path()),
    ]);
    let rmse = out.lines().find(|l| l.starts_with("rmse_ipb")).expect("rmse row");
    let cell = rmse.trim_start_matches("rmse_ipb").trim();
    let (mean, sd) = cell.split_once(" (").unwrap();
    assert_eq!(mean.split_once('.').unwrap().1.len(), 2, "{cell}");
    assert!(sd.ends_with(')') && sd.trim_end_matches(')').split_once('.').unwrap().1.len() == 2, "{cell}");
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.lines().count() > 1);
}
