use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psar::weights::read_gal_file;
use serde_json::Value;
use tempfile::TempDir;

fn psar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = psar(args);
    assert!(
        out.status.success(),
        "psar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SIM_CONFIG: &str = r#"{
  "lattice": {"rows": 50, "cols": 50, "rule": "queen"},
  "true_theta": {
    "beta": [], "rho": 0.6, "lambda": [5.0], "gamma": [[0.5, 1.0]],
    "layout": {"covariates": 1, "hidden": 1, "linear": false, "intercept": false, "neuron_bias": true}
  },
  "family": {"name": "normal"},
  "x_mean": 0.5,
  "x_sd": 3.0,
  "replicates": 6,
  "seed": 7
}"#;

fn write_config(dir: &TempDir) -> PathBuf {
    let p = path(dir, "sim.json");
    std::fs::write(&p, SIM_CONFIG).unwrap();
    p
}

#[test]
fn queen_lattice_gal_matches_hand_written_adjacency() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "w.gal");
    let stdout = ok(&["weights", "--lattice", "3x3", "--rule", "queen", "--standardize", "--out", s(&out)]).stdout;
    assert!(String::from_utf8(stdout).unwrap().contains("rho interval (-1"));
    let adj = read_gal_file(&out).unwrap();
    let expected = [
        [0, 1, 0, 1, 1, 0, 0, 0, 0],
        [1, 0, 1, 1, 1, 1, 0, 0, 0],
        [0, 1, 0, 0, 1, 1, 0, 0, 0],
        [1, 1, 0, 0, 1, 0, 1, 1, 0],
        [1, 1, 1, 1, 0, 1, 1, 1, 1],
        [0, 1, 1, 0, 1, 0, 0, 1, 1],
        [0, 0, 0, 1, 1, 0, 0, 1, 0],
        [0, 0, 0, 1, 1, 1, 1, 0, 1],
        [0, 0, 0, 0, 1, 1, 0, 1, 0],
    ];
    for (i, row) in expected.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(adj.csr().get(i, j), v as f64, "({i},{j})");
        }
    }
}

#[test]
fn points_schemes_write_gal() {
    let dir = TempDir::new().unwrap();
    let pts = path(&dir, "pts.csv");
    std::fs::write(&pts, "x,y\n-3,0\n0,0\n1,0.2\n1,-0.2\n").unwrap();
    let out = path(&dir, "soi.gal");
    ok(&["weights", "--points", s(&pts), "--scheme", "soi", "--out", s(&out)]);
    let adj = read_gal_file(&out).unwrap();
    assert_eq!(adj.neighbors(1).collect::<Vec<_>>(), vec![0, 2, 3]);
    let knn = path(&dir, "knn.gal");
    ok(&["weights", "--points", s(&pts), "--scheme", "knn", "--k", "1", "--out", s(&knn)]);
    assert_eq!(read_gal_file(&knn).unwrap().csr().nnz(), 4);
}

#[test]
fn unknown_flag_is_a_usage_error_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "w.gal");
    let res = psar(&["weights", "--lattice", "3x3", "--bogus", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
    assert_eq!(psar(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one_with_one_line() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "missing.csv");
    let res = psar(&[
        "fit", "--data", s(&missing), "--weights", s(&missing), "--family", "normal", "--neurons", "1", "--out",
        s(&path(&dir, "fit.json")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(String::from_utf8(res.stderr).unwrap().trim().lines().count(), 1);
}

#[test]
fn df_flag_is_tied_to_the_t_family() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir);
    let data = path(&dir, "data.csv");
    let w = path(&dir, "w.gal");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data), "--weights-out", s(&w)]);
    let fit = path(&dir, "fit.json");
    let base = ["fit", "--data", s(&data), "--weights", s(&w), "--neurons", "1", "--out", s(&fit)];
    let mut no_df = base.to_vec();
    no_df.extend(["--family", "t"]);
    assert_eq!(psar(&no_df).status.code(), Some(1));
    let mut stray_df = base.to_vec();
    stray_df.extend(["--family", "normal", "--df", "5"]);
    assert_eq!(psar(&stray_df).status.code(), Some(1));
    assert!(!fit.exists());
}

#[test]
fn simulate_fit_infer_pipeline() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir);
    let data = path(&dir, "data.csv");
    let eps = path(&dir, "eps.csv");
    let w = path(&dir, "w.gal");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&data), "--eps", s(&eps), "--weights-out", s(&w)]);
    let header = std::fs::read_to_string(&data).unwrap();
    assert!(header.starts_with("y,x1\n"));

    let fit = path(&dir, "fit.json");
    let fit_args = [
        "fit", "--data", s(&data), "--weights", s(&w), "--family", "normal", "--neurons", "1", "--no-linear",
        "--neuron-bias", "--seed", "3", "--out", s(&fit),
    ];
    ok(&fit_args);
    let f = read_json(&fit);
    assert_eq!(f["converged"], Value::Bool(true));
    let theta = &f["theta"];
    let est = [
        theta["rho"].as_f64().unwrap(),
        theta["lambda"][0].as_f64().unwrap(),
        theta["gamma"][0][0].as_f64().unwrap(),
        theta["gamma"][0][1].as_f64().unwrap(),
    ];
    let centers = [0.6178, 4.8504, 0.5410, 1.0576];
    let sds = [0.0075, 0.0812, 0.0425, 0.0431];
    for k in 0..4 {
        assert!((est[k] - centers[k]).abs() <= 4.0 * sds[k], "parameter {k}: {}", est[k]);
    }

    let again = path(&dir, "fit2.json");
    let mut args2 = fit_args.to_vec();
    *args2.last_mut().unwrap() = s(&again);
    ok(&args2);
    assert_eq!(std::fs::read(&fit).unwrap(), std::fs::read(&again).unwrap());

    let sar = path(&dir, "sar.json");
    ok(&[
        "fit", "--data", s(&data), "--weights", s(&w), "--family", "normal", "--neurons", "0", "--out", s(&sar),
    ]);

    let inf = path(&dir, "infer.json");
    ok(&[
        "infer", "--fit", s(&fit), "--data", s(&data), "--weights", s(&w), "--level", "0.95", "--null-fit", s(&sar),
        "--out", s(&inf),
    ]);
    let r = read_json(&inf);
    assert_eq!(r["loglik"].as_f64(), f["loglik"].as_f64());
    assert_eq!(r["se"].as_array().unwrap().len(), 4);
    let ci = &r["intervals"][0];
    assert!(ci["lower"].as_f64().unwrap() < est[0] && est[0] < ci["upper"].as_f64().unwrap());
    assert!(r["moran"]["p"].as_f64().unwrap() >= 0.0);
    assert!((r["aic"].as_f64().unwrap() - (8.0 - 2.0 * f["loglik"].as_f64().unwrap())).abs() < 1e-9);
    assert_eq!(r["lrt"]["df"].as_u64(), Some(2));
    assert!(r["lrt"]["p"].as_f64().unwrap() < 0.05);
}

#[test]
fn laplace_inference_disables_covariance() {
    let dir = TempDir::new().unwrap();
    let cfg_path = path(&dir, "sim.json");
    std::fs::write(&cfg_path, SIM_CONFIG.replace(r#""name": "normal""#, r#""name": "laplace""#)).unwrap();
    let data = path(&dir, "data.csv");
    let w = path(&dir, "w.gal");
    ok(&["simulate", "--config", s(&cfg_path), "--out", s(&data), "--weights-out", s(&w)]);
    let fit = path(&dir, "fit.json");
    ok(&[
        "fit", "--data", s(&data), "--weights", s(&w), "--family", "laplace", "--neurons", "1", "--no-linear",
        "--neuron-bias", "--out", s(&fit),
    ]);
    let inf = path(&dir, "infer.json");
    let out = ok(&["infer", "--fit", s(&fit), "--data", s(&data), "--weights", s(&w), "--out", s(&inf)]);
    let r = read_json(&inf);
    assert!(r["se"].is_null());
    assert!(r["covariance_note"].as_str().unwrap().contains("not twice differentiable"));
    assert!(String::from_utf8(out.stderr).unwrap().contains("not twice differentiable"));
}

#[test]
fn monte_carlo_is_thread_count_independent_and_feeds_qq() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir);
    let one = path(&dir, "mc1.csv");
    let many = path(&dir, "mc3.csv");
    ok(&["mc", "--config", s(&cfg), "--replicates", "4", "--threads", "1", "--out", s(&one)]);
    ok(&["mc", "--config", s(&cfg), "--replicates", "4", "--threads", "3", "--out", s(&many)]);
    let text = std::fs::read_to_string(&one).unwrap();
    assert_eq!(text, std::fs::read_to_string(&many).unwrap());
    assert!(text.starts_with("replicate,converged,loglik,iterations,rho,lambda,gamma0,gamma1\n"));
    assert!(text.contains("\nmean,") && text.contains("\nsd,"));

    let qq = path(&dir, "qq.csv");
    ok(&["qq", "--mc", s(&one), "--param", "rho", "--out", s(&qq)]);
    let rows: Vec<Vec<f64>> = std::fs::read_to_string(&qq)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|p| p[0][0] < p[1][0] && p[0][1] <= p[1][1]));
    assert_eq!(psar(&["qq", "--mc", s(&one), "--param", "nope", "--out", s(&qq)]).status.code(), Some(1));
}
