use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mssl_cli::io::{read_matrix, read_table, write_matrix};
use ndarray::Array2;
use proptest::prelude::{prop_assert_eq, proptest};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["mssl"];
    full.extend_from_slice(args);
    mssl_cli::run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--out", s(dir)];
    args.extend_from_slice(extra);
    assert_eq!(run(&args), 0);
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn column(table: &(Vec<String>, Vec<Vec<String>>), name: &str) -> Vec<String> {
    let c = table.0.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    table.1.iter().map(|r| r[c].clone()).collect()
}

#[test]
fn simulate_writes_stated_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "200", "--p", "500", "--q", "4", "--structure", "ar1", "--regime", "uniform", "--seed", "7"]);
    assert_eq!(read_matrix(&d.join("X.csv")).unwrap().dim(), (200, 500));
    assert_eq!(read_matrix(&d.join("Y.csv")).unwrap().dim(), (200, 4));
    assert_eq!(read_matrix(&d.join("truth_B.csv")).unwrap().dim(), (500, 4));
    assert_eq!(read_matrix(&d.join("truth_Omega.csv")).unwrap().dim(), (4, 4));
    assert_eq!(fs::read_to_string(d.join("kinds.csv")).unwrap(), "continuous\ncontinuous\nbinary\nbinary\n");
    assert!(d.join("manifest.json").exists());
}

#[test]
fn invalid_structure_is_a_usage_error_naming_all_structures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mssl"))
        .args(["simulate", "--structure", "ring", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    for name in ["ar1", "ar2", "block", "star", "small-world", "tree"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["fit", "--bogus"]), 1);
    assert_eq!(run(&["fit", "--out", s(tmp.path()), "--data", "/nonexistent/dir"]), 2);
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "20", "--p", "3", "--q", "2"]);
    fs::write(d.join("X.csv"), "1,2,3\n4,x,6\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mssl"))
        .args(["fit", "--data", s(&d), "--out", s(&tmp.path().join("f"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("row 2, column 2"));
    fs::write(d.join("X.csv"), "1,2,3\n4,5\n").unwrap();
    assert_eq!(run(&["fit", "--data", s(&d), "--out", s(&tmp.path().join("f"))]), 2);
}

#[test]
fn continuous_fit_needs_no_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "60", "--p", "8", "--q", "3", "--q-binary", "0", "--seed", "2"]);
    let f = tmp.path().join("f");
    let grid = ["--lambda0-grid", "10:30:2", "--xi0-grid", "5,20"];
    let mut args = vec!["fit", "--data", s(&d), "--out", s(&f)];
    args.extend(grid);
    assert_eq!(run(&args), 0);
    let diag = read_table(&f.join("path_diagnostics.csv")).unwrap();
    assert_eq!(diag.1.len(), 4);
    assert!(column(&diag, "draws").iter().all(|v| v == "1"));
    assert!(column(&diag, "sampler_fallbacks").iter().all(|v| v == "0"));
}

#[test]
fn lambda_grid_flag_sets_ten_ladder_points() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "40", "--p", "5", "--q", "2", "--seed", "4"]);
    let f = tmp.path().join("f");
    let args = [
        "fit", "--data", s(&d), "--out", s(&f), "--H", "10", "--max-outer", "3", "--lambda0-grid", "10:100:10",
        "--xi0-grid", "4",
    ];
    assert_eq!(run(&args), 0);
    let diag = read_table(&f.join("path_diagnostics.csv")).unwrap();
    let lambdas: Vec<f64> = column(&diag, "lambda0").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(lambdas, (1..=10).map(|i| 10.0 * i as f64).collect::<Vec<_>>());
}

#[test]
fn fit_is_byte_identical_and_replays_from_its_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "50", "--p", "6", "--q", "3", "--seed", "5"]);
    let fit = |out: &Path, threads: &str| {
        let args = [
            "fit", "--data", s(&d), "--out", s(out), "--H", "200", "--seed", "3", "--lambda0-grid", "10,50",
            "--xi0-grid", "5,50", "--max-outer", "6", "--threads", threads,
        ];
        assert_eq!(run(&args), 0);
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    fit(&a, "1");
    fit(&b, "3");
    assert_eq!(tree_bytes(&a), tree_bytes(&b));

    let r = tmp.path().join("r");
    let manifest = a.join("manifest.json");
    assert_eq!(run(&["fit", "--manifest", s(&manifest), "--out", s(&r)]), 0);
    assert_eq!(tree_bytes(&a), tree_bytes(&r));

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m["hyperparameters"]["h"], 200);
    assert_eq!(m["grid_diagnostics"].as_array().unwrap().len(), 4);
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("sim.cfg");
    fs::write(&cfg, "# small problem\nn = 30\np = 4\nq-binary = 1\nq = 3\n").unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--config", s(&cfg), "--n", "25"]);
    assert_eq!(read_matrix(&d.join("X.csv")).unwrap().dim(), (25, 4));
    assert_eq!(fs::read_to_string(d.join("kinds.csv")).unwrap(), "continuous\ncontinuous\nbinary\n");
    fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(run(&["simulate", "--config", s(&cfg), "--out", s(&d)]), 1);
}

fn fake_fit(dir: &Path, b: &Array2<f64>, omega: &Array2<f64>) {
    fs::create_dir_all(dir).unwrap();
    write_matrix(&dir.join("B_hat.csv"), b.view()).unwrap();
    write_matrix(&dir.join("Omega_hat.csv"), omega.view()).unwrap();
}

#[test]
fn evaluating_the_truth_gives_perfect_support() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "40", "--p", "10", "--q", "4", "--seed", "8", "--n-test", "30"]);
    let b = read_matrix(&d.join("truth_B.csv")).unwrap();
    let omega = read_matrix(&d.join("truth_Omega.csv")).unwrap();
    let f = tmp.path().join("truth_fit");
    fake_fit(&f, &b, &omega);
    let e = tmp.path().join("e");
    let test = d.join("test");
    let args = ["evaluate", "--fit", s(&f), "--truth", s(&d), "--test", s(&test), "--out", s(&e)];
    assert_eq!(run(&args), 0);
    let table = read_table(&e.join("metrics.csv")).unwrap();
    for name in ["B_SEN", "B_SPEC", "B_PREC", "B_ACC", "O_SEN", "O_SPEC", "O_PREC", "O_ACC"] {
        for v in column(&table, name) {
            assert!(v == "1.0" || v == "NA", "{name} = {v}");
        }
    }
    assert_eq!(column(&table, "RFE")[0], "0.0");
    assert_eq!(column(&table, "TIME")[0], "NA");
}

#[test]
fn missing_truth_omega_drops_only_omega_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    simulate(&d, &["--n", "20", "--p", "5", "--q", "2", "--seed", "1"]);
    fs::remove_file(d.join("truth_Omega.csv")).unwrap();
    let b = read_matrix(&d.join("truth_B.csv")).unwrap();
    let f = tmp.path().join("f");
    fake_fit(&f, &b, &Array2::eye(2));
    let e = tmp.path().join("e");
    assert_eq!(run(&["evaluate", "--fit", s(&f), "--truth", s(&d), "--out", s(&e)]), 0);
    let table = read_table(&e.join("metrics.csv")).unwrap();
    assert!(table.0.iter().all(|h| !h.starts_with("O_")));
    assert_eq!(column(&table, "B_ACC"), ["1.0", "1.0"]);
}

#[test]
fn evaluate_appends_a_mean_row() {
    let tmp = tempfile::tempdir().unwrap();
    let truth_dir = tmp.path().join("t");
    fs::create_dir_all(&truth_dir).unwrap();
    let truth = ndarray::array![[1.0, 0.0], [0.0, 2.0], [0.0, 0.0], [3.0, 0.0]];
    write_matrix(&truth_dir.join("truth_B.csv"), truth.view()).unwrap();
    // Supports: exact, one false positive, one false negative.
    let fits = [
        truth.clone(),
        ndarray::array![[1.0, 0.0], [0.0, 2.0], [5.0, 0.0], [3.0, 0.0]],
        ndarray::array![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [3.0, 0.0]],
    ];
    let mut args = vec!["evaluate".to_string(), "--truth".into(), s(&truth_dir).into()];
    for (i, b) in fits.iter().enumerate() {
        let dir = tmp.path().join(format!("fit{i}"));
        fake_fit(&dir, b, &Array2::eye(2));
        args.extend(["--fit".to_string(), s(&dir).to_string()]);
    }
    let e = tmp.path().join("e");
    args.extend(["--out".to_string(), s(&e).to_string()]);
    let argv: Vec<&str> = std::iter::once("mssl").chain(args.iter().map(String::as_str)).collect();
    assert_eq!(mssl_cli::run(argv), 0);
    let table = read_table(&e.join("metrics.csv")).unwrap();
    assert_eq!(column(&table, "run"), ["fit0", "fit1", "fit2", "mean"]);
    let acc: Vec<f64> = column(&table, "B_ACC").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(&acc[..3], &[1.0, 7.0 / 8.0, 7.0 / 8.0]);
    assert!((acc[3] - (1.0 + 7.0 / 8.0 + 7.0 / 8.0) / 3.0).abs() < 1e-15);
    let sen: Vec<f64> = column(&table, "B_SEN").iter().map(|v| v.parse().unwrap()).collect();
    assert!((sen[3] - (1.0 + 1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
}

#[test]
fn benchmark_bookkeeping() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let args = [
        "benchmark", "--out", s(&out), "--structures", "ar1,star", "--regimes", "disjoint", "--replicates", "3",
        "--n", "30", "--p", "5", "--q", "2", "--H", "10", "--max-outer", "3", "--lambda0-grid", "10,40",
        "--xi0-grid", "3",
    ];
    assert_eq!(run(&args), 0);
    let results = read_table(&out.join("results.csv")).unwrap();
    assert_eq!(results.1.len(), 6);
    assert_eq!(column(&results, "structure"), ["ar1", "ar1", "ar1", "star", "star", "star"]);
    assert_eq!(column(&results, "replicate"), ["0", "1", "2", "0", "1", "2"]);
    let summary = read_table(&out.join("summary.csv")).unwrap();
    assert_eq!(summary.1.len(), 2);
    assert_eq!(column(&summary, "replicates"), ["3", "3"]);
    assert_eq!(read_table(&out.join("errors.csv")).unwrap().1.len(), 0);
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(vals in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..40), cols in 1usize..5) {
        let rows = vals.len().div_ceil(cols);
        let mut padded = vals.clone();
        padded.resize(rows * cols, 0.5);
        let m = Array2::from_shape_vec((rows, cols), padded).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.csv");
        write_matrix(&path, m.view()).unwrap();
        let back = read_matrix(&path).unwrap();
        prop_assert_eq!(back.dim(), m.dim());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
