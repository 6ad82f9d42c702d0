use std::path::{Path, PathBuf};

use clap::Args;
use mssl_core::metrics::{
    predictive_scores, regression_function_error, support_metrics, support_metrics_upper, support_of,
    SupportReport,
};
use mssl_core::types::permute_columns;
use mssl_core::{Dataset, ModelState, OutcomeKind};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{resolve_settings, with_threads, CommonArgs};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, fmt_opt, read_matrix, read_table, write_table};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateSettings {
    /// Forward simulations per test row for the predictive RMSE.
    pub pred_draws: usize,
    pub seed: u64,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings { pred_draws: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct EvaluateFlags {
    #[arg(long)]
    pub pred_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fit output directory (repeatable); one metrics row each.
    #[arg(long = "fit")]
    pub fits: Vec<PathBuf>,
    /// Directory with truth_B.csv and optionally truth_Omega.csv.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Directory with test X.csv, Y.csv and kinds.csv.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Timing file written by `fit --timings` (repeatable, paired with --fit).
    #[arg(long)]
    pub timings: Vec<PathBuf>,
    #[command(flatten)]
    pub flags: EvaluateFlags,
}

/// Generating parameters in user column order.
#[derive(Debug, Clone)]
pub struct Truth {
    pub b: Array2<f64>,
    pub omega: Option<Array2<f64>>,
}

/// Raw-scale test data in user column order.
#[derive(Debug, Clone)]
pub struct TestData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub kinds: Vec<OutcomeKind>,
}

/// One row of metrics; `None` where a metric is undefined or not computable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricRow {
    pub b: Option<SupportReport>,
    pub omega: Option<SupportReport>,
    pub rfe: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_mean: Option<f64>,
    pub auc: Option<f64>,
    pub time: Option<f64>,
}

pub const SUPPORT_COLUMNS: [&str; 4] = ["SEN", "SPEC", "PREC", "ACC"];

fn support_values(r: &Option<SupportReport>) -> [Option<f64>; 4] {
    match r {
        Some(r) => [r.sensitivity, r.specificity, r.precision, r.accuracy],
        None => [None; 4],
    }
}

impl MetricRow {
    /// Column names, with or without the Ω support block.
    pub fn header(with_omega: bool) -> Vec<String> {
        let mut h: Vec<String> = SUPPORT_COLUMNS.iter().map(|c| format!("B_{c}")).collect();
        if with_omega {
            h.extend(SUPPORT_COLUMNS.iter().map(|c| format!("O_{c}")));
        }
        h.extend(["RFE", "RMSE", "RMSE_MEAN", "AUC", "TIME"].map(String::from));
        h
    }

    pub fn values(&self, with_omega: bool) -> Vec<Option<f64>> {
        let mut v = support_values(&self.b).to_vec();
        if with_omega {
            v.extend(support_values(&self.omega));
        }
        v.extend([self.rfe, self.rmse, self.rmse_mean, self.auc, self.time]);
        v
    }
}

/// Column-wise mean over the defined entries.
pub fn column_means(rows: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|c| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Scores one estimate. Estimates and truth are in user column order and
/// on the raw covariate scale.
pub fn evaluate_estimate(
    b_hat: ArrayView2<f64>,
    omega_hat: ArrayView2<f64>,
    truth: Option<&Truth>,
    test: Option<&TestData>,
    settings: &EvaluateSettings,
) -> CliResult<MetricRow> {
    let q = b_hat.ncols();
    if omega_hat.dim() != (q, q) {
        return Err(CliError::Data(format!("Omega_hat is {:?} for {q} outcomes", omega_hat.dim())));
    }
    let mut row = MetricRow::default();
    if let Some(t) = truth {
        row.b = Some(support_metrics(support_of(b_hat).view(), support_of(t.b.view()).view())?);
        if let Some(o) = &t.omega {
            row.omega = Some(support_metrics_upper(support_of(omega_hat).view(), support_of(o.view()).view())?);
        }
    }
    if let Some(test) = test {
        if test.x.ncols() != b_hat.nrows() || test.kinds.len() != q {
            return Err(CliError::Data(format!(
                "test data has {} covariates and {} outcomes; the estimate has {} and {q}",
                test.x.ncols(),
                test.kinds.len(),
                b_hat.nrows()
            )));
        }
        if let Some(t) = truth {
            let omega_true = match &t.omega {
                Some(o) => Some(o.clone()),
                None if test.kinds.iter().all(|k| *k == OutcomeKind::Continuous) => Some(Array2::eye(q)),
                None => None,
            };
            if let Some(o) = omega_true {
                row.rfe = Some(regression_function_error(
                    test.x.view(),
                    b_hat,
                    omega_hat,
                    t.b.view(),
                    o.view(),
                    &test.kinds,
                )?);
            }
        }
        let ds = Dataset::new(test.x.clone(), test.y.clone(), test.kinds.clone())?;
        let order = ds.column_order();
        let omega_c = Array2::from_shape_fn((q, q), |(a, b)| omega_hat[[order[a], order[b]]]);
        let state = ModelState { b: permute_columns(b_hat, order), omega: omega_c, theta: 0.5, eta: 0.5 };
        let scores = predictive_scores(&ds, &state, settings.seed, settings.pred_draws)?;
        row.rmse = scores.rmse;
        row.rmse_mean = scores.rmse_mean;
        row.auc = scores.auc;
    }
    Ok(row)
}

pub fn load_truth(dir: &Path) -> CliResult<Truth> {
    let b = read_matrix(&dir.join("truth_B.csv"))?;
    let omega_path = dir.join("truth_Omega.csv");
    let omega = if omega_path.exists() { Some(read_matrix(&omega_path)?) } else { None };
    Ok(Truth { b, omega })
}

pub fn load_test(dir: &Path) -> CliResult<TestData> {
    let ds = super::fit::load_dataset(dir)?;
    Ok(TestData {
        x: ds.x().to_owned(),
        y: ds.to_user_columns(ds.y()),
        kinds: ds.user_kinds(),
    })
}

fn read_fit_seconds(path: &Path) -> CliResult<f64> {
    let (_, rows) = read_table(path)?;
    rows.iter()
        .find(|r| r.first().map(String::as_str) == Some("fit"))
        .and_then(|r| r.get(1))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::Data(format!("{}: no `fit` timing row", path.display())))
}

pub fn execute(args: EvaluateArgs) -> CliResult<()> {
    let (settings, replay) =
        resolve_settings::<EvaluateSettings>(&args.common, "evaluate", &[], &args.flags)?;
    let from_replay = |key: &str| -> Vec<PathBuf> {
        replay
            .as_ref()
            .and_then(|m| m.inputs.get(key))
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|s| s.as_str()).map(PathBuf::from).collect())
            .unwrap_or_default()
    };
    let fits = if args.fits.is_empty() { from_replay("fits") } else { args.fits.clone() };
    let timings = if args.timings.is_empty() { from_replay("timings") } else { args.timings.clone() };
    let truth_dir = super::input_path(args.truth.as_deref(), replay.as_ref(), "truth");
    let test_dir = super::input_path(args.test.as_deref(), replay.as_ref(), "test");
    if fits.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one --fit directory".into()));
    }
    if truth_dir.is_none() && test_dir.is_none() {
        return Err(CliError::Usage("evaluate needs --truth, --test or both".into()));
    }
    if !timings.is_empty() && timings.len() != fits.len() {
        return Err(CliError::Usage(format!("{} --timings files for {} --fit directories", timings.len(), fits.len())));
    }
    let truth = truth_dir.as_deref().map(load_truth).transpose()?;
    let test = test_dir.as_deref().map(load_test).transpose()?;
    let with_omega = truth.as_ref().is_some_and(|t| t.omega.is_some());

    let mut table = Vec::new();
    let mut names = Vec::new();
    for (i, dir) in fits.iter().enumerate() {
        let b_hat = read_matrix(&dir.join("B_hat.csv"))?;
        let omega_hat = read_matrix(&dir.join("Omega_hat.csv"))?;
        let mut row = with_threads(args.common.threads, || {
            evaluate_estimate(b_hat.view(), omega_hat.view(), truth.as_ref(), test.as_ref(), &settings)
        })??;
        if let Some(t) = timings.get(i) {
            row.time = Some(read_fit_seconds(t)?);
        }
        names.push(dir.file_name().map_or_else(|| i.to_string(), |s| s.to_string_lossy().into_owned()));
        table.push(row.values(with_omega));
    }
    let means = column_means(&table);

    let mut header = vec!["run".to_string()];
    header.extend(MetricRow::header(with_omega));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut rows: Vec<Vec<String>> = names
        .into_iter()
        .zip(&table)
        .map(|(name, vals)| std::iter::once(name).chain(vals.iter().map(|v| fmt_opt(*v))).collect())
        .collect();
    rows.push(std::iter::once("mean".to_string()).chain(means.iter().map(|v| fmt_opt(*v))).collect());

    let out = &args.common.out;
    ensure_dir(out)?;
    write_table(&out.join("metrics.csv"), &header, &rows)?;
    let mut manifest = RunManifest::new("evaluate", settings.seed, &settings);
    let paths = |v: &[PathBuf]| v.iter().map(|p| p.to_string_lossy().into_owned()).collect::<Vec<_>>();
    manifest.inputs = json!({
        "fits": paths(&fits),
        "timings": paths(&timings),
        "truth": truth_dir.map(|p| p.to_string_lossy().into_owned()),
        "test": test_dir.map(|p| p.to_string_lossy().into_owned()),
    });
    manifest.write(out)
}
