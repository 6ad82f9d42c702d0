use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use mssl_core::driver::{fit_path, PathResult};
use mssl_core::types::Standardization;
use mssl_core::Dataset;
use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use super::{input_path, resolve_settings, with_threads, write_timings, CommonArgs};
use crate::config::FitSettings;
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, fmt_f64, read_kinds, read_matrix, write_matrix, write_table};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct FitFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo draws per E-step.
    #[arg(long = "H", visible_alias = "h")]
    pub h: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub xi1: Option<f64>,
    /// `start:stop:count`, a comma list or a single value.
    #[arg(long)]
    pub lambda0_grid: Option<String>,
    #[arg(long)]
    pub xi0_grid: Option<String>,
    #[arg(long)]
    pub a_theta: Option<f64>,
    #[arg(long)]
    pub b_theta: Option<f64>,
    #[arg(long)]
    pub a_eta: Option<f64>,
    #[arg(long)]
    pub b_eta: Option<f64>,
    /// MCECM iterations per grid point.
    #[arg(long)]
    pub max_outer: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub min_iter: Option<usize>,
    #[arg(long)]
    pub consecutive: Option<usize>,
    #[arg(long)]
    pub cm_max_iter: Option<usize>,
    #[arg(long)]
    pub cm_tol: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Directory holding X.csv, Y.csv and kinds.csv.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write the fit wall-clock time here.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    #[command(flatten)]
    pub flags: FitFlags,
}

/// Reads `X.csv`, `Y.csv` and `kinds.csv` from `dir`.
pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let x = read_matrix(&dir.join("X.csv"))?;
    let y = read_matrix(&dir.join("Y.csv"))?;
    let kinds = read_kinds(&dir.join("kinds.csv"))?;
    if y.ncols() != kinds.len() {
        return Err(CliError::Data(format!(
            "Y.csv has {} columns but kinds.csv lists {} outcomes",
            y.ncols(),
            kinds.len()
        )));
    }
    Ok(Dataset::new(x, y, kinds)?)
}

/// A fitted path with its point estimate mapped back to raw covariate scale
/// and user column order.
pub struct FitResult {
    pub path: PathResult,
    pub b_hat: Array2<f64>,
    pub omega_hat: Array2<f64>,
    pub hyperparameters: mssl_core::Hyperparameters,
    pub seconds: f64,
}

/// Standardizes the covariates, fits the ladder and reports the last point.
pub fn fit_dataset(raw: &Dataset, settings: &FitSettings, seed: u64) -> CliResult<FitResult> {
    let (ds, standardization): (Dataset, Standardization) = raw.standardized()?;
    let cfg = settings.to_fit_config(ds.n(), ds.p(), ds.q(), seed)?;
    let start = Instant::now();
    let path = fit_path(&ds, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let est = path.point_estimate();
    let b_hat = ds.to_user_columns(standardization.coefficients_to_raw(est.b.view()).view());
    let omega_hat = ds.to_user_square(est.omega.view());
    Ok(FitResult { path, b_hat, omega_hat, hyperparameters: cfg.hyper, seconds })
}

pub const DIAGNOSTIC_COLUMNS: [&str; 12] = [
    "index",
    "lambda0",
    "xi0",
    "iterations",
    "converged",
    "objective",
    "support_b",
    "support_omega",
    "theta",
    "eta",
    "draws",
    "sampler_fallbacks",
];

fn diagnostic_rows(path: &PathResult) -> Vec<Vec<String>> {
    path.diagnostics
        .iter()
        .enumerate()
        .map(|(i, d)| {
            vec![
                i.to_string(),
                fmt_f64(d.lambda0),
                fmt_f64(d.xi0),
                d.iterations.to_string(),
                d.converged.to_string(),
                fmt_f64(d.objective),
                d.support_b.to_string(),
                d.support_omega.to_string(),
                fmt_f64(d.theta),
                fmt_f64(d.eta),
                d.draws_used.to_string(),
                d.sampler_fallbacks.to_string(),
            ]
        })
        .collect()
}

pub fn execute(args: FitArgs) -> CliResult<()> {
    let (settings, replay) = resolve_settings::<FitSettings>(&args.common, "fit", FitSettings::TEXT_KEYS, &args.flags)?;
    let data = input_path(args.data.as_deref(), replay.as_ref(), "data")
        .ok_or_else(|| CliError::Usage("fit needs --data (or a manifest that names it)".into()))?;
    let raw = load_dataset(&data)?;
    let out = &args.common.out;
    let result = with_threads(args.common.threads, || fit_dataset(&raw, &settings, settings.seed))??;
    log::info!("fit finished in {:.3} s", result.seconds);

    ensure_dir(out)?;
    write_matrix(&out.join("B_hat.csv"), result.b_hat.view())?;
    write_matrix(&out.join("Omega_hat.csv"), result.omega_hat.view())?;
    let rows = diagnostic_rows(&result.path);
    write_table(&out.join("path_diagnostics.csv"), &DIAGNOSTIC_COLUMNS, &rows)?;

    let mut manifest = RunManifest::new("fit", settings.seed, &settings);
    manifest.inputs = json!({ "data": data.to_string_lossy() });
    manifest.hyperparameters = serde_json::to_value(&result.hyperparameters).expect("hyperparameters serialize");
    manifest.grid_diagnostics = Some(
        result
            .path
            .diagnostics
            .iter()
            .enumerate()
            .map(|(i, d)| {
                json!({
                    "index": i,
                    "lambda0": d.lambda0,
                    "xi0": d.xi0,
                    "iterations": d.iterations,
                    "converged": d.converged,
                    "objective": d.objective,
                    "support_b": d.support_b,
                    "support_omega": d.support_omega,
                    "theta": d.theta,
                    "eta": d.eta,
                    "draws": d.draws_used,
                    "sampler_fallbacks": d.sampler_fallbacks,
                })
            })
            .collect(),
    );
    manifest.write(out)?;
    if let Some(t) = &args.timings {
        write_timings(t, &[("fit".to_string(), result.seconds)])?;
    }
    Ok(())
}
