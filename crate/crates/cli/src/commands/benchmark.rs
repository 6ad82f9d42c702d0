use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::Args;
use mssl_core::rng::{derive_seed, stream};
use mssl_core::simgen::{gen_truth, simulate_from_truth, OmegaStructure, SignalRegime, SimulationSpec};
use mssl_core::{Dataset, OutcomeKind};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::evaluate::{evaluate_estimate, EvaluateSettings, MetricRow, TestData, Truth};
use super::fit::{fit_dataset, FitFlags};
use super::simulate::outcome_kinds;
use super::{resolve_settings, with_threads, write_timings, CommonArgs};
use crate::config::{parse_regimes, parse_structures, BenchmarkSettings, FitSettings};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, fmt_f64, fmt_opt, write_table};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct BenchmarkFlags {
    /// Comma list of structures, or `all`.
    #[arg(long)]
    pub structures: Option<String>,
    /// Comma list of signal regimes, or `all`.
    #[arg(long)]
    pub regimes: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub q_binary: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub rewire_prob: Option<f64>,
    #[arg(long)]
    pub pred_draws: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write per-replicate fit wall-clock times here.
    #[arg(long)]
    pub timings: Option<PathBuf>,
    #[command(flatten)]
    pub flags: BenchmarkFlags,
}

/// Outcome of one simulate, split, fit and evaluate cycle.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub metrics: MetricRow,
    pub b_hat: Array2<f64>,
    pub iterations: usize,
    pub converged_points: usize,
    pub fit_seconds: f64,
}

/// Draws `n + n/2` rows from `truth`, shuffles them, fits on the first `n`
/// and scores on the remaining `n/2`.
pub fn run_replicate(
    b: &Array2<f64>,
    omega: &Array2<f64>,
    kinds: &[OutcomeKind],
    n: usize,
    fit: &FitSettings,
    pred_draws: usize,
    seed: u64,
) -> CliResult<ReplicateOutcome> {
    let n_test = n / 2;
    let (x, y) = simulate_from_truth(n + n_test, b.view(), omega.view(), kinds, derive_seed(&[seed, 1]))?;
    let mut rows: Vec<usize> = (0..n + n_test).collect();
    rows.shuffle(&mut stream(&[seed, 2]));
    let (train, test) = rows.split_at(n);
    let train_ds = Dataset::new(x.select(Axis(0), train), y.select(Axis(0), train), kinds.to_vec())?;
    let fitted = fit_dataset(&train_ds, fit, derive_seed(&[seed, 3]))?;
    let truth = Truth { b: b.clone(), omega: Some(omega.clone()) };
    let test_data = (n_test > 0).then(|| TestData {
        x: x.select(Axis(0), test),
        y: y.select(Axis(0), test),
        kinds: kinds.to_vec(),
    });
    let eval = EvaluateSettings { pred_draws, seed: derive_seed(&[seed, 4]) };
    let mut metrics =
        evaluate_estimate(fitted.b_hat.view(), fitted.omega_hat.view(), Some(&truth), test_data.as_ref(), &eval)?;
    metrics.time = None;
    Ok(ReplicateOutcome {
        metrics,
        iterations: fitted.path.diagnostics.iter().map(|d| d.iterations).sum(),
        converged_points: fitted.path.diagnostics.iter().filter(|d| d.converged).count(),
        fit_seconds: fitted.seconds,
        b_hat: fitted.b_hat,
    })
}

#[derive(Debug, Clone)]
struct Job {
    structure: OmegaStructure,
    regime: SignalRegime,
    replicate: usize,
    truth_seed: u64,
    seed: u64,
}

/// Structure and regime seeds use their position in the canonical name lists,
/// so a cell's data do not depend on which other cells are run.
fn jobs(s: &BenchmarkSettings) -> CliResult<Vec<Job>> {
    let structures = parse_structures(&s.structures, s.rewire_prob)?;
    let regimes = parse_regimes(&s.regimes, s.density)?;
    let mut out = Vec::new();
    for structure in &structures {
        let si = OmegaStructure::NAMES.iter().position(|n| *n == structure.name()).expect("known name") as u64;
        for regime in &regimes {
            let gi = SignalRegime::NAMES.iter().position(|n| *n == regime.name()).expect("known name") as u64;
            let truth_seed = derive_seed(&[s.fit.seed, si, gi]);
            for replicate in 0..s.replicates {
                out.push(Job {
                    structure: *structure,
                    regime: *regime,
                    replicate,
                    truth_seed,
                    seed: derive_seed(&[truth_seed, replicate as u64]),
                });
            }
        }
    }
    Ok(out)
}

fn run_job(job: &Job, s: &BenchmarkSettings) -> CliResult<ReplicateOutcome> {
    let kinds = outcome_kinds(s.q, s.q_binary)?;
    let spec = SimulationSpec {
        n: s.n,
        p: s.p,
        structure: job.structure,
        regime: job.regime,
        kinds: kinds.clone(),
        seed: job.truth_seed,
    };
    let (b, omega, _) = gen_truth(&spec)?;
    run_replicate(&b, &omega, &kinds, s.n, &s.fit, s.pred_draws, job.seed)
}

fn run_job_guarded(job: &Job, s: &BenchmarkSettings) -> CliResult<ReplicateOutcome> {
    catch_unwind(AssertUnwindSafe(|| run_job(job, s))).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| panic.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(CliError::Numerical(format!("panic: {msg}")))
    })
}

pub const RESULT_METRICS: [&str; 12] =
    ["B_SEN", "B_SPEC", "B_PREC", "B_ACC", "O_SEN", "O_SPEC", "O_PREC", "O_ACC", "RFE", "RMSE", "RMSE_MEAN", "AUC"];

fn metric_values(m: &MetricRow) -> Vec<Option<f64>> {
    let mut v = m.values(true);
    v.pop();
    v
}

fn mean_sd(vals: &[f64]) -> (Option<f64>, Option<f64>) {
    if vals.is_empty() {
        return (None, None);
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.len() > 1)
        .then(|| (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), sd)
}

/// Runs every job and writes `results.csv`, `summary.csv`, `errors.csv` and
/// `manifest.json` to `out`. Returns the per-job outcomes in job order.
pub fn benchmark_to_dir(
    s: &BenchmarkSettings,
    out: &Path,
    timings: Option<&Path>,
) -> CliResult<Vec<CliResult<ReplicateOutcome>>> {
    if s.n < 2 || s.p == 0 || s.q == 0 {
        return Err(CliError::Usage(format!("need n >= 2, p >= 1, q >= 1; got n={}, p={}, q={}", s.n, s.p, s.q)));
    }
    outcome_kinds(s.q, s.q_binary)?;
    s.fit.to_fit_config(s.n, s.p, s.q, 0)?;
    let jobs = jobs(s)?;
    log::info!("benchmark: {} replicates", jobs.len());
    let outcomes: Vec<CliResult<ReplicateOutcome>> = jobs.par_iter().map(|j| run_job_guarded(j, s)).collect();

    let mut header = vec!["structure", "regime", "replicate", "seed"];
    header.extend(RESULT_METRICS);
    header.extend(["iterations", "converged_points"]);
    let mut results = Vec::new();
    let mut errors = Vec::new();
    let mut timing_rows = Vec::new();
    for (job, outcome) in jobs.iter().zip(&outcomes) {
        let key = vec![
            job.structure.name().to_string(),
            job.regime.name().to_string(),
            job.replicate.to_string(),
            job.seed.to_string(),
        ];
        match outcome {
            Ok(o) => {
                let mut row = key;
                row.extend(metric_values(&o.metrics).iter().map(|v| fmt_opt(*v)));
                row.extend([o.iterations.to_string(), o.converged_points.to_string()]);
                results.push(row);
                timing_rows.push((
                    format!("{}/{}/{}", job.structure.name(), job.regime.name(), job.replicate),
                    o.fit_seconds,
                ));
            }
            Err(e) => {
                log::warn!("{}/{} replicate {}: {e}", job.structure.name(), job.regime.name(), job.replicate);
                let mut row = key;
                row.extend([e.exit_code().to_string(), e.to_string()]);
                errors.push(row);
            }
        }
    }

    let mut summary_header = vec!["structure".to_string(), "regime".to_string(), "replicates".to_string()];
    for m in RESULT_METRICS {
        summary_header.push(format!("{m}_mean"));
        summary_header.push(format!("{m}_sd"));
    }
    let mut summary = Vec::new();
    let mut cells: Vec<(String, String)> = Vec::new();
    for job in &jobs {
        let cell = (job.structure.name().to_string(), job.regime.name().to_string());
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    for (structure, regime) in cells {
        let rows: Vec<Vec<Option<f64>>> = jobs
            .iter()
            .zip(&outcomes)
            .filter(|(j, _)| j.structure.name() == structure && j.regime.name() == regime)
            .filter_map(|(_, o)| o.as_ref().ok().map(|o| metric_values(&o.metrics)))
            .collect();
        let mut row = vec![structure, regime, rows.len().to_string()];
        for c in 0..RESULT_METRICS.len() {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            let (mean, sd) = mean_sd(&vals);
            row.push(fmt_opt(mean));
            row.push(fmt_opt(sd));
        }
        summary.push(row);
    }

    ensure_dir(out)?;
    write_table(&out.join("results.csv"), &header, &results)?;
    let summary_header: Vec<&str> = summary_header.iter().map(String::as_str).collect();
    write_table(&out.join("summary.csv"), &summary_header, &summary)?;
    write_table(
        &out.join("errors.csv"),
        &["structure", "regime", "replicate", "seed", "exit_code", "message"],
        &errors,
    )?;
    RunManifest::new("benchmark", s.fit.seed, s).write(out)?;
    if let Some(path) = timings {
        write_timings(path, &timing_rows)?;
    }
    let total: f64 = timing_rows.iter().map(|(_, t)| t).sum();
    log::info!("benchmark: total fit time {} s", fmt_f64(total));
    Ok(outcomes)
}

pub fn execute(args: BenchmarkArgs) -> CliResult<()> {
    let (settings, _) =
        resolve_settings::<BenchmarkSettings>(&args.common, "benchmark", BenchmarkSettings::TEXT_KEYS, &args.flags)?;
    with_threads(args.common.threads, || {
        benchmark_to_dir(&settings, &args.common.out, args.timings.as_deref()).map(|_| ())
    })?
}
