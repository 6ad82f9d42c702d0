//! The MCECM loop at a single `(λ0, ξ0)` and the warm-started path over the grid.

use ndarray::{Array2, ArrayView2};

use crate::cm_beta::cm_step_beta;
use crate::cm_omega::{
    enforce_binary_unit_variance, solve_penalized_glasso_with, update_eta, GlassoOptions,
    PenalizedGLassoProblem,
};
use crate::error::{MsslError, Result};
use crate::estep::{residual_stats, update_penalties, PenaltyState};
use crate::linalg::frobenius;
use crate::sampler::{sample_latents, SamplerConfig};
use crate::types::{Dataset, Hyperparameters, LatentDraws, ModelState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub max_outer: usize,
    /// Bound on `max(relΔB, relΔΩ)`.
    pub rel_tol: f64,
    /// Iterations run before a cold-started fit may stop.
    pub min_iter: usize,
    /// Consecutive iterations that must meet `rel_tol`.
    pub consecutive: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence { max_outer: 100, rel_tol: 1e-3, min_iter: 5, consecutive: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub hyper: Hyperparameters,
    pub global_seed: u64,
    pub convergence: Convergence,
    pub sampler: SamplerConfig,
    /// Draws per E-step by iteration (1-based); the last entry is held.
    /// `None` uses `hyper.h` throughout.
    pub h_schedule: Option<Vec<usize>>,
    pub glasso: GlassoOptions,
}

impl FitConfig {
    pub fn new(hyper: Hyperparameters, global_seed: u64) -> Self {
        FitConfig {
            hyper,
            global_seed,
            convergence: Convergence::default(),
            sampler: SamplerConfig::default(),
            h_schedule: None,
            glasso: GlassoOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let c = &self.convergence;
        if !(c.rel_tol > 0.0) || c.max_outer == 0 || c.consecutive == 0 {
            return Err(MsslError::Parameter(
                "convergence tolerance and iteration budgets must be positive".into(),
            ));
        }
        if let Some(s) = &self.h_schedule {
            if s.is_empty() || s[0] == 0 || s.windows(2).any(|w| w[1] < w[0]) {
                return Err(MsslError::Parameter(
                    "H schedule must be a non-empty non-decreasing sequence of positive counts".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn draws_at(&self, iteration: usize) -> usize {
        match &self.h_schedule {
            Some(s) => s[(iteration.max(1) - 1).min(s.len() - 1)],
            None => self.hyper.h,
        }
    }
}

/// Where a single fit sits on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub lambda0: f64,
    pub xi0: f64,
}

/// Everything known at the end of one MCECM iteration.
pub struct IterationReport<'a> {
    pub grid: GridPoint,
    pub iteration: usize,
    /// Draws as sampled, before the unit-variance rescaling (only when requested).
    pub draws_before: Option<&'a LatentDraws>,
    pub draws_after: &'a LatentDraws,
    pub state: &'a ModelState,
    pub scales: &'a [f64],
    pub rel_change: f64,
    pub objective: f64,
}

pub trait FitObserver {
    fn on_iteration(&mut self, report: &IterationReport<'_>);

    fn wants_raw_draws(&self) -> bool {
        false
    }
}

/// Observer that ignores everything.
pub struct Silent;

impl FitObserver for Silent {
    fn on_iteration(&mut self, _: &IterationReport<'_>) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub state: ModelState,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub sampler_fallbacks: u64,
    /// Largest number of draws used by any E-step (1 when nothing is latent).
    pub draws_used: usize,
}

/// MCECM surrogate at the CM2 solution: the Monte Carlo Gaussian log-likelihood
/// with the E-step penalties and the Beta log-priors on θ and η.
pub fn surrogate_objective(
    n: usize,
    s: ArrayView2<f64>,
    state: &ModelState,
    penalties: &PenaltyState,
    hyper: &Hyperparameters,
) -> f64 {
    let problem = PenalizedGLassoProblem {
        s: s.to_owned(),
        n: n as f64,
        xi1: penalties.xi1,
        xi_star: penalties.xi_star.clone(),
    };
    let (p, q) = state.b.dim();
    let beta_pen: f64 = state
        .b
        .iter()
        .zip(penalties.lambda_star.iter())
        .map(|(b, l)| l * b.abs())
        .sum();
    let sp = penalties.sum_p_star();
    let sq = penalties.sum_q_star();
    let pq = (p * q) as f64;
    let pairs = (q * q.saturating_sub(1)) as f64 / 2.0;
    problem.objective(state.omega.view()) - beta_pen
        + (hyper.a_theta - 1.0 + sp) * state.theta.ln()
        + (hyper.b_theta - 1.0 + pq - sp) * (1.0 - state.theta).ln()
        + (hyper.a_eta - 1.0 + sq) * state.eta.ln()
        + (hyper.b_eta - 1.0 + pairs - sq) * (1.0 - state.eta).ln()
}

fn rel_change(new: ArrayView2<f64>, old: ArrayView2<f64>) -> f64 {
    let diff = &new - &old;
    frobenius(diff.view()) / frobenius(old).max(1.0)
}

fn trace_summary(trace: &[(usize, f64, f64)]) -> String {
    let tail: Vec<String> = trace
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|(t, obj, rc)| format!("iter {t}: objective {obj:.6e}, change {rc:.3e}"))
        .collect();
    tail.join("; ")
}

/// Runs MCECM at one grid point from `init` until `consecutive` successive
/// iterations change `(B, Ω)` by less than `rel_tol`, or the budget runs out.
///
/// With `warm_started` the minimum-iteration floor is skipped.
pub fn fit_single(
    ds: &Dataset,
    cfg: &FitConfig,
    point: GridPoint,
    init: ModelState,
    warm_started: bool,
    observer: &mut dyn FitObserver,
) -> Result<FitOutcome> {
    let hyper = &cfg.hyper;
    let conv = cfg.convergence;
    if init.b.dim() != (ds.p(), ds.q()) || init.omega.dim() != (ds.q(), ds.q()) {
        return Err(MsslError::Shape(format!(
            "initial state has B {:?} and Omega {:?} for data with p={}, q={}",
            init.b.dim(),
            init.omega.dim(),
            ds.p(),
            ds.q()
        )));
    }
    let min_iter = if warm_started { 1 } else { conv.min_iter.max(1) };
    let mut state = init;
    let mut streak = 0;
    let mut trace: Vec<(usize, f64, f64)> = Vec::new();
    let mut fallbacks = 0;
    let mut draws_used = 0;
    let mut objective = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=conv.max_outer {
        iterations = t;
        let h = cfg.draws_at(t);
        let key = [cfg.global_seed, point.index as u64, t as u64];
        let (mut draws, stats) = sample_latents(ds, &state, h, cfg.sampler, &key)?;
        fallbacks += stats.fallbacks;
        draws_used = draws_used.max(draws.h());

        let penalties = update_penalties(&state, hyper.lambda1, point.lambda0, hyper.xi1, point.xi0)?;
        let beta = cm_step_beta(ds, &draws, &state, &penalties, hyper)?;
        let mut next = ModelState { b: beta.b, omega: state.omega.clone(), theta: beta.theta, eta: state.eta };

        let s = residual_stats(ds, next.b.view(), &draws)?;
        let problem = PenalizedGLassoProblem {
            s,
            n: ds.n() as f64,
            xi1: hyper.xi1,
            xi_star: penalties.xi_star.clone(),
        };
        next.omega = solve_penalized_glasso_with(&problem, state.omega.view(), cfg.glasso)?;
        next.eta = update_eta(penalties.sum_q_star(), hyper.a_eta, hyper.b_eta, ds.q());
        objective = surrogate_objective(ds.n(), problem.s.view(), &next, &penalties, hyper);

        let raw = if observer.wants_raw_draws() { Some(draws.clone()) } else { None };
        let scales = enforce_binary_unit_variance(&mut next, Some(&mut draws), ds.kinds())?;

        let change = rel_change(next.b.view(), state.b.view())
            .max(rel_change(next.omega.view(), state.omega.view()));
        trace.push((t, objective, change));
        if !objective.is_finite() || !change.is_finite() {
            return Err(MsslError::Divergence {
                context: format!("grid point {} iteration {t}", point.index),
                detail: trace_summary(&trace),
            });
        }
        observer.on_iteration(&IterationReport {
            grid: point,
            iteration: t,
            draws_before: raw.as_ref(),
            draws_after: &draws,
            state: &next,
            scales: &scales,
            rel_change: change,
            objective,
        });
        log::debug!(
            "grid {} iter {t}: objective {objective:.6e}, change {change:.3e}, H {h}",
            point.index
        );
        state = next;
        streak = if change < conv.rel_tol { streak + 1 } else { 0 };
        if streak >= conv.consecutive && t >= min_iter {
            converged = true;
            break;
        }
    }
    Ok(FitOutcome {
        state,
        iterations,
        converged,
        objective,
        sampler_fallbacks: fallbacks,
        draws_used,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointDiagnostics {
    pub lambda0: f64,
    pub xi0: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub support_b: usize,
    /// Nonzero entries of Ω strictly above the diagonal.
    pub support_omega: usize,
    pub theta: f64,
    pub eta: f64,
    pub sampler_fallbacks: u64,
    pub draws_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub grid: Vec<(f64, f64)>,
    pub estimates: Vec<ModelState>,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl PathResult {
    /// Estimate at the largest spike penalties (the last grid point).
    pub fn point_estimate(&self) -> &ModelState {
        self.estimates.last().expect("path is never empty")
    }
}

/// Grid in traversal order: `ξ0` ascending outside, `λ0` ascending inside.
pub fn ladder(hyper: &Hyperparameters) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(hyper.lambda0_grid.len() * hyper.xi0_grid.len());
    for &xi0 in &hyper.xi0_grid {
        for &lambda0 in &hyper.lambda0_grid {
            out.push((lambda0, xi0));
        }
    }
    out
}

fn upper_support(omega: &Array2<f64>) -> usize {
    let q = omega.nrows();
    (0..q)
        .flat_map(|k| ((k + 1)..q).map(move |l| (k, l)))
        .filter(|&(k, l)| omega[[k, l]] != 0.0)
        .count()
}

fn with_point_context(err: MsslError, point: GridPoint) -> MsslError {
    let ctx = format!(
        "grid point {} (lambda0={}, xi0={})",
        point.index, point.lambda0, point.xi0
    );
    match err {
        MsslError::Divergence { context, detail } => {
            MsslError::Divergence { context: format!("{ctx}, {context}"), detail }
        }
        MsslError::Conditioning(m) => MsslError::Conditioning(format!("{ctx}: {m}")),
        MsslError::Linalg(e) => MsslError::Conditioning(format!("{ctx}: {e}")),
        MsslError::Parameter(m) => MsslError::Parameter(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Fits every grid point in ladder order, each warm-started from the previous
/// estimate. The first point starts from [`ModelState::cold_start`].
pub fn fit_path(ds: &Dataset, cfg: &FitConfig) -> Result<PathResult> {
    fit_path_observed(ds, cfg, &mut Silent)
}

pub fn fit_path_observed(
    ds: &Dataset,
    cfg: &FitConfig,
    observer: &mut dyn FitObserver,
) -> Result<PathResult> {
    cfg.validate()?;
    let grid = ladder(&cfg.hyper);
    let mut estimates = Vec::with_capacity(grid.len());
    let mut diagnostics = Vec::with_capacity(grid.len());
    let mut current = ModelState::cold_start(ds.p(), ds.q(), &cfg.hyper);
    for (index, &(lambda0, xi0)) in grid.iter().enumerate() {
        let point = GridPoint { index, lambda0, xi0 };
        let out = fit_single(ds, cfg, point, current, index > 0, observer)
            .map_err(|e| with_point_context(e, point))?;
        diagnostics.push(PointDiagnostics {
            lambda0,
            xi0,
            iterations: out.iterations,
            converged: out.converged,
            objective: out.objective,
            support_b: out.state.b.iter().filter(|v| **v != 0.0).count(),
            support_omega: upper_support(&out.state.omega),
            theta: out.state.theta,
            eta: out.state.eta,
            sampler_fallbacks: out.sampler_fallbacks,
            draws_used: out.draws_used,
        });
        current = out.state.clone();
        estimates.push(out.state);
    }
    Ok(PathResult { grid, estimates, diagnostics })
}
