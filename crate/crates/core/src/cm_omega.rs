//! Conditional maximization over the latent precision Ω and the weight η,
//! plus the unit-variance rescaling of binary coordinates.

use ndarray::{Array2, ArrayView2};

use crate::cm_beta::beta_mode;
use crate::error::{MsslError, Result};
use crate::linalg::{cholesky, pd_inverse, symmetrize, trace_product};
use crate::types::{LatentDraws, ModelState, OutcomeKind};

/// Maximize over positive-definite Ω
///
/// `(n/2) log|Ω| - ½ tr(S Ω) - ξ1 Σ_k ω_kk - Σ_{k≠k'} ξ*_kk' |ω_kk'|`.
///
/// `xi_star` is a symmetric q×q matrix; its diagonal is ignored.
#[derive(Debug, Clone)]
pub struct PenalizedGLassoProblem {
    pub s: Array2<f64>,
    pub n: f64,
    pub xi1: f64,
    pub xi_star: Array2<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct GlassoOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        GlassoOptions { max_outer: 10_000, max_inner: 10_000, tol: 1e-12 }
    }
}

impl PenalizedGLassoProblem {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Objective value, or `-∞` when `omega` is not positive definite.
    pub fn objective(&self, omega: ArrayView2<f64>) -> f64 {
        let Ok(f) = cholesky(omega) else {
            return f64::NEG_INFINITY;
        };
        let q = self.dim();
        let mut pen = 0.0;
        let mut diag = 0.0;
        for k in 0..q {
            diag += omega[[k, k]];
            for l in 0..q {
                if l != k {
                    pen += self.xi_star[[k, l]] * omega[[k, l]].abs();
                }
            }
        }
        0.5 * self.n * f.log_det() - 0.5 * trace_product(self.s.view(), omega) - self.xi1 * diag - pen
    }

    /// Largest violation of the subgradient optimality conditions at `omega`,
    /// with `G = (n/2) Ω⁻¹ - S/2`: `G_kk = ξ1`; `G_kk' = ξ*_kk' sign(ω_kk')` on
    /// the support; `|G_kk'| <= ξ*_kk'` off it.
    pub fn kkt_violation(&self, omega: ArrayView2<f64>) -> Result<f64> {
        let sigma = pd_inverse(omega)?;
        let q = self.dim();
        let mut worst = 0.0_f64;
        for k in 0..q {
            for l in 0..q {
                let g = 0.5 * self.n * sigma[[k, l]] - 0.5 * self.s[[k, l]];
                let v = if k == l {
                    (g - self.xi1).abs()
                } else if omega[[k, l]] != 0.0 {
                    (g - self.xi_star[[k, l]] * omega[[k, l]].signum()).abs()
                } else {
                    (g.abs() - self.xi_star[[k, l]]).max(0.0)
                };
                worst = worst.max(v);
            }
        }
        Ok(worst)
    }
}

/// Solves the element-wise penalized problem by block coordinate descent on
/// the covariance (one lasso per column), then checks positive definiteness
/// and that the result does not fall below the warm start.
///
/// The problem is rescaled to the standard form
/// `min -log|Θ| + tr(S'Θ) + Σ_{k≠k'} ρ_kk'|θ_kk'|` with
/// `S' = S/n + diag(2ξ1/n)` and `ρ = 2ξ*/n`.
pub fn solve_penalized_glasso(
    problem: &PenalizedGLassoProblem,
    warm: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    solve_penalized_glasso_with(problem, warm, GlassoOptions::default())
}

pub fn solve_penalized_glasso_with(
    problem: &PenalizedGLassoProblem,
    warm: ArrayView2<f64>,
    opts: GlassoOptions,
) -> Result<Array2<f64>> {
    let q = problem.dim();
    if warm.dim() != (q, q) || problem.xi_star.dim() != (q, q) {
        return Err(MsslError::Shape(format!(
            "S is {q}x{q}, warm start is {:?}, penalties are {:?}",
            warm.dim(),
            problem.xi_star.dim()
        )));
    }
    if !(problem.n > 0.0 && problem.xi1 > 0.0) {
        return Err(MsslError::Parameter("need n > 0 and xi1 > 0".into()));
    }
    let n = problem.n;
    let mut sp = problem.s.mapv(|v| v / n);
    for k in 0..q {
        sp[[k, k]] += 2.0 * problem.xi1 / n;
    }
    let rho = problem.xi_star.mapv(|v| 2.0 * v / n);

    let mut w = sp.clone();
    // Column j's lasso coefficients, indexed over the other q-1 coordinates.
    let mut betas: Vec<Vec<f64>> = (0..q)
        .map(|j| {
            let wjj = warm[[j, j]];
            (0..q)
                .filter(|&l| l != j)
                .map(|l| if wjj > 0.0 { -warm[[l, j]] / wjj } else { 0.0 })
                .collect()
        })
        .collect();

    if q > 1 {
        let scale = (0..q).map(|k| sp[[k, k]]).fold(0.0_f64, f64::max);
        let others: Vec<Vec<usize>> = (0..q).map(|j| (0..q).filter(|&l| l != j).collect()).collect();
        for _ in 0..opts.max_outer {
            let mut max_change = 0.0_f64;
            for j in 0..q {
                let idx = &others[j];
                let beta = &mut betas[j];
                // Inner lasso: min ½ βᵀ W11 β - βᵀ s12 + Σ ρ|β|.
                for _ in 0..opts.max_inner {
                    let mut inner_change = 0.0_f64;
                    for (a, &ia) in idx.iter().enumerate() {
                        let mut r = sp[[ia, j]];
                        for (b, &ib) in idx.iter().enumerate() {
                            if b != a {
                                r -= w[[ia, ib]] * beta[b];
                            }
                        }
                        let pen = rho[[ia, j]];
                        let new = if r > pen {
                            (r - pen) / w[[ia, ia]]
                        } else if r < -pen {
                            (r + pen) / w[[ia, ia]]
                        } else {
                            0.0
                        };
                        inner_change = inner_change.max((new - beta[a]).abs());
                        beta[a] = new;
                    }
                    if inner_change < opts.tol {
                        break;
                    }
                }
                for &ia in idx.iter() {
                    let mut v = 0.0;
                    for (b, &ib) in idx.iter().enumerate() {
                        v += w[[ia, ib]] * beta[b];
                    }
                    max_change = max_change.max((v - w[[ia, j]]).abs());
                    w[[ia, j]] = v;
                    w[[j, ia]] = v;
                }
            }
            if max_change < opts.tol * scale {
                break;
            }
        }
    }

    let mut theta = Array2::<f64>::zeros((q, q));
    for j in 0..q {
        let idx: Vec<usize> = (0..q).filter(|&l| l != j).collect();
        let beta = &betas[j];
        let mut quad = 0.0;
        for (a, &ia) in idx.iter().enumerate() {
            quad += w[[ia, j]] * beta[a];
        }
        let tjj = 1.0 / (w[[j, j]] - quad);
        theta[[j, j]] = tjj;
        for (a, &ia) in idx.iter().enumerate() {
            theta[[ia, j]] = -beta[a] * tjj;
        }
    }
    // Average the two estimates of each off-diagonal, keeping exact zeros.
    for k in 0..q {
        for l in 0..k {
            let (a, b) = (theta[[k, l]], theta[[l, k]]);
            let v = if a == 0.0 || b == 0.0 { 0.0 } else { 0.5 * (a + b) };
            theta[[k, l]] = v;
            theta[[l, k]] = v;
        }
    }

    accept_against_warm(problem, theta, warm)
}

/// Returns `candidate` if it is positive definite and no worse than `warm`;
/// otherwise halves the step from `warm` toward it until both hold.
fn accept_against_warm(
    problem: &PenalizedGLassoProblem,
    candidate: Array2<f64>,
    warm: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let f_warm = problem.objective(warm);
    let f_cand = problem.objective(candidate.view());
    if f_cand.is_finite() && f_cand >= f_warm - 1e-10 * f_warm.abs().max(1.0) {
        return Ok(candidate);
    }
    let direction = &candidate - &warm;
    let mut t = 0.5;
    for _ in 0..60 {
        let mut trial = &warm + &(&direction * t);
        symmetrize(&mut trial);
        let f = problem.objective(trial.view());
        if f.is_finite() && f >= f_warm {
            return Ok(trial);
        }
        t *= 0.5;
    }
    if f_warm.is_finite() {
        Ok(warm.to_owned())
    } else {
        Err(MsslError::Conditioning(
            "precision update is not positive definite and the warm start is unusable".into(),
        ))
    }
}

pub fn update_eta(sum_q_star: f64, a_eta: f64, b_eta: f64, q: usize) -> f64 {
    beta_mode(sum_q_star, (q * q.saturating_sub(1)) as f64 / 2.0, a_eta, b_eta)
}

/// Rescales so every binary coordinate has unit latent variance.
///
/// With `d_k = √(Ω⁻¹)_kk` on binary coordinates and 1 elsewhere, `Ω ← D Ω D`
/// (the inverse of `D⁻¹ Ω⁻¹ D⁻¹`), and column `k` of `B` and of each draw is
/// divided by `d_k`. Signs of the latents, and hence the observed-data
/// likelihood, are unchanged. Returns the scale factors.
pub fn enforce_binary_unit_variance(
    state: &mut ModelState,
    draws: Option<&mut LatentDraws>,
    kinds: &[OutcomeKind],
) -> Result<Vec<f64>> {
    let q = state.omega.nrows();
    if kinds.len() != q {
        return Err(MsslError::Shape(format!("{} kinds for a {q}x{q} precision", kinds.len())));
    }
    if kinds.iter().all(|k| *k == OutcomeKind::Continuous) {
        return Ok(vec![1.0; q]);
    }
    let sigma = pd_inverse(state.omega.view())
        .map_err(|e| MsslError::Conditioning(format!("cannot invert Omega for rescaling: {e}")))?;
    let d: Vec<f64> = (0..q)
        .map(|k| match kinds[k] {
            OutcomeKind::Binary => sigma[[k, k]].sqrt(),
            OutcomeKind::Continuous => 1.0,
        })
        .collect();
    for k in 0..q {
        for l in 0..q {
            state.omega[[k, l]] *= d[k] * d[l];
        }
    }
    symmetrize(&mut state.omega);
    for (k, &dk) in d.iter().enumerate() {
        if dk != 1.0 {
            state.b.column_mut(k).mapv_inplace(|v| v / dk);
        }
    }
    if let Some(draws) = draws {
        for z in draws.draws.iter_mut() {
            for (k, &dk) in d.iter().enumerate() {
                if dk != 1.0 {
                    z.column_mut(k).mapv_inplace(|v| v / dk);
                }
            }
        }
    }
    Ok(d)
}
