//! Conditional maximization over the coefficients and the slab weight θ.
//!
//! The Monte Carlo surrogate averages the latent log-likelihood over the `H`
//! draws, and the quadratic form in `B` is linear in the draws, so the
//! coordinate ascent only ever sees the draw mean `Z̄`. Scores here are
//! draw-averaged; the curvature of coordinate `(j, k)` is `‖x_j‖² ω_kk`.

use ndarray::{Array2, ArrayView2, ShapeBuilder};

use crate::error::{MsslError, Result};
use crate::estep::{slab_probability_unchecked, PenaltyState};
use crate::linalg::{dot, trace_product};
use crate::types::{Dataset, Hyperparameters, LatentDraws, ModelState};

pub const MIX_CLIP: f64 = 1e-8;
const RECOMPUTE_EVERY: usize = 50;

/// Residuals `Z̄ - XB` kept consistent with `B` under single-entry updates.
#[derive(Debug, Clone)]
pub struct BetaWorkspace {
    pub resid: Array2<f64>,
    pub col_sq_norms: Vec<f64>,
}

impl BetaWorkspace {
    pub fn new(x: ArrayView2<f64>, zbar: ArrayView2<f64>, b: ArrayView2<f64>) -> Self {
        let col_sq_norms = x.columns().into_iter().map(|c| dot(c, c)).collect();
        BetaWorkspace { resid: column_major_residual(x, zbar, b), col_sq_norms }
    }

    pub fn recompute(&mut self, x: ArrayView2<f64>, zbar: ArrayView2<f64>, b: ArrayView2<f64>) {
        self.resid = column_major_residual(x, zbar, b);
    }

    /// Applies `β_jk ← β_jk + delta` to the residuals of outcome `k`.
    fn shift(&mut self, x: ArrayView2<f64>, j: usize, k: usize, delta: f64) {
        let xj = x.column(j);
        let mut rk = self.resid.column_mut(k);
        for (r, &xv) in rk.iter_mut().zip(xj.iter()) {
            *r -= xv * delta;
        }
    }
}

fn column_major_residual(x: ArrayView2<f64>, zbar: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut r = Array2::<f64>::zeros(zbar.raw_dim().f());
    r.assign(&(&zbar - &x.dot(&b)));
    r
}

/// Draw-averaged partial-residual score of coordinate `(j, k)`:
/// `Σ_i x_ij Σ_k' ω_kk' r_ik'`, where the residuals exclude `β_jk` itself.
///
/// The workspace holds full residuals, so the own contribution
/// `‖x_j‖² ω_kk β_jk` is added back.
pub fn score(
    j: usize,
    k: usize,
    ws: &BetaWorkspace,
    x: ArrayView2<f64>,
    b: ArrayView2<f64>,
    omega: ArrayView2<f64>,
) -> f64 {
    let xj = x.column(j);
    let q = omega.nrows();
    let mut s = 0.0;
    for l in 0..q {
        let w = omega[[k, l]];
        if w != 0.0 {
            s += w * dot(xj, ws.resid.column(l));
        }
    }
    s + ws.col_sq_norms[j] * omega[[k, k]] * b[[j, k]]
}

/// Hard-threshold cut-off on the scale of the coefficient for curvature
/// `curvature = ‖x_j‖² ω_kk`.
///
/// With `p0 = p*(0)` and `λ*(0) = λ1 p0 + λ0 (1 - p0)`: when
/// `(λ*(0) - λ1)² > 2 d log(1/p0)` the cut-off is `(√(2 d log(1/p0)) + λ1) / d`,
/// otherwise it falls back to the soft-threshold level `λ*(0) / d`.
pub fn threshold_delta(penalties: &PenaltyState, curvature: f64) -> f64 {
    let (l1, l0) = (penalties.lambda1, penalties.lambda0);
    let p0 = slab_probability_unchecked(0.0, l1, l0, penalties.theta);
    let lambda_zero = l1 * p0 + l0 * (1.0 - p0);
    let log_inv = -p0.ln();
    let gap = lambda_zero - l1;
    if gap * gap > 2.0 * curvature * log_inv {
        ((2.0 * curvature * log_inv).sqrt() + l1) / curvature
    } else {
        lambda_zero / curvature
    }
}

/// `[|S| - λ*]₊ sign(S) / (nH ω_kk) · 1(|S / (nH ω_kk)| > Δ)`.
#[inline]
pub fn update_beta_entry(s: f64, lambda_star: f64, delta: f64, omega_kk: f64, n_h: f64) -> f64 {
    let d = n_h * omega_kk;
    if (s / d).abs() <= delta {
        return 0.0;
    }
    let mag = s.abs() - lambda_star;
    if mag <= 0.0 {
        0.0
    } else {
        mag.copysign(s) / d
    }
}

/// Beta-posterior mode for a mixing weight, clipped to `(1e-8, 1 - 1e-8)`.
pub fn beta_mode(successes: f64, trials: f64, a: f64, b: f64) -> f64 {
    let v = (a - 1.0 + successes) / (a + b - 2.0 + trials);
    if v.is_nan() {
        0.5
    } else {
        v.clamp(MIX_CLIP, 1.0 - MIX_CLIP)
    }
}

pub fn update_theta(sum_p_star: f64, hyper: &Hyperparameters, p: usize, q: usize) -> f64 {
    beta_mode(sum_p_star, (p * q) as f64, hyper.a_theta, hyper.b_theta)
}

/// CM objective in `(B, θ)` up to a constant independent of both:
/// `-½ tr(RᵀR Ω) - Σ λ*_jk |β_jk| + (a-1+Σp*) log θ + (b-1+pq-Σp*) log(1-θ)`
/// with `R = Z̄ - XB`.
pub fn cm_beta_objective(
    resid: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    b: ArrayView2<f64>,
    penalties: &PenaltyState,
    theta: f64,
    hyper: &Hyperparameters,
) -> f64 {
    let rtr = resid.t().dot(&resid);
    let pen: f64 = b
        .iter()
        .zip(penalties.lambda_star.iter())
        .map(|(v, l)| l * v.abs())
        .sum();
    let sp = penalties.sum_p_star();
    let pq = (b.nrows() * b.ncols()) as f64;
    -0.5 * trace_product(rtr.view(), omega) - pen
        + (hyper.a_theta - 1.0 + sp) * theta.ln()
        + (hyper.b_theta - 1.0 + pq - sp) * (1.0 - theta).ln()
}

#[derive(Debug, Clone)]
pub struct BetaStep {
    pub b: Array2<f64>,
    pub theta: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// Sweeps after which the CM objective went down; only the hard gate can
    /// cause this.
    pub objective_decreases: usize,
}

/// Cyclic coordinate ascent over `B` (all `j` for `k = 0`, then `k = 1`, ...)
/// until the largest change in a sweep drops below `hyper.tol`, followed by
/// the closed-form θ update.
pub fn cm_step_beta(
    ds: &Dataset,
    draws: &LatentDraws,
    state: &ModelState,
    penalties: &PenaltyState,
    hyper: &Hyperparameters,
) -> Result<BetaStep> {
    let zbar = draws.mean();
    cm_step_beta_with_mean(ds, zbar.view(), state, penalties, hyper)
}

pub fn cm_step_beta_with_mean(
    ds: &Dataset,
    zbar: ArrayView2<f64>,
    state: &ModelState,
    penalties: &PenaltyState,
    hyper: &Hyperparameters,
) -> Result<BetaStep> {
    let (p, q) = (ds.p(), ds.q());
    let x = ds.x();
    let omega = state.omega.view();
    let mut b = state.b.clone();
    let mut ws = BetaWorkspace::new(x, zbar, b.view());

    let deltas: Vec<Vec<f64>> = (0..q)
        .map(|k| {
            (0..p)
                .map(|j| threshold_delta(penalties, ws.col_sq_norms[j] * omega[[k, k]]))
                .collect()
        })
        .collect();

    let mut prev_obj = cm_beta_objective(ws.resid.view(), omega, b.view(), penalties, state.theta, hyper);
    let mut sweeps = 0;
    let mut converged = false;
    let mut decreases = 0;
    while sweeps < hyper.max_iter {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for k in 0..q {
            let okk = omega[[k, k]];
            for j in 0..p {
                let s = score(j, k, &ws, x, b.view(), omega);
                let new = update_beta_entry(
                    s,
                    penalties.lambda_star[[j, k]],
                    deltas[k][j],
                    okk,
                    ws.col_sq_norms[j],
                );
                let old = b[[j, k]];
                if new != old {
                    if !new.is_finite() {
                        return Err(MsslError::Divergence {
                            context: format!("coefficient ({j},{k})"),
                            detail: format!("score {s} produced {new}"),
                        });
                    }
                    ws.shift(x, j, k, new - old);
                    b[[j, k]] = new;
                    max_change = max_change.max((new - old).abs());
                }
            }
        }
        if sweeps % RECOMPUTE_EVERY == 0 {
            ws.recompute(x, zbar, b.view());
        }
        let obj = cm_beta_objective(ws.resid.view(), omega, b.view(), penalties, state.theta, hyper);
        if !obj.is_finite() {
            return Err(MsslError::Divergence {
                context: format!("CM step for B, sweep {sweeps}"),
                detail: format!("objective is {obj}"),
            });
        }
        if obj < prev_obj - 1e-8 * prev_obj.abs().max(1.0) {
            decreases += 1;
        }
        prev_obj = obj;
        if max_change < hyper.tol {
            converged = true;
            break;
        }
    }
    let theta = update_theta(penalties.sum_p_star(), hyper, p, q);
    Ok(BetaStep { b, theta, sweeps, converged, objective_decreases: decreases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estep::update_penalties;
    use crate::rng::stream;
    use crate::types::{standardize, OutcomeKind};
    use ndarray::{array, Array1};
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn entry_update_examples() {
        assert_eq!(update_beta_entry(5.0, 2.0, 1.0, 1.0, 1.0), 3.0);
        assert_eq!(update_beta_entry(-5.0, 2.0, 1.0, 1.0, 1.0), -3.0);
        assert_eq!(update_beta_entry(1.5, 2.0, 0.0, 1.0, 1.0), 0.0);
        assert_eq!(update_beta_entry(5.0, 2.0, 10.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn score_minimal_case() {
        let x = array![[1.0], [0.0]];
        let zbar = array![[2.0], [0.0]];
        let b = array![[0.0]];
        let ws = BetaWorkspace::new(x.view(), zbar.view(), b.view());
        assert_eq!(score(0, 0, &ws, x.view(), b.view(), array![[1.0]].view()), 2.0);
        let zero = BetaWorkspace::new(x.view(), array![[0.0], [0.0]].view(), b.view());
        assert_eq!(score(0, 0, &zero, x.view(), b.view(), array![[1.0]].view()), 0.0);
    }

    fn pen(theta: f64, l1: f64, l0: f64) -> PenaltyState {
        let s = ModelState { b: Array2::zeros((1, 1)), omega: Array2::eye(1), theta, eta: 0.5 };
        update_penalties(&s, l1, l0, 1.0, 2.0).unwrap()
    }

    #[test]
    fn delta_single_laplace_limit() {
        let p = pen(0.3, 2.0, 2.0);
        assert!((threshold_delta(&p, 500.0) - 2.0 / 500.0).abs() < 1e-15);
    }

    #[test]
    fn delta_fallback_and_gap_branches() {
        // (49.04 - 1)² < 2·1000·ln 51: the fallback equals λ*(0)/d.
        let p = pen(0.5, 1.0, 50.0);
        let lz = (1.0 + 50.0 * 50.0) / 51.0;
        assert!((threshold_delta(&p, 1000.0) - lz / 1000.0).abs() < 1e-14);
        // Halving the curvature's ω doubles the fallback cut-off.
        assert!((threshold_delta(&p, 500.0) - 2.0 * lz / 1000.0).abs() < 1e-14);

        // Wide spike-slab gap: the refined cut-off lies strictly between the
        // slab and spike soft-threshold levels.
        let p = pen(0.5, 1.0, 500.0);
        let lz = (1.0 + 500.0 * 500.0) / 501.0;
        let want = ((2.0 * 1000.0 * 501f64.ln()).sqrt() + 1.0) / 1000.0;
        let got = threshold_delta(&p, 1000.0);
        assert!((got - want).abs() < 1e-14);
        assert!(got > 1.0 / 1000.0 && got < lz / 1000.0);
    }

    #[test]
    fn theta_update_examples() {
        let mut h = Hyperparameters::defaults(10, 4, 2);
        h.a_theta = 1.0;
        h.b_theta = 1.0;
        assert!((update_theta(4.0, &h, 4, 2) - 0.5).abs() < 1e-15);
        h.b_theta = 8.0;
        assert_eq!(update_theta(0.0, &h, 4, 2), MIX_CLIP);
    }

    /// Plain cyclic coordinate descent for `(1/2n)‖y - Xb‖² + α‖b‖₁`.
    fn reference_lasso(x: &Array2<f64>, y: &Array1<f64>, alpha: f64) -> Array1<f64> {
        let (n, p) = x.dim();
        let mut b = Array1::<f64>::zeros(p);
        let mut r = y.clone();
        for _ in 0..100_000 {
            let mut change = 0.0_f64;
            for j in 0..p {
                let xj = x.column(j);
                let nj = xj.dot(&xj) / n as f64;
                let rho = xj.dot(&r) / n as f64 + nj * b[j];
                let new = if rho > alpha {
                    (rho - alpha) / nj
                } else if rho < -alpha {
                    (rho + alpha) / nj
                } else {
                    0.0
                };
                if new != b[j] {
                    r.scaled_add(b[j] - new, &xj);
                    change = change.max((new - b[j]).abs());
                    b[j] = new;
                }
            }
            if change < 1e-14 {
                break;
            }
        }
        b
    }

    fn lasso_problem(n: usize, p: usize, seed: u64) -> (Dataset, Array1<f64>) {
        let mut rng = stream(&[seed]);
        let raw = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let (x, _) = standardize(raw.view()).unwrap();
        let truth: Vec<f64> = (0..p).map(|j| if j < 3 { 1.5 - j as f64 } else { 0.0 }).collect();
        let y: Array1<f64> = (0..n)
            .map(|i| (0..p).map(|j| x[[i, j]] * truth[j]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ds = Dataset::new(x, y.clone().insert_axis(ndarray::Axis(1)), vec![OutcomeKind::Continuous])
            .unwrap();
        (ds, y)
    }

    #[test]
    fn equal_rates_reduce_to_lasso() {
        let (ds, y) = lasso_problem(60, 8, 17);
        let lambda = 12.0;
        let mut hyper = Hyperparameters::defaults(60, 8, 1);
        hyper.lambda1 = lambda;
        hyper.lambda0 = lambda;
        hyper.tol = 1e-13;
        hyper.max_iter = 100_000;
        let state = ModelState { b: Array2::zeros((8, 1)), omega: Array2::eye(1), theta: 0.3, eta: 0.5 };
        let pens = update_penalties(&state, lambda, lambda, 1.0, 1.0).unwrap();
        let draws = LatentDraws { draws: vec![ds.y().to_owned()], seed_lineage: vec![] };
        let step = cm_step_beta(&ds, &draws, &state, &pens, &hyper).unwrap();
        let oracle = reference_lasso(&ds.x().to_owned(), &y, lambda / 60.0);
        for j in 0..8 {
            assert!((step.b[[j, 0]] - oracle[j]).abs() < 1e-6, "{j}: {} vs {}", step.b[[j, 0]], oracle[j]);
        }
        assert!(step.b.iter().any(|&v| v != 0.0) && step.b.iter().any(|&v| v == 0.0));
        assert_eq!(step.objective_decreases, 0);

        // θ drops out when the rates coincide.
        let other = ModelState { theta: 0.9, ..state.clone() };
        let pens2 = update_penalties(&other, lambda, lambda, 1.0, 1.0).unwrap();
        let step2 = cm_step_beta(&ds, &draws, &other, &pens2, &hyper).unwrap();
        assert!((&step.b - &step2.b).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn stationary_at_noiseless_truth() {
        let (ds0, _) = lasso_problem(40, 5, 3);
        let truth = array![[2.0, 0.0], [0.0, -1.5], [1.0, 0.5], [0.0, 0.0], [0.0, 3.0]];
        let z = ds0.x().dot(&truth);
        let ds = Dataset::new(ds0.x().to_owned(), z.clone(), vec![OutcomeKind::Continuous; 2]).unwrap();
        let omega = array![[1.0, 0.3], [0.3, 1.0]];
        let state = ModelState { b: truth.clone(), omega, theta: 0.99, eta: 0.5 };
        // Slab-dominant: tiny penalties everywhere.
        let pens = update_penalties(&state, 1e-9, 1e-9, 1.0, 1.0).unwrap();
        let mut hyper = Hyperparameters::defaults(40, 5, 2);
        hyper.max_iter = 1;
        let draws = LatentDraws { draws: vec![z], seed_lineage: vec![] };
        let step = cm_step_beta(&ds, &draws, &state, &pens, &hyper).unwrap();
        assert!((&step.b - &truth).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn fixed_point_satisfies_kkt() {
        let mut rng = stream(&[44]);
        let (n, p, q) = (50, 6, 3);
        let raw = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let (x, _) = standardize(raw.view()).unwrap();
        let truth = Array2::from_shape_fn((p, q), |(j, k)| if (j + k) % 3 == 0 { 1.0 } else { 0.0 });
        let z = x.dot(&truth) + Array2::from_shape_fn((n, q), |_| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(x.clone(), z.clone(), vec![OutcomeKind::Continuous; q]).unwrap();
        let omega = array![[1.2, -0.4, 0.1], [-0.4, 1.0, 0.3], [0.1, 0.3, 0.9]];
        let state = ModelState { b: Array2::zeros((p, q)), omega: omega.clone(), theta: 0.2, eta: 0.5 };
        let pens = update_penalties(&state, 2.0, 30.0, 1.0, 1.0).unwrap();
        let mut hyper = Hyperparameters::defaults(n, p, q);
        hyper.tol = 1e-12;
        hyper.max_iter = 10_000;
        let step = cm_step_beta(&ds, &LatentDraws { draws: vec![z.clone()], seed_lineage: vec![] }, &state, &pens, &hyper)
            .unwrap();
        assert!(step.converged);
        let ws = BetaWorkspace::new(x.view(), z.view(), step.b.view());
        for k in 0..q {
            for j in 0..p {
                let s = score(j, k, &ws, x.view(), step.b.view(), omega.view());
                let d = ws.col_sq_norms[j] * omega[[k, k]];
                let lam = pens.lambda_star[[j, k]];
                let bjk = step.b[[j, k]];
                if bjk != 0.0 {
                    assert!((s - d * bjk).abs() <= lam + 1e-6 * n as f64);
                } else {
                    let delta = threshold_delta(&pens, d);
                    assert!(s.abs() <= lam + 1e-6 * n as f64 || (s / d).abs() <= delta);
                }
            }
        }
    }
}
