//! E-step quantities: slab probabilities, blended penalties and the Monte
//! Carlo residual cross-product.

use ndarray::{Array2, ArrayView2};

use crate::error::{MsslError, Result};
use crate::types::{Dataset, LatentDraws, ModelState};

/// Posterior probability that an entry of magnitude `|value|` came from the
/// slab, under a Laplace(rate_slab)/Laplace(rate_spike) mixture with slab
/// weight `mix`:
///
/// `[1 + (1-mix)/mix · rate_spike/rate_slab · exp{-(rate_spike - rate_slab)|value|}]⁻¹`
///
/// Evaluated through the log-odds so that large penalties and magnitudes
/// never overflow.
pub fn slab_probability(value: f64, rate_slab: f64, rate_spike: f64, mix: f64) -> Result<f64> {
    if !(mix > 0.0 && mix < 1.0) {
        return Err(MsslError::Parameter(format!("mixing weight {mix} is outside (0,1)")));
    }
    if !(rate_slab > 0.0 && rate_slab <= rate_spike) {
        return Err(MsslError::Parameter(format!(
            "need 0 < slab rate <= spike rate, got {rate_slab} and {rate_spike}"
        )));
    }
    Ok(slab_probability_unchecked(value, rate_slab, rate_spike, mix))
}

#[inline]
pub(crate) fn slab_probability_unchecked(value: f64, rate_slab: f64, rate_spike: f64, mix: f64) -> f64 {
    let log_odds_spike = ((1.0 - mix) / mix).ln() + (rate_spike / rate_slab).ln()
        - (rate_spike - rate_slab) * value.abs();
    logistic(-log_odds_spike)
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Entry-wise slab probabilities and the penalties they induce.
///
/// `q_star` and `xi_star` are stored as full symmetric q×q matrices with a zero
/// diagonal; only the strict upper triangle carries information.
#[derive(Debug, Clone)]
pub struct PenaltyState {
    pub p_star: Array2<f64>,
    pub q_star: Array2<f64>,
    pub lambda_star: Array2<f64>,
    pub xi_star: Array2<f64>,
    pub lambda1: f64,
    pub lambda0: f64,
    pub xi1: f64,
    pub xi0: f64,
    /// Mixing weights the slab probabilities were computed with.
    pub theta: f64,
    pub eta: f64,
}

impl PenaltyState {
    pub fn sum_p_star(&self) -> f64 {
        self.p_star.iter().sum()
    }

    /// Sum over `k < k'`.
    pub fn sum_q_star(&self) -> f64 {
        let q = self.q_star.nrows();
        let mut s = 0.0;
        for k in 0..q {
            for l in (k + 1)..q {
                s += self.q_star[[k, l]];
            }
        }
        s
    }
}

/// Recomputes `p*`, `q*`, `λ*` and `ξ*` from the current state at spike rates
/// `(lambda0, xi0)` and slab rates `(lambda1, xi1)`.
pub fn update_penalties(
    state: &ModelState,
    lambda1: f64,
    lambda0: f64,
    xi1: f64,
    xi0: f64,
) -> Result<PenaltyState> {
    slab_probability(0.0, lambda1, lambda0, state.theta)?;
    slab_probability(0.0, xi1, xi0, state.eta)?;
    let p_star = state
        .b
        .mapv(|b| slab_probability_unchecked(b, lambda1, lambda0, state.theta));
    let lambda_star = p_star.mapv(|p| lambda1 * p + lambda0 * (1.0 - p));
    let q = state.omega.nrows();
    let mut q_star = Array2::<f64>::zeros((q, q));
    let mut xi_star = Array2::<f64>::zeros((q, q));
    for k in 0..q {
        for l in (k + 1)..q {
            let w = slab_probability_unchecked(state.omega[[k, l]], xi1, xi0, state.eta);
            let pen = xi1 * w + xi0 * (1.0 - w);
            q_star[[k, l]] = w;
            q_star[[l, k]] = w;
            xi_star[[k, l]] = pen;
            xi_star[[l, k]] = pen;
        }
    }
    Ok(PenaltyState {
        p_star,
        q_star,
        lambda_star,
        xi_star,
        lambda1,
        lambda0,
        xi1,
        xi0,
        theta: state.theta,
        eta: state.eta,
    })
}

#[derive(Debug, Clone)]
pub struct SurrogateStats {
    /// `(1/H) Σ_h (Z^(h) - XB)ᵀ (Z^(h) - XB)`.
    pub s: Array2<f64>,
    pub sum_p_star: f64,
    pub sum_q_star: f64,
}

/// `S = (1/H) Σ_h (Z^(h) - XB)ᵀ(Z^(h) - XB)`, accumulated one draw at a time.
pub fn residual_stats(ds: &Dataset, b: ArrayView2<f64>, draws: &LatentDraws) -> Result<Array2<f64>> {
    let (n, q) = (ds.n(), ds.q());
    if b.dim() != (ds.p(), q) {
        return Err(MsslError::Shape(format!(
            "B is {:?}, expected ({}, {})",
            b.dim(),
            ds.p(),
            q
        )));
    }
    let fitted = ds.x().dot(&b);
    let mut s = Array2::<f64>::zeros((q, q));
    let mut resid = vec![0.0; q];
    for z in &draws.draws {
        if z.dim() != (n, q) {
            return Err(MsslError::Shape(format!("draw is {:?}, expected ({n}, {q})", z.dim())));
        }
        for i in 0..n {
            for k in 0..q {
                resid[k] = z[[i, k]] - fitted[[i, k]];
            }
            for k in 0..q {
                for l in k..q {
                    s[[k, l]] += resid[k] * resid[l];
                }
            }
        }
    }
    let h = draws.h() as f64;
    for k in 0..q {
        for l in k..q {
            let v = s[[k, l]] / h;
            s[[k, l]] = v;
            s[[l, k]] = v;
        }
    }
    Ok(s)
}

pub fn surrogate_stats(
    ds: &Dataset,
    b: ArrayView2<f64>,
    draws: &LatentDraws,
    penalties: &PenaltyState,
) -> Result<SurrogateStats> {
    Ok(SurrogateStats {
        s: residual_stats(ds, b, draws)?,
        sum_p_star: penalties.sum_p_star(),
        sum_q_star: penalties.sum_q_star(),
    })
}
