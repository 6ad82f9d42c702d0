//! Orthant-truncated Gaussian sampling for the binary latents.
//!
//! Each binary latent sub-vector `z^(B)` is drawn from its Gaussian conditional
//! given the observed continuous block, restricted to the orthant selected by
//! the observed signs. The transition is an elliptical slice step whose
//! feasible angles are computed in closed form: every coordinate constraint
//! cuts the ellipse `x cos t + ν sin t` in at most two arcs, so the feasible
//! set is an intersection of arc unions and can be sampled uniformly without
//! the shrinking bracket of generic slice sampling.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{MsslError, Result};
use crate::linalg::{cholesky, CholeskyFactor};
use crate::rng::{derive_seed, StreamRng};
use crate::types::{Dataset, LatentDraws, ModelState};

const TWO_PI: f64 = 2.0 * PI;
const ARC_EPS: f64 = 1e-12;
const MAX_ANGLE_RETRIES: usize = 32;

/// Signs `s_k ∈ {+1, -1}`; coordinate `k` must satisfy `s_k z_k >= 0`
/// (strictly negative when `s_k = -1`, matching `y = 1{z >= 0}`).
#[derive(Debug, Clone, PartialEq)]
pub struct OrthantConstraint {
    pub signs: Vec<f64>,
}

impl OrthantConstraint {
    pub fn from_binary(y_b: ArrayView1<f64>) -> Self {
        OrthantConstraint {
            signs: y_b.iter().map(|&y| if y == 1.0 { 1.0 } else { -1.0 }).collect(),
        }
    }

    /// Exact membership test, no tolerance.
    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter().zip(&self.signs).all(|(&v, &s)| if s > 0.0 { v >= 0.0 } else { v < 0.0 })
    }

    fn interior_start(&self) -> Vec<f64> {
        self.signs.iter().map(|s| 0.5 * s).collect()
    }
}

/// Gaussian with mean `mean` and precision `precision`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    pub mean: Array1<f64>,
    pub precision: Array2<f64>,
    factor: CholeskyFactor,
}

impl ConditionalGaussian {
    pub fn new(mean: Array1<f64>, precision: Array2<f64>) -> Result<Self> {
        let factor = cholesky(precision.view()).map_err(|e| {
            MsslError::Conditioning(format!("binary-block precision is singular: {e}"))
        })?;
        Ok(ConditionalGaussian { mean, precision, factor })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// The parts of the binary-given-continuous conditional that do not depend on
/// the observation: `Ω_BB`, its factor, and `Ω_BB⁻¹ Ω_BC`.
#[derive(Debug, Clone)]
pub struct BinaryBlock {
    q_c: usize,
    precision: Array2<f64>,
    factor: CholeskyFactor,
    regression: Array2<f64>,
}

impl BinaryBlock {
    pub fn new(omega: ArrayView2<f64>, q_c: usize) -> Result<Self> {
        let q = omega.nrows();
        if q_c >= q {
            return Err(MsslError::Shape(format!("no binary block: q = {q}, q_c = {q_c}")));
        }
        let precision = omega.slice(s![q_c.., q_c..]).to_owned();
        let factor = cholesky(precision.view()).map_err(|e| {
            MsslError::Conditioning(format!("binary-block precision is singular: {e}"))
        })?;
        let cross = omega.slice(s![q_c.., ..q_c]);
        let regression = factor.solve(cross);
        Ok(BinaryBlock { q_c, precision, factor, regression })
    }

    /// `m_B - Ω_BB⁻¹ Ω_BC (y_C - m_C)`.
    pub fn conditional_mean(&self, m: ArrayView1<f64>, y_c: ArrayView1<f64>) -> Array1<f64> {
        let q_b = self.precision.nrows();
        let mut out = Array1::<f64>::zeros(q_b);
        for b in 0..q_b {
            let mut v = m[self.q_c + b];
            for c in 0..self.q_c {
                v -= self.regression[[b, c]] * (y_c[c] - m[c]);
            }
            out[b] = v;
        }
        out
    }

    pub fn at(&self, m: ArrayView1<f64>, y_c: ArrayView1<f64>) -> ConditionalGaussian {
        ConditionalGaussian {
            mean: self.conditional_mean(m, y_c),
            precision: self.precision.clone(),
            factor: self.factor.clone(),
        }
    }
}

/// Conditional law of the binary latent block given the observed continuous
/// block, for a latent mean `m` and precision `omega` in canonical order.
pub fn conditional_of_binary_block(
    m: ArrayView1<f64>,
    omega: ArrayView2<f64>,
    y_c: ArrayView1<f64>,
) -> Result<ConditionalGaussian> {
    let q = omega.nrows();
    if m.len() != q || omega.ncols() != q || y_c.len() >= q {
        return Err(MsslError::Shape(format!(
            "mean has length {}, Omega is {}x{}, continuous block has length {}",
            m.len(),
            q,
            omega.ncols(),
            y_c.len()
        )));
    }
    Ok(BinaryBlock::new(omega, y_c.len())?.at(m, y_c))
}

/// A union of disjoint closed arcs in `[0, 2π]`, sorted by start angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSet {
    arcs: Vec<(f64, f64)>,
}

impl ArcSet {
    pub fn full() -> Self {
        ArcSet { arcs: vec![(0.0, TWO_PI)] }
    }

    pub fn empty() -> Self {
        ArcSet { arcs: Vec::new() }
    }

    pub fn arcs(&self) -> &[(f64, f64)] {
        &self.arcs
    }

    pub fn is_empty(&self) -> bool {
        self.arcs.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.arcs.iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        let t = t.rem_euclid(TWO_PI);
        self.arcs
            .iter()
            .any(|&(a, b)| t >= a - ARC_EPS && t <= b + ARC_EPS)
            || (t < ARC_EPS && self.contains_end())
    }

    fn contains_end(&self) -> bool {
        self.arcs.last().is_some_and(|&(_, b)| b >= TWO_PI - ARC_EPS)
    }

    fn set_full(&mut self) {
        self.arcs.clear();
        self.arcs.push((0.0, TWO_PI));
    }

    /// Arc `[lo, lo + len]` wrapped onto `[0, 2π]`.
    fn set_wrapped(&mut self, lo: f64, len: f64) {
        self.arcs.clear();
        if len >= TWO_PI {
            self.arcs.push((0.0, TWO_PI));
            return;
        }
        let lo = lo.rem_euclid(TWO_PI);
        let hi = lo + len;
        if hi <= TWO_PI {
            self.arcs.push((lo, hi));
        } else {
            self.arcs.push((0.0, hi - TWO_PI));
            self.arcs.push((lo, TWO_PI));
        }
    }

    pub fn intersect(&self, other: &ArcSet) -> ArcSet {
        let mut out = ArcSet::empty();
        intersect_into(&self.arcs, &other.arcs, &mut out.arcs);
        out
    }

    /// Adds the degenerate arc `[0, 0]` unless angle 0 is already covered.
    fn ensure_origin(&mut self) {
        if !self.contains(0.0) {
            self.arcs.insert(0, (0.0, 0.0));
        }
    }

    /// Maps `u ∈ [0, total_length)` to an angle by walking the arcs in order.
    fn locate(&self, mut u: f64) -> f64 {
        for &(a, b) in &self.arcs {
            let len = b - a;
            if u <= len {
                return a + u;
            }
            u -= len;
        }
        self.arcs.last().map_or(0.0, |&(_, b)| b)
    }
}

fn intersect_into(a: &[(f64, f64)], b: &[(f64, f64)], out: &mut Vec<(f64, f64)>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (a0, a1) = a[i];
        let (b0, b1) = b[j];
        let lo = a0.max(b0);
        let hi = a1.min(b1);
        if hi >= lo {
            out.push((lo, hi));
        }
        if a1 < b1 {
            i += 1;
        } else {
            j += 1;
        }
    }
}

/// Angles `t` where `sign * (amp_cos cos t + amp_sin sin t + center) >= 0`.
pub fn ellipse_arc_intersection(center: f64, amp_cos: f64, amp_sin: f64, sign: f64) -> ArcSet {
    let mut out = ArcSet::empty();
    ellipse_arcs_into(center, amp_cos, amp_sin, sign, &mut out);
    out
}

fn ellipse_arcs_into(center: f64, amp_cos: f64, amp_sin: f64, sign: f64, out: &mut ArcSet) {
    let r = amp_cos.hypot(amp_sin);
    if r == 0.0 || !r.is_finite() {
        if sign * center >= 0.0 {
            out.set_full();
        } else {
            out.arcs.clear();
        }
        return;
    }
    let phase = amp_sin.atan2(amp_cos);
    // r cos(t - phase) >= -center for sign = +1, <= -center for sign = -1.
    let t = -center / r;
    if sign > 0.0 {
        if t <= -1.0 {
            out.set_full();
        } else if t > 1.0 {
            out.arcs.clear();
        } else {
            let alpha = t.acos();
            out.set_wrapped(phase - alpha, 2.0 * alpha);
        }
    } else if t >= 1.0 {
        out.set_full();
    } else if t < -1.0 {
        out.arcs.clear();
    } else {
        let alpha = t.acos();
        out.set_wrapped(phase + alpha, TWO_PI - 2.0 * alpha);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub burn_in: usize,
    /// Transitions between consecutive retained draws.
    pub thin: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { burn_in: 50, thin: 1 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SamplerStats {
    pub steps: u64,
    /// Steps that kept the current point because no feasible angle survived.
    pub fallbacks: u64,
}

impl SamplerStats {
    fn merge(self, other: SamplerStats) -> SamplerStats {
        SamplerStats {
            steps: self.steps + other.steps,
            fallbacks: self.fallbacks + other.fallbacks,
        }
    }
}

/// Buffers reused across transitions of one chain.
struct Scratch {
    nu: Vec<f64>,
    offset: Vec<f64>,
    proposal: Vec<f64>,
    feasible: ArcSet,
    cut: ArcSet,
    merged: Vec<(f64, f64)>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            nu: vec![0.0; d],
            offset: vec![0.0; d],
            proposal: vec![0.0; d],
            feasible: ArcSet { arcs: Vec::with_capacity(2 * d + 1) },
            cut: ArcSet { arcs: Vec::with_capacity(2) },
            merged: Vec::with_capacity(2 * d + 1),
        }
    }
}

fn ess_transition(
    current: &mut [f64],
    mean: ArrayView1<f64>,
    factor: &CholeskyFactor,
    constraint: &OrthantConstraint,
    rng: &mut StreamRng,
    stats: &mut SamplerStats,
    scratch: &mut Scratch,
) {
    let d = current.len();
    stats.steps += 1;
    // ν ~ N(0, P⁻¹) with P = L Lᵀ, by back substitution Lᵀν = ε.
    let l = factor.lower();
    let nu = &mut scratch.nu;
    for v in nu.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in (0..d).rev() {
        let mut v = nu[i];
        for k in (i + 1)..d {
            v -= l[[k, i]] * nu[k];
        }
        nu[i] = v / l[[i, i]];
    }
    for k in 0..d {
        scratch.offset[k] = current[k] - mean[k];
    }

    scratch.feasible.set_full();
    for k in 0..d {
        ellipse_arcs_into(mean[k], scratch.offset[k], scratch.nu[k], constraint.signs[k], &mut scratch.cut);
        intersect_into(&scratch.feasible.arcs, &scratch.cut.arcs, &mut scratch.merged);
        std::mem::swap(&mut scratch.feasible.arcs, &mut scratch.merged);
        if scratch.feasible.is_empty() {
            break;
        }
    }
    let feasible = &mut scratch.feasible;
    feasible.ensure_origin();
    let total = feasible.total_length();
    if !(total > 0.0) {
        stats.fallbacks += 1;
        return;
    }
    for _ in 0..MAX_ANGLE_RETRIES {
        let angle = feasible.locate(rng.random::<f64>() * total);
        let (sn, cs) = angle.sin_cos();
        for k in 0..d {
            scratch.proposal[k] = mean[k] + scratch.offset[k] * cs + scratch.nu[k] * sn;
        }
        if constraint.contains(&scratch.proposal) {
            current.copy_from_slice(&scratch.proposal);
            return;
        }
    }
    stats.fallbacks += 1;
}

/// One elliptical slice transition inside the orthant. `current` must satisfy
/// the constraint; the result always does.
pub fn liness_step(
    current: ArrayView1<f64>,
    g: &ConditionalGaussian,
    c: &OrthantConstraint,
    rng: &mut StreamRng,
    stats: &mut SamplerStats,
) -> Array1<f64> {
    let mut z = current.to_vec();
    let mut scratch = Scratch::new(z.len());
    ess_transition(&mut z, g.mean.view(), &g.factor, c, rng, stats, &mut scratch);
    Array1::from(z)
}

/// Runs a chain from the interior start `±0.5` and returns `h` retained states.
pub fn sample_truncated(
    g: &ConditionalGaussian,
    c: &OrthantConstraint,
    h: usize,
    cfg: SamplerConfig,
    rng: &mut StreamRng,
    stats: &mut SamplerStats,
) -> Vec<Vec<f64>> {
    chain(g.mean.view(), &g.factor, c, h, cfg, rng, stats)
}

fn chain(
    mean: ArrayView1<f64>,
    factor: &CholeskyFactor,
    c: &OrthantConstraint,
    h: usize,
    cfg: SamplerConfig,
    rng: &mut StreamRng,
    stats: &mut SamplerStats,
) -> Vec<Vec<f64>> {
    let mut z = c.interior_start();
    let mut scratch = Scratch::new(z.len());
    for _ in 0..cfg.burn_in {
        ess_transition(&mut z, mean, factor, c, rng, stats, &mut scratch);
    }
    let mut out = Vec::with_capacity(h);
    for _ in 0..h {
        for _ in 0..cfg.thin.max(1) {
            ess_transition(&mut z, mean, factor, c, rng, stats, &mut scratch);
        }
        out.push(z.clone());
    }
    out
}

/// Completes the latent matrix `H` times. Continuous columns are copied from
/// `Y`; each observation's binary block gets its own chain seeded by
/// `derive_seed(key ++ [i])`, so output is independent of the thread schedule.
///
/// With no binary outcomes nothing is latent and a single draw `Z = Y` is returned.
pub fn sample_latents(
    ds: &Dataset,
    state: &ModelState,
    h: usize,
    cfg: SamplerConfig,
    key: &[u64],
) -> Result<(LatentDraws, SamplerStats)> {
    if h == 0 {
        return Err(MsslError::Parameter("H must be at least 1".into()));
    }
    let q_c = ds.q_continuous();
    let q_b = ds.q_binary();
    if q_b == 0 {
        return Ok((
            LatentDraws { draws: vec![ds.y().to_owned()], seed_lineage: Vec::new() },
            SamplerStats::default(),
        ));
    }
    let block = BinaryBlock::new(state.omega.view(), q_c)?;
    let means = ds.x().dot(&state.b);
    let y = ds.y();
    let n = ds.n();

    let per_obs: Vec<(u64, Vec<Vec<f64>>, SamplerStats)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut path = key.to_vec();
            path.push(i as u64);
            let seed = derive_seed(&path);
            let mut rng = <StreamRng as rand::SeedableRng>::seed_from_u64(seed);
            let row = y.row(i);
            let mean = block.conditional_mean(means.row(i), row.slice(s![..q_c]));
            let constraint = OrthantConstraint::from_binary(row.slice(s![q_c..]));
            let mut stats = SamplerStats::default();
            let states = chain(mean.view(), &block.factor, &constraint, h, cfg, &mut rng, &mut stats);
            (seed, states, stats)
        })
        .collect();

    let mut draws = vec![y.to_owned(); h];
    let mut lineage = Vec::with_capacity(n);
    let mut stats = SamplerStats::default();
    for (i, (seed, states, st)) in per_obs.into_iter().enumerate() {
        lineage.push(seed);
        stats = stats.merge(st);
        for (d, z) in draws.iter_mut().zip(states) {
            for (b, v) in z.into_iter().enumerate() {
                d[[i, q_c + b]] = v;
            }
        }
    }
    Ok((LatentDraws { draws, seed_lineage: lineage }, stats))
}
