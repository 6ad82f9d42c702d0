//! Synthetic data: AR(0.5) Gaussian covariates, sparse coefficient matrices,
//! six precision structures and forward simulation through the latent model.

use std::fmt;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MsslError, Result};
use crate::graph::{watts_strogatz, wilson_tree, Graph};
use crate::linalg::{cholesky, pd_inverse};
use crate::rng::stream;
use crate::types::{binary_link, OutcomeKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaStructure {
    Ar1,
    Ar2,
    BlockDiagonal,
    StarGraph,
    SmallWorld { rewire_prob: f64 },
    TreeNetwork,
}

impl OmegaStructure {
    pub const NAMES: [&'static str; 6] = ["ar1", "ar2", "block", "star", "small-world", "tree"];

    pub fn all() -> Vec<OmegaStructure> {
        Self::NAMES.iter().map(|n| Self::parse(n).unwrap()).collect()
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name.trim().to_ascii_lowercase().as_str() {
            "ar1" => OmegaStructure::Ar1,
            "ar2" => OmegaStructure::Ar2,
            "block" => OmegaStructure::BlockDiagonal,
            "star" => OmegaStructure::StarGraph,
            "small-world" => OmegaStructure::SmallWorld { rewire_prob: 0.1 },
            "tree" => OmegaStructure::TreeNetwork,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            OmegaStructure::Ar1 => "ar1",
            OmegaStructure::Ar2 => "ar2",
            OmegaStructure::BlockDiagonal => "block",
            OmegaStructure::StarGraph => "star",
            OmegaStructure::SmallWorld { .. } => "small-world",
            OmegaStructure::TreeNetwork => "tree",
        }
    }
}

impl fmt::Display for OmegaStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalLaw {
    Uniform { lo: f64, hi: f64 },
    /// `±U[inner, outer]`.
    Disjoint { inner: f64, outer: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalRegime {
    pub law: SignalLaw,
    /// Fraction of nonzero entries.
    pub density: f64,
}

impl SignalRegime {
    pub const NAMES: [&'static str; 2] = ["uniform", "disjoint"];

    pub fn uniform() -> Self {
        SignalRegime { law: SignalLaw::Uniform { lo: -5.0, hi: 5.0 }, density: 0.3 }
    }

    pub fn disjoint() -> Self {
        SignalRegime { law: SignalLaw::Disjoint { inner: 2.0, outer: 5.0 }, density: 0.3 }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "uniform" => Some(Self::uniform()),
            "disjoint" => Some(Self::disjoint()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.law {
            SignalLaw::Uniform { .. } => "uniform",
            SignalLaw::Disjoint { .. } => "disjoint",
        }
    }

    pub fn with_density(self, density: f64) -> Self {
        SignalRegime { density, ..self }
    }
}

/// Precision matrix for `structure`, with the graph for the two random structures.
pub fn gen_omega_with_graph(
    structure: OmegaStructure,
    q: usize,
    seed: u64,
) -> Result<(Array2<f64>, Option<Graph>)> {
    if q < 2 {
        return Err(MsslError::Parameter(format!("{structure} needs q >= 2, got {q}")));
    }
    let mut rng = stream(&[seed]);
    let (omega, graph) = match structure {
        OmegaStructure::Ar1 => (ar1_precision(q, 0.7), None),
        OmegaStructure::Ar2 => {
            if q < 3 {
                return Err(MsslError::Parameter(format!("ar2 needs q >= 3, got {q}")));
            }
            let omega = Array2::from_shape_fn((q, q), |(k, l)| match k.abs_diff(l) {
                0 => 1.0,
                1 => 0.5,
                2 => 0.25,
                _ => 0.0,
            });
            (omega, None)
        }
        OmegaStructure::BlockDiagonal => (block_precision(q)?, None),
        OmegaStructure::StarGraph => {
            let omega = Array2::from_shape_fn((q, q), |(k, l)| {
                if k == l {
                    1.0
                } else if k == 0 || l == 0 {
                    0.1
                } else {
                    0.0
                }
            });
            (omega, None)
        }
        OmegaStructure::SmallWorld { rewire_prob } => {
            if !(0.0..=1.0).contains(&rewire_prob) {
                return Err(MsslError::Parameter(format!(
                    "rewiring probability {rewire_prob} is outside [0,1]"
                )));
            }
            let g = watts_strogatz(q, 1, rewire_prob, &mut rng);
            (graph_precision(&g, &mut rng), Some(g))
        }
        OmegaStructure::TreeNetwork => {
            let g = wilson_tree(q, &mut rng);
            (graph_precision(&g, &mut rng), Some(g))
        }
    };
    cholesky(omega.view()).map_err(|e| {
        MsslError::Parameter(format!("{structure} precision is not positive definite at q={q}: {e}"))
    })?;
    Ok((omega, graph))
}

pub fn gen_omega(structure: OmegaStructure, q: usize, seed: u64) -> Result<Array2<f64>> {
    gen_omega_with_graph(structure, q, seed).map(|(o, _)| o)
}

/// Tridiagonal inverse of `Σ_kk' = ρ^|k-k'|`.
pub fn ar1_precision(q: usize, rho: f64) -> Array2<f64> {
    let c = 1.0 - rho * rho;
    Array2::from_shape_fn((q, q), |(k, l)| {
        if k == l {
            if k == 0 || k == q - 1 {
                1.0 / c
            } else {
                (1.0 + rho * rho) / c
            }
        } else if k.abs_diff(l) == 1 {
            -rho / c
        } else {
            0.0
        }
    })
}

/// Two blocks split at `q/2`, each with unit variances and correlation 0.5;
/// each block inverted on its own so cross-block entries stay exactly zero.
fn block_precision(q: usize) -> Result<Array2<f64>> {
    let mut omega = Array2::<f64>::zeros((q, q));
    let cut = q / 2;
    for (lo, hi) in [(0, cut), (cut, q)] {
        let m = hi - lo;
        if m == 0 {
            continue;
        }
        let sigma = Array2::from_shape_fn((m, m), |(a, b)| if a == b { 1.0 } else { 0.5 });
        let inv = pd_inverse(sigma.view())?;
        omega.slice_mut(s![lo..hi, lo..hi]).assign(&inv);
    }
    Ok(omega)
}

/// Edge weights `±U[0.2, 0.5]`, diagonal `1 + Σ|w| + 0.1` (strictly diagonally dominant).
fn graph_precision<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> Array2<f64> {
    let q = g.node_count();
    let mut omega = Array2::<f64>::zeros((q, q));
    for (a, b) in g.edges() {
        let mag = rng.random_range(0.2..=0.5);
        let w = if rng.random::<bool>() { mag } else { -mag };
        omega[[a, b]] = w;
        omega[[b, a]] = w;
    }
    for k in 0..q {
        let off: f64 = (0..q).filter(|&l| l != k).map(|l| omega[[k, l]].abs()).sum();
        omega[[k, k]] = 1.0 + off + 0.1;
    }
    omega
}

/// Exactly `round(density·p·q)` nonzero entries at uniformly chosen positions.
pub fn gen_coefficients(regime: SignalRegime, p: usize, q: usize, seed: u64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&regime.density) {
        return Err(MsslError::Parameter(format!("density {} is outside [0,1]", regime.density)));
    }
    let total = p * q;
    let count = ((regime.density * total as f64).round() as usize).min(total);
    let mut rng = stream(&[seed]);
    let mut b = Array2::<f64>::zeros((p, q));
    let mut positions = sample(&mut rng, total, count).into_vec();
    positions.sort_unstable();
    for pos in positions {
        let v = match regime.law {
            SignalLaw::Uniform { lo, hi } => rng.random_range(lo..=hi),
            SignalLaw::Disjoint { inner, outer } => {
                let mag = rng.random_range(inner..=outer);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        };
        b[[pos / q, pos % q]] = v;
    }
    Ok(b)
}

/// `n` rows from `N_p(0, Γ)` with `Γ_jj' = 0.5^|j-j'|`.
pub fn gen_covariates(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let gamma = Array2::from_shape_fn((p, p), |(j, l)| 0.5f64.powi(j.abs_diff(l) as i32));
    let factor = cholesky(gamma.view()).expect("AR(0.5) covariance is positive definite");
    let l = factor.lower();
    let mut rng = stream(&[seed]);
    let mut x = Array2::<f64>::zeros((n, p));
    let mut e = vec![0.0; p];
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for j in 0..p {
            let mut acc = 0.0;
            for m in 0..=j {
                acc += l[[j, m]] * e[m];
            }
            x[[i, j]] = acc;
        }
    }
    x
}

/// Draws `z_i ~ N(Bᵀx_i, Ω⁻¹)` and returns `g(z_i)` row by row. Columns follow
/// `kinds` as given (no reordering).
pub fn simulate_outcomes(
    x: ArrayView2<f64>,
    b: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    kinds: &[OutcomeKind],
    seed: u64,
) -> Result<Array2<f64>> {
    let z = simulate_latents(x, b, omega, seed)?;
    let mut y = z;
    for (k, kind) in kinds.iter().enumerate() {
        if *kind == OutcomeKind::Binary {
            y.column_mut(k).mapv_inplace(binary_link);
        }
    }
    Ok(y)
}

/// Latent draws behind [`simulate_outcomes`]; warns when a binary coordinate
/// does not have unit latent variance.
pub fn simulate_latents(
    x: ArrayView2<f64>,
    b: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    seed: u64,
) -> Result<Array2<f64>> {
    let (n, p) = x.dim();
    let q = omega.nrows();
    if b.dim() != (p, q) || omega.ncols() != q {
        return Err(MsslError::Shape(format!(
            "X is {:?}, B is {:?}, Omega is {:?}",
            x.dim(),
            b.dim(),
            omega.dim()
        )));
    }
    let sigma = pd_inverse(omega)
        .map_err(|e| MsslError::Conditioning(format!("cannot invert Omega: {e}")))?;
    let factor = cholesky(sigma.view())
        .map_err(|e| MsslError::Conditioning(format!("cannot factor Omega inverse: {e}")))?;
    let l = factor.lower();
    let mean = x.dot(&b);
    let mut rng = stream(&[seed]);
    let mut z = Array2::<f64>::zeros((n, q));
    let mut e = Array1::<f64>::zeros(q);
    for i in 0..n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for k in 0..q {
            let mut acc = mean[[i, k]];
            for m in 0..=k {
                acc += l[[k, m]] * e[m];
            }
            z[[i, k]] = acc;
        }
    }
    Ok(z)
}

fn warn_on_binary_scale(omega: ArrayView2<f64>, kinds: &[OutcomeKind]) -> Result<()> {
    let sigma = pd_inverse(omega)
        .map_err(|e| MsslError::Conditioning(format!("cannot invert Omega: {e}")))?;
    for (k, kind) in kinds.iter().enumerate() {
        if *kind == OutcomeKind::Binary && (sigma[[k, k]] - 1.0).abs() > 1e-8 {
            log::warn!(
                "binary outcome {k} has latent variance {:.4}; the fit rescales it to 1",
                sigma[[k, k]]
            );
        }
    }
    Ok(())
}

/// `q - q/2` continuous outcomes followed by `q/2` binary ones.
pub fn default_kinds(q: usize) -> Vec<OutcomeKind> {
    let qb = q / 2;
    let mut kinds = vec![OutcomeKind::Continuous; q - qb];
    kinds.extend(std::iter::repeat_n(OutcomeKind::Binary, qb));
    kinds
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub n: usize,
    pub p: usize,
    pub structure: OmegaStructure,
    pub regime: SignalRegime,
    pub kinds: Vec<OutcomeKind>,
    pub seed: u64,
}

/// A simulated problem: the truth and one draw of data from it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub b: Array2<f64>,
    pub omega: Array2<f64>,
    pub kinds: Vec<OutcomeKind>,
    pub graph: Option<Graph>,
}

const TAG_OMEGA: u64 = 1;
const TAG_B: u64 = 2;
const TAG_X: u64 = 3;
const TAG_Y: u64 = 4;

/// Truth `(B, Ω)` for a simulation setting; depends only on the seed, structure, regime and sizes.
pub fn gen_truth(spec: &SimulationSpec) -> Result<(Array2<f64>, Array2<f64>, Option<Graph>)> {
    let q = spec.kinds.len();
    let (omega, graph) = gen_omega_with_graph(spec.structure, q, crate::rng::derive_seed(&[spec.seed, TAG_OMEGA]))?;
    let b = gen_coefficients(spec.regime, spec.p, q, crate::rng::derive_seed(&[spec.seed, TAG_B]))?;
    Ok((b, omega, graph))
}

/// Draws covariates and outcomes from a given truth with `seed`.
pub fn simulate_from_truth(
    n: usize,
    b: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    kinds: &[OutcomeKind],
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    warn_on_binary_scale(omega, kinds)?;
    let x = gen_covariates(n, b.nrows(), crate::rng::derive_seed(&[seed, TAG_X]));
    let y = simulate_outcomes(x.view(), b, omega, kinds, crate::rng::derive_seed(&[seed, TAG_Y]))?;
    Ok((x, y))
}

pub fn simulate(spec: &SimulationSpec) -> Result<Simulated> {
    if spec.n < 2 || spec.p == 0 || spec.kinds.is_empty() {
        return Err(MsslError::Parameter(format!(
            "need n >= 2, p >= 1, q >= 1; got n={}, p={}, q={}",
            spec.n,
            spec.p,
            spec.kinds.len()
        )));
    }
    let (b, omega, graph) = gen_truth(spec)?;
    let (x, y) = simulate_from_truth(spec.n, b.view(), omega.view(), &spec.kinds, spec.seed)?;
    Ok(Simulated { x, y, b, omega, kinds: spec.kinds.clone(), graph })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_positive_definite;
    use ndarray::array;

    #[test]
    fn ar1_matches_two_by_two_inverse() {
        let o = gen_omega(OmegaStructure::Ar1, 2, 0).unwrap();
        let expect = array![[1.0 / 0.51, -0.7 / 0.51], [-0.7 / 0.51, 1.0 / 0.51]];
        assert!((&o - &expect).iter().all(|d| d.abs() < 1e-12));
        assert!((o[[0, 0]] - 1.9608).abs() < 1e-4 && (o[[0, 1]] + 1.3725).abs() < 1e-4);
    }

    #[test]
    fn ar1_inverts_power_covariance() {
        for q in [2, 3, 7, 20] {
            let o = gen_omega(OmegaStructure::Ar1, q, 0).unwrap();
            let sigma = Array2::from_shape_fn((q, q), |(k, l)| 0.7f64.powi(k.abs_diff(l) as i32));
            let prod = o.dot(&sigma);
            assert!((&prod - &Array2::<f64>::eye(q)).iter().all(|d| d.abs() < 1e-8));
        }
    }

    #[test]
    fn fixed_structures() {
        let star = gen_omega(OmegaStructure::StarGraph, 4, 0).unwrap();
        assert_eq!(
            star,
            array![
                [1.0, 0.1, 0.1, 0.1],
                [0.1, 1.0, 0.0, 0.0],
                [0.1, 0.0, 1.0, 0.0],
                [0.1, 0.0, 0.0, 1.0]
            ]
        );
        let ar2 = gen_omega(OmegaStructure::Ar2, 5, 0).unwrap();
        for k in 0..5usize {
            for l in 0..5 {
                if k.abs_diff(l) > 2 {
                    assert_eq!(ar2[[k, l]], 0.0);
                }
            }
        }
        assert!(matches!(gen_omega(OmegaStructure::Ar2, 2, 0), Err(MsslError::Parameter(_))));
        assert!(gen_omega(OmegaStructure::Ar1, 1, 0).is_err());
    }

    #[test]
    fn block_covariance_is_exactly_block_diagonal() {
        for q in [2, 4, 5, 8] {
            let o = gen_omega(OmegaStructure::BlockDiagonal, q, 0).unwrap();
            let sigma = pd_inverse(o.view()).unwrap();
            for k in 0..q {
                for l in 0..q {
                    let same = (k < q / 2) == (l < q / 2);
                    if !same {
                        assert_eq!(o[[k, l]], 0.0);
                        assert_eq!(sigma[[k, l]], 0.0);
                    } else {
                        let want = if k == l { 1.0 } else { 0.5 };
                        assert!((sigma[[k, l]] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn graph_structures_follow_their_graph() {
        for seed in 0..20 {
            for st in [OmegaStructure::SmallWorld { rewire_prob: 0.1 }, OmegaStructure::TreeNetwork] {
                let (o, g) = gen_omega_with_graph(st, 8, seed).unwrap();
                let g = g.unwrap();
                assert!(is_positive_definite(o.view()));
                for k in 0..8 {
                    for l in 0..8 {
                        if k != l {
                            assert_eq!(o[[k, l]] != 0.0, g.has_edge(k, l));
                            if o[[k, l]] != 0.0 {
                                assert!((0.2..=0.5).contains(&o[[k, l]].abs()));
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn every_structure_is_positive_definite() {
        for st in OmegaStructure::all() {
            for q in [3, 4, 10, 30] {
                let o = gen_omega(st, q, 5).unwrap();
                assert!(is_positive_definite(o.view()), "{st} q={q}");
            }
        }
        for name in OmegaStructure::NAMES {
            assert_eq!(OmegaStructure::parse(name).unwrap().name(), name);
        }
        assert!(OmegaStructure::parse("ring").is_none());
    }

    #[test]
    fn coefficient_counts_and_ranges() {
        let b = gen_coefficients(SignalRegime::uniform(), 10, 4, 3).unwrap();
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 12);
        assert!(b.iter().all(|v| v.abs() <= 5.0));
        let b = gen_coefficients(SignalRegime::disjoint(), 50, 4, 3).unwrap();
        assert_eq!(b.iter().filter(|v| **v != 0.0).count(), 60);
        assert!(b.iter().filter(|v| **v != 0.0).all(|v| (2.0..=5.0).contains(&v.abs())));
        let b = gen_coefficients(SignalRegime::uniform().with_density(0.0), 10, 4, 3).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));
        assert!(gen_coefficients(SignalRegime::uniform().with_density(1.5), 10, 4, 3).is_err());
    }

    #[test]
    fn covariates_have_ar_half_covariance() {
        let x = gen_covariates(100_000, 3, 11);
        let n = x.nrows() as f64;
        let c13 = x.column(0).dot(&x.column(2)) / n;
        let c11 = x.column(0).dot(&x.column(0)) / n;
        assert!((c13 - 0.25).abs() < 0.01, "{c13}");
        assert!((c11 - 1.0).abs() < 0.02);
        assert_eq!(gen_covariates(5, 4, 9), gen_covariates(5, 4, 9));
        assert_ne!(gen_covariates(5, 4, 9), gen_covariates(5, 4, 10));
    }

    #[test]
    fn single_covariate_is_standard_normal() {
        let x = gen_covariates(20_000, 1, 2);
        let m = x.sum() / 20_000.0;
        let v = x.mapv(|a| a * a).sum() / 20_000.0;
        assert!(m.abs() < 0.03 && (v - 1.0).abs() < 0.04);
    }

    #[test]
    fn symmetric_binary_outcome() {
        let n = 10_000;
        let x = Array2::<f64>::zeros((n, 1));
        let y = simulate_outcomes(
            x.view(),
            Array2::zeros((1, 1)).view(),
            Array2::eye(1).view(),
            &[OutcomeKind::Binary],
            4,
        )
        .unwrap();
        let rate = y.sum() / n as f64;
        assert!((rate - 0.5).abs() < 3.0 * 0.005);
        assert!(y.iter().all(|v| *v == 0.0 || *v == 1.0));
    }

    #[test]
    fn continuous_residual_covariance_is_identity() {
        let n = 10_000;
        let x = gen_covariates(n, 2, 1);
        let b = array![[1.0, 0.0, -1.0], [0.5, 2.0, 0.0]];
        let y = simulate_outcomes(x.view(), b.view(), Array2::eye(3).view(), &[OutcomeKind::Continuous; 3], 8)
            .unwrap();
        let r = &y - &x.dot(&b);
        let cov = r.t().dot(&r) / n as f64;
        let err = (&cov - &Array2::<f64>::eye(3)).mapv(|d| d * d).sum().sqrt();
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn default_split_is_half_binary() {
        assert_eq!(
            default_kinds(4),
            vec![OutcomeKind::Continuous, OutcomeKind::Continuous, OutcomeKind::Binary, OutcomeKind::Binary]
        );
        assert_eq!(default_kinds(1), vec![OutcomeKind::Continuous]);
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let spec = SimulationSpec {
            n: 30,
            p: 6,
            structure: OmegaStructure::TreeNetwork,
            regime: SignalRegime::disjoint(),
            kinds: default_kinds(4),
            seed: 12,
        };
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.graph, b.graph);
    }
}
