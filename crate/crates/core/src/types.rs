//! Shared domain types, the observation link and input validation.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{MsslError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeKind::Continuous => "continuous",
            OutcomeKind::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Some(OutcomeKind::Continuous),
            "binary" => Some(OutcomeKind::Binary),
            _ => None,
        }
    }
}

/// Maps a latent vector to an observed outcome: continuous coordinates pass
/// through, binary coordinates become `1{z >= 0}`.
pub fn apply_link(z: &[f64], kinds: &[OutcomeKind]) -> Result<Vec<f64>> {
    if z.len() != kinds.len() {
        return Err(MsslError::Shape(format!(
            "latent vector has length {} but {} outcome kinds were given",
            z.len(),
            kinds.len()
        )));
    }
    Ok(z.iter()
        .zip(kinds)
        .map(|(&v, kind)| match kind {
            OutcomeKind::Continuous => v,
            OutcomeKind::Binary => binary_link(v),
        })
        .collect())
}

#[inline]
pub fn binary_link(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Column centers and scales from [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Applies the stored transform to new rows (e.g. a test set).
    pub fn apply(&self, x_raw: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (n, p) = x_raw.dim();
        if p != self.centers.len() {
            return Err(MsslError::Shape(format!(
                "expected {} covariate columns, got {}",
                self.centers.len(),
                p
            )));
        }
        let mut out = Array2::<f64>::zeros((n, p).f());
        for j in 0..p {
            for i in 0..n {
                out[[i, j]] = (x_raw[[i, j]] - self.centers[j]) / self.scales[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (n, p) = x.dim();
        let mut out = Array2::<f64>::zeros((n, p).f());
        for j in 0..p {
            for i in 0..n {
                out[[i, j]] = x[[i, j]] * self.scales[j] + self.centers[j];
            }
        }
        out
    }

    /// Converts coefficients fitted on standardized covariates to the raw scale.
    pub fn coefficients_to_raw(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = b.to_owned();
        for (j, mut row) in out.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v / self.scales[j]);
        }
        out
    }
}

/// Centers every column and scales it to Euclidean norm `√n`.
pub fn standardize(x_raw: ArrayView2<f64>) -> Result<(Array2<f64>, Standardization)> {
    let (n, p) = x_raw.dim();
    if n < 2 {
        return Err(MsslError::Shape(format!("need at least 2 rows, got {n}")));
    }
    let target = (n as f64).sqrt();
    let mut centers = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = x_raw.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let norm = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
        let spread = col.iter().map(|v| v.abs()).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
        if !(norm > 1e-12 * spread * target) {
            return Err(MsslError::DegenerateCovariate { column: j });
        }
        centers.push(mean);
        scales.push(norm / target);
    }
    let t = Standardization { centers, scales };
    let x = t.apply(x_raw)?;
    Ok((x, t))
}

/// True when each column has mean 0 and norm `√n` within `tol` (relative for the norm).
pub fn is_standardized(x: ArrayView2<f64>, tol: f64) -> bool {
    let n = x.nrows() as f64;
    x.columns().into_iter().all(|c| {
        let mean = c.sum() / n;
        let norm2 = c.iter().map(|v| v * v).sum::<f64>();
        mean.abs() <= tol && (norm2 / n - 1.0).abs() <= tol
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    NonFinite { matrix: &'static str, row: usize, col: usize },
    NonBinary { row: usize, col: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Violation::NonFinite { matrix, row, col } => {
                write!(f, "non-finite value in {matrix} at ({row},{col})")
            }
            Violation::NonBinary { row, col, value } => {
                write!(f, "non-binary value {value} at ({row},{col})")
            }
        }
    }
}

/// Covariates, outcomes and outcome kinds in canonical order (continuous first).
///
/// `column_order[c]` is the user-facing index of canonical column `c`.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array2<f64>,
    kinds: Vec<OutcomeKind>,
    column_order: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from user-ordered outcomes, reordering continuous
    /// columns first. Fails with the full violation list if any invariant breaks.
    pub fn new(x: Array2<f64>, y: Array2<f64>, kinds: Vec<OutcomeKind>) -> Result<Self> {
        let column_order = canonical_order(&kinds);
        let y = permute_columns(y.view(), &column_order);
        let kinds = column_order.iter().map(|&c| kinds[c]).collect();
        let mut xf = Array2::<f64>::zeros(x.raw_dim().f());
        xf.assign(&x);
        let ds = Dataset { x: xf, y, kinds, column_order };
        validate_dataset(&ds)?;
        Ok(ds)
    }

    /// Builds a dataset without validation; pair with [`validate_dataset`].
    pub fn from_parts_unchecked(
        x: Array2<f64>,
        y: Array2<f64>,
        kinds: Vec<OutcomeKind>,
    ) -> Self {
        let column_order = canonical_order(&kinds);
        let y = if y.ncols() == kinds.len() {
            permute_columns(y.view(), &column_order)
        } else {
            y
        };
        let kinds = column_order.iter().map(|&c| kinds[c]).collect();
        let mut xf = Array2::<f64>::zeros(x.raw_dim().f());
        xf.assign(&x);
        Dataset { x: xf, y, kinds, column_order }
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn kinds(&self) -> &[OutcomeKind] {
        &self.kinds
    }

    pub fn column_order(&self) -> &[usize] {
        &self.column_order
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.kinds.len()
    }

    pub fn q_continuous(&self) -> usize {
        self.kinds.iter().filter(|k| **k == OutcomeKind::Continuous).count()
    }

    pub fn q_binary(&self) -> usize {
        self.q() - self.q_continuous()
    }

    /// Returns a copy with standardized covariates and the transform used.
    pub fn standardized(&self) -> Result<(Dataset, Standardization)> {
        let (x, t) = standardize(self.x.view())?;
        Ok((
            Dataset {
                x,
                y: self.y.clone(),
                kinds: self.kinds.clone(),
                column_order: self.column_order.clone(),
            },
            t,
        ))
    }

    /// Rows `idx` of this dataset, same column layout.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let x = self.x.select(ndarray::Axis(0), idx);
        let mut xf = Array2::<f64>::zeros(x.raw_dim().f());
        xf.assign(&x);
        Dataset {
            x: xf,
            y: self.y.select(ndarray::Axis(0), idx),
            kinds: self.kinds.clone(),
            column_order: self.column_order.clone(),
        }
    }

    /// Reorders the columns of a canonical-layout matrix back to user order.
    pub fn to_user_columns(&self, m: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(m.raw_dim());
        for (c, &u) in self.column_order.iter().enumerate() {
            out.column_mut(u).assign(&m.column(c));
        }
        out
    }

    /// Reorders both axes of a canonical q×q matrix back to user order.
    pub fn to_user_square(&self, m: ArrayView2<f64>) -> Array2<f64> {
        let q = self.q();
        let mut out = Array2::<f64>::zeros((q, q));
        for (a, &ua) in self.column_order.iter().enumerate() {
            for (b, &ub) in self.column_order.iter().enumerate() {
                out[[ua, ub]] = m[[a, b]];
            }
        }
        out
    }

    /// Outcome kinds in user order.
    pub fn user_kinds(&self) -> Vec<OutcomeKind> {
        let mut out = self.kinds.clone();
        for (c, &u) in self.column_order.iter().enumerate() {
            out[u] = self.kinds[c];
        }
        out
    }
}

/// Stable permutation listing continuous columns first, then binary.
pub fn canonical_order(kinds: &[OutcomeKind]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..kinds.len())
        .filter(|&k| kinds[k] == OutcomeKind::Continuous)
        .collect();
    order.extend((0..kinds.len()).filter(|&k| kinds[k] == OutcomeKind::Binary));
    order
}

/// `out[:, c] = m[:, order[c]]`.
pub fn permute_columns(m: ArrayView2<f64>, order: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(m.raw_dim());
    for (c, &src) in order.iter().enumerate() {
        out.column_mut(c).assign(&m.column(src));
    }
    out
}

pub fn validate_dataset(ds: &Dataset) -> Result<()> {
    let mut v = Vec::new();
    let (n, p) = ds.x.dim();
    if ds.y.nrows() != n {
        v.push(Violation::Dimension(format!(
            "X has {} rows but Y has {}",
            n,
            ds.y.nrows()
        )));
    }
    if ds.y.ncols() != ds.kinds.len() {
        v.push(Violation::Dimension(format!(
            "Y has {} columns but {} outcome kinds were given",
            ds.y.ncols(),
            ds.kinds.len()
        )));
    }
    if n < 2 {
        v.push(Violation::Dimension(format!("need n >= 2, got {n}")));
    }
    if p < 1 {
        v.push(Violation::Dimension("need p >= 1".into()));
    }
    if ds.kinds.is_empty() {
        v.push(Violation::Dimension("need q >= 1".into()));
    }
    for ((i, j), val) in ds.x.indexed_iter() {
        if !val.is_finite() {
            v.push(Violation::NonFinite { matrix: "X", row: i, col: j });
        }
    }
    for ((i, k), &val) in ds.y.indexed_iter() {
        let user_col = ds.column_order.get(k).copied().unwrap_or(k);
        if !val.is_finite() {
            v.push(Violation::NonFinite { matrix: "Y", row: i, col: user_col });
        } else if ds.kinds.get(k) == Some(&OutcomeKind::Binary) && val != 0.0 && val != 1.0 {
            v.push(Violation::NonBinary { row: i, col: user_col, value: val });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(MsslError::InvalidData(v))
    }
}

/// Current parameter values: latent coefficients, latent precision and the two
/// spike-and-slab mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub b: Array2<f64>,
    pub omega: Array2<f64>,
    pub theta: f64,
    pub eta: f64,
}

impl ModelState {
    /// `B = 0`, `Ω = I`, mixing weights at their Beta prior means.
    pub fn cold_start(p: usize, q: usize, hyper: &Hyperparameters) -> Self {
        ModelState {
            b: Array2::zeros((p, q)),
            omega: Array2::eye(q),
            theta: hyper.a_theta / (hyper.a_theta + hyper.b_theta),
            eta: hyper.a_eta / (hyper.a_eta + hyper.b_eta),
        }
    }

    /// Checks symmetry, positive definiteness, interior mixing weights and,
    /// for binary coordinates, unit latent variance within `var_tol`.
    pub fn check(&self, kinds: &[OutcomeKind], var_tol: f64) -> Result<()> {
        let q = self.omega.nrows();
        for i in 0..q {
            for j in 0..i {
                if (self.omega[[i, j]] - self.omega[[j, i]]).abs() > 1e-10 {
                    return Err(MsslError::Conditioning(format!(
                        "Omega is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let sigma = crate::linalg::pd_inverse(self.omega.view())?;
        for (k, kind) in kinds.iter().enumerate() {
            if *kind == OutcomeKind::Binary && (sigma[[k, k]] - 1.0).abs() > var_tol {
                return Err(MsslError::Conditioning(format!(
                    "binary outcome {k} has latent variance {}",
                    sigma[[k, k]]
                )));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0 && self.eta > 0.0 && self.eta < 1.0) {
            return Err(MsslError::Parameter(format!(
                "mixing weights outside (0,1): theta={}, eta={}",
                self.theta, self.eta
            )));
        }
        Ok(())
    }
}

/// Prior and algorithm settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub lambda1: f64,
    pub lambda0: f64,
    pub xi1: f64,
    pub xi0: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_eta: f64,
    pub b_eta: f64,
    /// Monte Carlo draws per E-step.
    pub h: usize,
    pub lambda0_grid: Vec<f64>,
    pub xi0_grid: Vec<f64>,
    /// Sweep budget for one coordinate-ascent CM step.
    pub max_iter: usize,
    /// Convergence tolerance on the largest coefficient change in a sweep.
    pub tol: f64,
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![hi],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

impl Hyperparameters {
    /// Recommended defaults for a problem of size `(n, p, q)`.
    pub fn defaults(n: usize, p: usize, q: usize) -> Self {
        let nf = n as f64;
        let lambda0_grid = linear_grid(10.0, 100.0, 10);
        let xi0_grid = linear_grid(nf / 10.0, nf, 10);
        Hyperparameters {
            lambda1: 1.0 / (nf * nf.ln()).sqrt(),
            lambda0: *lambda0_grid.last().unwrap(),
            xi1: nf / 100.0,
            xi0: *xi0_grid.last().unwrap(),
            a_theta: 1.0,
            b_theta: (p * q) as f64,
            a_eta: 1.0,
            b_eta: q as f64,
            h: 2000,
            lambda0_grid,
            xi0_grid,
            max_iter: 1000,
            tol: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda1", self.lambda1),
            ("lambda0", self.lambda0),
            ("xi1", self.xi1),
            ("xi0", self.xi0),
            ("a_theta", self.a_theta),
            ("b_theta", self.b_theta),
            ("a_eta", self.a_eta),
            ("b_eta", self.b_eta),
            ("tol", self.tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MsslError::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.h == 0 || self.max_iter == 0 {
            return Err(MsslError::Parameter("H and max_iter must be positive".into()));
        }
        if self.lambda1 > self.lambda0 || self.xi1 > self.xi0 {
            return Err(MsslError::Parameter(
                "slab rates must not exceed spike rates".into(),
            ));
        }
        for (name, grid, slab) in [
            ("lambda0_grid", &self.lambda0_grid, self.lambda1),
            ("xi0_grid", &self.xi0_grid, self.xi1),
        ] {
            if grid.is_empty() {
                return Err(MsslError::Parameter(format!("{name} is empty")));
            }
            if grid.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(MsslError::Parameter(format!("{name} must be strictly increasing")));
            }
            if !(grid[0] >= slab) || !grid[0].is_finite() {
                return Err(MsslError::Parameter(format!(
                    "{name} starts at {} which is below the slab rate {slab}",
                    grid[0]
                )));
            }
        }
        Ok(())
    }
}

/// Monte Carlo completions of the latent matrix `Z`, canonical column order.
#[derive(Debug, Clone)]
pub struct LatentDraws {
    pub draws: Vec<Array2<f64>>,
    /// Seed used for each observation's chain (empty when nothing was sampled).
    pub seed_lineage: Vec<u64>,
}

impl LatentDraws {
    pub fn h(&self) -> usize {
        self.draws.len()
    }

    /// Average of the draws, `Σ_h Z^(h) / H`, summed in draw order.
    pub fn mean(&self) -> Array2<f64> {
        let mut acc = self.draws[0].clone();
        for d in &self.draws[1..] {
            acc += d;
        }
        acc /= self.draws.len() as f64;
        acc
    }
}

pub fn column_means(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| Array1::zeros(m.ncols()))
}
