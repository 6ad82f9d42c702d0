//! Dense symmetric positive-definite algebra on small matrices.
//!
//! Everything here runs sequentially with a fixed summation order, so results
//! do not depend on the thread pool the caller happens to run in.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::LinalgError;

const SYMMETRY_TOL: f64 = 1e-10;
const PIVOT_REL_TOL: f64 = 1e-12;

/// Lower-triangular factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Array2<f64>,
}

/// Factors a symmetric matrix, or reports that it is not positive definite.
///
/// A pivot at or below `1e-12 * max(diag)` counts as not positive definite.
pub fn cholesky(a: ArrayView2<f64>) -> Result<CholeskyFactor, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::Shape(format!("{}x{} is not square", n, a.ncols())));
    }
    let scale = (0..n).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
    for i in 0..n {
        for j in 0..i {
            let gap = (a[[i, j]] - a[[j, i]]).abs();
            if gap > SYMMETRY_TOL * scale.max(1.0) {
                return Err(LinalgError::Asymmetric { row: i, col: j, gap });
            }
        }
    }
    let floor = PIVOT_REL_TOL * scale;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> ArrayView2<'_, f64> {
        self.l.view()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        y
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut x = Array1::<f64>::zeros(n);
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }

    pub fn solve_vec(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let y = self.solve_lower(b);
        self.solve_upper(y.view())
    }

    pub fn solve(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for c in 0..b.ncols() {
            let x = self.solve_vec(b.column(c));
            out.column_mut(c).assign(&x);
        }
        out
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = self.solve(Array2::<f64>::eye(n).view());
        symmetrize(&mut inv);
        inv
    }
}

pub fn log_det_pd(a: ArrayView2<f64>) -> Result<f64, LinalgError> {
    Ok(cholesky(a)?.log_det())
}

pub fn pd_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>, LinalgError> {
    Ok(cholesky(a)?.inverse())
}

pub fn solve_pd(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>, LinalgError> {
    if b.nrows() != a.nrows() {
        return Err(LinalgError::Shape(format!(
            "lhs is {}x{}, rhs has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    Ok(cholesky(a)?.solve(b))
}

/// Replaces `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

pub fn is_positive_definite(a: ArrayView2<f64>) -> bool {
    cholesky(a).is_ok()
}

pub fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dot product with a fixed association order: four interleaved partial
/// sums combined as `(s0 + s1) + (s2 + s3)`, then the tail left to right.
#[inline]
pub fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => dot_slices(x, y),
        _ => a.iter().zip(b.iter()).map(|(u, v)| u * v).sum(),
    }
}

#[inline]
pub fn dot_slices(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0f64; 4];
    let xc = x.chunks_exact(4);
    let yc = y.chunks_exact(4);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (u, v) in xc.zip(yc) {
        acc[0] += u[0] * v[0];
        acc[1] += u[1] * v[1];
        acc[2] += u[2] * v[2];
        acc[3] += u[3] * v[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (u, v) in xr.iter().zip(yr) {
        s += u * v;
    }
    s
}

/// `tr(A B)` for square matrices of equal size.
pub fn trace_product(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += a[[i, k]] * b[[k, i]];
        }
    }
    s
}
