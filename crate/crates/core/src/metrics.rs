//! Support recovery, regression-function error, predictive scores and the
//! hard-threshold screen.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{MsslError, Result};
use crate::linalg::{cholesky, pd_inverse};
use crate::rng::stream;
use crate::types::{Dataset, ModelState, OutcomeKind};

/// Confusion counts and the ratios built from them; a ratio with a zero
/// denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl SupportReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        SupportReport {
            tp,
            fp,
            tn,
            fn_,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            precision: ratio(tp, tp + fp),
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
        }
    }
}

pub fn support_of(m: ArrayView2<f64>) -> Array2<bool> {
    m.mapv(|v| v != 0.0)
}

/// Entry-wise confusion matrix of two patterns.
pub fn support_metrics(estimated: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<SupportReport> {
    if estimated.dim() != truth.dim() {
        return Err(MsslError::Shape(format!(
            "estimated pattern is {:?}, truth is {:?}",
            estimated.dim(),
            truth.dim()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&e, &t) in estimated.iter().zip(truth.iter()) {
        match (e, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(SupportReport::from_counts(tp, fp, tn, fn_))
}

/// Confusion matrix over the strict upper triangle of two square patterns.
pub fn support_metrics_upper(estimated: ArrayView2<bool>, truth: ArrayView2<bool>) -> Result<SupportReport> {
    if estimated.dim() != truth.dim() || estimated.nrows() != estimated.ncols() {
        return Err(MsslError::Shape(format!(
            "need equal square patterns, got {:?} and {:?}",
            estimated.dim(),
            truth.dim()
        )));
    }
    let q = truth.nrows();
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for k in 0..q {
        for l in (k + 1)..q {
            match (estimated[[k, l]], truth[[k, l]]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    Ok(SupportReport::from_counts(tp, fp, tn, fn_))
}

/// Standard normal distribution function.
pub fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// `E[y | x]` for every row: `bᵀx` on continuous coordinates and
/// `Φ(bᵀx / σ_k)` on binary ones, `σ_k² = (Ω⁻¹)_kk`.
pub fn conditional_means(
    x: ArrayView2<f64>,
    b: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    kinds: &[OutcomeKind],
) -> Result<Array2<f64>> {
    let q = kinds.len();
    if b.nrows() != x.ncols() || b.ncols() != q || omega.dim() != (q, q) {
        return Err(MsslError::Shape(format!(
            "X is {:?}, B is {:?}, Omega is {:?} for {q} outcomes",
            x.dim(),
            b.dim(),
            omega.dim()
        )));
    }
    let mut m = x.dot(&b);
    if kinds.contains(&OutcomeKind::Binary) {
        let sigma = pd_inverse(omega)?;
        for (k, kind) in kinds.iter().enumerate() {
            if *kind == OutcomeKind::Binary {
                let sd = sigma[[k, k]].sqrt();
                m.column_mut(k).mapv_inplace(|v| normal_cdf(v / sd));
            }
        }
    }
    Ok(m)
}

/// Mean over test rows of the Euclidean distance between estimated and true
/// conditional mean vectors.
pub fn regression_function_error(
    x_test: ArrayView2<f64>,
    b_hat: ArrayView2<f64>,
    omega_hat: ArrayView2<f64>,
    b_true: ArrayView2<f64>,
    omega_true: ArrayView2<f64>,
    kinds: &[OutcomeKind],
) -> Result<f64> {
    if x_test.nrows() == 0 {
        return Err(MsslError::Shape("empty test set".into()));
    }
    let est = conditional_means(x_test, b_hat, omega_hat, kinds)?;
    let truth = conditional_means(x_test, b_true, omega_true, kinds)?;
    let total: f64 = est
        .rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
        .sum();
    Ok(total / x_test.nrows() as f64)
}

/// Mann-Whitney AUC with tied scores given their average rank; `None` when
/// the labels are all equal.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        rank_sum += idx[start..end].iter().filter(|&&i| labels[i]).count() as f64 * avg;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveScores {
    /// Simulated-prediction RMSE averaged over continuous outcomes.
    pub rmse: Option<f64>,
    /// RMSE of the conditional mean `bᵀx` averaged over continuous outcomes.
    pub rmse_mean: Option<f64>,
    /// Mean AUC over binary outcomes with non-degenerate labels.
    pub auc: Option<f64>,
    pub auc_per_outcome: Vec<Option<f64>>,
}

/// Scores a fitted model on a test set. Each test row gets `draws` forward
/// simulations from `N(Bᵀx, Ω⁻¹)`; binary outcomes are scored by the AUC of
/// `P(y_k = 1 | x)`. `test` and `state` share the canonical column order.
pub fn predictive_scores(
    test: &Dataset,
    state: &ModelState,
    seed: u64,
    draws: usize,
) -> Result<PredictiveScores> {
    let (n, q) = (test.n(), test.q());
    let kinds = test.kinds();
    let mean = test.x().dot(&state.b);
    if mean.ncols() != q {
        return Err(MsslError::Shape(format!("B has {} columns for {q} outcomes", state.b.ncols())));
    }
    let sigma = pd_inverse(state.omega.view())?;
    let y = test.y();

    let continuous: Vec<usize> = (0..q).filter(|&k| kinds[k] == OutcomeKind::Continuous).collect();
    let rmse_mean = (!continuous.is_empty()).then(|| mean_rmse(&mean, y, &continuous));
    let rmse = if continuous.is_empty() || draws == 0 {
        None
    } else {
        let l = cholesky(sigma.view())?;
        let l = l.lower();
        let mut rng = stream(&[seed]);
        let mut sq = vec![0.0; q];
        let mut e = vec![0.0; q];
        for i in 0..n {
            for _ in 0..draws {
                for v in e.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for &k in &continuous {
                    let mut z = mean[[i, k]];
                    for m in 0..=k {
                        z += l[[k, m]] * e[m];
                    }
                    sq[k] += (z - y[[i, k]]).powi(2);
                }
            }
        }
        let denom = (n * draws) as f64;
        Some(continuous.iter().map(|&k| (sq[k] / denom).sqrt()).sum::<f64>() / continuous.len() as f64)
    };

    let mut auc_per_outcome = Vec::new();
    for k in (0..q).filter(|&k| kinds[k] == OutcomeKind::Binary) {
        let sd = sigma[[k, k]].sqrt();
        let probs: Vec<f64> = mean.column(k).iter().map(|v| normal_cdf(v / sd)).collect();
        let labels: Vec<bool> = y.column(k).iter().map(|v| *v == 1.0).collect();
        auc_per_outcome.push(mann_whitney_auc(&probs, &labels));
    }
    let defined: Vec<f64> = auc_per_outcome.iter().flatten().copied().collect();
    let auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(PredictiveScores { rmse, rmse_mean, auc, auc_per_outcome })
}

fn mean_rmse(mean: &Array2<f64>, y: ArrayView2<f64>, continuous: &[usize]) -> f64 {
    let n = y.nrows() as f64;
    continuous
        .iter()
        .map(|&k| {
            let ss: f64 = mean.column(k).iter().zip(y.column(k)).map(|(m, v)| (m - v).powi(2)).sum();
            (ss / n).sqrt()
        })
        .sum::<f64>()
        / continuous.len() as f64
}

/// `a_n = c √(ln p / (n p²))`.
pub fn screening_threshold(n: usize, p: usize, c: f64) -> f64 {
    let (n, p) = (n as f64, p as f64);
    c * (p.ln() / (n * p * p)).sqrt()
}

/// Support of `β_jk 1{|β_jk| > a_n ω_kk}`.
pub fn sure_screen(
    b: ArrayView2<f64>,
    omega: ArrayView2<f64>,
    n: usize,
    p: usize,
    c: f64,
) -> Result<Array2<bool>> {
    if !(c > 0.0) || n < 2 || p < 2 {
        return Err(MsslError::Parameter(format!("need c > 0, n >= 2, p >= 2; got c={c}, n={n}, p={p}")));
    }
    if omega.nrows() != b.ncols() || omega.ncols() != b.ncols() {
        return Err(MsslError::Shape(format!("B is {:?}, Omega is {:?}", b.dim(), omega.dim())));
    }
    let a = screening_threshold(n, p, c);
    Ok(Array2::from_shape_fn(b.dim(), |(j, k)| b[[j, k]].abs() > a * omega[[k, k]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn support_examples() {
        let t = array![[true, false], [false, true], [true, false]];
        let r = support_metrics(t.view(), t.view()).unwrap();
        assert_eq!(
            (r.sensitivity, r.specificity, r.precision, r.accuracy),
            (Some(1.0), Some(1.0), Some(1.0), Some(1.0))
        );

        let mut truth = Array2::from_elem((2, 5), false);
        truth[[0, 0]] = true;
        truth[[0, 3]] = true;
        truth[[1, 4]] = true;
        let empty = Array2::from_elem((2, 5), false);
        let r = support_metrics(empty.view(), truth.view()).unwrap();
        assert_eq!(r.sensitivity, Some(0.0));
        assert_eq!(r.specificity, Some(1.0));
        assert_eq!(r.accuracy, Some(0.7));
        assert_eq!(r.precision, None);

        let dense = Array2::from_elem((3, 3), true);
        let r = support_metrics_upper(dense.view(), dense.view()).unwrap();
        assert_eq!(r.specificity, None);
        assert_eq!(r.tp, 3);
        assert!(support_metrics(dense.view(), t.view()).is_err());
    }

    #[test]
    fn upper_triangle_only() {
        let mut est = Array2::from_elem((3, 3), false);
        est[[1, 0]] = true;
        est[[2, 2]] = true;
        let truth = Array2::from_elem((3, 3), false);
        let r = support_metrics_upper(est.view(), truth.view()).unwrap();
        assert_eq!((r.tn, r.fp), (3, 0));
    }

    #[test]
    fn rfe_examples() {
        let x = array![[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]];
        let b = array![[1.0, 0.0], [0.5, -1.0]];
        let o = array![[2.0, 0.3], [0.3, 1.0]];
        let kinds = [OutcomeKind::Continuous, OutcomeKind::Binary];
        assert_eq!(regression_function_error(x.view(), b.view(), o.view(), b.view(), o.view(), &kinds).unwrap(), 0.0);

        let xz = array![[0.0], [0.0]];
        let e = regression_function_error(
            xz.view(),
            array![[3.0]].view(),
            array![[4.0]].view(),
            array![[-1.0]].view(),
            array![[0.25]].view(),
            &[OutcomeKind::Binary],
        )
        .unwrap();
        assert_eq!(e, 0.0);

        let delta = 0.7;
        let xs = array![[1.0], [-2.0], [0.5]];
        let e = regression_function_error(
            xs.view(),
            array![[1.0 + delta]].view(),
            array![[1.0]].view(),
            array![[1.0]].view(),
            array![[1.0]].view(),
            &[OutcomeKind::Continuous],
        )
        .unwrap();
        let want = (delta * 1.0 + delta * 2.0 + delta * 0.5) / 3.0;
        assert!((e - want).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(mann_whitney_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(mann_whitney_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]), Some(0.0));
        assert_eq!(mann_whitney_auc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(mann_whitney_auc(&[0.1, 0.3], &[true, true]), None);
        assert_eq!(mann_whitney_auc(&[0.3, 0.5, 0.5, 0.7], &[false, true, false, true]), Some(0.875));
    }

    #[test]
    fn random_scores_give_half() {
        let mut rng = stream(&[5]);
        let scores: Vec<f64> = (0..20_000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..20_000).map(|_| rng.random()).collect();
        let auc = mann_whitney_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.015, "{auc}");
    }

    proptest! {
        #[test]
        fn auc_is_rank_invariant(scores in proptest::collection::vec(-5.0f64..5.0, 30),
                                 labels in proptest::collection::vec(any::<bool>(), 30)) {
            let a = mann_whitney_auc(&scores, &labels);
            let t: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(a, mann_whitney_auc(&t, &labels));
        }

        #[test]
        fn support_is_permutation_equivariant(bits in proptest::collection::vec(any::<bool>(), 24),
                                              tbits in proptest::collection::vec(any::<bool>(), 24)) {
            let e = Array2::from_shape_vec((6, 4), bits).unwrap();
            let t = Array2::from_shape_vec((6, 4), tbits).unwrap();
            let rows = [3, 0, 5, 1, 4, 2];
            let cols = [2, 3, 0, 1];
            let pe = Array2::from_shape_fn((6, 4), |(i, j)| e[[rows[i], cols[j]]]);
            let pt = Array2::from_shape_fn((6, 4), |(i, j)| t[[rows[i], cols[j]]]);
            prop_assert_eq!(support_metrics(e.view(), t.view()).unwrap(), support_metrics(pe.view(), pt.view()).unwrap());
        }

        #[test]
        fn screen_shrinks_with_c(vals in proptest::collection::vec(-0.05f64..0.05, 20), c in 0.1f64..5.0) {
            let b = Array2::from_shape_vec((10, 2), vals).unwrap();
            let o = array![[1.0, 0.2], [0.2, 2.0]];
            let small = sure_screen(b.view(), o.view(), 100, 10, c).unwrap();
            let large = sure_screen(b.view(), o.view(), 100, 10, 2.0 * c).unwrap();
            for (s, l) in small.iter().zip(large.iter()) {
                prop_assert!(*s || !*l);
            }
        }
    }

    #[test]
    fn screen_examples() {
        let a = screening_threshold(100, 10, 1.0);
        assert!((a - (10f64.ln() / 1e4).sqrt()).abs() < 1e-15);
        assert!((a - 0.01517).abs() < 1e-5);
        let b = array![[0.0152, 0.0152], [0.0151, 0.0], [0.02, 0.031]];
        let o = array![[1.0, 0.0], [0.0, 2.0]];
        let s = sure_screen(b.view(), o.view(), 100, 10, 1.0).unwrap();
        assert_eq!(s, array![[true, false], [false, false], [true, true]]);
        let z = sure_screen(Array2::zeros((3, 2)).view(), o.view(), 100, 10, 1.0).unwrap();
        assert!(z.iter().all(|v| !v));
    }

    #[test]
    fn predictive_rmse_approaches_noise_level() {
        let n = 20_000;
        let mut rng = stream(&[8]);
        let x = Array2::from_shape_fn((n, 1), |_| rng.sample::<f64, _>(StandardNormal));
        let b = array![[1.0, 2.0]];
        let noise = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let z = x.dot(&b) + &noise;
        let mut y = z.clone();
        y.column_mut(1).mapv_inplace(crate::types::binary_link);
        let ds = Dataset::new(x, y, vec![OutcomeKind::Continuous, OutcomeKind::Binary]).unwrap();
        let state = ModelState { b, omega: Array2::eye(2), theta: 0.5, eta: 0.5 };
        let s = predictive_scores(&ds, &state, 1, 1).unwrap();
        assert!((s.rmse_mean.unwrap() - 1.0).abs() < 0.02);
        // A fresh draw has twice the noise variance of the mean prediction.
        assert!((s.rmse.unwrap() - 2f64.sqrt()).abs() < 0.03);
        assert!(s.auc.unwrap() > 0.85);
        assert_eq!(s.auc_per_outcome.len(), 1);
    }
}
