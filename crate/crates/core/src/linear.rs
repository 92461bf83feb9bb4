//! Logistic regression with optional ridge, LASSO and elastic-net penalties.
//!
//! The objective is the weighted mean logistic negative log-likelihood plus
//! `l2 · Σβ² + l1 · Σ|β|`; the intercept is never penalized. Fitting uses
//! cyclic coordinate descent: each coordinate takes a soft-thresholded Newton
//! step, halved until the objective does not increase.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{invalid, Error, Result};
use crate::eval::kfold;
use crate::matrix::Matrix;
use crate::metrics::roc_auc;
use crate::scalar::{sigmoid, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    None,
    Ridge,
    Lasso,
    ElasticNet,
}

impl Penalty {
    fn uses_l2(self) -> bool {
        matches!(self, Penalty::Ridge | Penalty::ElasticNet)
    }

    fn uses_l1(self) -> bool {
        matches!(self, Penalty::Lasso | Penalty::ElasticNet)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub penalty: Penalty,
    /// Ridge strength (coefficient on Σβ²).
    pub l2: T,
    /// LASSO strength (coefficient on Σ|β|).
    pub l1: T,
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
    /// Convergence threshold on the largest coefficient change in a sweep.
    pub tol: T,
}

impl<T: Scalar> Default for LinearParams<T> {
    fn default() -> Self {
        Self {
            penalty: Penalty::None,
            l2: T::zero(),
            l1: T::zero(),
            max_iter: 10_000,
            tol: T::lit(1e-7),
        }
    }
}

impl<T: Scalar> LinearParams<T> {
    pub fn new(penalty: Penalty, l2: T, l1: T) -> Self {
        Self {
            penalty,
            l2,
            l1,
            ..Self::default()
        }
    }

    /// Penalty strengths actually in force for the chosen penalty kind.
    pub fn effective_lambdas(&self) -> (T, T) {
        (
            if self.penalty.uses_l2() { self.l2 } else { T::zero() },
            if self.penalty.uses_l1() { self.l1 } else { T::zero() },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub intercept: T,
    pub coefficients: Vec<T>,
    pub penalty: Penalty,
    pub l2: T,
    pub l1: T,
    /// False when `max_iter` sweeps ran out before the tolerance was met.
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Scalar> LinearModel<T> {
    pub fn linear_predictor(&self, row: &[T]) -> T {
        self.intercept + row.iter().zip(&self.coefficients).map(|(&x, &b)| x * b).sum::<T>()
    }

    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.cols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: x.cols(),
            });
        }
        Ok(x.iter_rows().map(|r| sigmoid(self.linear_predictor(r))).collect())
    }
}

/// Inverse-logit of the linear predictor for every row of `x`.
pub fn predict_proba<T: Scalar>(model: &LinearModel<T>, x: &Matrix<T>) -> Result<Vec<T>> {
    model.predict_proba(x)
}

fn total_weight<T: Scalar>(ds: &Dataset<T>) -> T {
    (0..ds.len()).map(|i| ds.weight(i)).sum()
}

fn mean_loss<T: Scalar>(ds: &Dataset<T>, eta: &[T], total_w: T) -> T {
    let s: T = eta
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let y = T::count(usize::from(ds.labels()[i]));
            ds.weight(i) * (softplus(e) - y * e)
        })
        .sum();
    s / total_w
}

/// Weighted mean log-loss plus the ridge term (the differentiable part).
pub fn smooth_objective<T: Scalar>(ds: &Dataset<T>, intercept: T, coefficients: &[T], l2: T) -> T {
    let eta: Vec<T> = (0..ds.len())
        .map(|i| intercept + ds.row(i).iter().zip(coefficients).map(|(&x, &b)| x * b).sum::<T>())
        .collect();
    mean_loss(ds, &eta, total_weight(ds)) + l2 * coefficients.iter().map(|&b| b * b).sum::<T>()
}

/// Full penalized objective.
pub fn objective<T: Scalar>(ds: &Dataset<T>, intercept: T, coefficients: &[T], l2: T, l1: T) -> T {
    smooth_objective(ds, intercept, coefficients, l2) + l1 * coefficients.iter().map(|b| b.abs()).sum::<T>()
}

/// Gradient of [`smooth_objective`]; element 0 is the intercept.
pub fn smooth_gradient<T: Scalar>(ds: &Dataset<T>, intercept: T, coefficients: &[T], l2: T) -> Vec<T> {
    let p = coefficients.len();
    let total_w = total_weight(ds);
    let mut g = vec![T::zero(); p + 1];
    for i in 0..ds.len() {
        let row = ds.row(i);
        let eta = intercept + row.iter().zip(coefficients).map(|(&x, &b)| x * b).sum::<T>();
        let y = T::count(usize::from(ds.labels()[i]));
        let r = ds.weight(i) * (sigmoid(eta) - y) / total_w;
        g[0] = g[0] + r;
        for (gj, &x) in g[1..].iter_mut().zip(row) {
            *gj = *gj + r * x;
        }
    }
    for (gj, &b) in g[1..].iter_mut().zip(coefficients) {
        *gj = *gj + T::lit(2.0) * l2 * b;
    }
    g
}

fn soft_threshold<T: Scalar>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

/// Fits a (penalized) logistic regression. Features are used as given.
pub fn fit_linear<T: Scalar>(ds: &Dataset<T>, params: &LinearParams<T>) -> Result<LinearModel<T>> {
    if ds.len() < 2 {
        return Err(invalid("logistic regression needs at least two rows"));
    }
    ds.require_both_classes("fit_linear")?;
    let (l2, l1) = params.effective_lambdas();
    if !(l2 >= T::zero() && l1 >= T::zero() && l2.is_finite() && l1.is_finite()) {
        return Err(invalid("penalty strengths must be finite and non-negative"));
    }
    let n = ds.len();
    let p = ds.width();
    let total_w = total_weight(ds);
    let x = ds.features();
    let ys: Vec<T> = ds.labels().iter().map(|&y| T::count(usize::from(y))).collect();
    let ws: Vec<T> = (0..n).map(|i| ds.weight(i) / total_w).collect();

    let mut beta = vec![T::zero(); p];
    let mut intercept = T::zero();
    let mut eta = vec![T::zero(); n];
    let two = T::lit(2.0);
    let tiny = T::lit(1e-12);

    // loss change when coordinate `col` (None = intercept) moves by `d`
    let loss_at = |eta: &[T], col: Option<usize>, d: T| -> T {
        (0..n)
            .map(|i| {
                let xi = col.map_or(T::one(), |j| x[(i, j)]);
                let e = eta[i] + d * xi;
                ws[i] * (softplus(e) - ys[i] * e)
            })
            .sum()
    };

    let mut converged = false;
    let mut iterations = 0;
    for sweep in 0..params.max_iter {
        iterations = sweep + 1;
        let mut max_change = T::zero();
        for col in std::iter::once(None).chain((0..p).map(Some)) {
            let (mut g, mut h) = (T::zero(), T::zero());
            for i in 0..n {
                let xi = col.map_or(T::one(), |j| x[(i, j)]);
                let pr = sigmoid(eta[i]);
                g = g + ws[i] * (pr - ys[i]) * xi;
                h = h + ws[i] * pr * (T::one() - pr) * xi * xi;
            }
            let h = h.max(tiny);
            let (current, proposal, pen) = match col {
                None => (intercept, intercept - g / h, None),
                Some(j) => {
                    let b = beta[j];
                    (b, soft_threshold(h * b - g, l1) / (h + two * l2), Some(b))
                }
            };
            let delta = proposal - current;
            if delta == T::zero() {
                continue;
            }
            let penalty = |b: T| l2 * b * b + l1 * b.abs();
            let base = loss_at(&eta, col, T::zero()) + pen.map_or(T::zero(), penalty);
            let mut step = delta;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = loss_at(&eta, col, step) + pen.map_or(T::zero(), |b| penalty(b + step));
                if trial <= base {
                    accepted = Some(step);
                    break;
                }
                step = step / two;
            }
            let Some(step) = accepted else { continue };
            match col {
                None => {
                    intercept = intercept + step;
                    eta.iter_mut().for_each(|e| *e = *e + step);
                }
                Some(j) => {
                    beta[j] = beta[j] + step;
                    for (i, e) in eta.iter_mut().enumerate() {
                        *e = *e + step * x[(i, j)];
                    }
                }
            }
            max_change = max_change.max(step.abs());
        }
        if max_change < params.tol {
            converged = true;
            break;
        }
    }
    Ok(LinearModel {
        intercept,
        coefficients: beta,
        penalty: params.penalty,
        l2,
        l1,
        converged,
        iterations,
    })
}

/// Log-spaced values between `lo` and `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// `(l2, l1)` candidates for a penalty: `per_axis` log-spaced values in
/// `[1e-4, 1e2]` on every axis the penalty uses.
pub fn default_grid<T: Scalar>(penalty: Penalty, per_axis: usize) -> Vec<(T, T)> {
    let axis: Vec<T> = log_space(1e-4, 1e2, per_axis).into_iter().map(T::lit).collect();
    let z = T::zero();
    match penalty {
        Penalty::None => vec![(z, z)],
        Penalty::Ridge => axis.iter().map(|&a| (a, z)).collect(),
        Penalty::Lasso => axis.iter().map(|&a| (z, a)).collect(),
        Penalty::ElasticNet => axis.iter().flat_map(|&a| axis.iter().map(move |&b| (a, b))).collect(),
    }
}

/// Mean held-out AUC of one `(l2, l1)` cell over the folds.
pub fn cv_auc<T: Scalar>(ds: &Dataset<T>, folds: &[usize], k: usize, params: &LinearParams<T>) -> f64 {
    let mut aucs = Vec::with_capacity(k);
    for f in 0..k {
        let train: Vec<usize> = (0..ds.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..ds.len()).filter(|&i| folds[i] == f).collect();
        let test_ds = ds.select_rows(&test);
        if test_ds.positives() == 0 || test_ds.negatives() == 0 {
            continue;
        }
        let auc = fit_linear(&ds.select_rows(&train), params)
            .and_then(|m| m.predict_proba(test_ds.features()))
            .and_then(|s| roc_auc(&s, test_ds.labels()));
        aucs.push(auc.unwrap_or(0.0));
    }
    if aucs.is_empty() {
        0.0
    } else {
        aucs.iter().sum::<f64>() / aucs.len() as f64
    }
}

/// Picks the `(l2, l1)` pair with the highest mean cross-validated AUC.
///
/// Ties go to the smallest `l2`, then the smallest `l1`. Cells whose fits
/// fail score 0.
pub fn select_lambda<T: Scalar>(
    ds: &Dataset<T>,
    grid: &[(T, T)],
    k: usize,
    seed: u64,
    template: &LinearParams<T>,
) -> Result<(T, T)> {
    if grid.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let plan = kfold(ds.labels(), k, true, seed)?;
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&(l2, l1)| {
            let params = LinearParams { l2, l1, ..template.clone() };
            cv_auc(ds, &plan.assignments, k, &params)
        })
        .collect();
    let mut best = 0;
    for c in 1..grid.len() {
        let better = scores[c] > scores[best]
            || (scores[c] == scores[best]
                && (grid[c].0 < grid[best].0 || (grid[c].0 == grid[best].0 && grid[c].1 < grid[best].1)));
        if better {
            best = c;
        }
    }
    Ok(grid[best])
}
