//! Soft-margin kernel SVM trained by sequential minimal optimization.
//!
//! The dual `max Σα − ½ αᵀQα` subject to `0 ≤ α_i ≤ C_i`, `Σ α_i y_i = 0` is
//! solved one pair at a time, always choosing the maximal violating pair.
//! Each pair update is an exact line minimization with clipping, so the dual
//! objective never decreases.

use serde::{Deserialize, Serialize};

use crate::balance::ClassWeights;
use crate::dataio::Dataset;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, sigmoid, softplus, squared_distance, Scalar};

/// Kernel matrices up to this many rows are precomputed.
pub const KERNEL_CACHE_ROWS: usize = 4000;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Polynomial,
    Radial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<T> {
    pub kind: KernelKind,
    /// Additive term of the polynomial kernel.
    pub r: T,
    /// Polynomial degree.
    pub d: u32,
    /// Radial-kernel scale.
    pub gamma: T,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            r: T::zero(),
            d: 1,
            gamma: T::one(),
        }
    }

    pub fn polynomial(r: T, d: u32) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            r,
            d,
            gamma: T::one(),
        }
    }

    pub fn radial(gamma: T) -> Self {
        Self {
            kind: KernelKind::Radial,
            r: T::zero(),
            d: 1,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            KernelKind::Polynomial if self.d == 0 => Err(invalid("polynomial degree must be positive")),
            KernelKind::Radial if !(self.gamma > T::zero() && self.gamma.is_finite()) => {
                Err(invalid("radial gamma must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn apply(&self, a: &[T], b: &[T]) -> T {
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Polynomial => (dot(a, b) + self.r).powi(self.d as i32),
            KernelKind::Radial => (-self.gamma * squared_distance(a, b)).exp(),
        }
    }
}

pub fn kernel_eval<T: Scalar>(a: &[T], b: &[T], spec: &KernelSpec<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(spec.apply(a, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmParams<T> {
    /// `None` means radial with γ = 1/p.
    pub kernel: Option<KernelSpec<T>>,
    pub c: T,
    pub class_weights: Option<ClassWeights<T>>,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: T,
    /// Iteration budget in multiples of the row count.
    pub max_passes: usize,
    /// Fit a logistic link on training margins for probability outputs.
    pub calibrate: bool,
}

impl<T: Scalar> Default for SvmParams<T> {
    fn default() -> Self {
        Self {
            kernel: None,
            c: T::one(),
            class_weights: None,
            tol: T::lit(1e-3),
            max_passes: 100,
            calibrate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel<T> {
    pub support_vectors: Matrix<T>,
    /// `α_i · y_i` for each support vector.
    pub dual_coefficients: Vec<T>,
    pub bias: T,
    pub kernel: KernelSpec<T>,
    pub c: T,
    pub converged: bool,
    pub iterations: usize,
    /// Logistic link `σ(a · margin + b)` fitted on training margins.
    pub calibration: Option<(T, T)>,
}

impl<T: Scalar> SvmModel<T> {
    pub fn decision_row(&self, x: &[T]) -> T {
        self.support_vectors
            .iter_rows()
            .zip(&self.dual_coefficients)
            .map(|(sv, &c)| c * self.kernel.apply(sv, x))
            .sum::<T>()
            + self.bias
    }

    pub fn decision(&self, x: &[T]) -> Result<T> {
        if x.len() != self.support_vectors.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.support_vectors.cols(),
                got: x.len(),
            });
        }
        Ok(self.decision_row(x))
    }

    pub fn decisions(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        x.iter_rows().map(|r| self.decision(r)).collect()
    }

    /// `1` when the margin is non-negative.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<u8>> {
        Ok(self.decisions(x)?.into_iter().map(|m| u8::from(m >= T::zero())).collect())
    }

    /// Calibrated probabilities, or the logistic of the raw margin without calibration.
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let (a, b) = self.calibration.unwrap_or((T::one(), T::zero()));
        Ok(self.decisions(x)?.into_iter().map(|m| sigmoid(a * m + b)).collect())
    }
}

/// Kernel rows, precomputed when small enough.
struct KernelRows<'a, T: Scalar> {
    x: &'a Matrix<T>,
    spec: KernelSpec<T>,
    full: Option<Matrix<T>>,
}

impl<'a, T: Scalar> KernelRows<'a, T> {
    fn new(x: &'a Matrix<T>, spec: KernelSpec<T>) -> Self {
        let n = x.rows();
        let full = (n <= KERNEL_CACHE_ROWS).then(|| {
            let mut k = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = spec.apply(x.row(i), x.row(j));
                    k.row_mut(i)[j] = v;
                    k.row_mut(j)[i] = v;
                }
            }
            k
        });
        Self { x, spec, full }
    }

    fn row(&self, i: usize) -> std::borrow::Cow<'_, [T]> {
        match &self.full {
            Some(k) => std::borrow::Cow::Borrowed(k.row(i)),
            None => std::borrow::Cow::Owned(self.x.iter_rows().map(|r| self.spec.apply(self.x.row(i), r)).collect()),
        }
    }

    fn diag(&self, i: usize) -> T {
        match &self.full {
            Some(k) => k[(i, i)],
            None => self.spec.apply(self.x.row(i), self.x.row(i)),
        }
    }
}

/// Raw solution of the dual problem, kept for inspection and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    /// Box bound of every row.
    pub upper: Vec<T>,
    pub bias: T,
    pub converged: bool,
    pub iterations: usize,
    /// Dual objective before the first update and after each one.
    pub objective_trace: Vec<T>,
}

fn signed<T: Scalar>(y: u8) -> T {
    if y != 0 {
        T::one()
    } else {
        -T::one()
    }
}

/// `Σα − ½ αᵀQα` with `Q_ij = y_i y_j K(x_i, x_j)`.
pub fn dual_objective<T: Scalar>(ds: &Dataset<T>, kernel: &KernelSpec<T>, alpha: &[T]) -> T {
    let n = ds.len();
    let mut quad = T::zero();
    for i in 0..n {
        if alpha[i] == T::zero() {
            continue;
        }
        for j in 0..n {
            if alpha[j] != T::zero() {
                let q = signed::<T>(ds.labels()[i]) * signed::<T>(ds.labels()[j]) * kernel.apply(ds.row(i), ds.row(j));
                quad = quad + alpha[i] * alpha[j] * q;
            }
        }
    }
    alpha.iter().copied().sum::<T>() - T::lit(0.5) * quad
}

/// Solves the soft-margin dual. Row `i` is boxed by `C · weight_i · class_weight(y_i)`.
pub fn solve_dual<T: Scalar>(ds: &Dataset<T>, kernel: &KernelSpec<T>, params: &SvmParams<T>) -> Result<DualSolution<T>> {
    ds.require_both_classes("fit_svm")?;
    kernel.validate()?;
    if !(params.c > T::zero() && params.c.is_finite()) {
        return Err(invalid("C must be positive"));
    }
    let n = ds.len();
    let y: Vec<T> = ds.labels().iter().map(|&l| signed(l)).collect();
    let upper: Vec<T> = (0..n)
        .map(|i| {
            let cw = params.class_weights.map_or(T::one(), |w| w.for_label(ds.labels()[i]));
            params.c * ds.weight(i) * cw
        })
        .collect();
    let k = KernelRows::new(ds.features(), *kernel);
    let diag: Vec<T> = (0..n).map(|i| k.diag(i)).collect();
    let tau = T::lit(TAU);
    let mut alpha = vec![T::zero(); n];
    // gradient of ½αᵀQα − Σα
    let mut grad = vec![-T::one(); n];
    let objective = |alpha: &[T], grad: &[T]| -> T {
        // αᵀQα = Σ α_i (G_i + 1)
        let s: T = alpha.iter().copied().sum();
        let q: T = alpha.iter().zip(grad).map(|(&a, &g)| a * (g + T::one())).sum();
        s - T::lit(0.5) * q
    };
    let mut trace = vec![T::zero()];
    let budget = params.max_passes.saturating_mul(n).max(1);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < budget {
        let mut i = None;
        let mut g_max = T::neg_infinity();
        let mut j = None;
        let mut g_min = T::infinity();
        for t in 0..n {
            let v = -y[t] * grad[t];
            let up = if y[t] > T::zero() { alpha[t] < upper[t] } else { alpha[t] > T::zero() };
            let low = if y[t] > T::zero() { alpha[t] > T::zero() } else { alpha[t] < upper[t] };
            if up && v > g_max {
                g_max = v;
                i = Some(t);
            }
            if low && v < g_min {
                g_min = v;
                j = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i, j) else {
            converged = true;
            break;
        };
        if g_max - g_min < params.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let ki = k.row(i);
        let kj = k.row(j);
        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let mut quad = diag[i] + diag[j] + T::lit(2.0) * qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] = alpha[i] + delta;
            alpha[j] = alpha[j] + delta;
            if diff > T::zero() {
                if alpha[j] < T::zero() {
                    alpha[j] = T::zero();
                    alpha[i] = diff;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - T::lit(2.0) * qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] = alpha[i] - delta;
            alpha[j] = alpha[j] + delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < T::zero() {
                alpha[j] = T::zero();
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] = grad[t] + y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
        trace.push(objective(&alpha, &grad));
    }

    // bias from free vectors, else the middle of the feasible interval
    let (mut sum, mut free) = (T::zero(), 0usize);
    let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] > T::zero() && alpha[t] < upper[t] {
            sum = sum + yg;
            free += 1;
        } else {
            let at_upper = alpha[t] >= upper[t];
            if (y[t] > T::zero()) == at_upper {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        }
    }
    let rho = if free > 0 {
        sum / T::count(free)
    } else {
        (ub + lb) / T::lit(2.0)
    };
    Ok(DualSolution {
        alpha,
        upper,
        bias: -rho,
        converged,
        iterations,
        objective_trace: trace,
    })
}

/// Fits `σ(a·f + b)` to labels by regularized-target maximum likelihood.
fn platt<T: Scalar>(margins: &[T], labels: &[u8]) -> (T, T) {
    let f: Vec<f64> = margins.iter().map(|m| m.as_f64()).collect();
    let n_pos = labels.iter().filter(|&&y| y != 0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let t_pos = (n_pos + 1.0) / (n_pos + 2.0);
    let t_neg = 1.0 / (n_neg + 2.0);
    let t: Vec<f64> = labels.iter().map(|&y| if y != 0 { t_pos } else { t_neg }).collect();
    let loss = |a: f64, b: f64| -> f64 {
        f.iter().zip(&t).map(|(&fi, &ti)| softplus(a * fi + b) - ti * (a * fi + b)).sum()
    };
    let (mut a, mut b) = (1.0, ((n_pos + 1.0) / (n_neg + 1.0)).ln());
    let mut current = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (&fi, &ti) in f.iter().zip(&t) {
            let p = sigmoid(a * fi + b);
            let r = p - ti;
            let h = p * (1.0 - p);
            ga += r * fi;
            gb += r;
            haa += h * fi * fi;
            hab += h * fi;
            hbb += h;
        }
        if ga.abs() < 1e-9 && gb.abs() < 1e-9 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let da = -(hbb * ga - hab * gb) / det;
        let db = -(haa * gb - hab * ga) / det;
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-10 {
            let trial = loss(a + step * da, b + step * db);
            if trial < current + 1e-4 * step * (ga * da + gb * db) {
                a += step * da;
                b += step * db;
                current = trial;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    (T::lit(a), T::lit(b))
}

pub fn fit_svm<T: Scalar>(ds: &Dataset<T>, params: &SvmParams<T>) -> Result<SvmModel<T>> {
    let kernel = params
        .kernel
        .unwrap_or_else(|| KernelSpec::radial(T::one() / T::count(ds.width().max(1))));
    let sol = solve_dual(ds, &kernel, params)?;
    let keep: Vec<usize> = (0..ds.len()).filter(|&i| sol.alpha[i] > T::zero()).collect();
    let support_vectors = ds.features().select_rows(&keep);
    let dual_coefficients = keep.iter().map(|&i| sol.alpha[i] * signed::<T>(ds.labels()[i])).collect();
    let mut model = SvmModel {
        support_vectors,
        dual_coefficients,
        bias: sol.bias,
        kernel,
        c: params.c,
        converged: sol.converged,
        iterations: sol.iterations,
        calibration: None,
    };
    if params.calibrate {
        let margins = model.decisions(ds.features())?;
        model.calibration = Some(platt(&margins, ds.labels()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels() {
        let a = [1.0f64, 2.0];
        let b = [3.0, -1.0];
        assert_eq!(kernel_eval(&a, &a, &KernelSpec::radial(0.7)).unwrap(), 1.0);
        assert_eq!(kernel_eval(&a, &b, &KernelSpec::polynomial(0.0, 1)).unwrap(), 1.0);
        assert_eq!(kernel_eval(&a, &b, &KernelSpec::polynomial(1.0, 2)).unwrap(), 4.0);
        assert!((kernel_eval(&a, &b, &KernelSpec::radial(1e-12)).unwrap() - 1.0).abs() < 1e-6);
        assert!(kernel_eval(&a, &[1.0], &KernelSpec::linear()).is_err());
    }

    #[test]
    fn two_point_dual() {
        let ds: Dataset<f64> = Dataset::from_rows(&[[1.0], [-1.0]], vec![1, 0]).unwrap();
        let params = SvmParams { kernel: Some(KernelSpec::linear()), c: 1e3, ..SvmParams::default() };
        let sol = solve_dual(&ds, &KernelSpec::linear(), &params).unwrap();
        // maximizing 2α − ½·4α² gives α = ½ for both points
        assert!((sol.alpha[0] - 0.5).abs() < 1e-9 && (sol.alpha[1] - 0.5).abs() < 1e-9);
        let m = fit_svm(&ds, &params).unwrap();
        assert_eq!(m.dual_coefficients.len(), 2);
        assert!(m.bias.abs() < 1e-9);
        assert!(m.decision(&[0.0]).unwrap().abs() < 1e-9);
        assert!((m.decision(&[1.0]).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn xor_radial() {
        let ds = Dataset::from_rows(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], vec![0, 1, 1, 0]).unwrap();
        let params = SvmParams { kernel: Some(KernelSpec::radial(1.0)), c: 10.0, ..SvmParams::default() };
        let m = fit_svm(&ds, &params).unwrap();
        assert_eq!(m.predict(ds.features()).unwrap(), vec![0, 1, 1, 0]);
    }

    #[test]
    fn single_class_rejected() {
        let ds = Dataset::from_rows(&[[0.0], [1.0]], vec![0, 0]).unwrap();
        assert!(fit_svm(&ds, &SvmParams::default()).is_err());
    }
}
