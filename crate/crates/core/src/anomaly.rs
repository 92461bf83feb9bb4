//! Unsupervised outlier detectors with a common "higher = more anomalous"
//! score orientation, plus threshold selection from scores.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::{determinant, mean_and_covariance, Cholesky, Matrix};
use crate::metrics::{f1_score, Metric};
use crate::scalar::{squared_distance, Scalar};
use crate::seed;

/// Largest input accepted by the cubic-time angle-based detector.
pub const ABOF_MAX_ROWS: usize = 2000;

/// Per-row outlier scores; larger values are more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScores<T> {
    values: Vec<T>,
}

impl<T: Scalar> AnomalyScores<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("anomaly scores".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_width<T: Scalar>(expected: usize, x: &Matrix<T>) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x.cols(),
        });
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("detector input".into()));
    }
    Ok(())
}

/// The `k` nearest reference rows to `query` as `(distance, index)`, ties by index.
fn nearest<T: Scalar>(reference: &Matrix<T>, query: &[T], k: usize, exclude: Option<usize>) -> Vec<(T, usize)> {
    let mut d: Vec<(T, usize)> = reference
        .iter_rows()
        .enumerate()
        .filter(|&(i, _)| Some(i) != exclude)
        .map(|(i, r)| (squared_distance(r, query), i))
        .collect();
    let cmp = |a: &(T, usize), b: &(T, usize)| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(s, i)| (s.sqrt(), i)).collect()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(invalid(format!("k = {k} must lie in 1..{n}")));
    }
    Ok(())
}

/// Local outlier factor model: reference points with their k-distances and densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel<T> {
    reference: Matrix<T>,
    k: usize,
    k_distance: Vec<T>,
    density: Vec<T>,
    train_scores: Vec<T>,
}

impl<T: Scalar> LofModel<T> {
    pub fn fit(x: &Matrix<T>, k: usize) -> Result<Self> {
        check_k(k, x.rows())?;
        check_width(x.cols(), x)?;
        let neighbors: Vec<Vec<(T, usize)>> = (0..x.rows())
            .into_par_iter()
            .map(|i| nearest(x, x.row(i), k, Some(i)))
            .collect();
        let k_distance: Vec<T> = neighbors.iter().map(|nb| nb[k - 1].0).collect();
        let density: Vec<T> = neighbors.iter().map(|nb| Self::lrd(&k_distance, nb)).collect();
        let train_scores = neighbors
            .iter()
            .zip(&density)
            .map(|(nb, &d)| Self::factor(&density, nb, d))
            .collect();
        Ok(Self {
            reference: x.clone(),
            k,
            k_distance,
            density,
            train_scores,
        })
    }

    /// Inverse mean reachability distance, kept finite for duplicated points.
    fn lrd(k_distance: &[T], nb: &[(T, usize)]) -> T {
        let mean_rd = nb.iter().map(|&(d, b)| d.max(k_distance[b])).sum::<T>() / T::count(nb.len());
        T::one() / (mean_rd + T::lit(1e-10))
    }

    fn factor(density: &[T], nb: &[(T, usize)], own: T) -> T {
        nb.iter().map(|&(_, b)| density[b]).sum::<T>() / T::count(nb.len()) / own
    }

    /// LOF of each reference point against the other reference points.
    pub fn train_scores(&self) -> AnomalyScores<T> {
        AnomalyScores { values: self.train_scores.clone() }
    }

    /// LOF of new points against the reference set.
    pub fn score(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        check_width(self.reference.cols(), x)?;
        let values = (0..x.rows())
            .into_par_iter()
            .map(|i| {
                let nb = nearest(&self.reference, x.row(i), self.k, None);
                let own = Self::lrd(&self.k_distance, &nb);
                Self::factor(&self.density, &nb, own)
            })
            .collect();
        AnomalyScores::new(values)
    }
}

/// Local outlier factor of every row with respect to the others.
pub fn lof<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<AnomalyScores<T>> {
    Ok(LofModel::fit(x, k)?.train_scores())
}

/// Mean distance to the `k` nearest reference points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel<T> {
    reference: Matrix<T>,
    k: usize,
}

impl<T: Scalar> KnnModel<T> {
    pub fn fit(x: &Matrix<T>, k: usize) -> Result<Self> {
        check_k(k, x.rows())?;
        check_width(x.cols(), x)?;
        Ok(Self { reference: x.clone(), k })
    }

    fn mean_distance(&self, q: &[T], exclude: Option<usize>) -> T {
        nearest(&self.reference, q, self.k, exclude).iter().map(|p| p.0).sum::<T>() / T::count(self.k)
    }

    pub fn train_scores(&self) -> AnomalyScores<T> {
        let values = (0..self.reference.rows())
            .into_par_iter()
            .map(|i| self.mean_distance(self.reference.row(i), Some(i)))
            .collect();
        AnomalyScores { values }
    }

    pub fn score(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        check_width(self.reference.cols(), x)?;
        let values = (0..x.rows()).into_par_iter().map(|i| self.mean_distance(x.row(i), None)).collect();
        AnomalyScores::new(values)
    }
}

pub fn knn_score<T: Scalar>(x: &Matrix<T>, k: usize) -> Result<AnomalyScores<T>> {
    Ok(KnnModel::fit(x, k)?.train_scores())
}

/// Variance of `⟨AB, AC⟩ / (‖AB‖² ‖AC‖²)` over unordered pairs of reference
/// points, skipping points that coincide with `a`. Zero when no pair remains.
///
/// With `u_B = AB / ‖AB‖²` each term is `⟨u_B, u_C⟩`, so the pair sums follow
/// from `Σu` and `Σ u uᵀ` without visiting pairs.
fn angle_variance<T: Scalar>(reference: &Matrix<T>, a: &[T], exclude: Option<usize>) -> f64 {
    let p = a.len();
    let mut sum_u = vec![0.0f64; p];
    let mut outer = vec![0.0f64; p * p];
    let (mut sum_sq, mut sum_quad) = (0.0f64, 0.0f64);
    let mut m = 0usize;
    let mut u = vec![0.0f64; p];
    for (i, b) in reference.iter_rows().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        for ((uj, &bj), &aj) in u.iter_mut().zip(b).zip(a) {
            *uj = bj.as_f64() - aj.as_f64();
        }
        let n2: f64 = u.iter().map(|v| v * v).sum();
        if n2 == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= n2);
        let uu = 1.0 / n2;
        m += 1;
        sum_sq += uu;
        sum_quad += uu * uu;
        for r in 0..p {
            sum_u[r] += u[r];
            for c in 0..p {
                outer[r * p + c] += u[r] * u[c];
            }
        }
    }
    // a single pair has zero variance
    if m < 3 {
        return 0.0;
    }
    let pairs = (m * (m - 1) / 2) as f64;
    let s1 = (sum_u.iter().map(|v| v * v).sum::<f64>() - sum_sq) / 2.0;
    let s2 = (outer.iter().map(|v| v * v).sum::<f64>() - sum_quad) / 2.0;
    let mean = s1 / pairs;
    (s2 / pairs - mean * mean).max(0.0)
}

/// Angle-based outlier factor against a reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbofModel<T> {
    reference: Matrix<T>,
}

impl<T: Scalar> AbofModel<T> {
    pub fn fit(x: &Matrix<T>) -> Result<Self> {
        if x.rows() < 3 {
            return Err(invalid("angle-based scores need at least three rows"));
        }
        if x.rows() > ABOF_MAX_ROWS {
            return Err(invalid(format!(
                "angle-based scores are capped at {ABOF_MAX_ROWS} rows, got {}",
                x.rows()
            )));
        }
        check_width(x.cols(), x)?;
        Ok(Self { reference: x.clone() })
    }

    /// Raw factor of each reference point; low values are anomalous.
    pub fn raw_train(&self) -> Vec<T> {
        (0..self.reference.rows())
            .into_par_iter()
            .map(|i| T::lit(angle_variance(&self.reference, self.reference.row(i), Some(i))))
            .collect()
    }

    pub fn train_scores(&self) -> AnomalyScores<T> {
        AnomalyScores {
            values: self.raw_train().into_iter().map(|v| -v).collect(),
        }
    }

    pub fn score(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        check_width(self.reference.cols(), x)?;
        let values = (0..x.rows())
            .into_par_iter()
            .map(|i| -T::lit(angle_variance(&self.reference, x.row(i), None)))
            .collect();
        AnomalyScores::new(values)
    }
}

/// Raw angle-based outlier factor of every row (low = anomalous).
pub fn abof_raw<T: Scalar>(x: &Matrix<T>) -> Result<Vec<T>> {
    Ok(AbofModel::fit(x)?.raw_train())
}

/// Negated angle-based outlier factor, so that higher is more anomalous.
pub fn abof<T: Scalar>(x: &Matrix<T>) -> Result<AnomalyScores<T>> {
    Ok(AbofModel::fit(x)?.train_scores())
}

/// Centre and scatter used for Mahalanobis distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustLocation<T> {
    pub mean_vector: Vec<T>,
    pub covariance: Matrix<T>,
    /// Determinant of `covariance`.
    pub det: T,
    /// True when a ridge was added to make `covariance` invertible.
    pub regularized: bool,
}

impl<T: Scalar> RobustLocation<T> {
    /// Builds a location, adding `1e-8 · trace / p` to the diagonal when the
    /// covariance is singular or nearly so and `regularize` is set.
    pub fn new(mean_vector: Vec<T>, covariance: Matrix<T>, regularize: bool) -> Result<Self> {
        let p = mean_vector.len();
        if covariance.rows() != p || covariance.cols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: covariance.rows(),
            });
        }
        let scale = (covariance.trace() / T::count(p.max(1))).abs();
        let well_posed = Cholesky::new(&covariance)
            .map(|c| {
                let pivot = c.min_pivot();
                pivot * pivot > T::lit(1e-12) * scale
            })
            .unwrap_or(false);
        if well_posed {
            let det = Cholesky::new(&covariance)?.determinant();
            return Ok(Self {
                mean_vector,
                covariance,
                det,
                regularized: false,
            });
        }
        if !regularize {
            return Err(Error::Singular);
        }
        let ridge = T::lit(1e-8) * if scale > T::zero() { scale } else { T::one() };
        let mut cov = covariance;
        for i in 0..p {
            cov[(i, i)] = cov[(i, i)] + ridge;
        }
        let det = Cholesky::new(&cov)?.determinant();
        Ok(Self {
            mean_vector,
            covariance: cov,
            det,
            regularized: true,
        })
    }

    /// Classical mean and sample covariance of all rows.
    pub fn classical(x: &Matrix<T>, regularize: bool) -> Result<Self> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        let (mean, cov) = mean_and_covariance(x, &rows)?;
        Self::new(mean, cov, regularize)
    }
}

/// Squared Mahalanobis distance of every row from the location.
pub fn mahalanobis_scores<T: Scalar>(loc: &RobustLocation<T>, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
    check_width(loc.mean_vector.len(), x)?;
    let chol = Cholesky::new(&loc.covariance)?;
    let values = x
        .iter_rows()
        .map(|r| {
            let d: Vec<T> = r.iter().zip(&loc.mean_vector).map(|(&v, &m)| v - m).collect();
            chol.quad_form_inverse(&d)
        })
        .collect();
    AnomalyScores::new(values)
}

fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp()
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (log_prefix.exp() * h)
    }
}

pub fn chi2_cdf(x: f64, dof: u32) -> f64 {
    gamma_p(f64::from(dof) / 2.0, x / 2.0)
}

/// Upper `alpha` quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cutoff(alpha: f64, dof: u32) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    if dof == 0 {
        return Err(invalid("degrees of freedom must be positive"));
    }
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (0.0, f64::from(dof).max(1.0));
    while chi2_cdf(hi, dof) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimum covariance determinant estimate with the subset that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdFit<T> {
    pub location: RobustLocation<T>,
    /// Sorted row indices of the chosen subset.
    pub support: Vec<usize>,
}

pub fn default_mcd_h(n: usize, p: usize) -> usize {
    (n + p + 1).div_ceil(2).min(n)
}

fn subset_det<T: Scalar>(x: &Matrix<T>, rows: &[usize]) -> Option<(T, Vec<T>, Matrix<T>)> {
    let (mean, cov) = mean_and_covariance(x, rows).ok()?;
    let det = determinant(&cov).ok()?;
    Some((det, mean, cov))
}

/// Replaces the subset with the `h` rows closest to its own centre.
fn concentrate<T: Scalar>(x: &Matrix<T>, mean: &[T], cov: &Matrix<T>, h: usize) -> Option<Vec<usize>> {
    let chol = Cholesky::new(cov).ok()?;
    let mut d: Vec<(T, usize)> = x
        .iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let c: Vec<T> = r.iter().zip(mean).map(|(&v, &m)| v - m).collect();
            (chol.quad_form_inverse(&c), i)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
    let mut rows: Vec<usize> = d[..h].iter().map(|p| p.1).collect();
    rows.sort_unstable();
    Some(rows)
}

/// Best of `n_subsamples` random size-`h` subsets, each refined by `c_steps`
/// concentration steps. Ties keep the earliest subsample.
pub fn mcd_fit<T: Scalar>(x: &Matrix<T>, h: usize, n_subsamples: usize, c_steps: usize, seed: u64) -> Result<McdFit<T>> {
    let (n, p) = (x.rows(), x.cols());
    if h > n || h <= p {
        return Err(invalid(format!("subset size h = {h} must satisfy {} <= h <= {n}", p + 1)));
    }
    if n_subsamples == 0 {
        return Err(invalid("need at least one subsample"));
    }
    check_width(p, x)?;
    let candidates: Vec<Option<(T, Vec<usize>)>> = (0..n_subsamples)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(seed, &[s as u64]);
            let mut rows = sample(&mut rng, n, h).into_vec();
            rows.sort_unstable();
            let (mut det, mut mean, mut cov) = subset_det(x, &rows)?;
            for _ in 0..c_steps {
                let Some(next) = concentrate(x, &mean, &cov, h) else { break };
                if next == rows {
                    break;
                }
                let Some((d, m, c)) = subset_det(x, &next) else { break };
                if d > det {
                    break;
                }
                (rows, det, mean, cov) = (next, d, m, c);
            }
            Some((det, rows))
        })
        .collect();
    let (_, support) = candidates
        .into_iter()
        .flatten()
        .reduce(|best, c| if c.0 < best.0 { c } else { best })
        .ok_or_else(|| invalid("no subset produced a covariance"))?;
    let (mean, cov) = mean_and_covariance(x, &support)?;
    Ok(McdFit {
        location: RobustLocation::new(mean, cov, true)?,
        support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum INode<T> {
    Split {
        feature: usize,
        value: T,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree<T> {
    nodes: Vec<INode<T>>,
}

/// Expected path length of an unsuccessful search in a binary search tree of `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = n - 1;
            let harmonic = if m <= 100_000 {
                (1..=m).map(|i| 1.0 / i as f64).sum::<f64>()
            } else {
                let mf = m as f64;
                mf.ln() + 0.577_215_664_901_532_9 + 1.0 / (2.0 * mf) - 1.0 / (12.0 * mf * mf)
            };
            2.0 * harmonic - 2.0 * m as f64 / n as f64
        }
    }
}

impl<T: Scalar> IsolationTree<T> {
    fn grow(x: &Matrix<T>, rows: Vec<usize>, cap: usize, rng: &mut seed::Rng) -> Self {
        let mut tree = Self { nodes: Vec::new() };
        tree.build(x, rows, 0, cap, rng);
        tree
    }

    fn build(&mut self, x: &Matrix<T>, rows: Vec<usize>, depth: usize, cap: usize, rng: &mut seed::Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(INode::Leaf { size: rows.len() });
        if depth >= cap || rows.len() <= 1 {
            return id;
        }
        let ranges: Vec<(usize, T, T)> = (0..x.cols())
            .filter_map(|f| {
                let (lo, hi) = rows.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &r| {
                    (lo.min(x[(r, f)]), hi.max(x[(r, f)]))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
        let u = T::lit(rng.random::<f64>());
        let mut value = lo + u * (hi - lo);
        if value <= lo {
            value = lo + (hi - lo) / T::lit(2.0);
        }
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] < value);
        let left = self.build(x, l, depth + 1, cap, rng);
        let right = self.build(x, r, depth + 1, cap, rng);
        self.nodes[id] = INode::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    /// Edges to the leaf plus the expected remaining depth of its points.
    pub fn path_length(&self, row: &[T]) -> f64 {
        let (mut at, mut depth) = (0, 0usize);
        loop {
            match &self.nodes[at] {
                INode::Leaf { size } => return depth as f64 + average_path_length(*size),
                INode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    at = if row[*feature] < *value { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForest<T> {
    pub trees: Vec<IsolationTree<T>>,
    pub subsample_size: usize,
    width: usize,
}

impl<T: Scalar> IsolationForest<T> {
    /// Grows `n_trees` trees, each on `min(subsample_size, n)` rows drawn
    /// without replacement, with depth capped at `⌈log₂ ψ⌉`.
    pub fn fit(x: &Matrix<T>, n_trees: usize, subsample_size: usize, seed: u64) -> Result<Self> {
        if subsample_size < 2 {
            return Err(invalid("subsample_size must be at least 2"));
        }
        if x.rows() < 2 {
            return Err(invalid("isolation forest needs at least two rows"));
        }
        if n_trees == 0 {
            return Err(invalid("isolation forest needs at least one tree"));
        }
        check_width(x.cols(), x)?;
        let psi = subsample_size.min(x.rows());
        let cap = (psi as f64).log2().ceil() as usize;
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = seed::rng(seed, &[t as u64]);
                let rows = sample(&mut rng, x.rows(), psi).into_vec();
                IsolationTree::grow(x, rows, cap, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size: psi,
            width: x.cols(),
        })
    }

    /// `2^(−E[h] / c(ψ))`.
    pub fn score(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        check_width(self.width, x)?;
        let c = average_path_length(self.subsample_size);
        let values = x
            .iter_rows()
            .map(|r| {
                let mean = self.trees.iter().map(|t| t.path_length(r)).sum::<f64>() / self.trees.len() as f64;
                T::lit(2f64.powf(-mean / c))
            })
            .collect();
        AnomalyScores::new(values)
    }
}

pub fn isolation_forest<T: Scalar>(x: &Matrix<T>, n_trees: usize, subsample_size: usize, seed: u64) -> Result<AnomalyScores<T>> {
    IsolationForest::fit(x, n_trees, subsample_size, seed)?.score(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<T> {
    /// `out × in`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

/// Feed-forward autoencoder: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeModel<T> {
    pub layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AeParams {
    /// Widths from input to output; `None` uses [`default_layout`].
    pub layer_sizes: Option<Vec<usize>>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for AeParams {
    fn default() -> Self {
        Self {
            layer_sizes: None,
            epochs: 200,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

/// `p → max(4, ⌈p/2⌉) → b → max(4, ⌈p/2⌉) → p` with `b = max(2, ⌈p/4⌉)`,
/// lowered to `p − 1` when that is smaller.
pub fn default_layout(p: usize) -> Vec<usize> {
    let h1 = p.div_ceil(2).max(4);
    let h2 = p.div_ceil(4).max(2).min(p.saturating_sub(1)).max(1);
    vec![p, h1, h2, h1, p]
}

impl<T: Scalar> AeModel<T> {
    /// Xavier-uniform weights and zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(invalid("an autoencoder needs at least one hidden layer"));
        }
        let p = sizes[0];
        if sizes[sizes.len() - 1] != p {
            return Err(invalid("output width must equal input width"));
        }
        let bottleneck = sizes[1..sizes.len() - 1].iter().copied().min().unwrap_or(0);
        if bottleneck == 0 || bottleneck >= p {
            return Err(invalid(format!("bottleneck width {bottleneck} must lie in 1..{p}")));
        }
        let mut rng = seed::rng(seed, &[seed::label("autoencoder-init")]);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.random_range(-limit..limit)))
                    .collect();
                Ok(DenseLayer {
                    weights: Matrix::from_vec(fan_out, fan_in, data)?,
                    bias: vec![T::zero(); fan_out],
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.cols()
    }

    /// Activations of every layer, input first.
    fn forward(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = &acts[l];
            let out = layer
                .weights
                .iter_rows()
                .zip(&layer.bias)
                .map(|(w, &b)| {
                    let z = w.iter().zip(prev).map(|(&a, &v)| a * v).sum::<T>() + b;
                    if l == last {
                        z
                    } else {
                        z.tanh()
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn reconstruct(&self, x: &[T]) -> Vec<T> {
        self.forward(x).pop().expect("at least one layer")
    }

    fn row_error(&self, x: &[T]) -> T {
        let out = self.reconstruct(x);
        squared_distance(&out, x) / T::count(x.len())
    }

    /// Mean over rows of the per-row mean squared reconstruction error.
    pub fn loss(&self, x: &Matrix<T>) -> T {
        x.iter_rows().map(|r| self.row_error(r)).sum::<T>() / T::count(x.rows())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.as_slice().len() + l.bias.len()).sum()
    }

    /// All weights then biases, layer by layer, weights row-major.
    pub fn parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                got: theta.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let (r, c) = (l.weights.rows(), l.weights.cols());
            l.weights = Matrix::from_vec(r, c, theta[at..at + r * c].to_vec())?;
            at += r * c;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&theta[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Gradient of [`AeModel::loss`] over the given rows, in [`AeModel::parameters`] order.
    pub fn gradient_rows(&self, x: &Matrix<T>, rows: &[usize]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.parameter_count()];
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |at, l| {
                let o = *at;
                *at += l.weights.as_slice().len() + l.bias.len();
                Some(o)
            })
            .collect();
        let p = T::count(self.input_width());
        let scale = T::lit(2.0) / (p * T::count(rows.len()));
        for &i in rows {
            let input = x.row(i);
            let acts = self.forward(input);
            let out = &acts[acts.len() - 1];
            let mut delta: Vec<T> = out.iter().zip(input).map(|(&o, &v)| scale * (o - v)).collect();
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                let prev = &acts[l];
                let (o, cols) = (offsets[l], layer.weights.cols());
                for (r, &d) in delta.iter().enumerate() {
                    for (c, &a) in prev.iter().enumerate() {
                        grad[o + r * cols + c] = grad[o + r * cols + c] + d * a;
                    }
                    let b = o + layer.weights.rows() * cols + r;
                    grad[b] = grad[b] + d;
                }
                if l > 0 {
                    delta = (0..cols)
                        .map(|c| {
                            let back: T = delta.iter().enumerate().map(|(r, &d)| d * layer.weights[(r, c)]).sum();
                            back * (T::one() - prev[c] * prev[c])
                        })
                        .collect();
                }
            }
        }
        grad
    }

    pub fn gradient(&self, x: &Matrix<T>) -> Vec<T> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        self.gradient_rows(x, &rows)
    }

    /// Per-row mean squared reconstruction error.
    pub fn reconstruction_error(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        check_width(self.input_width(), x)?;
        AnomalyScores::new(x.iter_rows().map(|r| self.row_error(r)).collect())
    }
}

/// Trains an autoencoder by mini-batch gradient descent with momentum.
pub fn autoencoder_fit<T: Scalar>(x_normal: &Matrix<T>, params: &AeParams, seed: u64) -> Result<AeModel<T>> {
    let p = x_normal.cols();
    let sizes = params.layer_sizes.clone().unwrap_or_else(|| default_layout(p));
    if sizes.first() != Some(&p) {
        return Err(Error::DimensionMismatch {
            expected: sizes.first().copied().unwrap_or(0),
            got: p,
        });
    }
    if x_normal.rows() == 0 {
        return Err(invalid("autoencoder needs training rows"));
    }
    if params.batch_size == 0 || !(params.learning_rate > 0.0) || !(0.0..1.0).contains(&params.momentum) {
        return Err(invalid("batch_size, learning_rate and momentum must be positive, momentum below 1"));
    }
    check_width(p, x_normal)?;
    let mut model = AeModel::init(&sizes, seed)?;
    let mut theta = model.parameters();
    let mut velocity = vec![T::zero(); theta.len()];
    let mut rng = seed::rng(seed, &[seed::label("autoencoder-batches")]);
    let mut order: Vec<usize> = (0..x_normal.rows()).collect();
    let (lr, mu) = (T::lit(params.learning_rate), T::lit(params.momentum));
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            let g = model.gradient_rows(x_normal, batch);
            for ((t, v), &gi) in theta.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = mu * *v - lr * gi;
                *t = *t + *v;
            }
            model.set_parameters(&theta)?;
        }
        if !model.loss(x_normal).is_finite() {
            return Err(Error::NonFinite("autoencoder training diverged".into()));
        }
    }
    Ok(model)
}

pub fn reconstruction_error<T: Scalar>(model: &AeModel<T>, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
    model.reconstruction_error(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMethod<'a> {
    /// Expected outlier fraction `q`; the threshold is the `⌈(1−q)n⌉`-th smallest score.
    ContaminationQuantile(f64),
    /// Labels of the scored rows; maximizes F1 of `score ≥ threshold`.
    F1Max(&'a [u8]),
}

/// Picks a score threshold; rows scoring at or above it are flagged.
pub fn threshold_from_scores<T: Scalar>(scores: &[T], method: ThresholdMethod<'_>) -> Result<T> {
    if scores.is_empty() {
        return Err(invalid("no scores to threshold"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN rejected above"));
    match method {
        ThresholdMethod::ContaminationQuantile(q) => {
            if !(0.0..1.0).contains(&q) {
                return Err(invalid("contamination must lie in [0, 1)"));
            }
            let n = sorted.len();
            let rank = (((1.0 - q) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
            Ok(sorted[rank - 1])
        }
        ThresholdMethod::F1Max(labels) => {
            if labels.len() != scores.len() {
                return Err(Error::DimensionMismatch {
                    expected: scores.len(),
                    got: labels.len(),
                });
            }
            let total_pos = labels.iter().filter(|&&y| y != 0).count() as u64;
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("NaN rejected above"));
            // walk thresholds from high to low; `>=` keeps the lower one on ties
            let (mut tp, mut fp) = (0u64, 0u64);
            let mut best = (f64::NEG_INFINITY, sorted[0]);
            let mut i = 0;
            while i < order.len() {
                let t = scores[order[i]];
                while i < order.len() && scores[order[i]] == t {
                    if labels[order[i]] != 0 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                    i += 1;
                }
                let f1 = f1_score(Metric::ratio(tp, tp + fp), Metric::ratio(tp, total_pos))
                    .value()
                    .unwrap_or(0.0);
                if f1 >= best.0 {
                    best = (f1, t);
                }
            }
            Ok(best.1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Lof,
    Knn,
    Abof,
    Mahalanobis,
    Mcd,
    IsolationForest,
    Autoencoder,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        DetectorKind::Lof,
        DetectorKind::Knn,
        DetectorKind::Abof,
        DetectorKind::Mahalanobis,
        DetectorKind::Mcd,
        DetectorKind::IsolationForest,
        DetectorKind::Autoencoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Lof => "lof",
            DetectorKind::Knn => "knn",
            DetectorKind::Abof => "abof",
            DetectorKind::Mahalanobis => "mahalanobis",
            DetectorKind::Mcd => "mcd",
            DetectorKind::IsolationForest => "isolation_forest",
            DetectorKind::Autoencoder => "autoencoder",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "iforest" => return Ok(DetectorKind::IsolationForest),
            "ae" => return Ok(DetectorKind::Autoencoder),
            _ => {}
        }
        DetectorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown detector {s:?}")))
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Neighbours for LOF and KNN.
    pub k: usize,
    pub n_trees: usize,
    pub subsample_size: usize,
    /// MCD subset size; `None` means `⌈(n+p+1)/2⌉`.
    pub mcd_h: Option<usize>,
    pub mcd_subsamples: usize,
    pub mcd_c_steps: usize,
    pub autoencoder: AeParams,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            k: 20,
            n_trees: 100,
            subsample_size: 256,
            mcd_h: None,
            mcd_subsamples: 500,
            mcd_c_steps: 2,
            autoencoder: AeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Detector<T> {
    Lof(LofModel<T>),
    Knn(KnnModel<T>),
    Abof(AbofModel<T>),
    Mahalanobis(RobustLocation<T>),
    Mcd(McdFit<T>),
    IsolationForest(IsolationForest<T>),
    Autoencoder(AeModel<T>),
}

impl<T: Scalar> Detector<T> {
    /// Fits a detector on `x`. Neighbour-based detectors use `min(k, n − 1)` neighbours.
    pub fn fit(kind: DetectorKind, x: &Matrix<T>, params: &DetectorParams, seed: u64) -> Result<Self> {
        let k = params.k.min(x.rows().saturating_sub(1));
        Ok(match kind {
            DetectorKind::Lof => Detector::Lof(LofModel::fit(x, k)?),
            DetectorKind::Knn => Detector::Knn(KnnModel::fit(x, k)?),
            DetectorKind::Abof => Detector::Abof(AbofModel::fit(x)?),
            DetectorKind::Mahalanobis => Detector::Mahalanobis(RobustLocation::classical(x, true)?),
            DetectorKind::Mcd => {
                let h = params.mcd_h.unwrap_or_else(|| default_mcd_h(x.rows(), x.cols()));
                Detector::Mcd(mcd_fit(x, h, params.mcd_subsamples, params.mcd_c_steps, seed)?)
            }
            DetectorKind::IsolationForest => {
                Detector::IsolationForest(IsolationForest::fit(x, params.n_trees, params.subsample_size, seed)?)
            }
            DetectorKind::Autoencoder => Detector::Autoencoder(autoencoder_fit(x, &params.autoencoder, seed)?),
        })
    }

    pub fn score(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        match self {
            Detector::Lof(m) => m.score(x),
            Detector::Knn(m) => m.score(x),
            Detector::Abof(m) => m.score(x),
            Detector::Mahalanobis(loc) => mahalanobis_scores(loc, x),
            Detector::Mcd(m) => mahalanobis_scores(&m.location, x),
            Detector::IsolationForest(m) => m.score(x),
            Detector::Autoencoder(m) => m.reconstruction_error(x),
        }
    }

    /// Scores of the training rows; neighbour-based detectors leave each row out of its own neighbourhood.
    pub fn train_scores(&self, x: &Matrix<T>) -> Result<AnomalyScores<T>> {
        match self {
            Detector::Lof(m) => Ok(m.train_scores()),
            Detector::Knn(m) => Ok(m.train_scores()),
            Detector::Abof(m) => Ok(m.train_scores()),
            _ => self.score(x),
        }
    }
}
