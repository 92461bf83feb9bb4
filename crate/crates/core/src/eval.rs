//! Cross-validation, leakage-safe resampling and threshold sweeps.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{class_weights, resample, ResamplePlan};
use crate::dataio::{Dataset, Standardizer};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{confusion, roc_auc, summarize, ConfusionMatrix, Metric, MetricSummary};
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    /// Fold index of every row, in `0..k`.
    pub assignments: Vec<usize>,
    pub k: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffled k-fold assignment.
///
/// Rows are dealt round-robin after shuffling. When stratified, each class is
/// shuffled and dealt separately, the second class continuing where the
/// first stopped, so both per-class and overall fold sizes differ by at most
/// one.
pub fn kfold(labels: &[u8], k: usize, stratified: bool, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(invalid("k-fold needs k >= 2"));
    }
    if k > n {
        return Err(invalid(format!("k = {k} exceeds {n} rows")));
    }
    let mut rng = seed::rng(seed, &[seed::label("kfold")]);
    let strata: Vec<Vec<usize>> = if stratified {
        let pos: Vec<usize> = (0..n).filter(|&i| labels[i] != 0).collect();
        let neg: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        if pos.len() < k || neg.len() < k {
            return Err(invalid(format!(
                "stratified {k}-fold needs at least {k} rows per class ({} positive, {} negative)",
                pos.len(),
                neg.len()
            )));
        }
        vec![neg, pos]
    } else {
        vec![(0..n).collect()]
    };
    let mut assignments = vec![0; n];
    let mut next = 0;
    for mut stratum in strata {
        stratum.shuffle(&mut rng);
        for i in stratum {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan {
        assignments,
        k,
        stratified,
        seed,
    })
}

/// How training folds are prepared before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Raw,
    Resample(ResamplePlan),
    /// Inverse-frequency class weights computed on the training fold.
    Weighted,
    /// Unsupervised detectors; the learner sees training rows untouched.
    Anomaly,
}

/// Held-out scores from one fit, plus an optional learner-chosen threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored<T> {
    pub scores: Vec<T>,
    pub threshold: Option<T>,
}

/// Anything that can be trained on one fold and score another.
pub trait Learner<T: Scalar>: Sync {
    fn name(&self) -> String;

    /// Fits on `train` and scores the rows of `test` (higher = more positive).
    fn fit_score(&self, train: &Dataset<T>, test: &Matrix<T>, seed: u64) -> Result<Scored<T>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult<T> {
    /// Out-of-fold score of every row, in the original row order.
    pub scores: Vec<T>,
    pub predicted: Vec<u8>,
    pub confusion: ConfusionMatrix,
    pub summary: MetricSummary,
    /// AUC over the pooled out-of-fold scores.
    pub auc: Metric,
    /// Threshold applied in each fold.
    pub thresholds: Vec<T>,
}

/// Prepares one training fold: standardize on training rows, then resample or weight.
pub fn prepare_fold<T: Scalar>(
    ds: &Dataset<T>,
    plan: &FoldPlan,
    fold: usize,
    strategy: &Strategy,
    seed: u64,
) -> Result<(Dataset<T>, Matrix<T>)> {
    let train = ds.select_rows(&plan.train_rows(fold));
    let test = ds.select_rows(&plan.test_rows(fold));
    let scaler = Standardizer::fit(train.features())?;
    let train = scaler.apply(&train)?;
    let test_x = scaler.transform(test.features())?;
    let train = match strategy {
        Strategy::Raw | Strategy::Anomaly => train,
        Strategy::Resample(rp) => resample(&train, &rp.with_seed(seed::derive(seed, &[seed::label("resample")])))?,
        Strategy::Weighted => class_weights(train.labels())?.apply(&train)?,
    };
    Ok((train, test_x))
}

/// k-fold cross-validation with pooled out-of-fold scores.
///
/// A row is predicted positive when its score is at least the threshold:
/// the learner's own threshold when it supplies one, `threshold` otherwise.
/// Folds whose test rows hold a single class still contribute counts; AUC is
/// computed once over all pooled scores.
pub fn cross_validate<T: Scalar, L: Learner<T> + ?Sized>(
    ds: &Dataset<T>,
    learner: &L,
    strategy: &Strategy,
    plan: &FoldPlan,
    threshold: T,
    seed: u64,
) -> Result<CvResult<T>> {
    if plan.assignments.len() != ds.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.len(),
            got: plan.assignments.len(),
        });
    }
    let folds: Vec<(Vec<T>, T)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let fold_seed = seed::derive(seed, &[fold as u64]);
            let (train, test_x) = prepare_fold(ds, plan, fold, strategy, fold_seed)?;
            let scored = learner.fit_score(&train, &test_x, seed::derive(fold_seed, &[seed::label("fit")]))?;
            if scored.scores.len() != test_x.rows() {
                return Err(Error::DimensionMismatch {
                    expected: test_x.rows(),
                    got: scored.scores.len(),
                });
            }
            if scored.scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite(format!("{} scores", learner.name())));
            }
            Ok((scored.scores, scored.threshold.unwrap_or(threshold)))
        })
        .collect::<Result<_>>()?;

    let mut scores = vec![T::zero(); ds.len()];
    let mut predicted = vec![0u8; ds.len()];
    let mut thresholds = Vec::with_capacity(plan.k);
    for (fold, (fold_scores, t)) in folds.into_iter().enumerate() {
        for (i, s) in plan.test_rows(fold).into_iter().zip(fold_scores) {
            scores[i] = s;
            predicted[i] = u8::from(s >= t);
        }
        thresholds.push(t);
    }
    let cm = confusion(&predicted, ds.labels())?;
    let auc = match roc_auc(&scores, ds.labels()) {
        Ok(a) => Metric::defined(a),
        Err(Error::SingleClass(_)) => Metric::UNDEFINED,
        Err(e) => return Err(e),
    };
    Ok(CvResult {
        scores,
        predicted,
        confusion: cm,
        summary: summarize(&cm),
        auc,
        thresholds,
    })
}

/// Confusion-derived metrics at each threshold of an ascending grid.
pub fn threshold_sweep<T: Scalar>(scores: &[T], labels: &[u8], grid: &[T]) -> Result<Vec<(T, MetricSummary)>> {
    if grid.is_empty() {
        return Err(invalid("threshold grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("threshold grid must be sorted ascending"));
    }
    grid.iter()
        .map(|&t| {
            let predicted: Vec<u8> = scores.iter().map(|&s| u8::from(s >= t)).collect();
            Ok((t, summarize(&confusion(&predicted, labels)?)))
        })
        .collect()
}
