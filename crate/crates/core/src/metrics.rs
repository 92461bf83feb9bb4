//! Confusion-matrix statistics and ROC-AUC.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn new(true_pos: u64, false_pos: u64, true_neg: u64, false_neg: u64) -> Self {
        Self {
            true_pos,
            false_pos,
            true_neg,
            false_neg,
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, false) => self.true_neg += 1,
            (false, true) => self.false_neg += 1,
        }
    }
}

impl std::ops::Add for ConfusionMatrix {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.true_pos + o.true_pos,
            self.false_pos + o.false_pos,
            self.true_neg + o.true_neg,
            self.false_neg + o.false_neg,
        )
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// A ratio that is undefined when its denominator is zero.
///
/// Serializes as a number or `null`; displays as `-` when undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Metric(Option<f64>);

impl Metric {
    pub const UNDEFINED: Metric = Metric(None);

    pub fn defined(v: f64) -> Self {
        Metric(Some(v))
    }

    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::UNDEFINED
        } else {
            Metric(Some(num as f64 / den as f64))
        }
    }

    pub fn value(self) -> Option<f64> {
        self.0
    }

    pub fn is_defined(self) -> bool {
        self.0.is_some()
    }

    /// Mean over the defined entries; undefined when none are.
    pub fn mean<I: IntoIterator<Item = Metric>>(items: I) -> Self {
        let (sum, n) = items
            .into_iter()
            .filter_map(Metric::value)
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            Self::UNDEFINED
        } else {
            Metric(Some(sum / n as f64))
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{:.*}", f.precision().unwrap_or(3), v),
            None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ppv: Metric,
    pub sensitivity: Metric,
    pub f1: Metric,
    pub fpr: Metric,
}

/// Harmonic mean of PPV and sensitivity; undefined when either is undefined or both are 0.
pub fn f1_score(ppv: Metric, sensitivity: Metric) -> Metric {
    match (ppv.value(), sensitivity.value()) {
        (Some(p), Some(s)) if p + s > 0.0 => Metric::defined(2.0 * p * s / (p + s)),
        _ => Metric::UNDEFINED,
    }
}

pub fn confusion(predicted: &[u8], actual: &[u8]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(invalid("confusion matrix of zero observations"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        cm.record(p != 0, a != 0);
    }
    Ok(cm)
}

pub fn summarize(cm: &ConfusionMatrix) -> MetricSummary {
    let ppv = Metric::ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let sensitivity = Metric::ratio(cm.true_pos, cm.true_pos + cm.false_neg);
    MetricSummary {
        ppv,
        sensitivity,
        f1: f1_score(ppv, sensitivity),
        fpr: Metric::ratio(cm.false_pos, cm.false_pos + cm.true_neg),
    }
}

/// Area under the ROC curve via the Mann–Whitney rank statistic.
///
/// Tied scores receive their mid-rank, so every tied positive/negative pair
/// counts one half.
pub fn roc_auc<T: Scalar>(scores: &[T], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("roc_auc".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN rejected above"));

    // Twice the positive rank sum, kept integral: a tie block occupying
    // 1-based ranks lo..=hi contributes (lo + hi) per positive.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_block = order[i..j].iter().filter(|&&k| labels[k] != 0).count() as u128;
        twice_rank_sum += pos_in_block * (i as u128 + 1 + j as u128);
        i = j;
    }
    let p = n_pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n_neg as u128) as f64)
}
