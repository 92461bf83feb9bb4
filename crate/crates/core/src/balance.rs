//! Class-imbalance countermeasures: inverse-frequency weights, random
//! under/over-sampling and SMOTE.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, RowOrigin};
use crate::error::{invalid, Error, Result};
use crate::scalar::{squared_distance, Scalar};
use crate::seed;

/// Per-class loss multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights<T> {
    pub negative: T,
    pub positive: T,
}

impl<T: Scalar> ClassWeights<T> {
    pub fn for_label(&self, y: u8) -> T {
        if y != 0 {
            self.positive
        } else {
            self.negative
        }
    }

    /// Attaches per-row weights, multiplying any existing ones.
    pub fn apply(&self, ds: &Dataset<T>) -> Result<Dataset<T>> {
        let w = (0..ds.len())
            .map(|i| ds.weight(i) * self.for_label(ds.labels()[i]))
            .collect();
        ds.clone().with_weights(w)
    }
}

/// `weight(c) = n / (2 · count(c))`.
pub fn class_weights<T: Scalar>(labels: &[u8]) -> Result<ClassWeights<T>> {
    let pos = labels.iter().filter(|&&y| y != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("class_weights".into()));
    }
    let n = T::count(labels.len());
    let two = T::lit(2.0);
    Ok(ClassWeights {
        negative: n / (two * T::count(neg)),
        positive: n / (two * T::count(pos)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    Under,
    Over,
    Smote,
    UnderThenSmote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResamplePlan {
    pub mode: ResampleMode,
    /// Minority:majority ratio after resampling, in (0, 1].
    pub target_ratio: f64,
    pub k_neighbors: usize,
    /// Minority:majority ratio reached by under-sampling before SMOTE.
    pub intermediate_ratio: f64,
    pub seed: u64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self {
            mode: ResampleMode::UnderThenSmote,
            target_ratio: 1.0,
            k_neighbors: 5,
            intermediate_ratio: 0.5,
            seed: 0,
        }
    }
}

impl ResamplePlan {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("target_ratio", self.target_ratio), ("intermediate_ratio", self.intermediate_ratio)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.k_neighbors == 0 {
            return Err(invalid("k_neighbors must be at least 1"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Row indices of the minority and majority classes. Positives are the
/// minority on an exact tie.
fn split_classes<T: Scalar>(ds: &Dataset<T>) -> Result<(u8, Vec<usize>, Vec<usize>)> {
    let pos: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == 1).collect();
    let neg: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass("resampling".into()));
    }
    Ok(if pos.len() <= neg.len() { (1, pos, neg) } else { (0, neg, pos) })
}

fn under_sample<T: Scalar>(ds: &Dataset<T>, ratio: f64, rng: &mut seed::Rng, strict: bool) -> Result<Dataset<T>> {
    let (_, minority, majority) = split_classes(ds)?;
    let keep = ((minority.len() as f64) / ratio).round() as usize;
    if keep > majority.len() {
        if strict {
            return Err(invalid(format!(
                "under-sampling to ratio {ratio} needs {keep} majority rows, only {} available",
                majority.len()
            )));
        }
        return Ok(ds.clone());
    }
    let mut chosen: Vec<usize> = sample(rng, majority.len(), keep).into_iter().map(|k| majority[k]).collect();
    chosen.extend_from_slice(&minority);
    chosen.sort_unstable();
    Ok(ds.select_rows(&chosen))
}

fn over_sample<T: Scalar>(ds: &Dataset<T>, ratio: f64, rng: &mut seed::Rng) -> Result<Dataset<T>> {
    let (_, minority, majority) = split_classes(ds)?;
    let target = ((majority.len() as f64) * ratio).round() as usize;
    if target < minority.len() {
        return Err(invalid(format!(
            "over-sampling to ratio {ratio} would need fewer than the {} minority rows present",
            minority.len()
        )));
    }
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    rows.extend((0..target - minority.len()).map(|_| minority[rng.random_range(0..minority.len())]));
    Ok(ds.select_rows(&rows))
}

/// Random under- or over-sampling to the plan's target ratio.
///
/// Minority rows are never dropped. Under-sampling keeps the original row
/// order; over-sampling appends duplicates after the original rows.
pub fn random_resample<T: Scalar>(ds: &Dataset<T>, plan: &ResamplePlan) -> Result<Dataset<T>> {
    plan.validate()?;
    let mut rng = seed::rng(plan.seed, &[seed::label("random_resample")]);
    match plan.mode {
        ResampleMode::Under => under_sample(ds, plan.target_ratio, &mut rng, true),
        ResampleMode::Over => over_sample(ds, plan.target_ratio, &mut rng),
        ResampleMode::Smote | ResampleMode::UnderThenSmote => smote(ds, plan),
    }
}

/// Point at fraction `u` along the segment from `a` to `b`.
pub fn interpolate<T: Scalar>(a: &[T], b: &[T], u: T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + u * (y - x)).collect()
}

/// Indices (into `points`) of the `k` nearest other points, ties by index.
fn nearest_minority<T: Scalar>(ds: &Dataset<T>, points: &[usize], k: usize) -> Vec<Vec<usize>> {
    points
        .par_iter()
        .enumerate()
        .map(|(a, &ra)| {
            let mut d: Vec<(T, usize)> = points
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != a)
                .map(|(b, &rb)| (squared_distance(ds.row(ra), ds.row(rb)), b))
                .collect();
            let cmp = |x: &(T, usize), y: &(T, usize)| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1));
            if d.len() > k {
                d.select_nth_unstable_by(k - 1, cmp);
                d.truncate(k);
            }
            d.sort_by(cmp);
            d.into_iter().map(|(_, b)| b).collect()
        })
        .collect()
}

/// Synthetic minority over-sampling.
///
/// Each synthetic row is `x_a + u·(x_b − x_a)` with `x_a` a uniformly drawn
/// minority row, `x_b` one of its `k` nearest minority neighbours (Euclidean)
/// and `u ~ U(0, 1)`. Enough rows are added to reach `target_ratio`; mode
/// `UnderThenSmote` first under-samples the majority to `intermediate_ratio`.
pub fn smote<T: Scalar>(ds: &Dataset<T>, plan: &ResamplePlan) -> Result<Dataset<T>> {
    plan.validate()?;
    let mut rng = seed::rng(plan.seed, &[seed::label("smote")]);
    let base = match plan.mode {
        ResampleMode::UnderThenSmote if plan.intermediate_ratio < plan.target_ratio => {
            under_sample(ds, plan.intermediate_ratio, &mut rng, false)?
        }
        _ => ds.clone(),
    };
    let (minority_label, minority, majority) = split_classes(&base)?;
    let k = plan.k_neighbors;
    if minority.len() <= k {
        return Err(invalid(format!(
            "SMOTE needs more than k = {k} minority rows, found {}",
            minority.len()
        )));
    }
    let target = ((majority.len() as f64) * plan.target_ratio).round() as usize;
    let n_new = target.saturating_sub(minority.len());
    let mut out = base.clone();
    if n_new == 0 {
        return Ok(out);
    }
    let neighbors = nearest_minority(&base, &minority, k);
    for _ in 0..n_new {
        let a = rng.random_range(0..minority.len());
        let b = neighbors[a][rng.random_range(0..k)];
        let u = T::lit(rng.random::<f64>());
        let (ra, rb) = (minority[a], minority[b]);
        let row = interpolate(base.row(ra), base.row(rb), u);
        let origin = RowOrigin::Synthetic {
            parent_a: base.origins()[ra].root(),
            parent_b: base.origins()[rb].root(),
        };
        out.push_synthetic(&row, minority_label, base.weight(ra), origin);
    }
    Ok(out)
}

/// Applies whichever resampling the plan's mode names.
pub fn resample<T: Scalar>(ds: &Dataset<T>, plan: &ResamplePlan) -> Result<Dataset<T>> {
    random_resample(ds, plan)
}
