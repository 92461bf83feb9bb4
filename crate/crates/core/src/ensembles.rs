//! CART, random forests and second-order gradient-boosted trees.
//!
//! Trees are grown by exact greedy search: every midpoint between
//! consecutive distinct values is a candidate threshold and rows with
//! `x <= threshold` go left. Equal gains keep the earlier candidate, which
//! means the lowest feature index and then the lowest threshold. A split
//! with zero gain is still taken when nothing better exists, so patterns
//! like XOR that only pay off one level down can be learned.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{logit, sigmoid, softplus, Scalar};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        value: T,
    },
}

/// A binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T> {
    pub nodes: Vec<Node<T>>,
    pub width: usize,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn predict_row(&self, row: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Leaf value for every row: the weighted positive fraction for CART.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        check_width(self.width, x)?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    /// Length of the longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

fn check_width<T: Scalar>(width: usize, x: &Matrix<T>) -> Result<()> {
    if x.cols() != width {
        return Err(Error::DimensionMismatch {
            expected: width,
            got: x.cols(),
        });
    }
    Ok(())
}

/// Gini impurity `1 − Σ p_c²` of a node with the given class weights.
pub fn gini<T: Scalar>(negative: T, positive: T) -> T {
    let total = negative + positive;
    if total <= T::zero() {
        return T::zero();
    }
    let (a, b) = (negative / total, positive / total);
    T::one() - a * a - b * b
}

/// Split criteria. Row statistics are `[w, w·y]` for Gini and `[g, h]` for Newton.
#[derive(Debug, Clone, Copy)]
enum Criterion<T> {
    Gini,
    Newton { lambda: T },
}

impl<T: Scalar> Criterion<T> {
    /// Higher is better; a split gains `score(l) + score(r) − score(parent)`.
    fn score(self, s: [T; 2]) -> T {
        match self {
            Criterion::Gini => -(s[0] * gini(s[0] - s[1], s[1])),
            Criterion::Newton { lambda } => {
                let d = s[1] + lambda;
                if d > T::zero() {
                    T::lit(0.5) * s[0] * s[0] / d
                } else {
                    T::zero()
                }
            }
        }
    }

    fn leaf(self, s: [T; 2]) -> T {
        match self {
            Criterion::Gini => {
                if s[0] > T::zero() {
                    s[1] / s[0]
                } else {
                    T::zero()
                }
            }
            Criterion::Newton { lambda } => {
                let d = s[1] + lambda;
                if d > T::zero() {
                    -s[0] / d
                } else {
                    T::zero()
                }
            }
        }
    }

    fn pure(self, s: [T; 2]) -> bool {
        match self {
            Criterion::Gini => s[1] <= T::zero() || s[1] >= s[0],
            Criterion::Newton { .. } => false,
        }
    }
}

fn add<T: Scalar>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub<T: Scalar>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

struct Builder<'a, T: Scalar> {
    x: &'a Matrix<T>,
    stats: Vec<[T; 2]>,
    criterion: Criterion<T>,
    max_depth: usize,
    min_leaf: usize,
    mtry: Option<(usize, seed::Rng)>,
    goes_left: Vec<bool>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Builder<'_, T> {
    /// `sorted[f]` lists the node's rows (with multiplicity) ordered by feature `f`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> usize {
        let rows = &sorted[0];
        let total = rows.iter().fold([T::zero(); 2], |acc, &r| add(acc, self.stats[r]));
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.criterion.leaf(total),
        });
        let m = rows.len();
        if depth >= self.max_depth || m < 2 * self.min_leaf || self.criterion.pure(total) {
            return id;
        }
        let p = self.x.cols();
        let features: Vec<usize> = match &mut self.mtry {
            Some((k, rng)) if *k < p => {
                let mut f = sample(rng, p, *k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let parent = self.criterion.score(total);
        let tol = T::epsilon() * T::lit(64.0) * (parent.abs() + total[0].abs() + T::one());
        let mut best: Option<(T, usize, T)> = None;
        for &f in &features {
            let order = &sorted[f];
            let mut left = [T::zero(); 2];
            for i in 0..m - 1 {
                left = add(left, self.stats[order[i]]);
                if i + 1 < self.min_leaf {
                    continue;
                }
                if m - i - 1 < self.min_leaf {
                    break;
                }
                let (a, b) = (self.x[(order[i], f)], self.x[(order[i + 1], f)]);
                if a == b {
                    continue;
                }
                let gain = self.criterion.score(left) + self.criterion.score(sub(total, left)) - parent;
                if gain >= -tol && best.is_none_or(|(g, _, _)| gain > g) {
                    let mid = a + (b - a) / T::lit(2.0);
                    best = Some((gain, f, if mid < b { mid } else { a }));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        for &r in rows {
            self.goes_left[r] = self.x[(r, feature)] <= threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(p), Vec::with_capacity(p));
        for order in &sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&r| self.goes_left[r]);
            left.push(l);
            right.push(r);
        }
        drop(sorted);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        id
    }
}

fn grow<T: Scalar>(
    x: &Matrix<T>,
    rows: &[usize],
    stats: Vec<[T; 2]>,
    criterion: Criterion<T>,
    max_depth: usize,
    min_leaf: usize,
    mtry: Option<(usize, seed::Rng)>,
) -> DecisionTree<T> {
    let sorted = (0..x.cols())
        .map(|f| {
            let mut order = rows.to_vec();
            order.sort_by(|&a, &b| x[(a, f)].partial_cmp(&x[(b, f)]).expect("finite features"));
            order
        })
        .collect::<Vec<_>>();
    // a width-0 matrix still needs the row list
    let sorted = if sorted.is_empty() { vec![rows.to_vec()] } else { sorted };
    let mut b = Builder {
        x,
        stats,
        criterion,
        max_depth,
        min_leaf,
        mtry,
        goes_left: vec![false; x.rows()],
        nodes: Vec::new(),
    };
    b.build(sorted, 0);
    DecisionTree {
        nodes: b.nodes,
        width: x.cols(),
    }
}

fn gini_stats<T: Scalar>(ds: &Dataset<T>) -> Vec<[T; 2]> {
    (0..ds.len())
        .map(|i| {
            let w = ds.weight(i);
            [w, if ds.labels()[i] != 0 { w } else { T::zero() }]
        })
        .collect()
}

fn check_tree_input<T: Scalar>(ds: &Dataset<T>, min_leaf: usize) -> Result<()> {
    if ds.is_empty() {
        return Err(invalid("cannot grow a tree on an empty dataset"));
    }
    if min_leaf == 0 {
        return Err(invalid("min_leaf must be at least 1"));
    }
    if ds.len() < 2 * min_leaf {
        return Err(invalid(format!("{} rows is fewer than 2 · min_leaf = {}", ds.len(), 2 * min_leaf)));
    }
    if !ds.features().all_finite() {
        return Err(Error::NonFinite("tree features".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CartParams {
    fn default() -> Self {
        Self { max_depth: 12, min_leaf: 1 }
    }
}

/// Grows one classification tree minimizing weighted Gini impurity.
pub fn fit_cart<T: Scalar>(ds: &Dataset<T>, params: &CartParams) -> Result<DecisionTree<T>> {
    check_tree_input(ds, params.min_leaf)?;
    let rows: Vec<usize> = (0..ds.len()).collect();
    Ok(grow(
        ds.features(),
        &rows,
        gini_stats(ds),
        Criterion::Gini,
        params.max_depth,
        params.min_leaf,
        None,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ⌈√p⌉.
    pub mtry: Option<usize>,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Draw each tree's rows with replacement; off only for testing.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 200,
            mtry: None,
            max_depth: 12,
            min_leaf: 1,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel<T> {
    pub trees: Vec<DecisionTree<T>>,
    pub mtry: usize,
    pub seed: u64,
}

impl<T: Scalar> ForestModel<T> {
    /// Fraction of trees voting positive.
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        check_width(self.trees[0].width, x)?;
        let half = T::lit(0.5);
        let n = T::count(self.trees.len());
        Ok(x.iter_rows()
            .map(|r| T::count(self.trees.iter().filter(|t| t.predict_row(r) >= half).count()) / n)
            .collect())
    }

    /// Majority vote; an even split counts as positive.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<u8>> {
        let half = T::lit(0.5);
        Ok(self.predict_proba(x)?.into_iter().map(|p| u8::from(p >= half)).collect())
    }
}

pub fn default_mtry(p: usize) -> usize {
    ((p as f64).sqrt().ceil() as usize).max(1)
}

pub fn fit_forest<T: Scalar>(ds: &Dataset<T>, params: &ForestParams) -> Result<ForestModel<T>> {
    check_tree_input(ds, params.min_leaf)?;
    let p = ds.width();
    let mtry = params.mtry.unwrap_or_else(|| default_mtry(p));
    if mtry == 0 || mtry > p {
        return Err(invalid(format!("mtry = {mtry} must lie in 1..={p}")));
    }
    if params.n_trees == 0 {
        return Err(invalid("a forest needs at least one tree"));
    }
    let stats = gini_stats(ds);
    let n = ds.len();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(params.seed, &[t as u64]);
            let rows: Vec<usize> = if params.bootstrap {
                use rand::Rng;
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow(
                ds.features(),
                &rows,
                stats.clone(),
                Criterion::Gini,
                params.max_depth,
                params.min_leaf,
                Some((mtry, rng)),
            )
        })
        .collect();
    Ok(ForestModel {
        trees,
        mtry,
        seed: params.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams<T> {
    pub n_rounds: usize,
    pub learning_rate: T,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub lambda_reg: T,
    /// Starting margin; `None` uses the log-odds of the weighted base rate.
    pub base_score: Option<T>,
}

impl<T: Scalar> Default for GbtParams<T> {
    fn default() -> Self {
        Self {
            n_rounds: 200,
            learning_rate: T::lit(0.1),
            max_depth: 4,
            min_leaf: 5,
            lambda_reg: T::one(),
            base_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel<T> {
    pub trees: Vec<DecisionTree<T>>,
    pub learning_rate: T,
    pub base_score: T,
    pub lambda_reg: T,
    pub width: usize,
    /// Weighted mean training log-loss before the first round and after each round.
    pub train_loss: Vec<T>,
}

impl<T: Scalar> GbtModel<T> {
    pub fn margin_row(&self, row: &[T]) -> T {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_row(row)).sum::<T>()
    }

    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        check_width(self.width, x)?;
        Ok(x.iter_rows().map(|r| sigmoid(self.margin_row(r))).collect())
    }
}

fn weighted_log_loss<T: Scalar>(ds: &Dataset<T>, margin: &[T]) -> T {
    let mut num = T::zero();
    let mut den = T::zero();
    for (i, &f) in margin.iter().enumerate() {
        let w = ds.weight(i);
        let y = T::count(usize::from(ds.labels()[i]));
        num = num + w * (softplus(f) - y * f);
        den = den + w;
    }
    num / den
}

/// Boosts regression trees on logistic-loss gradients and hessians.
pub fn fit_gbt<T: Scalar>(ds: &Dataset<T>, params: &GbtParams<T>) -> Result<GbtModel<T>> {
    check_tree_input(ds, params.min_leaf)?;
    ds.require_both_classes("fit_gbt")?;
    let lr = params.learning_rate;
    if !(lr > T::zero() && lr <= T::one()) {
        return Err(invalid("learning_rate must lie in (0, 1]"));
    }
    if !(params.lambda_reg >= T::zero()) {
        return Err(invalid("lambda_reg must be non-negative"));
    }
    let n = ds.len();
    let base_score = match params.base_score {
        Some(b) => b,
        None => {
            let total: T = (0..n).map(|i| ds.weight(i)).sum();
            let pos: T = (0..n).filter(|&i| ds.labels()[i] != 0).map(|i| ds.weight(i)).sum();
            logit(pos / total)
        }
    };
    let rows: Vec<usize> = (0..n).collect();
    let mut margin = vec![base_score; n];
    let mut train_loss = vec![weighted_log_loss(ds, &margin)];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let criterion = Criterion::Newton {
        lambda: params.lambda_reg,
    };
    for _ in 0..params.n_rounds {
        let stats = (0..n)
            .map(|i| {
                let w = ds.weight(i);
                let p = sigmoid(margin[i]);
                let y = T::count(usize::from(ds.labels()[i]));
                [w * (p - y), w * p * (T::one() - p)]
            })
            .collect();
        let tree = grow(ds.features(), &rows, stats, criterion, params.max_depth, params.min_leaf, None);
        for (i, f) in margin.iter_mut().enumerate() {
            *f = *f + lr * tree.predict_row(ds.row(i));
        }
        train_loss.push(weighted_log_loss(ds, &margin));
        trees.push(tree);
    }
    Ok(GbtModel {
        trees,
        learning_rate: lr,
        base_score,
        lambda_reg: params.lambda_reg,
        width: ds.width(),
        train_loss,
    })
}
