use std::collections::HashSet;

use herdsurv::balance::{class_weights, smote, ResampleMode, ResamplePlan};
use herdsurv::eval::{cross_validate, kfold, prepare_fold, threshold_sweep, Learner, Scored, Strategy};
use herdsurv::metrics::{confusion, roc_auc};
use herdsurv::{Dataset, Matrix, Result, RowOrigin};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            total += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    total / pairs
}

fn blobs(n: usize, p: usize, pos: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..p).map(|_| rng.random::<f64>() + if i < pos { 1.5 } else { 0.0 }).collect())
        .collect();
    let labels = (0..n).map(|i| u8::from(i < pos)).collect();
    Dataset::from_rows(&rows, labels).unwrap()
}

#[test]
fn auc_matches_pairwise_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) / 7.0).collect();
        let fast = roc_auc(&scores, &labels).unwrap();
        assert!((fast - brute_auc(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn smote_rows_lie_on_minority_segments() {
    let mut violations = 0;
    for trial in 0..1000u64 {
        let ds = blobs(40, 3, 8, trial);
        let plan = ResamplePlan {
            mode: ResampleMode::Smote,
            target_ratio: 1.0,
            k_neighbors: 3,
            seed: trial,
            ..ResamplePlan::default()
        };
        let out = smote(&ds, &plan).unwrap();
        assert_eq!(out.positives(), out.negatives());
        for (i, origin) in out.origins().iter().enumerate() {
            let RowOrigin::Synthetic { parent_a, parent_b } = *origin else { continue };
            let (a, b, x) = (ds.row(parent_a), ds.row(parent_b), out.row(i));
            let ok_parents = ds.labels()[parent_a] == 1 && ds.labels()[parent_b] == 1 && out.labels()[i] == 1;
            let u = (0..3)
                .find(|&j| (b[j] - a[j]).abs() > 1e-12)
                .map_or(0.0, |j| (x[j] - a[j]) / (b[j] - a[j]));
            let on_segment = (-1e-12..=1.0 + 1e-12).contains(&u)
                && (0..3).all(|j| (a[j] + u * (b[j] - a[j]) - x[j]).abs() < 1e-9);
            if !(ok_parents && on_segment) {
                violations += 1;
            }
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn class_weights_balance_totals() {
    let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
    let w = class_weights::<f64>(&labels).unwrap();
    assert!((90.0 * w.negative - 10.0 * w.positive).abs() < 1e-9);
    assert!((90.0 * w.negative + 10.0 * w.positive - 100.0).abs() < 1e-9);
}

proptest! {
    #[test]
    fn kfold_partitions_rows(n in 10usize..300, k in 2usize..10, pos_frac in 0.1f64..0.9, seed in any::<u64>(), stratified in any::<bool>()) {
        let labels: Vec<u8> = (0..n).map(|i| u8::from((i as f64) < pos_frac * n as f64)).collect();
        let pos = labels.iter().filter(|&&y| y == 1).count();
        prop_assume!(k <= n && (!stratified || (pos >= k && n - pos >= k)));
        let plan = kfold(&labels, k, stratified, seed).unwrap();
        let mut seen = vec![0usize; n];
        for f in 0..k {
            let test = plan.test_rows(f);
            let train = plan.train_rows(f);
            prop_assert_eq!(test.len() + train.len(), n);
            let t: HashSet<_> = test.iter().collect();
            prop_assert!(train.iter().all(|i| !t.contains(i)));
            for i in test {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes = plan.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        if stratified {
            let per: Vec<usize> = (0..k).map(|f| plan.test_rows(f).iter().filter(|&&i| labels[i] == 1).count()).collect();
            prop_assert!(per.iter().max().unwrap() - per.iter().min().unwrap() <= 1);
        }
        prop_assert_eq!(kfold(&labels, k, stratified, seed).unwrap(), plan);
    }

    #[test]
    fn sweep_is_monotone(scores in prop::collection::vec(0.0f64..1.0, 20..120), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = scores.iter().map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let grid: Vec<f64> = (0..=20).map(|i| f64::from(i) / 20.0).collect();
        let sweep = threshold_sweep(&scores, &labels, &grid).unwrap();
        for w in sweep.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            prop_assert!(b.sensitivity.value().unwrap() <= a.sensitivity.value().unwrap() + 1e-15);
            prop_assert!(b.fpr.value().unwrap() <= a.fpr.value().unwrap() + 1e-15);
        }
    }

    #[test]
    fn confusion_counts_every_row(pred in prop::collection::vec(0u8..2, 1..200), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actual: Vec<u8> = pred.iter().map(|_| rng.random_range(0..2)).collect();
        let cm = confusion(&pred, &actual).unwrap();
        prop_assert_eq!(cm.total(), pred.len() as u64);
        prop_assert_eq!(cm.true_pos + cm.false_neg, actual.iter().filter(|&&y| y == 1).count() as u64);
        prop_assert_eq!(cm.true_pos + cm.false_pos, pred.iter().filter(|&&y| y == 1).count() as u64);
    }
}

#[test]
fn training_folds_never_touch_test_rows() {
    let ds = blobs(120, 4, 20, 3);
    let plan = kfold(ds.labels(), 5, true, 9).unwrap();
    let strategies = [
        Strategy::Raw,
        Strategy::Weighted,
        Strategy::Resample(ResamplePlan::default()),
        Strategy::Resample(ResamplePlan {
            mode: ResampleMode::Smote,
            ..ResamplePlan::default()
        }),
    ];
    for strategy in &strategies {
        for fold in 0..plan.k {
            let test: HashSet<usize> = plan.test_rows(fold).into_iter().collect();
            let (train, test_x) = prepare_fold(&ds, &plan, fold, strategy, 1).unwrap();
            assert_eq!(test_x.rows(), test.len());
            for o in train.origins() {
                let roots = match *o {
                    RowOrigin::Original(i) => vec![i],
                    RowOrigin::Synthetic { parent_a, parent_b } => vec![parent_a, parent_b],
                };
                assert!(roots.iter().all(|r| !test.contains(r)), "{strategy:?} fold {fold}");
            }
        }
    }
}

struct FirstFeature;

impl Learner<f64> for FirstFeature {
    fn name(&self) -> String {
        "first".into()
    }
    fn fit_score(&self, _: &Dataset<f64>, test: &Matrix<f64>, _: u64) -> Result<Scored<f64>> {
        Ok(Scored {
            scores: test.column(0),
            threshold: None,
        })
    }
}

#[test]
fn cross_validation_scores_each_row_once() {
    let ds = blobs(90, 2, 30, 5);
    let plan = kfold(ds.labels(), 3, true, 2).unwrap();
    let cv = cross_validate(&ds, &FirstFeature, &Strategy::Raw, &plan, 0.0, 4).unwrap();
    assert_eq!(cv.confusion.total(), 90);
    assert_eq!(cv.thresholds, vec![0.0; 3]);
    let again = cross_validate(&ds, &FirstFeature, &Strategy::Raw, &plan, 0.0, 4).unwrap();
    assert_eq!(cv, again);
    assert!(cv.auc.value().unwrap() > 0.8);
}
