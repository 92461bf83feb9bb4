use herdsurv::balance::ClassWeights;
use herdsurv::ensembles::{fit_cart, fit_forest, fit_gbt, CartParams, ForestParams, GbtParams};
use herdsurv::eval::kfold;
use herdsurv::linear::{cv_auc, fit_linear, objective, select_lambda, smooth_gradient, smooth_objective, LinearParams, Penalty};
use herdsurv::matrix::Cholesky;
use herdsurv::svm::{fit_svm, kernel_eval, solve_dual, KernelSpec, SvmParams};
use herdsurv::{Dataset, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Noisy logistic data with `p` standard normal features.
fn noisy(n: usize, p: usize, seed: u64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let eta = 0.3 + x.iter().enumerate().map(|(j, v)| v * (1.0 - j as f64 * 0.4)).sum::<f64>();
        labels.push(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())));
        rows.push(x);
    }
    Dataset::from_rows(&rows, labels).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn logistic_gradient_matches_central_differences() {
    let ds = noisy(60, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    for _ in 0..20 {
        let theta: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let l2 = rng.random_range(0.0..0.5);
        let f = |t: &[f64]| smooth_objective(&ds, t[0], &t[1..], l2);
        let g = smooth_gradient(&ds, theta[0], &theta[1..], l2);
        for j in 0..5 {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert!(rel_err(g[j], fd) <= 1e-4, "coordinate {j}: {} vs {fd}", g[j]);
        }
    }
}

/// Newton iterations on the smooth objective, solved with a Cholesky factor.
fn newton_oracle(ds: &Dataset<f64>, l2: f64) -> Vec<f64> {
    let p = ds.width();
    let total: f64 = (0..ds.len()).map(|i| ds.weight(i)).sum();
    let mut theta = vec![0.0; p + 1];
    for _ in 0..50 {
        let g = smooth_gradient(ds, theta[0], &theta[1..], l2);
        let mut hess = Matrix::zeros(p + 1, p + 1);
        for i in 0..ds.len() {
            let mut x = vec![1.0];
            x.extend_from_slice(ds.row(i));
            let eta: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let s = 1.0 / (1.0 + (-eta).exp());
            let w = ds.weight(i) * s * (1.0 - s) / total;
            for a in 0..=p {
                for b in 0..=p {
                    hess[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        for j in 1..=p {
            hess[(j, j)] += 2.0 * l2;
        }
        let step = Cholesky::new(&hess).unwrap().solve(&g);
        for (t, s) in theta.iter_mut().zip(step) {
            *t -= s;
        }
    }
    theta
}

#[test]
fn unpenalized_and_ridge_fits_match_newton() {
    let ds = noisy(200, 3, 4);
    for (penalty, l2) in [(Penalty::None, 0.0), (Penalty::Ridge, 0.05)] {
        let model = fit_linear(&ds, &LinearParams::new(penalty, l2, 0.0)).unwrap();
        assert!(model.converged);
        let oracle = newton_oracle(&ds, l2);
        assert!((model.intercept - oracle[0]).abs() < 1e-4);
        for (b, o) in model.coefficients.iter().zip(&oracle[1..]) {
            assert!((b - o).abs() < 1e-4, "{b} vs {o}");
        }
    }
}

#[test]
fn ridge_shrinks_as_penalty_grows() {
    let ds = noisy(150, 3, 5);
    let norms: Vec<f64> = [0.0, 0.01, 0.1, 1.0, 10.0]
        .iter()
        .map(|&l2| {
            let m = fit_linear(&ds, &LinearParams::new(Penalty::Ridge, l2, 0.0)).unwrap();
            m.coefficients.iter().map(|b| b * b).sum::<f64>()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{norms:?}");
}

#[test]
fn objective_never_rises_with_more_sweeps() {
    let ds = noisy(120, 4, 6);
    for (penalty, l2, l1) in [(Penalty::Lasso, 0.0, 0.02), (Penalty::ElasticNet, 0.01, 0.01), (Penalty::Ridge, 0.1, 0.0)] {
        let mut last = f64::INFINITY;
        for iters in 1..=15 {
            let params = LinearParams {
                max_iter: iters,
                ..LinearParams::new(penalty, l2, l1)
            };
            let m = fit_linear(&ds, &params).unwrap();
            let obj = objective(&ds, m.intercept, &m.coefficients, l2, l1);
            assert!(obj <= last + 1e-12, "{penalty:?} sweep {iters}");
            last = obj;
        }
    }
}

#[test]
fn duplicated_rows_equal_doubled_weights() {
    let ds = noisy(60, 3, 8);
    let dup_idx: Vec<usize> = (0..60).chain(0..10).collect();
    let duplicated = ds.select_rows(&dup_idx);
    let weights: Vec<f64> = (0..60).map(|i| if i < 10 { 2.0 } else { 1.0 }).collect();
    let weighted = ds.clone().with_weights(weights).unwrap();

    let params = LinearParams::new(Penalty::ElasticNet, 0.01, 0.01);
    let a = fit_linear(&duplicated, &params).unwrap();
    let b = fit_linear(&weighted, &params).unwrap();
    assert!((a.intercept - b.intercept).abs() < 1e-6);
    for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
        assert!((x - y).abs() < 1e-6);
    }

    let cart = CartParams::default();
    let ta = fit_cart(&duplicated, &cart).unwrap();
    let tb = fit_cart(&weighted, &cart).unwrap();
    assert_eq!(ta.predict(ds.features()).unwrap(), tb.predict(ds.features()).unwrap());
}

#[test]
fn lambda_selection_picks_best_cell() {
    let ds = noisy(90, 3, 9);
    let grid = vec![(0.0, 0.0), (0.01, 0.0), (1.0, 0.0), (0.0, 0.05), (0.0, 1.0)];
    let template = LinearParams::new(Penalty::ElasticNet, 0.0, 0.0);
    let chosen = select_lambda(&ds, &grid, 3, 11, &template).unwrap();
    let plan = kfold(ds.labels(), 3, true, 11).unwrap();
    let scores: Vec<f64> = grid
        .iter()
        .map(|&(l2, l1)| cv_auc(&ds, &plan.assignments, 3, &LinearParams { l2, l1, ..template.clone() }))
        .collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first_best = grid
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s == best)
        .map(|(g, _)| *g)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .unwrap();
    assert_eq!(chosen, first_best);
}

#[test]
fn gbt_training_loss_never_rises() {
    let ds = noisy(200, 4, 10);
    let model = fit_gbt(
        &ds,
        &GbtParams {
            n_rounds: 40,
            ..GbtParams::default()
        },
    )
    .unwrap();
    assert_eq!(model.train_loss.len(), 41);
    assert!(model.train_loss.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn gbt_leaves_take_newton_steps() {
    let ds = noisy(150, 3, 12);
    let lambda = 0.7;
    let base = 0.2;
    let model = fit_gbt(
        &ds,
        &GbtParams {
            n_rounds: 1,
            learning_rate: 1.0,
            max_depth: 2,
            min_leaf: 5,
            lambda_reg: lambda,
            base_score: Some(base),
        },
    )
    .unwrap();
    let tree = &model.trees[0];
    let p0 = 1.0 / (1.0 + (-base).exp());
    let mut leaves: Vec<(f64, f64, f64)> = Vec::new();
    for i in 0..ds.len() {
        let v = tree.predict_row(ds.row(i));
        let y = f64::from(ds.labels()[i]);
        match leaves.iter_mut().find(|l| l.0 == v) {
            Some(l) => {
                l.1 += p0 - y;
                l.2 += p0 * (1.0 - p0);
            }
            None => leaves.push((v, p0 - y, p0 * (1.0 - p0))),
        }
    }
    assert!(leaves.len() > 1);
    for (v, g, h) in leaves {
        assert!((v + g / (h + lambda)).abs() < 1e-10);
    }
}

#[test]
fn deterministic_forest_ignores_row_order() {
    let ds = noisy(80, 3, 13);
    let params = ForestParams {
        n_trees: 5,
        mtry: Some(3),
        bootstrap: false,
        ..ForestParams::default()
    };
    let order: Vec<usize> = (0..80).rev().collect();
    let a = fit_forest(&ds, &params).unwrap();
    let b = fit_forest(&ds.select_rows(&order), &params).unwrap();
    assert_eq!(a.predict_proba(ds.features()).unwrap(), b.predict_proba(ds.features()).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forest_is_seed_deterministic(seed in any::<u64>()) {
        let ds = noisy(60, 3, seed);
        let params = ForestParams { n_trees: 10, seed, ..ForestParams::default() };
        let a = fit_forest(&ds, &params).unwrap();
        let b = fit_forest(&ds, &params).unwrap();
        prop_assert_eq!(a.predict_proba(ds.features()).unwrap(), b.predict_proba(ds.features()).unwrap());
    }

    #[test]
    fn svm_dual_satisfies_kkt(seed in any::<u64>(), c in 0.1f64..5.0, w_pos in 1.0f64..4.0) {
        let ds = noisy(50, 2, seed);
        prop_assume!(ds.positives() > 0 && ds.negatives() > 0);
        let weights = ClassWeights { negative: 1.0, positive: w_pos };
        let kernel = KernelSpec::radial(0.5);
        let params = SvmParams {
            kernel: Some(kernel),
            c,
            class_weights: Some(weights),
            tol: 1e-6,
            max_passes: 1000,
            ..SvmParams::default()
        };
        let sol = solve_dual(&ds, &kernel, &params).unwrap();
        prop_assert!(sol.converged);
        let mut balance = 0.0;
        for i in 0..ds.len() {
            let box_i = if ds.labels()[i] == 1 { c * w_pos } else { c };
            prop_assert!((sol.upper[i] - box_i).abs() < 1e-12);
            prop_assert!(sol.alpha[i] >= 0.0 && sol.alpha[i] <= sol.upper[i]);
            balance += sol.alpha[i] * if ds.labels()[i] == 1 { 1.0 } else { -1.0 };
        }
        prop_assert!(balance.abs() < 1e-6);
        prop_assert!(sol.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));

        let decision = |x: &[f64]| -> f64 {
            (0..ds.len())
                .map(|j| sol.alpha[j] * if ds.labels()[j] == 1 { 1.0 } else { -1.0 } * kernel_eval(ds.row(j), x, &kernel).unwrap())
                .sum::<f64>()
                + sol.bias
        };
        for i in 0..ds.len() {
            let a = sol.alpha[i];
            if a > 1e-8 && a < sol.upper[i] - 1e-8 {
                let y = if ds.labels()[i] == 1 { 1.0 } else { -1.0 };
                prop_assert!((y * decision(ds.row(i)) - 1.0).abs() < 1e-3);
            }
        }

        let model = fit_svm(&ds, &params).unwrap();
        prop_assert!(model.support_vectors.rows() <= ds.len());
        for i in 0..ds.len() {
            prop_assert!((model.decision(ds.row(i)).unwrap() - decision(ds.row(i))).abs() < 1e-9);
        }
    }
}

#[test]
fn radial_kernel_is_scale_covariant() {
    let ds = noisy(60, 2, 14);
    let s = 3.0;
    let scaled_rows: Vec<Vec<f64>> = (0..ds.len()).map(|i| ds.row(i).iter().map(|v| v * s).collect()).collect();
    let scaled = Dataset::from_rows(&scaled_rows, ds.labels().to_vec()).unwrap();
    let fit = |d: &Dataset<f64>, g: f64| {
        fit_svm(
            d,
            &SvmParams {
                kernel: Some(KernelSpec::radial(g)),
                tol: 1e-6,
                calibrate: false,
                ..SvmParams::default()
            },
        )
        .unwrap()
    };
    let a = fit(&ds, 0.8).decisions(ds.features()).unwrap();
    let b = fit(&scaled, 0.8 / (s * s)).decisions(scaled.features()).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-6);
    }
}
