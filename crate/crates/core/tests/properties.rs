use mixreg::beta_moments::coefficients;
use mixreg::dataset::{modify, Dataset};
use mixreg::evaluate::{confidence_histogram, ece, metrics, rescaled_predict, PredictionMode, RescaleParams};
use mixreg::loss::{self, LossKind};
use mixreg::mixup::{mixup_summand, perturbation, perturbed_summand};
use mixreg::model::{init_rff, LinearModel, Predictor};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn dataset(n: usize, d: usize, c: usize) -> impl Strategy<Value = Dataset> {
    (matrix(n, d), matrix(n, c)).prop_map(|(x, y)| Dataset::new(x, y).unwrap())
}

fn one_hot_dataset(n: usize, d: usize, c: usize) -> impl Strategy<Value = Dataset> {
    (matrix(n, d), prop::collection::vec(0..c, n)).prop_map(move |(x, l)| Dataset::from_labels(x, &l, c).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn coefficient_ranges(alpha in 0.01..50.0f64) {
        let c = coefficients(alpha).unwrap();
        prop_assert!((0.5..=1.0).contains(&c.theta_bar));
        prop_assert!(c.sigma_sq >= 0.0 && c.sigma_sq <= 1.0 / 16.0);
        prop_assert!((c.gamma_sq - c.sigma_sq - (1.0 - c.theta_bar).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn mean_decreases_in_alpha(a in 0.01..20.0f64, f in 1.01..3.0f64) {
        prop_assert!(coefficients(a * f).unwrap().theta_bar < coefficients(a).unwrap().theta_bar);
    }

    #[test]
    fn per_draw_identity(ds in dataset(6, 2, 3), i in 0..6usize, j in 0..6usize, theta in 0.5..1.0f64, alpha in 0.1..5.0f64) {
        let c = coefficients(alpha).unwrap();
        let m = LinearModel::new(DMatrix::from_fn(3, 2, |r, k| (r + 2 * k) as f64 * 0.3 - 0.5), DVector::from_vec(vec![0.1, -0.2, 0.3])).unwrap();
        let a = mixup_summand(&ds, &m, LossKind::SquaredError, i, j, theta).unwrap();
        let b = perturbed_summand(&ds, &m, LossKind::SquaredError, &c, &perturbation(&ds, &c, i, j, theta)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn stats_ignore_row_order(ds in dataset(7, 3, 2), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..7).collect();
        let k = (seed % 7) as usize;
        idx.rotate_left(k);
        idx.swap(0, 6);
        let p = ds.select(&idx).unwrap();
        let (a, b) = (ds.stats(), p.stats());
        prop_assert!((&a.sxx - &b.sxx).amax() < 1e-12);
        prop_assert!((&a.sxy - &b.sxy).amax() < 1e-12);
        prop_assert!((&a.x_mean - &b.x_mean).amax() < 1e-12);
    }

    #[test]
    fn modify_shrinks_covariances(ds in dataset(6, 2, 2), tb in 0.5..1.0f64) {
        let m = modify(&ds, tb).unwrap().data;
        prop_assert!((&m.stats().sxx - &ds.stats().sxx * (tb * tb)).amax() < 1e-10);
        prop_assert!((&m.stats().x_mean - &ds.stats().x_mean).amax() < 1e-12);
    }

    #[test]
    fn ece_and_histogram_bounds(conf in prop::collection::vec(0.0..=1.0f64, 1..60), seed in any::<u64>()) {
        let correct: Vec<bool> = conf.iter().enumerate().map(|(k, _)| (seed >> (k % 64)) & 1 == 1).collect();
        let e = ece(&conf, &correct, 15).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        prop_assert_eq!(confidence_histogram(&conf).iter().sum::<usize>(), conf.len());
    }

    #[test]
    fn rescaling_at_one_is_identity(w in matrix(2, 3), x in matrix(3, 1), xbar in matrix(3, 1), ybar in matrix(2, 1)) {
        let m = LinearModel::new(w, DVector::from_vec(vec![0.5, -1.0])).unwrap();
        let x = x.column(0).into_owned();
        let r = rescaled_predict(&m, &x, &xbar.column(0).into_owned(), &ybar.column(0).into_owned(), 1.0).unwrap();
        prop_assert_eq!(r, m.predict(&x));
    }

    #[test]
    fn rescaled_metrics_at_one_equal_raw(ds in one_hot_dataset(12, 2, 2), seed in 0..100u64) {
        let mut m = init_rff(2, 20, 2.0, 2, seed).unwrap();
        m.w = DMatrix::from_fn(2, 20, |r, c| ((r * 20 + c) as f64).sin());
        let mode = PredictionMode::Rescaled(RescaleParams::from_training(&ds, 1.0).unwrap());
        prop_assert_eq!(metrics(&m, &ds, &mode).unwrap(), metrics(&m, &ds, &PredictionMode::Raw).unwrap());
    }

    #[test]
    fn softmax_and_entropy(u in prop::collection::vec(-30.0..30.0f64, 2..6)) {
        let u = DVector::from_vec(u);
        let p = loss::softmax(&u);
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
        let z = loss::entropy(&p).unwrap();
        prop_assert!(z >= -1e-15 && z <= (u.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn cross_entropy_is_shift_invariant(u in prop::collection::vec(-5.0..5.0f64, 3), s in -3.0..3.0f64) {
        let u = DVector::from_vec(u);
        let y = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let shifted = u.add_scalar(s);
        let a = loss::value(LossKind::CrossEntropy, &y, &u).unwrap();
        let b = loss::value(LossKind::CrossEntropy, &y, &shifted).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
