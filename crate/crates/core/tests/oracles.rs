//! Values frozen from independent oracles (mpmath incomplete beta, scipy t
//! intervals, hand enumeration, brute force, straight-line reimplementations).

use mixreg::beta_moments::{coefficients, trunc_beta_cdf, trunc_beta_mean, trunc_beta_raw_moment, BetaSampler};
use mixreg::cli::mean_ci95;
use mixreg::dataset::{make_two_moons, Dataset};
use mixreg::evaluate::ece;
use mixreg::loss::{self, LossKind};
use mixreg::mixup::mixup_risk_mc;
use mixreg::model::{init_rff, LinearModel, Predictor};
use mixreg::regularization::{approx_mixup_objective, approx_objective_grad, prepare};
use mixreg::trainer::{train_model, Method, ModelSpec, TrainConfig};
use mixreg::verify::quadrature::trunc_beta_expectation;
use mixreg::Model;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
// Digits as printed by mpmath.
#[allow(clippy::excessive_precision)]
fn truncated_beta_moments_match_mpmath() {
    // 1/2 + 1/π
    assert!(close(trunc_beta_mean(0.5).unwrap(), 0.818_309_886_183_790_7, 1e-10));
    assert!(close(trunc_beta_raw_moment(2.0, 2).unwrap(), 0.4875, 1e-10));
    let c = coefficients(0.25).unwrap();
    assert!(close(c.theta_bar, 0.881_379_881_750_906_6, 1e-9));
    assert!(close(c.sigma_sq, 0.021_216_052_462_331_170, 1e-9));
    assert!(close(c.gamma_sq, 0.035_286_784_915_760_073, 1e-9));
    let u = coefficients(1.0).unwrap();
    assert!(close(u.theta_bar, 0.75, 1e-14) && close(u.sigma_sq, 1.0 / 48.0, 1e-13));
    assert!(close(trunc_beta_mean(5.0).unwrap(), 0.623_046_875, 1e-12));
    assert!(close(trunc_beta_mean(0.1).unwrap(), 0.941_575_694_944_684_3, 1e-10));
}

#[test]
fn closed_form_moments_match_quadrature_at_spec_points() {
    let q = trunc_beta_expectation(0.5, |t| t).unwrap();
    assert!(q.converged && (q.value - trunc_beta_mean(0.5).unwrap()).abs() < 1e-10);
    let q = trunc_beta_expectation(2.0, |t| t * t).unwrap();
    assert!(q.converged && (q.value - trunc_beta_raw_moment(2.0, 2).unwrap()).abs() < 1e-10);
    let c = coefficients(0.25).unwrap();
    let m1 = trunc_beta_expectation(0.25, |t| t).unwrap().value;
    let m2 = trunc_beta_expectation(0.25, |t| t * t).unwrap().value;
    assert!((c.theta_bar - m1).abs() < 1e-9);
    assert!((c.sigma_sq - (m2 - m1 * m1)).abs() < 1e-9);
}

#[test]
fn alpha_limits() {
    assert!(trunc_beta_mean(1e-4).unwrap() > 0.999);
    assert!((trunc_beta_mean(1e4).unwrap() - 0.5).abs() < 0.01);
}

fn inverse_cdf(alpha: f64, u: f64) -> f64 {
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if trunc_beta_cdf(alpha, mid).unwrap() < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn sampler_passes_two_sample_ks_against_inverse_cdf() {
    let alpha = 2.0;
    let n = 20_000;
    let sampler = BetaSampler::new(alpha).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut a: Vec<f64> = (0..n).map(|_| sampler.sample_theta(&mut rng)).collect();
    let mut b: Vec<f64> = (0..n).map(|_| inverse_cdf(alpha, rng.gen::<f64>())).collect();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < n && j < n {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / n as f64).abs());
    }
    // c(0.01) = sqrt(-ln(0.005) / 2)
    let crit = (-(0.005f64).ln() / 2.0).sqrt() * (2.0 / n as f64).sqrt();
    assert!(d < crit, "KS statistic {d} >= {crit}");
}

#[test]
fn sample_mean_and_variance_match_closed_form() {
    let alpha = 2.0;
    let c = coefficients(alpha).unwrap();
    let sampler = BetaSampler::new(alpha).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 1_000_000;
    let xs: Vec<f64> = (0..n).map(|_| sampler.sample_theta(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n as f64;
    assert!((mean - c.theta_bar).abs() < 4.0 * (var / n as f64).sqrt());
    assert!((var - c.sigma_sq).abs() < 4.0 * ((m4 - var * var) / n as f64).sqrt());
}

#[test]
fn moons_have_balanced_classes() {
    for seed in [0, 1, 17] {
        let ds = make_two_moons(300, 0.01, seed).unwrap();
        let ones = ds.labels().iter().filter(|&&l| l == 1).count();
        assert_eq!(ones, 150);
    }
}

#[test]
fn zero_noise_moons_are_not_linearly_separable() {
    let ds = make_two_moons(300, 0.0, 3).unwrap();
    let labels = ds.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut best: f64 = 0.0;
    for _ in 0..10_000 {
        let w: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let b: f64 = rng.gen_range(-2.0..2.0);
        let hits = (0..ds.len())
            .filter(|&i| {
                let x = ds.x(i);
                usize::from(w[0] * x[0] + w[1] * x[1] + b > 0.0) == labels[i]
            })
            .count();
        let acc = hits as f64 / ds.len() as f64;
        best = best.max(acc.max(1.0 - acc));
    }
    assert!(best < 1.0, "best linear accuracy {best}");
}

#[test]
fn stats_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = DMatrix::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DMatrix::from_fn(5, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let ds = Dataset::new(x.clone(), y.clone()).unwrap();
    let s = ds.stats();
    for a in 0..3 {
        for b in 0..2 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..5 {
                mx += x[(i, a)] / 5.0;
                my += y[(i, b)] / 5.0;
            }
            let mut cov = 0.0;
            for i in 0..5 {
                cov += (x[(i, a)] - mx) * (y[(i, b)] - my) / 5.0;
            }
            assert!((s.sxy[(a, b)] - cov).abs() < 1e-12);
            assert!((s.x_mean[a] - mx).abs() < 1e-12);
        }
    }
}

#[test]
fn rff_matches_straight_line_formula() {
    let mut m = init_rff(3, 40, 2.0, 2, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    m.w = DMatrix::from_fn(2, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
    let u = m.predict(&x);
    for k in 0..2 {
        let mut acc = 0.0;
        for r in 0..40 {
            let z = m.s[(r, 0)] * x[0] + m.s[(r, 1)] * x[1] + m.s[(r, 2)] * x[2] + m.b[r];
            acc += m.w[(k, r)] * z.cos();
        }
        assert!((u[k] - acc / 40f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn ece_three_bin_hand_case() {
    let e = ece(&[0.6, 0.6, 0.9, 0.9], &[true, false, true, true], 3).unwrap();
    assert!((e - 0.10).abs() < 1e-12);
}

#[test]
fn ci_matches_scipy_t_interval() {
    let (m, h) = mean_ci95(&[0.81, 0.85, 0.79, 0.88, 0.83]).unwrap();
    assert!((m - 0.832).abs() < 1e-12);
    assert!((h.unwrap() - 0.043_369_458_966_087_46).abs() < 1e-9);
    let (_, h) = mean_ci95(&[1.0, 2.0]).unwrap();
    assert!((h.unwrap() - 6.353_102_368_216_048).abs() < 1e-8);
    assert_eq!(mean_ci95(&[0.5]).unwrap(), (0.5, None));
}

#[test]
fn least_squares_mixup_risk_matches_closed_form_by_monte_carlo() {
    // (1/n)Σ ½|r_λ|² over mixed pairs equals 2E[λ²]·mean ½|yᵢ − W xᵢ − b̄|² + ½|b − b̄|², b̄ = ȳ − W x̄
    let x = DMatrix::from_column_slice(4, 1, &[-1.0, 0.0, 1.5, 3.0]);
    let y = DMatrix::from_column_slice(4, 1, &[0.5, -0.2, 1.0, 2.5]);
    let ds = Dataset::new(x, y).unwrap();
    let w = DMatrix::from_element(1, 1, 0.6);
    let b = DVector::from_element(1, -0.3);
    let lin = LinearModel::new(w.clone(), b.clone()).unwrap();
    let alpha = 1.0;
    let s = ds.stats();
    let bbar = &s.y_mean - &w * &s.x_mean;
    let mut fit = 0.0;
    for i in 0..4 {
        let r = ds.y(i) - &w * ds.x(i) - &bbar;
        fit += 0.5 * r.norm_squared() / 4.0;
    }
    let m2 = (alpha + 1.0) / (2.0 * (2.0 * alpha + 1.0));
    let closed = 2.0 * m2 * fit + 0.5 * (&b - &bbar).norm_squared();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let est = mixup_risk_mc(&ds, &lin, LossKind::SquaredError, alpha, 1_000_000, &mut rng).unwrap();
    assert!((est.mean - closed).abs() < 4.0 * est.stderr, "{} vs {closed} (se {})", est.mean, est.stderr);
}

#[test]
fn erm_full_batch_reaches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 20;
    let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DMatrix::from_fn(n, 1, |i, _| 0.7 * x[(i, 0)] - 1.2 * x[(i, 1)] + 0.4 + 0.1 * rng.sample::<f64, _>(StandardNormal));
    let ds = Dataset::new(x.clone(), y.clone()).unwrap();
    let cfg = TrainConfig {
        method: Method::Erm,
        epochs: 10_000,
        batch_size: n,
        step_size: 0.1,
        model: ModelSpec::Linear,
        loss: LossKind::SquaredError,
        ..TrainConfig::default()
    };
    let (model, _) = train_model(Model::Linear(LinearModel::zeros(2, 1)), &ds, &ds, &cfg).unwrap();
    let mut a = DMatrix::from_element(n, 3, 1.0);
    a.view_mut((0, 0), (n, 2)).copy_from(&x);
    let ols = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &y));
    let Model::Linear(lin) = model else { panic!("linear model expected") };
    let got = DVector::from_vec(vec![lin.w[(0, 0)], lin.w[(0, 1)], lin.b[0]]);
    assert!((got - ols.column(0)).norm() < 1e-4);
}

fn fd_check<P: Predictor + Sync + Clone>(model: &P, ds: &Dataset, kind: LossKind, drop_r2: bool, tol: f64) {
    let c = coefficients(1.0).unwrap();
    let prep = prepare(ds, &c).unwrap();
    let idx: Vec<usize> = (0..ds.len()).collect();
    let (_, g) = approx_objective_grad(model, kind, &prep, &idx, drop_r2).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
    let p0 = model.params();
    let h = 1e-5;
    for k in 0..p0.len() {
        let eval = |delta: f64| {
            let mut m = model.clone();
            let mut p = p0.clone();
            p[k] += delta;
            m.set_params(&p).unwrap();
            approx_mixup_objective(ds, &m, kind, &c, drop_r2).unwrap()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        assert!((g[k] - fd).abs() <= tol * fd.abs().max(1.0), "param {k}: {} vs {fd}", g[k]);
    }
}

#[test]
fn approximate_objective_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = DMatrix::from_fn(8, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DMatrix::from_fn(8, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let se = Dataset::new(x, y).unwrap();
    let lin = LinearModel::new(DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)), DVector::from_vec(vec![0.2, -0.1])).unwrap();
    fd_check(&lin, &se, LossKind::SquaredError, true, 1e-8);

    let moons = make_two_moons(10, 0.1, 2).unwrap();
    let rff = init_rff(2, 20, 1.5, 2, 3).unwrap();
    fd_check(&rff, &moons, LossKind::CrossEntropy, true, 1e-6);
}

#[test]
fn cross_entropy_blocks_match_differences_at_c3() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let y = {
            let v = DVector::from_fn(3, |_, _| rng.gen_range(0.05..1.0));
            let s = v.sum();
            v / s
        };
        let u = DVector::from_fn(3, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let b = loss::bundle(LossKind::CrossEntropy, &y, &u).unwrap();
        let h = 1e-5;
        for k in 0..3 {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (loss::value(LossKind::CrossEntropy, &y, &up).unwrap()
                - loss::value(LossKind::CrossEntropy, &y, &dn).unwrap())
                / (2.0 * h);
            assert!((b.grad_u[k] - fd).abs() < 1e-6);
            let gp = loss::bundle(LossKind::CrossEntropy, &y, &up).unwrap().grad_u;
            let gm = loss::bundle(LossKind::CrossEntropy, &y, &dn).unwrap().grad_u;
            for a in 0..3 {
                assert!((b.hess_uu[(a, k)] - (gp[a] - gm[a]) / (2.0 * h)).abs() < 1e-6);
            }
        }
    }
}
