//! Checks of the perturbed-ERM rewrite, the perturbation covariances, the quadratic
//! regularizer decomposition and its three specializations, and the
//! closed-form least-squares Mixup risk.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::quadrature::trunc_beta_expectation;
use super::{gaussian_matrix, gaussian_vector, random_dataset, CheckReport, Mutation};
use crate::beta_moments::{coefficients, BetaSampler, MixCoefficients};
use crate::dataset::{make_two_moons, Dataset};
use crate::error::Result;
use crate::linalg::{outer, rel_err};
use crate::loss::{self, LossKind};
use crate::mixup::{mixup_summand, perturbation, perturbed_summand, risk_mc_parallel_with, shrunk_pair, RiskForm};
use crate::model::{init_rff, LinearModel, Model, Predictor, RffModel};
use crate::regularization::{
    exact_second_moments, per_example_covariances, r_terms_ce, r_terms_general, r_terms_lr, r_terms_se,
    PerExampleCovariances, RegularizerBreakdown, TaylorPoint,
};

pub const PER_DRAW_TOL: f64 = 1e-12;
pub const SIGMA_TOL: f64 = 4.0;
pub const COVARIANCE_TOL: f64 = 1e-10;
pub const COVARIANCE_MC_TOL: f64 = 0.01;
pub const DECOMPOSITION_TOL: f64 = 1e-7;
pub const REGULARIZER_TOL: f64 = 1e-10;
pub const LEAST_SQUARES_GRAD_TOL: f64 = 1e-6;
pub const LEAST_SQUARES_AFFINE_TOL: f64 = 1e-7;
pub const TAYLOR_RATIO_TOL: f64 = 1.0 / 6.0;

/// RFF model with a Gaussian head so that losses and derivatives are
/// non-trivial.
pub fn rff_with_head(d: usize, m: usize, sigma_rff: f64, c: usize, seed: u64) -> Result<RffModel> {
    let mut model = init_rff(d, m, sigma_rff, c, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    model.w = gaussian_matrix(&mut rng, c, m, 2.0);
    Ok(model)
}

/// Two-moons inputs with targets adapted to the loss: one-hot for CE and SE,
/// the scalar class indicator for the logistic loss.
pub fn moons_for(kind: LossKind, n: usize, seed: u64) -> Result<Dataset> {
    let ds = make_two_moons(n, 0.1, seed)?;
    match kind {
        LossKind::Logistic => ds.to_binary_scalar(),
        _ => Ok(ds),
    }
}

/// Per-draw identity between the Mixup summand and the perturbed summand,
/// the paired Monte-Carlo estimators, and the zero mean of `(δ, ε)`.
pub fn check_perturbed_erm(seed: u64, mutation: Mutation) -> Result<Vec<CheckReport>> {
    let kind = LossKind::CrossEntropy;
    let ds = make_two_moons(50, 0.1, seed)?;
    let model = rff_with_head(2, 100, 2.0, 2, seed)?;
    let truth = coefficients(1.0)?;
    let imp = mutation.coefficients(&truth);
    let sampler = BetaSampler::new(truth.alpha)?;
    let n = ds.len();
    let mut out = Vec::new();

    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let draws = 100_000;
    for _ in 0..draws {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let theta = sampler.sample_theta(&mut rng);
        let a = mixup_summand(&ds, &model, kind, i, j, theta)?;
        let b = perturbed_summand(&ds, &model, kind, &imp, &perturbation(&ds, &imp, i, j, theta))?;
        worst = worst.max((a - b).abs());
    }
    out.push(CheckReport::new(
        "perturbed_erm.per_draw",
        worst,
        PER_DRAW_TOL,
        t,
        format!("max |mixup - perturbed| summand over {draws} draws, RFF+CE two-moons n=50"),
    ));

    let t = Instant::now();
    let draws = 1_000_000;
    let workers = 8;
    let a = risk_mc_parallel_with(&ds, &model, kind, &truth, draws, seed, workers, RiskForm::Mixup)?;
    let b = risk_mc_parallel_with(&ds, &model, kind, &imp, draws, seed + 1000, workers, RiskForm::PerturbedErm)?;
    let z = (a.mean - b.mean).abs() / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    out.push(CheckReport::new(
        "perturbed_erm.estimators",
        z,
        SIGMA_TOL,
        t,
        format!("|difference| in combined std errors; mixup {:.6} vs perturbed {:.6}, {draws} draws each", a.mean, b.mean),
    ));

    let t = Instant::now();
    let draws = 1_000_000;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let i = rng.gen_range(0..n);
        let dim = ds.input_dim() + ds.output_dim();
        let (mut sum, mut sum_sq) = (DVector::zeros(dim), DVector::zeros(dim));
        for _ in 0..draws {
            let theta = sampler.sample_theta(&mut rng);
            let j = rng.gen_range(0..n);
            let p = perturbation(&ds, &imp, i, j, theta);
            let v = DVector::from_iterator(dim, p.delta.iter().chain(p.epsilon.iter()).copied());
            sum_sq += v.component_mul(&v);
            sum += v;
        }
        let m = draws as f64;
        for k in 0..dim {
            let mean = sum[k] / m;
            let se = ((sum_sq[k] / m - mean * mean).max(0.0) / (m - 1.0)).sqrt();
            worst = worst.max(if se > 0.0 { mean.abs() / se } else { mean.abs() * f64::INFINITY });
        }
    }
    out.push(CheckReport::new(
        "perturbed_erm.zero_mean",
        worst,
        SIGMA_TOL,
        t,
        format!("max |mean| / stderr over components of (delta, epsilon), 5 indices x {draws} draws"),
    ));
    Ok(out)
}

fn stacked(c: &PerExampleCovariances) -> DMatrix<f64> {
    let (d, k) = (c.sxx.nrows(), c.syy.nrows());
    let mut m = DMatrix::zeros(d + k, d + k);
    m.view_mut((0, 0), (d, d)).copy_from(&c.sxx);
    m.view_mut((d, d), (k, k)).copy_from(&c.syy);
    m.view_mut((0, d), (d, k)).copy_from(&c.sxy);
    m.view_mut((d, 0), (k, d)).copy_from(&c.syx());
    m
}

/// Monte-Carlo second moments of `(δᵢ, εᵢ)` as one stacked matrix.
pub fn mc_second_moments(ds: &Dataset, coeffs: &MixCoefficients, i: usize, draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = BetaSampler::new(coeffs.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = ds.input_dim() + ds.output_dim();
    let mut acc = DMatrix::zeros(dim, dim);
    for _ in 0..draws {
        let theta = sampler.sample_theta(&mut rng);
        let j = rng.gen_range(0..ds.len());
        let p = perturbation(ds, coeffs, i, j, theta);
        let v = DVector::from_iterator(dim, p.delta.iter().chain(p.epsilon.iter()).copied());
        acc += outer(&v, &v);
    }
    Ok(acc / draws as f64)
}

/// Closed-form covariances against the direct expansion and against sampling.
pub fn check_covariance(seed: u64, mutation: Mutation) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, d, c) = (rng.gen_range(3..15), rng.gen_range(1..5), rng.gen_range(1..4));
        let ds = random_dataset(&mut rng, n, d, c, LossKind::SquaredError)?;
        let truth = coefficients(rng.gen_range(0.1..5.0))?;
        let imp = mutation.coefficients(&truth);
        for i in 0..n {
            let a = stacked(&per_example_covariances(&ds, &imp, i)?);
            let b = stacked(&exact_second_moments(&ds, &truth, i)?);
            worst = worst.max(rel_err(&a, &b, 1e-300));
        }
    }
    out.push(CheckReport::new(
        "covariance.exact",
        worst,
        COVARIANCE_TOL,
        t,
        "max relative Frobenius error vs direct expansion, 20 random datasets, all indices",
    ));

    let t = Instant::now();
    let ds = make_two_moons(20, 0.1, seed)?;
    let truth = coefficients(1.0)?;
    let imp = mutation.coefficients(&truth);
    let draws = 1_000_000;
    let mc = mc_second_moments(&ds, &truth, 3, draws, seed + 7)?;
    let closed = stacked(&per_example_covariances(&ds, &imp, 3)?);
    out.push(CheckReport::new(
        "covariance.monte_carlo",
        rel_err(&closed, &mc, 1e-300),
        COVARIANCE_MC_TOL,
        t,
        format!("relative Frobenius error vs {draws}-draw sample moments, two-moons n=20, i=3"),
    ));

    let t = Instant::now();
    let two = Dataset::new(DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]), DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]))?;
    let v = per_example_covariances(&two, &imp, 1)?.sxx[(0, 0)];
    out.push(CheckReport::new(
        "covariance.hand_value",
        (v - 5.0 / 48.0).abs() / (5.0 / 48.0),
        1e-12,
        t,
        format!("relative error; inputs {{-1, +1}}, alpha = 1: got {v:.12}, expected 5/48"),
    ));
    Ok(out)
}

/// `E_{θ,j}[ℓ_Q]` averaged over `i`, with the sum over `j` done exactly and
/// the expectation over `θ` by quadrature.
pub fn exact_quadratic_risk<P: Predictor + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    coeffs: &MixCoefficients,
) -> Result<(f64, bool)> {
    let n = ds.len();
    let mut total = 0.0;
    let mut converged = true;
    for i in 0..n {
        let (xt, yt) = shrunk_pair(ds, coeffs.theta_bar, i);
        let tp = TaylorPoint::new(model, kind, &xt, &yt)?;
        let q = trunc_beta_expectation(coeffs.alpha, |theta| {
            (0..n)
                .map(|j| {
                    let p = perturbation(ds, coeffs, i, j, theta);
                    tp.eval(&p.delta, &p.epsilon)
                })
                .sum::<f64>()
                / n as f64
        })?;
        converged &= q.converged;
        total += q.value;
    }
    Ok((total / n as f64, converged))
}

fn decomposition_case(name: &str, ds: &Dataset, model: &Model, kind: LossKind, truth: &MixCoefficients, mutation: Mutation) -> Result<CheckReport> {
    let t = Instant::now();
    let (oracle, converged) = exact_quadratic_risk(ds, model, kind, truth)?;
    let b = mutation.breakdown(r_terms_general(ds, model, kind, &mutation.coefficients(truth))?);
    let disc = (oracle - b.total).abs() / oracle.abs().max(1.0);
    let details = format!(
        "quadrature E[l_Q] {oracle:.12} vs decomposition {:.12}{}",
        b.total,
        if converged { "" } else { " (quadrature not converged)" }
    );
    Ok(CheckReport::new(name, if converged { disc } else { f64::NAN }, DECOMPOSITION_TOL, t, details))
}

/// Decomposition total against the exact expectation of the quadratic loss
/// on n = 10 two-moons points.
pub fn check_decomposition(seed: u64, mutation: Mutation) -> Result<Vec<CheckReport>> {
    let truth = coefficients(1.0)?;
    let mut out = Vec::new();
    let ce = Model::Rff(rff_with_head(2, 100, 2.0, 2, seed)?);
    out.push(decomposition_case("decomposition.rff_ce", &moons_for(LossKind::CrossEntropy, 10, seed)?, &ce, LossKind::CrossEntropy, &truth, mutation)?);
    let lr = Model::Rff(rff_with_head(2, 100, 2.0, 1, seed + 1)?);
    out.push(decomposition_case("decomposition.rff_logistic", &moons_for(LossKind::Logistic, 10, seed)?, &lr, LossKind::Logistic, &truth, mutation)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lin = Model::Linear(LinearModel::new(gaussian_matrix(&mut rng, 2, 2, 1.0), gaussian_vector(&mut rng, 2, 1.0))?);
    out.push(decomposition_case("decomposition.linear_se", &moons_for(LossKind::SquaredError, 10, seed)?, &lin, LossKind::SquaredError, &truth, mutation)?);
    Ok(out)
}

fn term_gap(a: &RegularizerBreakdown, b: &RegularizerBreakdown) -> f64 {
    [
        (a.erm_modified, b.erm_modified),
        (a.r1, b.r1),
        (a.r2, b.r2),
        (a.r3, b.r3),
        (a.r4, b.r4),
        (a.total, b.total),
    ]
    .iter()
    .map(|&(x, y)| (x - y).abs() / x.abs().max(1.0))
    .fold(0.0, f64::max)
}

/// Specialized loss paths against the general formulas, term by term.
pub fn check_corollaries(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs = 20;
    for (name, kind, c) in [
        ("regularizers.ce", LossKind::CrossEntropy, 3),
        ("regularizers.logistic", LossKind::Logistic, 1),
        ("regularizers.se", LossKind::SquaredError, 2),
    ] {
        let t = Instant::now();
        let mut worst: f64 = 0.0;
        let mut side: f64 = 0.0;
        for k in 0..configs {
            let (n, d) = (rng.gen_range(5..13), rng.gen_range(2..4));
            let ds = random_dataset(&mut rng, n, d, c, kind)?;
            let coeffs = coefficients(rng.gen_range(0.2..4.0))?;
            let linear = kind == LossKind::SquaredError && k % 2 == 0;
            let model = if linear {
                Model::Linear(LinearModel::new(gaussian_matrix(&mut rng, c, d, 1.0), gaussian_vector(&mut rng, c, 1.0))?)
            } else {
                Model::Rff(rff_with_head(d, 40, rng.gen_range(0.5..3.0), c, rng.gen())?)
            };
            let general = r_terms_general(&ds, &model, kind, &coeffs)?;
            let special = match kind {
                LossKind::CrossEntropy => r_terms_ce(&ds, &model, &coeffs)?,
                LossKind::Logistic => r_terms_lr(&ds, &model, &coeffs)?,
                LossKind::SquaredError => r_terms_se(&ds, &model, &coeffs)?,
            };
            worst = worst.max(term_gap(&general, &special));
            match kind {
                LossKind::CrossEntropy => side = side.max(general.r4.abs()).max(special.r4.abs()),
                LossKind::SquaredError if linear => side = side.max(general.r2.abs()).max(special.r2.abs()),
                _ => {}
            }
        }
        out.push(CheckReport::new(
            name,
            worst,
            REGULARIZER_TOL,
            t,
            format!("max relative term gap, specialized vs general, {configs} random configurations"),
        ));
        let t = Instant::now();
        match kind {
            LossKind::CrossEntropy => out.push(CheckReport::new("regularizers.ce_r4_zero", side, 0.0, t, "max |R4| under cross-entropy")),
            LossKind::SquaredError => {
                out.push(CheckReport::new("regularizers.se_linear_r2_zero", side, 0.0, t, "max |R2| for linear models, squared error"))
            }
            LossKind::Logistic => {}
        }
    }
    Ok(out)
}

/// `E[λ²]` for `λ ~ Beta(α, α)` (the mean is 1/2).
pub fn beta_second_moment(alpha: f64) -> f64 {
    (alpha + 1.0) / (2.0 * (2.0 * alpha + 1.0))
}

/// `[x; 1]`.
fn augment(x: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, x.iter().copied().chain(std::iter::once(1.0)))
}

/// Exact Mixup risk of `u = Θ[x; 1]` under the squared error, by summing
/// over all pairs with the first two moments of `λ ~ Beta(α, α)`; returns
/// the value and its gradient with respect to `Θ`.
pub fn exact_mixup_risk_se_linear(ds: &Dataset, theta: &DMatrix<f64>, alpha: f64) -> (f64, DMatrix<f64>) {
    let n = ds.len();
    let m2 = beta_second_moment(alpha);
    let m11 = 0.5 - m2;
    let a: Vec<DVector<f64>> = (0..n).map(|i| augment(&ds.x(i))).collect();
    let r: Vec<DVector<f64>> = (0..n).map(|i| ds.y(i) - theta * &a[i]).collect();
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(theta.nrows(), theta.ncols());
    for i in 0..n {
        for j in 0..n {
            // E‖λrᵢ + (1−λ)rⱼ‖² with E λ² = E(1−λ)² = m2 and E λ(1−λ) = m11
            value += 0.5 * (m2 * (r[i].norm_squared() + r[j].norm_squared()) + 2.0 * m11 * r[i].dot(&r[j]));
            grad -= (outer(&r[i], &a[i]) + outer(&r[j], &a[j])) * m2
                + (outer(&r[i], &a[j]) + outer(&r[j], &a[i])) * m11;
        }
    }
    let nn = (n * n) as f64;
    (value / nn, grad / nn)
}

/// Closed-form multivariate least squares on centered data, as `[W | b]`.
/// The second value counts eigenvalues of `Σxx` dropped by the
/// pseudo-inverse.
pub fn mixup_least_squares(ds: &Dataset) -> (DMatrix<f64>, usize) {
    let s = ds.stats();
    let spec = crate::linalg::SymSpectral::new(&s.sxx);
    let w = s.syx() * &spec.pinv;
    let b = &s.y_mean - &w * &s.x_mean;
    let mut theta = DMatrix::zeros(w.nrows(), w.ncols() + 1);
    theta.view_mut((0, 0), (w.nrows(), w.ncols())).copy_from(&w);
    theta.set_column(w.ncols(), &b);
    (theta, spec.truncated)
}

/// Coefficient of the mean least-squares loss in the exact Mixup risk of a
/// linear model, `2σ² + θ̄² + (1 − θ̄)²`.
pub fn least_squares_coefficient(c: &MixCoefficients) -> f64 {
    2.0 * c.sigma_sq + c.theta_bar.powi(2) + (1.0 - c.theta_bar).powi(2)
}

/// Nominal coefficient `(2σ² + 2θ̄² + (1 − θ̄)²)/2`.
pub fn nominal_least_squares_coefficient(c: &MixCoefficients) -> f64 {
    (2.0 * c.sigma_sq + 2.0 * c.theta_bar.powi(2) + (1.0 - c.theta_bar).powi(2)) / 2.0
}

/// Mean least-squares loss at `W` with the intercept replaced by `b̄` and
/// the offset `b − b̄`.
fn probe_terms(ds: &Dataset, theta: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let d = ds.input_dim();
    let w = theta.columns(0, d).into_owned();
    let b = theta.column(d).into_owned();
    let s = ds.stats();
    let bbar = &s.y_mean - &w * &s.x_mean;
    let n = ds.len();
    let mean = (0..n).map(|i| 0.5 * (ds.y(i) - (&w * ds.x(i) + &bbar)).norm_squared()).sum::<f64>() / n as f64;
    (mean, b - bbar)
}

/// Largest deviation from the best constant offset.
fn affine_residual(lhs: &[f64], rhs: &[f64]) -> (f64, f64) {
    let gaps: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
    let c = gaps.iter().sum::<f64>() / gaps.len() as f64;
    (gaps.iter().map(|g| (g - c).abs()).fold(0.0, f64::max), c)
}

/// Least-squares check on a random 20×3 → 2 regression problem.
pub fn check_least_squares(seed: u64, mutation: Mutation) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = random_dataset(&mut rng, 20, 3, 2, LossKind::SquaredError)?;
    let alpha = 1.0;
    let truth = coefficients(alpha)?;
    let imp = mutation.coefficients(&truth);

    let t = Instant::now();
    let (theta, truncated) = mixup_least_squares(&ds);
    let (_, g) = exact_mixup_risk_se_linear(&ds, &theta, alpha);
    out.push(CheckReport::new(
        "least_squares.gradient",
        g.norm(),
        LEAST_SQUARES_GRAD_TOL,
        t,
        format!("norm of the exact Mixup risk gradient at least squares ({truncated} eigenvalues truncated)"),
    ));

    let t = Instant::now();
    let mut exact = Vec::new();
    let mut derived = Vec::new();
    let mut nominal = Vec::new();
    for _ in 0..3 {
        let probe = gaussian_matrix(&mut rng, 2, 4, 1.0);
        let (mean_loss, off) = probe_terms(&ds, &probe);
        exact.push(exact_mixup_risk_se_linear(&ds, &probe, alpha).0);
        derived.push(least_squares_coefficient(&imp) * mean_loss + 0.5 * off.norm_squared());
        nominal.push(nominal_least_squares_coefficient(&imp) * mean_loss + off.norm_squared());
    }
    let scale = exact.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    let (res, c) = affine_residual(&exact, &derived);
    let (res_nominal, _) = affine_residual(&exact, &nominal);
    out.push(CheckReport::new(
        "least_squares.affine",
        res / scale,
        LEAST_SQUARES_AFFINE_TOL,
        t,
        format!(
            "coefficient {:.6}, penalty 0.5|b - bbar|^2, fitted C = {c:.3e}; nominal form ({:.6}, |b - bbar|^2) residual {:.3e} (info)",
            least_squares_coefficient(&imp),
            nominal_least_squares_coefficient(&imp),
            res_nominal / scale
        ),
    ));
    Ok(out)
}

/// `|ℓ − ℓ_Q|` along a fixed direction at perturbation scale `s`.
pub fn taylor_residual<P: Predictor + ?Sized>(
    model: &P,
    kind: LossKind,
    x: &DVector<f64>,
    y: &DVector<f64>,
    delta: &DVector<f64>,
    epsilon: &DVector<f64>,
    s: f64,
) -> Result<f64> {
    let tp = TaylorPoint::new(model, kind, x, y)?;
    let (d, e) = (delta * s, epsilon * s);
    let exact = loss::value(kind, &(y + &e), &model.predict(&(x + &d)))?;
    Ok((exact - tp.eval(&d, &e)).abs())
}

/// Cubic decay of the Taylor remainder, exactness for least squares on a
/// linear model, and a zero residual without perturbation.
pub fn check_taylor(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = coefficients(1.0)?;
    let ds = make_two_moons(20, 0.1, seed)?;
    let model = rff_with_head(2, 100, 3.0, 2, seed)?;

    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for i in 0..5 {
        let (x, y) = shrunk_pair(&ds, coeffs.theta_bar, i);
        let delta = gaussian_vector(&mut rng, 2, 1.0).normalize();
        let mut epsilon = gaussian_vector(&mut rng, 2, 1.0);
        // keep targets on the simplex
        epsilon.add_scalar_mut(-epsilon.mean());
        let big = taylor_residual(&model, LossKind::CrossEntropy, &x, &y, &delta, &epsilon, 1e-2)?;
        let small = taylor_residual(&model, LossKind::CrossEntropy, &x, &y, &delta, &epsilon, 5e-3)?;
        worst = worst.max(small / big);
        zero = zero.max(taylor_residual(&model, LossKind::CrossEntropy, &x, &y, &delta, &epsilon, 0.0)?);
    }
    out.push(CheckReport::new(
        "taylor.cubic_decay",
        worst,
        TAYLOR_RATIO_TOL,
        t,
        "max residual ratio r(5e-3)/r(1e-2) over 5 points, RFF+CE (1/ratio >= 6 required; 1/8 for a cubic)",
    ));
    let t = Instant::now();
    out.push(CheckReport::new("taylor.zero_perturbation", zero, 0.0, t, "residual at (delta, epsilon) = 0"));

    let t = Instant::now();
    let lin = LinearModel::new(gaussian_matrix(&mut rng, 2, 2, 1.0), gaussian_vector(&mut rng, 2, 1.0))?;
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let (x, y) = shrunk_pair(&ds, coeffs.theta_bar, i);
        let delta = gaussian_vector(&mut rng, 2, 1.0);
        let epsilon = gaussian_vector(&mut rng, 2, 1.0);
        worst = worst.max(taylor_residual(&lin, LossKind::SquaredError, &x, &y, &delta, &epsilon, 1.0)?);
    }
    out.push(CheckReport::new("taylor.se_linear_exact", worst, 1e-10, t, "max |l - l_Q| for unit-scale perturbations"));
    Ok(out)
}
