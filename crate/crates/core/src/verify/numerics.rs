//! Moment, derivative and rescaled-prediction checks.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::quadrature::trunc_beta_expectation;
use super::theory::rff_with_head;
use super::{gaussian_matrix, gaussian_vector, simplex_vector, CheckReport};
use crate::beta_moments::trunc_beta_raw_moment;
use crate::dataset::make_two_moons;
use crate::error::Result;
use crate::evaluate::rescaled_predict;
use crate::linalg::rel_err;
use crate::loss::{self, LossKind};
use crate::model::{LinearModel, Predictor};

pub const MOMENT_TOL: f64 = 1e-8;
pub const FD_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-5;

/// Log-spaced grid on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp()).collect()
}

/// Closed-form truncated-Beta moments against quadrature, and monotonicity
/// of the mean.
pub fn check_beta_moments() -> Result<Vec<CheckReport>> {
    let t = Instant::now();
    let grid = log_grid(0.05, 20.0, 25);
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    let mut means = Vec::with_capacity(grid.len());
    for &a in &grid {
        for k in [1, 2] {
            let closed = trunc_beta_raw_moment(a, k)?;
            let q = trunc_beta_expectation(a, |t| t.powi(k as i32))?;
            unconverged += usize::from(!q.converged);
            worst = worst.max((closed - q.value).abs() / q.value.abs());
            if k == 1 {
                means.push(closed);
            }
        }
    }
    let mut out = vec![CheckReport::new(
        "beta.moments",
        if unconverged == 0 { worst } else { f64::NAN },
        MOMENT_TOL,
        t,
        format!("max relative error of E[t], E[t^2] vs quadrature on 25 log-spaced alpha in [0.05, 20]; {unconverged} unconverged"),
    )];
    let t = Instant::now();
    let violations = means.windows(2).filter(|w| w[1] >= w[0]).count();
    out.push(CheckReport::new("beta.mean_decreasing", violations as f64, 0.0, t, "non-decreasing steps of the mean on the grid"));
    Ok(out)
}

fn central<F: Fn(&DVector<f64>) -> DVector<f64>>(f: F, at: &DVector<f64>) -> DMatrix<f64> {
    // column k holds ∂f/∂z_k
    let m = f(at).len();
    let mut out = DMatrix::zeros(m, at.len());
    for k in 0..at.len() {
        let (mut a, mut b) = (at.clone(), at.clone());
        a[k] += FD_STEP;
        b[k] -= FD_STEP;
        out.set_column(k, &((f(&a) - f(&b)) / (2.0 * FD_STEP)));
    }
    out
}

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn random_target<R: Rng + ?Sized>(rng: &mut R, kind: LossKind, c: usize) -> DVector<f64> {
    match kind {
        LossKind::SquaredError => gaussian_vector(rng, c, 1.0),
        LossKind::CrossEntropy => simplex_vector(rng, c),
        LossKind::Logistic => scalar(rng.gen_range(0.0..1.0)),
    }
}

/// Worst relative error of every loss derivative block over `points`
/// random `(y, u)` per loss.
pub fn loss_derivative_error(seed: u64, points: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for kind in [LossKind::SquaredError, LossKind::CrossEntropy, LossKind::Logistic] {
        let c = if kind == LossKind::Logistic { 1 } else { 3 };
        for _ in 0..points {
            let y = random_target(&mut rng, kind, c);
            let u = gaussian_vector(&mut rng, c, 2.0);
            let b = loss::bundle(kind, &y, &u)?;
            let val_u = |v: &DVector<f64>| scalar(loss::value(kind, &y, v).unwrap());
            let val_y = |v: &DVector<f64>| scalar(loss::value(kind, v, &u).unwrap());
            let gu_u = |v: &DVector<f64>| loss::bundle(kind, &y, v).unwrap().grad_u;
            let gu_y = |v: &DVector<f64>| loss::bundle(kind, v, &u).unwrap().grad_u;
            let gy_y = |v: &DVector<f64>| loss::bundle(kind, v, &u).unwrap().grad_y;
            let pairs = [
                (DMatrix::from_column_slice(1, c, b.grad_u.as_slice()), central(val_u, &u)),
                (DMatrix::from_column_slice(1, c, b.grad_y.as_slice()), central(val_y, &y)),
                (b.hess_uu.clone(), central(gu_u, &u)),
                // entry (a, b) of hess_yu is ∂²ℓ/∂y_a∂u_b
                (b.hess_yu.clone(), central(gu_y, &y).transpose()),
                (b.hess_yy.clone(), central(gy_y, &y)),
            ];
            for (analytic, fd) in &pairs {
                worst = worst.max(rel_err(analytic, fd, 1.0));
            }
        }
    }
    Ok(worst)
}

fn model_errors<P: Predictor + Clone, R: Rng + ?Sized>(m: &P, rng: &mut R, points: usize) -> Result<(f64, f64, f64)> {
    let d = m.input_dim();
    let (mut jw, mut hw, mut pw): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..points {
        let x = gaussian_vector(rng, d, 0.7);
        jw = jw.max(rel_err(&m.input_jacobian(&x), &central(|z| m.predict(z), &x), 1.0));
        for (k, hk) in m.input_hessian(&x).iter().enumerate() {
            let fd = central(|z| m.input_jacobian(z).row(k).transpose(), &x);
            hw = hw.max(rel_err(hk, &fd, 1.0));
        }
        let y = simplex_vector(rng, m.output_dim());
        let g = m.param_gradient(LossKind::CrossEntropy, &x, &y)?;
        let f = |p: &DVector<f64>| {
            let mut mm = m.clone();
            mm.set_params(p).expect("parameter length is preserved");
            scalar(loss::value(LossKind::CrossEntropy, &y, &mm.predict(&x)).expect("shapes match"))
        };
        let fd = central(f, &m.params());
        pw = pw.max(rel_err(&DMatrix::from_column_slice(1, g.len(), g.as_slice()), &fd, 1.0));
    }
    Ok((jw, hw, pw))
}

/// Worst relative errors of input Jacobians, input Hessians and parameter
/// gradients over a linear and an RFF model.
pub fn model_derivative_error(seed: u64, points: usize) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lin = LinearModel::new(gaussian_matrix(&mut rng, 2, 3, 1.0), gaussian_vector(&mut rng, 2, 1.0))?;
    let rff = rff_with_head(3, 50, 3.0, 2, seed)?;
    let a = model_errors(&lin, &mut rng, points)?;
    let b = model_errors(&rff, &mut rng, points)?;
    Ok((a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)))
}

pub fn check_derivatives(seed: u64) -> Result<Vec<CheckReport>> {
    let t = Instant::now();
    let loss_err = loss_derivative_error(seed, 100)?;
    let mut out = vec![CheckReport::new(
        "derivatives.loss",
        loss_err,
        FD_TOL,
        t,
        "max relative error of all loss derivative blocks vs central differences, 100 points per loss",
    )];
    let t = Instant::now();
    let (j, h, p) = model_derivative_error(seed, 100)?;
    for (name, v) in [("derivatives.jacobian", j), ("derivatives.hessian", h), ("derivatives.param_gradient", p)] {
        out.push(CheckReport::new(name, v, FD_TOL, t, "linear and RFF models, 100 random points each"));
    }
    Ok(out)
}

/// Identity at `θ̄ = 1`, the centered homogeneous case, and argmax
/// agreement with the shrunk-input prediction for balanced classes.
pub fn check_rescaled(seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = make_two_moons(300, 0.1, seed)?;
    let test = make_two_moons(300, 0.1, seed + 1)?;
    let s = train.stats();
    let rff = rff_with_head(2, 100, 3.0, 2, seed)?;
    let lin = LinearModel::new(gaussian_matrix(&mut rng, 2, 2, 1.0), gaussian_vector(&mut rng, 2, 1.0))?;

    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..test.len() {
        let x = test.x(i);
        worst = worst.max((rescaled_predict(&rff, &x, &s.x_mean, &s.y_mean, 1.0)? - rff.predict(&x)).amax());
        worst = worst.max((rescaled_predict(&lin, &x, &s.x_mean, &s.y_mean, 1.0)? - lin.predict(&x)).amax());
    }
    out.push(CheckReport::new("rescaled.identity", worst, 0.0, t, "max |rescaled - raw| at theta_bar = 1, RFF and linear"));

    let t = Instant::now();
    let hom = LinearModel::new(gaussian_matrix(&mut rng, 2, 2, 1.0), DVector::zeros(2))?;
    let z = DVector::zeros(2);
    let mut worst: f64 = 0.0;
    for i in 0..test.len() {
        let x = test.x(i);
        let raw = hom.predict(&x);
        let r = rescaled_predict(&hom, &x, &z, &z, 0.75)?;
        worst = worst.max((r - &raw).amax() / raw.amax().max(f64::MIN_POSITIVE));
    }
    out.push(CheckReport::new(
        "rescaled.centered_homogeneous",
        worst,
        4.0 * f64::EPSILON,
        t,
        "max relative |rescaled - raw|, linear b = 0, centered statistics, theta_bar = 0.75 (rounding only)",
    ));

    let t = Instant::now();
    let balanced = (s.y_mean[0] - s.y_mean[1]).abs();
    let mut mismatches = 0;
    for i in 0..test.len() {
        let x = test.x(i);
        let a = loss::softmax(&rescaled_predict(&rff, &x, &s.x_mean, &s.y_mean, 0.75)?).argmax().0;
        let shrunk = &x * 0.75 + &s.x_mean * 0.25;
        mismatches += usize::from(a != rff.predict(&shrunk).argmax().0);
    }
    out.push(CheckReport::new(
        "rescaled.balanced_argmax",
        mismatches as f64 + balanced,
        0.0,
        t,
        format!("argmax disagreements on {} test points (training classes exactly balanced)", test.len()),
    ));
    Ok(out)
}
