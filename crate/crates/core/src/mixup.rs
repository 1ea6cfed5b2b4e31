//! The Mixup risk, its rewrite as ERM on shrunk data plus zero-mean
//! perturbations, and within-minibatch Mixup pairing.
//!
//! With `θ ~ Beta_[1/2,1](α, α)` and `j ~ Unif([n])`, the perturbations are
//!
//! ```text
//! δᵢ = (θ − θ̄) xᵢ + (1 − θ) xⱼ − (1 − θ̄) x̄
//! εᵢ = (θ − θ̄) yᵢ + (1 − θ) yⱼ − (1 − θ̄) ȳ
//! ```
//!
//! so that `x̃ᵢ + δᵢ = θ xᵢ + (1 − θ) xⱼ` draw by draw.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beta_moments::{coefficients, BetaSampler, MixCoefficients};
use crate::dataset::Dataset;
use crate::error::{domain, shape, Result};
use crate::loss::{self, LossKind};
use crate::model::Predictor;

/// Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments { n: self.n + o.n, sum: self.sum + o.sum, sum_sq: self.sum_sq + o.sum_sq }
    }

    fn estimate(self) -> McEstimate {
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        McEstimate { mean, stderr: (var / n).sqrt(), draws: self.n }
    }
}

/// One draw of the structured noise for training index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDraw {
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub delta: DVector<f64>,
    pub epsilon: DVector<f64>,
}

/// `x̃ᵢ = x̄ + θ̄(xᵢ − x̄)` and `ỹᵢ`, computed on the fly.
pub fn shrunk_pair(ds: &Dataset, theta_bar: f64, i: usize) -> (DVector<f64>, DVector<f64>) {
    let s = ds.stats();
    let x = &s.x_mean + (ds.x(i) - &s.x_mean) * theta_bar;
    let y = &s.y_mean + (ds.y(i) - &s.y_mean) * theta_bar;
    (x, y)
}

/// Perturbation for a fixed `(i, j, θ)`.
pub fn perturbation(ds: &Dataset, coeffs: &MixCoefficients, i: usize, j: usize, theta: f64) -> PerturbationDraw {
    let s = ds.stats();
    let tb = coeffs.theta_bar;
    let delta = ds.x(i) * (theta - tb) + ds.x(j) * (1.0 - theta) - &s.x_mean * (1.0 - tb);
    let epsilon = ds.y(i) * (theta - tb) + ds.y(j) * (1.0 - theta) - &s.y_mean * (1.0 - tb);
    PerturbationDraw { i, j, theta, delta, epsilon }
}

fn draw_perturbation<R: Rng + ?Sized>(
    ds: &Dataset,
    coeffs: &MixCoefficients,
    sampler: &BetaSampler,
    i: usize,
    rng: &mut R,
) -> PerturbationDraw {
    let theta = sampler.sample_theta(rng);
    let j = rng.gen_range(0..ds.len());
    perturbation(ds, coeffs, i, j, theta)
}

pub fn sample_perturbation<R: Rng + ?Sized>(
    ds: &Dataset,
    coeffs: &MixCoefficients,
    i: usize,
    rng: &mut R,
) -> Result<PerturbationDraw> {
    if i >= ds.len() {
        return domain(format!("index {i} out of range for n = {}", ds.len()));
    }
    let sampler = BetaSampler::new(coeffs.alpha)?;
    Ok(draw_perturbation(ds, coeffs, &sampler, i, rng))
}

/// `ℓ(λyᵢ + (1−λ)yⱼ, f(λxᵢ + (1−λ)xⱼ))`.
pub fn mixup_summand<P: Predictor + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    i: usize,
    j: usize,
    lambda: f64,
) -> Result<f64> {
    let x = ds.x(i) * lambda + ds.x(j) * (1.0 - lambda);
    let y = ds.y(i) * lambda + ds.y(j) * (1.0 - lambda);
    loss::value(kind, &y, &model.predict(&x))
}

/// `ℓ(ỹᵢ + εᵢ, f(x̃ᵢ + δᵢ))` for a given draw.
pub fn perturbed_summand<P: Predictor + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    coeffs: &MixCoefficients,
    draw: &PerturbationDraw,
) -> Result<f64> {
    let (xt, yt) = shrunk_pair(ds, coeffs.theta_bar, draw.i);
    loss::value(kind, &(yt + &draw.epsilon), &model.predict(&(xt + &draw.delta)))
}

fn check_draws(n_draws: usize) -> Result<()> {
    if n_draws == 0 {
        return domain("need at least one Monte-Carlo draw");
    }
    Ok(())
}

/// Unbiased estimate of the Mixup risk: `(i, j)` uniform on `[n]²`,
/// `λ ~ Beta(α, α)`.
pub fn mixup_risk_mc<P: Predictor + ?Sized, R: Rng + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    alpha: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_draws(n_draws)?;
    let sampler = BetaSampler::new(alpha)?;
    let n = ds.len();
    let mut acc = Moments::default();
    for _ in 0..n_draws {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        let lambda = sampler.sample_lambda(rng);
        acc.push(mixup_summand(ds, model, kind, i, j, lambda)?);
    }
    Ok(acc.estimate())
}

/// Unbiased estimate of the perturbed-ERM form: `i` uniform, then `(θ, j)`.
pub fn perturbed_erm_risk_mc<P: Predictor + ?Sized, R: Rng + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    alpha: f64,
    n_draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_draws(n_draws)?;
    let coeffs = coefficients(alpha)?;
    let sampler = BetaSampler::new(alpha)?;
    let n = ds.len();
    let mut acc = Moments::default();
    for _ in 0..n_draws {
        let i = rng.gen_range(0..n);
        let draw = draw_perturbation(ds, &coeffs, &sampler, i, rng);
        acc.push(perturbed_summand(ds, model, kind, &coeffs, &draw)?);
    }
    Ok(acc.estimate())
}

/// Which risk form a parallel estimate targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskForm {
    Mixup,
    PerturbedErm,
}

/// Splits the draws over `workers` streams seeded `seed + w` and reduces the
/// partial sums in worker order.
#[allow(clippy::too_many_arguments)]
pub fn risk_mc_parallel<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    alpha: f64,
    n_draws: usize,
    seed: u64,
    workers: usize,
    form: RiskForm,
) -> Result<McEstimate> {
    risk_mc_parallel_with(ds, model, kind, &coefficients(alpha)?, n_draws, seed, workers, form)
}

/// As [`risk_mc_parallel`], with the shrinkage coefficients supplied by the
/// caller (`θ̄` enters the perturbed form only).
#[allow(clippy::too_many_arguments)]
pub fn risk_mc_parallel_with<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    coeffs: &MixCoefficients,
    n_draws: usize,
    seed: u64,
    workers: usize,
    form: RiskForm,
) -> Result<McEstimate> {
    check_draws(n_draws)?;
    let workers = workers.max(1).min(n_draws);
    let sampler = BetaSampler::new(coeffs.alpha)?;
    let n = ds.len();
    let parts: Result<Vec<Moments>> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let share = n_draws / workers + usize::from(w < n_draws % workers);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(w as u64));
            let mut acc = Moments::default();
            for _ in 0..share {
                let i = rng.gen_range(0..n);
                let v = match form {
                    RiskForm::Mixup => {
                        let j = rng.gen_range(0..n);
                        let lambda = sampler.sample_lambda(&mut rng);
                        mixup_summand(ds, model, kind, i, j, lambda)?
                    }
                    RiskForm::PerturbedErm => {
                        let draw = draw_perturbation(ds, coeffs, &sampler, i, &mut rng);
                        perturbed_summand(ds, model, kind, coeffs, &draw)?
                    }
                };
                acc.push(v);
            }
            Ok(acc)
        })
        .collect();
    Ok(parts?.into_iter().fold(Moments::default(), Moments::merge).estimate())
}

/// How the mixing weight is drawn within a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMode {
    #[default]
    PerPair,
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
}

/// Convex combinations `λ_r row_r + (1 − λ_r) row_{partner(r)}`.
pub fn mix_rows(
    batch_x: &DMatrix<f64>,
    batch_y: &DMatrix<f64>,
    partners: &[usize],
    lambdas: &[f64],
) -> Result<MixedBatch> {
    let b = batch_x.nrows();
    if batch_y.nrows() != b || partners.len() != b || lambdas.len() != b {
        return shape("minibatch rows, partners and lambdas must agree in length");
    }
    let mut x = batch_x.clone();
    let mut y = batch_y.clone();
    for r in 0..b {
        let (l, p) = (lambdas[r], partners[r]);
        for c in 0..x.ncols() {
            x[(r, c)] = l * batch_x[(r, c)] + (1.0 - l) * batch_x[(p, c)];
        }
        for c in 0..y.ncols() {
            y[(r, c)] = l * batch_y[(r, c)] + (1.0 - l) * batch_y[(p, c)];
        }
    }
    Ok(MixedBatch { x, y, partners: partners.to_vec(), lambdas: lambdas.to_vec() })
}

/// Pairs every row with a uniformly drawn row of the same batch and mixes
/// with `λ ~ Beta(α, α)`.
pub fn mixup_minibatch<R: Rng + ?Sized>(
    batch_x: &DMatrix<f64>,
    batch_y: &DMatrix<f64>,
    alpha: f64,
    mode: LambdaMode,
    rng: &mut R,
) -> Result<MixedBatch> {
    let b = batch_x.nrows();
    if b == 0 {
        return domain("empty minibatch");
    }
    let sampler = BetaSampler::new(alpha)?;
    let partners: Vec<usize> = (0..b).map(|_| rng.gen_range(0..b)).collect();
    let lambdas: Vec<f64> = match mode {
        LambdaMode::PerPair => (0..b).map(|_| sampler.sample_lambda(rng)).collect(),
        LambdaMode::Shared => vec![sampler.sample_lambda(rng); b],
    };
    mix_rows(batch_x, batch_y, &partners, &lambdas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_two_moons;
    use crate::model::LinearModel;

    #[test]
    fn per_draw_identity_holds() {
        let ds = make_two_moons(12, 0.2, 4).unwrap();
        let c = coefficients(0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let i = rng.gen_range(0..ds.len());
            let d = sample_perturbation(&ds, &c, i, &mut rng).unwrap();
            let (xt, yt) = shrunk_pair(&ds, c.theta_bar, i);
            let lhs = xt + &d.delta;
            let rhs = ds.x(i) * d.theta + ds.x(d.j) * (1.0 - d.theta);
            assert!((lhs - rhs).abs().max() < 1e-12);
            let lhs = yt + &d.epsilon;
            let rhs = ds.y(i) * d.theta + ds.y(d.j) * (1.0 - d.theta);
            assert!((lhs - rhs).abs().max() < 1e-12);
        }
    }

    #[test]
    fn forced_draw_at_the_mean_vanishes() {
        // third point sits exactly at the mean of the other two
        let x = DMatrix::from_row_slice(3, 1, &[-1.0, 1.0, 0.0]);
        let y = DMatrix::from_row_slice(3, 1, &[-2.0, 2.0, 0.0]);
        let ds = Dataset::new(x, y).unwrap();
        let c = coefficients(1.0).unwrap();
        let d = perturbation(&ds, &c, 2, 2, c.theta_bar);
        assert!(d.delta.abs().max() < 1e-15 && d.epsilon.abs().max() < 1e-15);
    }

    #[test]
    fn minibatch_identity_and_simplex() {
        let ds = make_two_moons(10, 0.1, 0).unwrap();
        let partners: Vec<usize> = (0..10).rev().collect();
        let m = mix_rows(ds.inputs(), ds.outputs(), &partners, &[1.0; 10]).unwrap();
        assert_eq!(&m.x, ds.inputs());
        assert_eq!(&m.y, ds.outputs());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [LambdaMode::PerPair, LambdaMode::Shared] {
            let m = mixup_minibatch(ds.inputs(), ds.outputs(), 0.4, mode, &mut rng).unwrap();
            for r in m.y.row_iter() {
                assert!((r.sum() - 1.0).abs() < 1e-12 && r.iter().all(|&v| v >= 0.0));
            }
            if mode == LambdaMode::Shared {
                assert!(m.lambdas.iter().all(|&l| l == m.lambdas[0]));
            }
        }
        assert!(mixup_minibatch(&DMatrix::zeros(0, 2), &DMatrix::zeros(0, 2), 1.0, LambdaMode::PerPair, &mut rng)
            .is_err());
    }

    #[test]
    fn constant_model_same_draw_identity() {
        // f ≡ ȳ with SE: summand equals ½‖λ(yᵢ−ȳ) + (1−λ)(yⱼ−ȳ)‖² draw by draw
        let ds = make_two_moons(8, 0.1, 5).unwrap();
        let ybar = ds.stats().y_mean.clone();
        let model = LinearModel::new(DMatrix::zeros(2, 2), ybar.clone()).unwrap();
        let sampler = BetaSampler::new(1.0).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let est = mixup_risk_mc(&ds, &model, LossKind::SquaredError, 1.0, 5000, &mut a).unwrap();
        let mut acc = 0.0;
        for _ in 0..5000 {
            let i = b.gen_range(0..8);
            let j = b.gen_range(0..8);
            let l = sampler.sample_lambda(&mut b);
            acc += 0.5 * ((ds.y(i) - &ybar) * l + (ds.y(j) - &ybar) * (1.0 - l)).norm_squared();
        }
        assert!((est.mean - acc / 5000.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_estimate_is_deterministic() {
        let ds = make_two_moons(20, 0.1, 1).unwrap();
        let m = LinearModel::new(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]), DVector::zeros(2)).unwrap();
        let a = risk_mc_parallel(&ds, &m, LossKind::CrossEntropy, 1.0, 10_001, 9, 4, RiskForm::Mixup).unwrap();
        let b = risk_mc_parallel(&ds, &m, LossKind::CrossEntropy, 1.0, 10_001, 9, 4, RiskForm::Mixup).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws, 10_001);
    }

    #[test]
    fn estimator_errors() {
        let ds = make_two_moons(8, 0.1, 5).unwrap();
        let m = LinearModel::zeros(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mixup_risk_mc(&ds, &m, LossKind::CrossEntropy, 0.0, 10, &mut rng).is_err());
        assert!(mixup_risk_mc(&ds, &m, LossKind::CrossEntropy, 1.0, 0, &mut rng).is_err());
        assert!(perturbed_erm_risk_mc(&ds, &m, LossKind::CrossEntropy, -1.0, 10, &mut rng).is_err());
        let c = coefficients(1.0).unwrap();
        assert!(sample_perturbation(&ds, &c, 8, &mut rng).is_err());
    }
}
