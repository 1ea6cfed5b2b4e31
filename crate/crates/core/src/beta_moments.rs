//! Moments and sampling of the truncated Beta distribution `Beta_[1/2,1](α, α)`.
//!
//! Every other formula in the crate is driven by the mean `θ̄`, the variance
//! `σ²` and `γ² = σ² + (1 − θ̄)²` of this distribution. The mean is computed
//! from the regularized incomplete beta function as `θ̄ = 1 − I_{1/2}(α+1, α)`;
//! the second raw moment as `E[θ²] = (α+1)/(2α+1) · (1 − I_{1/2}(α+2, α))`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const LENTZ_EPS: f64 = 1e-14;
const LENTZ_TINY: f64 = 1e-300;
const LENTZ_MAX_ITER: usize = 10_000;

/// Lanczos coefficients (g = 7, n = 9), as published.
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let mut acc = LANCZOS[0];
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let clamp = |v: f64| if v.abs() < LENTZ_TINY { LENTZ_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=LENTZ_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < LENTZ_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return domain(format!("incomplete beta needs a, b > 0 (got a={a}, b={b})"));
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("incomplete beta needs x in [0, 1] (got {x})"));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(front * beta_continued_fraction(a, b, x) / a)
    } else {
        Ok(1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        domain(format!("alpha must be positive and finite (got {alpha})"))
    }
}

/// `E[θ]` for `θ ~ Beta_[1/2,1](α, α)`.
pub fn trunc_beta_mean(alpha: f64) -> Result<f64> {
    trunc_beta_raw_moment(alpha, 1)
}

/// Raw moment `E[θᵏ]`, `k ∈ {1, 2}`.
pub fn trunc_beta_raw_moment(alpha: f64, k: u32) -> Result<f64> {
    check_alpha(alpha)?;
    if !(1..=2).contains(&k) {
        return domain(format!("raw moment order must be 1 or 2 (got {k})"));
    }
    let kf = k as f64;
    // 2 · B(α+k, α) / B(α, α)
    let ratio: f64 = (0..k).map(|r| (alpha + r as f64) / (2.0 * alpha + r as f64)).product();
    let tail = 1.0 - regularized_incomplete_beta(0.5, alpha + kf, alpha)?;
    Ok(2.0 * ratio * tail)
}

/// CDF of `Beta_[1/2,1](α, α)`: `2 I_t(α, α) − 1` on `[1/2, 1]`.
pub fn trunc_beta_cdf(alpha: f64, t: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if t <= 0.5 {
        return Ok(0.0);
    }
    if t >= 1.0 {
        return Ok(1.0);
    }
    Ok((2.0 * regularized_incomplete_beta(t, alpha, alpha)? - 1.0).clamp(0.0, 1.0))
}

/// Mixup shape parameter together with the truncated-Beta moments it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixCoefficients {
    pub alpha: f64,
    pub theta_bar: f64,
    pub sigma_sq: f64,
    pub gamma_sq: f64,
}

impl MixCoefficients {
    /// Rebuilds the coefficients from explicit moments, keeping `γ²` consistent.
    pub fn from_moments(alpha: f64, theta_bar: f64, sigma_sq: f64) -> Self {
        let gamma_sq = sigma_sq + (1.0 - theta_bar) * (1.0 - theta_bar);
        Self { alpha, theta_bar, sigma_sq, gamma_sq }
    }
}

pub fn coefficients(alpha: f64) -> Result<MixCoefficients> {
    let m1 = trunc_beta_raw_moment(alpha, 1)?;
    let m2 = trunc_beta_raw_moment(alpha, 2)?;
    let sigma_sq = (m2 - m1 * m1).max(0.0);
    Ok(MixCoefficients::from_moments(alpha, m1, sigma_sq))
}

/// Sampler for `Beta(α, α)` through the Gamma ratio, with the folded
/// `max(λ, 1 − λ)` draw for the truncated variant.
#[derive(Debug, Clone)]
pub struct BetaSampler {
    alpha: f64,
    gamma: Gamma<f64>,
}

impl BetaSampler {
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let gamma = Gamma::new(alpha, 1.0)
            .map_err(|e| crate::MixregError::Domain(format!("gamma({alpha}): {e}")))?;
        Ok(Self { alpha, gamma })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `λ ~ Beta(α, α)`.
    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let x = self.gamma.sample(rng);
        let y = self.gamma.sample(rng);
        let s = x + y;
        if s > 0.0 {
            x / s
        } else {
            // both gamma draws underflowed; the mass sits at the endpoints
            if rng.gen::<bool>() {
                1.0
            } else {
                0.0
            }
        }
    }

    /// `θ ~ Beta_[1/2,1](α, α)`.
    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let l = self.sample_lambda(rng);
        l.max(1.0 - l)
    }
}

pub fn sample_theta<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    Ok(BetaSampler::new(alpha)?.sample_theta(rng))
}
