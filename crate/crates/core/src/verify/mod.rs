//! Numerical certification of the theory: every check compares an
//! implementation route against an independent oracle and reports the
//! measured discrepancy next to its tolerance.

pub mod numerics;
pub mod quadrature;
pub mod smoothing;
pub mod theory;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::beta_moments::MixCoefficients;
use crate::dataset::Dataset;
use crate::error::{MixregError, Result};
use crate::regularization::RegularizerBreakdown;

/// Outcome of one comparison. `passed` is `discrepancy <= tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub runtime_ms: f64,
    pub details: String,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, discrepancy: f64, tolerance: f64, started: Instant, details: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            // NaN never passes
            passed: discrepancy <= tolerance,
            discrepancy,
            tolerance,
            runtime_ms: started.elapsed().as_secs_f64() * 1e3,
            details: details.into(),
        }
    }

    /// A check that could not be carried out to its stated precision.
    pub fn inconclusive(name: impl Into<String>, tolerance: f64, started: Instant, details: impl Into<String>) -> Self {
        let mut r = Self::new(name, f64::NAN, tolerance, started, details);
        r.details = format!("inconclusive: {}", r.details);
        r
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<32} {:>11.3e} <= {:<9.1e} {:>9.1} ms  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.discrepancy,
            self.tolerance,
            self.runtime_ms,
            self.details
        )
    }
}

/// Deliberate single-constant bugs injected into the implementation route
/// of the checks (never into the oracles).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// `θ̄ → θ̄ + 0.01` with `σ²`, `γ²` left untouched.
    ShiftThetaBar,
    /// `γ² → 0`.
    DropGamma,
    /// `σ² → 0`.
    DropSigma,
    /// `R3 → −R3`.
    FlipR3Sign,
}

impl Mutation {
    pub const ALL: [Mutation; 5] =
        [Mutation::None, Mutation::ShiftThetaBar, Mutation::DropGamma, Mutation::DropSigma, Mutation::FlipR3Sign];

    pub fn name(self) -> &'static str {
        match self {
            Mutation::None => "none",
            Mutation::ShiftThetaBar => "shift_theta_bar",
            Mutation::DropGamma => "drop_gamma",
            Mutation::DropSigma => "drop_sigma",
            Mutation::FlipR3Sign => "flip_r3_sign",
        }
    }

    pub fn coefficients(self, c: &MixCoefficients) -> MixCoefficients {
        let mut m = *c;
        match self {
            Mutation::ShiftThetaBar => m.theta_bar += 0.01,
            Mutation::DropGamma => m.gamma_sq = 0.0,
            Mutation::DropSigma => m.sigma_sq = 0.0,
            Mutation::None | Mutation::FlipR3Sign => {}
        }
        m
    }

    pub fn breakdown(self, b: RegularizerBreakdown) -> RegularizerBreakdown {
        if self != Mutation::FlipR3Sign {
            return b;
        }
        let mut m = b;
        m.r3 = -b.r3;
        m.total = m.erm_modified + m.r1 + m.r2 + m.r3 + m.r4;
        m
    }
}

impl FromStr for Mutation {
    type Err = MixregError;

    fn from_str(s: &str) -> Result<Self> {
        Mutation::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| MixregError::Parse(format!("unknown mutation '{s}'")))
    }
}

/// Runs every registered check in registration order.
pub fn run_all(seed: u64, mutation: Mutation) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    out.extend(numerics::check_beta_moments()?);
    out.extend(theory::check_perturbed_erm(seed, mutation)?);
    out.extend(theory::check_covariance(seed, mutation)?);
    out.extend(theory::check_decomposition(seed, mutation)?);
    out.extend(theory::check_corollaries(seed)?);
    out.extend(theory::check_least_squares(seed, mutation)?);
    out.extend(smoothing::check_label_smoothing(seed, 10)?);
    out.extend(numerics::check_derivatives(seed)?);
    out.extend(theory::check_taylor(seed)?);
    out.extend(numerics::check_rescaled(seed)?);
    Ok(out)
}

pub fn all_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

pub fn render_table(reports: &[CheckReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", reports.len(), failed));
    s
}

/// JSON document `{ "passed": bool, "checks": [CheckReport, ...] }`.
pub fn report_json(reports: &[CheckReport]) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        passed: bool,
        checks: &'a [CheckReport],
    }
    Ok(serde_json::to_string_pretty(&Doc { passed: all_passed(reports), checks: reports })?)
}

pub(crate) fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random point on the open simplex.
pub(crate) fn simplex_vector<R: Rng + ?Sized>(rng: &mut R, c: usize) -> DVector<f64> {
    let v = DVector::from_fn(c, |_, _| rng.gen_range(0.05..1.0));
    let s = v.sum();
    v / s
}

/// Gaussian inputs with outputs of the requested kind: simplex rows for
/// cross-entropy, scalars in `[0, 1]` for the logistic loss, Gaussian
/// otherwise.
pub(crate) fn random_dataset<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    d: usize,
    c: usize,
    kind: crate::loss::LossKind,
) -> Result<Dataset> {
    use crate::loss::LossKind;
    let x = gaussian_matrix(rng, n, d, 1.0);
    let y = match kind {
        LossKind::SquaredError => gaussian_matrix(rng, n, c, 1.0),
        LossKind::CrossEntropy => {
            let mut y = DMatrix::zeros(n, c);
            for i in 0..n {
                y.set_row(i, &simplex_vector(rng, c).transpose());
            }
            y
        }
        LossKind::Logistic => DMatrix::from_fn(n, 1, |_, _| rng.gen_range(0.0..1.0)),
    };
    Dataset::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beta_moments::coefficients;

    #[test]
    fn report_status_follows_tolerance() {
        let t = Instant::now();
        assert!(CheckReport::new("a", 1e-9, 1e-8, t, "").passed);
        assert!(!CheckReport::new("a", 1e-7, 1e-8, t, "").passed);
        assert!(!CheckReport::inconclusive("a", 1e-8, t, "budget").passed);
    }

    #[test]
    fn mutation_names_round_trip() {
        for m in Mutation::ALL {
            assert_eq!(m.name().parse::<Mutation>().unwrap(), m);
        }
        assert!("nope".parse::<Mutation>().is_err());
    }

    #[test]
    fn mutations_touch_one_constant() {
        let c = coefficients(1.0).unwrap();
        assert_eq!(Mutation::None.coefficients(&c), c);
        let s = Mutation::ShiftThetaBar.coefficients(&c);
        assert!((s.theta_bar - 0.76).abs() < 1e-15 && s.sigma_sq == c.sigma_sq && s.gamma_sq == c.gamma_sq);
        assert_eq!(Mutation::DropGamma.coefficients(&c).gamma_sq, 0.0);
        assert_eq!(Mutation::DropSigma.coefficients(&c).sigma_sq, 0.0);
    }

    fn failing(reports: &[CheckReport]) -> Vec<String> {
        reports.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect()
    }

    #[test]
    fn coefficient_mutations_break_the_covariance() {
        for m in [Mutation::DropGamma, Mutation::DropSigma] {
            let f = failing(&theory::check_covariance(3, m).unwrap());
            assert!(f.contains(&"covariance.exact".to_string()), "{m:?}: {f:?}");
        }
        assert!(failing(&theory::check_covariance(3, Mutation::None).unwrap()).is_empty());
    }

    #[test]
    fn shifted_theta_and_r3_sign_break_the_decomposition() {
        for m in [Mutation::ShiftThetaBar, Mutation::FlipR3Sign] {
            let f = failing(&theory::check_decomposition(3, m).unwrap());
            assert_eq!(f.len(), 3, "{m:?}: {f:?}");
        }
    }
}
