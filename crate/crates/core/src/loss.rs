//! Squared error, cross-entropy and logistic losses with their first and
//! second derivatives in both the target `y` and the prediction `u`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = crate::MixregError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" | "squared_error" => Ok(Self::SquaredError),
            "ce" | "cross_entropy" => Ok(Self::CrossEntropy),
            "lr" | "logistic" => Ok(Self::Logistic),
            other => domain(format!("unknown loss {other:?}")),
        }
    }
}

/// Value and derivative blocks of `ℓ(y, u)` at one point.
///
/// `hess_yu[(a, b)] = ∂²ℓ / ∂y_a ∂u_b`; gradients are stored as column
/// vectors but play the role of row vectors in the Taylor expansion.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub value: f64,
    pub grad_y: DVector<f64>,
    pub grad_u: DVector<f64>,
    pub hess_yy: DMatrix<f64>,
    pub hess_yu: DMatrix<f64>,
    pub hess_uu: DMatrix<f64>,
}

pub fn log_sum_exp(u: &DVector<f64>) -> f64 {
    let m = u.max();
    m + u.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(u: &DVector<f64>) -> DVector<f64> {
    let m = u.max();
    let e = u.map(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᵘ)` without overflow.
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `H(u) = diag(S(u)) − S(u)S(u)ᵀ`.
pub fn softmax_hessian(u: &DVector<f64>) -> DMatrix<f64> {
    let s = softmax(u);
    DMatrix::from_diagonal(&s) - &s * s.transpose()
}

/// Shannon entropy (natural log) of a point on the simplex, `0 · log 0 = 0`.
pub fn entropy(p: &DVector<f64>) -> Result<f64> {
    if p.iter().any(|&v| v < -1e-9) || (p.sum() - 1.0).abs() > 1e-9 {
        return domain("entropy needs a point on the probability simplex");
    }
    Ok(p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum())
}

pub fn value(kind: LossKind, y: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_shapes(kind, y, u)?;
    Ok(match kind {
        LossKind::SquaredError => 0.5 * (y - u).norm_squared(),
        LossKind::CrossEntropy => log_sum_exp(u) - y.dot(u),
        LossKind::Logistic => softplus(u[0]) - y[0] * u[0],
    })
}

fn check_shapes(kind: LossKind, y: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    if y.len() != u.len() {
        return shape(format!("target has {} entries, prediction {}", y.len(), u.len()));
    }
    if kind == LossKind::Logistic && u.len() != 1 {
        return shape(format!("logistic loss needs scalar outputs (got {})", u.len()));
    }
    if y.is_empty() {
        return shape("empty output vector");
    }
    Ok(())
}

pub fn bundle(kind: LossKind, y: &DVector<f64>, u: &DVector<f64>) -> Result<LossBundle> {
    let value = value(kind, y, u)?;
    let c = u.len();
    let eye = DMatrix::<f64>::identity(c, c);
    Ok(match kind {
        LossKind::SquaredError => LossBundle {
            value,
            grad_y: y - u,
            grad_u: u - y,
            hess_yy: eye.clone(),
            hess_yu: -&eye,
            hess_uu: eye,
        },
        LossKind::CrossEntropy => LossBundle {
            value,
            grad_y: -u,
            grad_u: softmax(u) - y,
            hess_yy: DMatrix::zeros(c, c),
            hess_yu: -eye,
            hess_uu: softmax_hessian(u),
        },
        LossKind::Logistic => {
            let s = sigmoid(u[0]);
            LossBundle {
                value,
                grad_y: -u,
                grad_u: DVector::from_element(1, s - y[0]),
                hess_yy: DMatrix::zeros(1, 1),
                hess_yu: DMatrix::from_element(1, 1, -1.0),
                hess_uu: DMatrix::from_element(1, 1, s * (1.0 - s)),
            }
        }
    })
}

/// Class probabilities implied by a prediction: softmax for vector outputs,
/// `(1 − s(u), s(u))` for a scalar logit.
pub fn probabilities(u: &DVector<f64>) -> DVector<f64> {
    if u.len() == 1 {
        let s = sigmoid(u[0]);
        DVector::from_vec(vec![1.0 - s, s])
    } else {
        softmax(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn softmax_basics() {
        assert_eq!(softmax(&v(&[0.0, 0.0])), v(&[0.5, 0.5]));
        let u = v(&[0.3, -1.2, 2.5]);
        let shifted = u.add_scalar(3.7);
        assert!((softmax(&u) - softmax(&shifted)).abs().max() < 1e-15);
        assert!((log_sum_exp(&shifted) - log_sum_exp(&u) - 3.7).abs() < 1e-14);
        let big = v(&[1000.0, 999.0]);
        assert!(softmax(&big).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn entropy_bounds() {
        let uniform = DVector::from_element(10, 0.1);
        assert!((entropy(&uniform).unwrap() - 10f64.ln()).abs() < 1e-14);
        assert_eq!(entropy(&v(&[1.0, 0.0])).unwrap(), 0.0);
        assert!(entropy(&v(&[0.7, 0.7])).is_err());
        assert!(entropy(&v(&[1.1, -0.1])).is_err());
    }

    #[test]
    fn ce_hessian_at_symmetric_point() {
        let b = bundle(LossKind::CrossEntropy, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((b.hess_uu - want).abs().max() < 1e-15);
        assert_eq!(b.hess_yy, DMatrix::zeros(2, 2));
    }

    #[test]
    fn se_minimum() {
        let y = v(&[0.4, -2.0]);
        let b = bundle(LossKind::SquaredError, &y, &y).unwrap();
        assert_eq!(b.value, 0.0);
        assert_eq!(b.grad_u, DVector::zeros(2));
    }

    #[test]
    fn softmax_hessian_kills_ones() {
        let u = v(&[0.1, 2.0, -0.4, 1.3]);
        let h = softmax_hessian(&u);
        assert!((h * DVector::from_element(4, 1.0)).abs().max() < 1e-16);
    }

    #[test]
    fn ce_two_class_equals_logistic() {
        for &(u0, u1, lab) in &[(0.3, -1.1, 1.0), (2.0, 0.5, 0.0), (-4.0, 3.0, 1.0)] {
            let ce = value(LossKind::CrossEntropy, &v(&[1.0 - lab, lab]), &v(&[u0, u1])).unwrap();
            let lr = value(LossKind::Logistic, &v(&[lab]), &v(&[u1 - u0])).unwrap();
            assert!((ce - lr).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        assert!(bundle(LossKind::Logistic, &v(&[1.0, 0.0]), &v(&[0.0, 0.0])).is_err());
        assert!(bundle(LossKind::SquaredError, &v(&[1.0]), &v(&[0.0, 0.0])).is_err());
    }
}
