//! Per-example perturbation covariances, the second-order Taylor loss and
//! the four regularizers of the approximate Mixup risk.
//!
//! For example `i` the covariances are
//! `Σ⁽ⁱ⁾_x̃x̃ = σ²(xᵢ − x̄)(xᵢ − x̄)ᵀ + γ²Σxx` (and likewise for the output and
//! cross blocks). With `A = ∇²_uu ℓ`, the regularizers are
//!
//! ```text
//! R1 = 1/(2n) Σ ‖(∇f − J⁽ⁱ⁾)ᵀ A^{1/2}‖²_{Σxx⁽ⁱ⁾}
//! R2 = 1/(2n) Σ <Σxx⁽ⁱ⁾, ∇_uℓ ∇²f>
//! R3 = −1/(2n) Σ ‖Σxy⁽ⁱ⁾ ∇²_yu ℓ A^{-1/2}‖²_{(Σxx⁽ⁱ⁾)⁻¹}
//! R4 = 1/(2n) Σ <Σyy⁽ⁱ⁾, ∇²_yy ℓ>
//! J⁽ⁱ⁾ = −A⁻¹ ∇²_uy ℓ Σyx⁽ⁱ⁾ (Σxx⁽ⁱ⁾)⁻¹
//! ```
//!
//! Inverses are symmetric pseudo-inverses (see [`crate::linalg`]).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta_moments::MixCoefficients;
use crate::dataset::{Dataset, ModifiedDataset};
use crate::error::{domain, Result};
use crate::linalg::{frob, metric_norm_sq, outer, SymSpectral};
use crate::loss::{self, LossBundle, LossKind};
use crate::mixup::shrunk_pair;
use crate::model::{contract_hessian, HessianTensor, Predictor};

/// `Σ⁽ⁱ⁾` blocks for one training index.
#[derive(Debug, Clone, PartialEq)]
pub struct PerExampleCovariances {
    pub sxx: DMatrix<f64>,
    pub syy: DMatrix<f64>,
    pub sxy: DMatrix<f64>,
}

impl PerExampleCovariances {
    pub fn syx(&self) -> DMatrix<f64> {
        self.sxy.transpose()
    }
}

fn check_index(ds: &Dataset, i: usize) -> Result<()> {
    if i >= ds.len() {
        return domain(format!("index {i} out of range for n = {}", ds.len()));
    }
    Ok(())
}

/// `[σ²(x̃ᵢ − x̄)(x̃ᵢ − x̄)ᵀ + γ² Σx̃x̃] / θ̄²` and its output/cross analogues.
pub fn per_example_covariances(ds: &Dataset, coeffs: &MixCoefficients, i: usize) -> Result<PerExampleCovariances> {
    check_index(ds, i)?;
    let s = ds.stats();
    let tb = coeffs.theta_bar;
    let tb2 = tb * tb;
    let (xt, yt) = shrunk_pair(ds, tb, i);
    let dx = xt - &s.x_mean;
    let dy = yt - &s.y_mean;
    let block = |a: &DVector<f64>, b: &DVector<f64>, sigma: &DMatrix<f64>| {
        (outer(a, b) * coeffs.sigma_sq + sigma * (tb2 * coeffs.gamma_sq)) / tb2
    };
    Ok(PerExampleCovariances {
        sxx: block(&dx, &dx, &s.sxx),
        syy: block(&dy, &dy, &s.syy),
        sxy: block(&dx, &dy, &s.sxy),
    })
}

/// `E[δδᵀ]`, `E[εεᵀ]`, `E[δεᵀ]` by direct expansion of the perturbations:
/// an exact sum over `j` and the first two moments of `θ`.
pub fn exact_second_moments(ds: &Dataset, coeffs: &MixCoefficients, i: usize) -> Result<PerExampleCovariances> {
    check_index(ds, i)?;
    let s = ds.stats();
    let tb = coeffs.theta_bar;
    let m1 = tb;
    let m2 = coeffs.sigma_sq + tb * tb;
    // δ = a xᵢ + b xⱼ + c x̄
    let ea = m1 - tb;
    let eb = 1.0 - m1;
    let eaa = m2 - 2.0 * tb * m1 + tb * tb;
    let ebb = 1.0 - 2.0 * m1 + m2;
    let eab = m1 - m2 - tb + tb * m1;
    let c = -(1.0 - tb);
    let n = ds.len();
    let cross = |ui: &DVector<f64>, ubar: &DVector<f64>, uj: &dyn Fn(usize) -> DVector<f64>,
                 vi: &DVector<f64>, vbar: &DVector<f64>, vj: &dyn Fn(usize) -> DVector<f64>| {
        let mut acc = DMatrix::zeros(ui.len(), vi.len());
        for j in 0..n {
            let (uj, vj) = (uj(j), vj(j));
            acc += outer(ui, vi) * eaa
                + (outer(ui, &vj) + outer(&uj, vi)) * eab
                + outer(&uj, &vj) * ebb
                + (outer(ui, vbar) + outer(ubar, vi)) * (c * ea)
                + (outer(&uj, vbar) + outer(ubar, &vj)) * (c * eb)
                + outer(ubar, vbar) * (c * c);
        }
        acc / n as f64
    };
    let (xi, yi) = (ds.x(i), ds.y(i));
    let xj = |j: usize| ds.x(j);
    let yj = |j: usize| ds.y(j);
    Ok(PerExampleCovariances {
        sxx: cross(&xi, &s.x_mean, &xj, &xi, &s.x_mean, &xj),
        syy: cross(&yi, &s.y_mean, &yj, &yi, &s.y_mean, &yj),
        sxy: cross(&xi, &s.x_mean, &xj, &yi, &s.y_mean, &yj),
    })
}

/// Loss and model derivatives at a modified pair, ready to evaluate the
/// quadratic Taylor model for any `(δ, ε)`.
#[derive(Debug, Clone)]
pub struct TaylorPoint {
    pub bundle: LossBundle,
    pub jacobian: DMatrix<f64>,
    pub hessian: HessianTensor,
}

impl TaylorPoint {
    pub fn new<P: Predictor + ?Sized>(model: &P, kind: LossKind, x: &DVector<f64>, y: &DVector<f64>) -> Result<Self> {
        let bundle = loss::bundle(kind, y, &model.predict(x))?;
        Ok(Self { bundle, jacobian: model.input_jacobian(x), hessian: model.input_hessian(x) })
    }

    /// `ℓ_Q(ỹ + ε, f(x̃ + δ))`.
    pub fn eval(&self, delta: &DVector<f64>, epsilon: &DVector<f64>) -> f64 {
        let b = &self.bundle;
        let jd = &self.jacobian * delta;
        let curv = self.jacobian.transpose() * &b.hess_uu * &self.jacobian + contract_hessian(&self.hessian, &b.grad_u);
        b.value + b.grad_y.dot(epsilon) + b.grad_u.dot(&jd)
            + 0.5 * delta.dot(&(curv * delta))
            + 0.5 * epsilon.dot(&(&b.hess_yy * epsilon))
            + epsilon.dot(&(&b.hess_yu * jd))
    }
}

/// Second-order Taylor approximation of the loss around `(ỹᵢ, f(x̃ᵢ))`.
pub fn quadratic_loss<P: Predictor + ?Sized>(
    ds_mod: &ModifiedDataset,
    model: &P,
    kind: LossKind,
    i: usize,
    delta: &DVector<f64>,
    epsilon: &DVector<f64>,
) -> Result<f64> {
    if i >= ds_mod.data.len() {
        return domain(format!("index {i} out of range"));
    }
    Ok(TaylorPoint::new(model, kind, &ds_mod.x(i), &ds_mod.y(i))?.eval(delta, epsilon))
}

/// Data-only quantities of one example, shared by every evaluation of the
/// regularizers at different parameters.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub x_tilde: DVector<f64>,
    pub y_tilde: DVector<f64>,
    pub cov: PerExampleCovariances,
    pub sxx_spectral: SymSpectral,
}

pub fn prepare(ds: &Dataset, coeffs: &MixCoefficients) -> Result<Vec<PreparedExample>> {
    (0..ds.len())
        .map(|i| {
            let (x_tilde, y_tilde) = shrunk_pair(ds, coeffs.theta_bar, i);
            let cov = per_example_covariances(ds, coeffs, i)?;
            let sxx_spectral = SymSpectral::new(&cov.sxx);
            Ok(PreparedExample { x_tilde, y_tilde, cov, sxx_spectral })
        })
        .collect()
}

/// Unscaled per-example contributions; the regularizers carry `1/(2n)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExampleTerms {
    pub erm: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub truncated_sxx: usize,
    pub truncated_huu: usize,
}

/// Terms of the approximate Mixup risk. `erm_modified` is the ERM risk on
/// the modified pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerBreakdown {
    pub erm_modified: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub total: f64,
    /// Eigenvalues of `Σxx⁽ⁱ⁾` dropped by the pseudo-inverse, summed over `i`.
    pub truncated_sxx: usize,
    /// Same for `∇²_uu ℓ`; cross-entropy contributes one per example by
    /// construction (`H(u) 1 = 0`).
    pub truncated_huu: usize,
}

impl RegularizerBreakdown {
    pub const CSV_HEADER: &'static str = "erm_modified,r1,r2,r3,r4,total";

    pub fn csv_row(&self) -> String {
        format!("{:?},{:?},{:?},{:?},{:?},{:?}", self.erm_modified, self.r1, self.r2, self.r3, self.r4, self.total)
    }

    fn from_terms(terms: &[ExampleTerms]) -> Self {
        let n = terms.len() as f64;
        let mut b = RegularizerBreakdown {
            erm_modified: 0.0,
            r1: 0.0,
            r2: 0.0,
            r3: 0.0,
            r4: 0.0,
            total: 0.0,
            truncated_sxx: 0,
            truncated_huu: 0,
        };
        for t in terms {
            b.erm_modified += t.erm;
            b.r1 += t.r1;
            b.r2 += t.r2;
            b.r3 += t.r3;
            b.r4 += t.r4;
            b.truncated_sxx += t.truncated_sxx;
            b.truncated_huu += t.truncated_huu;
        }
        b.erm_modified /= n;
        for r in [&mut b.r1, &mut b.r2, &mut b.r3, &mut b.r4] {
            *r /= 2.0 * n;
        }
        b.total = b.erm_modified + b.r1 + b.r2 + b.r3 + b.r4;
        b
    }

    /// Objective with or without the Hessian term.
    pub fn objective(&self, drop_r2: bool) -> f64 {
        if drop_r2 {
            self.total - self.r2
        } else {
            self.total
        }
    }
}

fn aggregate<P, F>(ds: &Dataset, model: &P, coeffs: &MixCoefficients, f: F) -> Result<RegularizerBreakdown>
where
    P: Predictor + Sync + ?Sized,
    F: Fn(&P, &PreparedExample) -> Result<ExampleTerms> + Sync,
{
    let prepared = prepare(ds, coeffs)?;
    let terms: Result<Vec<ExampleTerms>> = prepared.par_iter().map(|p| f(model, p)).collect();
    Ok(RegularizerBreakdown::from_terms(&terms?))
}

/// Per-example terms from the general formulas.
pub fn general_terms<P: Predictor + ?Sized>(model: &P, kind: LossKind, p: &PreparedExample) -> Result<ExampleTerms> {
    let tp = TaylorPoint::new(model, kind, &p.x_tilde, &p.y_tilde)?;
    let b = &tp.bundle;
    let a = SymSpectral::new(&b.hess_uu);
    let sxx = &p.cov.sxx;
    let sxx_pinv = &p.sxx_spectral.pinv;
    let j = -(&a.pinv * b.hess_yu.transpose() * p.cov.syx() * sxx_pinv);
    let m1 = (&tp.jacobian - j).transpose() * &a.sqrt;
    let m3 = &p.cov.sxy * &b.hess_yu * &a.pinv_sqrt;
    Ok(ExampleTerms {
        erm: b.value,
        r1: metric_norm_sq(&m1, sxx),
        r2: frob(sxx, &contract_hessian(&tp.hessian, &b.grad_u)),
        r3: -metric_norm_sq(&m3, sxx_pinv),
        r4: frob(&p.cov.syy, &b.hess_yy),
        truncated_sxx: p.sxx_spectral.truncated,
        truncated_huu: a.truncated,
    })
}

pub fn r_terms_general<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    coeffs: &MixCoefficients,
) -> Result<RegularizerBreakdown> {
    aggregate(ds, model, coeffs, |m, p| general_terms(m, kind, p))
}

/// Softmax form: `J = H⁻¹ Σyx Σxx⁻¹`, no output-Hessian term.
pub fn r_terms_ce<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    coeffs: &MixCoefficients,
) -> Result<RegularizerBreakdown> {
    aggregate(ds, model, coeffs, |m, p| {
        let u = m.predict(&p.x_tilde);
        let h = SymSpectral::new(&loss::softmax_hessian(&u));
        let sxx_pinv = &p.sxx_spectral.pinv;
        let j = &h.pinv * p.cov.syx() * sxx_pinv;
        let jf = m.input_jacobian(&p.x_tilde);
        let g = loss::softmax(&u) - &p.y_tilde;
        Ok(ExampleTerms {
            erm: loss::value(LossKind::CrossEntropy, &p.y_tilde, &u)?,
            r1: metric_norm_sq(&((jf - j).transpose() * &h.sqrt), &p.cov.sxx),
            r2: frob(&p.cov.sxx, &contract_hessian(&m.input_hessian(&p.x_tilde), &g)),
            r3: -metric_norm_sq(&(&p.cov.sxy * &h.pinv_sqrt), sxx_pinv),
            r4: 0.0,
            truncated_sxx: p.sxx_spectral.truncated,
            truncated_huu: h.truncated,
        })
    })
}

/// Sigmoid form with `v = s(1 − s)`: `J = Σyx Σxx⁻¹ / v`.
pub fn r_terms_lr<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    coeffs: &MixCoefficients,
) -> Result<RegularizerBreakdown> {
    aggregate(ds, model, coeffs, |m, p| {
        let u = m.predict(&p.x_tilde);
        let s = loss::sigmoid(u[0]);
        let v = s * (1.0 - s);
        // 1/v follows the pseudo-inverse convention at v = 0
        let inv_v = if v > 0.0 { 1.0 / v } else { 0.0 };
        let sxx_pinv = &p.sxx_spectral.pinv;
        let syx = p.cov.syx();
        let j = &syx * sxx_pinv * inv_v;
        let jf = m.input_jacobian(&p.x_tilde);
        let r3 = inv_v * (&syx * sxx_pinv * &p.cov.sxy)[(0, 0)];
        Ok(ExampleTerms {
            erm: loss::value(LossKind::Logistic, &p.y_tilde, &u)?,
            r1: v * metric_norm_sq(&(jf - j).transpose(), &p.cov.sxx),
            r2: (s - p.y_tilde[0]) * frob(&p.cov.sxx, &m.input_hessian(&p.x_tilde)[0]),
            r3: -r3,
            r4: 0.0,
            truncated_sxx: p.sxx_spectral.truncated,
            truncated_huu: usize::from(v <= 0.0),
        })
    })
}

/// Squared-error form: `J = Σyx Σxx⁻¹` and `R4 = tr(Σyy⁽ⁱ⁾)/(2n)`, which
/// does not depend on the model.
pub fn r_terms_se<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    coeffs: &MixCoefficients,
) -> Result<RegularizerBreakdown> {
    aggregate(ds, model, coeffs, |m, p| {
        let u = m.predict(&p.x_tilde);
        let sxx_pinv = &p.sxx_spectral.pinv;
        let j = p.cov.syx() * sxx_pinv;
        let jf = m.input_jacobian(&p.x_tilde);
        let g = &u - &p.y_tilde;
        Ok(ExampleTerms {
            erm: loss::value(LossKind::SquaredError, &p.y_tilde, &u)?,
            r1: metric_norm_sq(&(jf - j).transpose(), &p.cov.sxx),
            r2: frob(&p.cov.sxx, &contract_hessian(&m.input_hessian(&p.x_tilde), &g)),
            r3: -metric_norm_sq(&p.cov.sxy, sxx_pinv),
            r4: p.cov.syy.trace(),
            truncated_sxx: p.sxx_spectral.truncated,
            truncated_huu: 0,
        })
    })
}

pub fn approx_mixup_objective<P: Predictor + Sync + ?Sized>(
    ds: &Dataset,
    model: &P,
    kind: LossKind,
    coeffs: &MixCoefficients,
    drop_r2: bool,
) -> Result<f64> {
    Ok(r_terms_general(ds, model, kind, coeffs)?.objective(drop_r2))
}

/// `∇_u ½ tr(∇²_uu ℓ(u) Q)` for the three losses.
fn curvature_trace_grad(kind: LossKind, u: &DVector<f64>, q: &DMatrix<f64>) -> DVector<f64> {
    match kind {
        LossKind::SquaredError => DVector::zeros(u.len()),
        LossKind::CrossEntropy => {
            let s = loss::softmax(u);
            let h = loss::softmax_hessian(u);
            h * (q.diagonal() - q * &s * 2.0) * 0.5
        }
        LossKind::Logistic => {
            let s = loss::sigmoid(u[0]);
            DVector::from_element(1, 0.5 * s * (1.0 - s) * (1.0 - 2.0 * s) * q[(0, 0)])
        }
    }
}

/// Value of one example's contribution to the approximate objective (same
/// scaling as the breakdown: `erm + ½ Σ rₖ`) with its cotangents.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveCotangents {
    pub value: f64,
    /// With respect to the prediction `u = f(x̃)`.
    pub wrt_output: DVector<f64>,
    /// With respect to the input Jacobian `∇f(x̃)`.
    pub wrt_jacobian: DMatrix<f64>,
    /// `v` such that the Hessian cotangent is `Σ_k v_k <Σxx⁽ⁱ⁾, ·>`; absent
    /// when the Hessian term is dropped.
    pub hessian_weight: Option<DVector<f64>>,
}

/// Uses `R1 + R3 = ½<Σxx, ∇fᵀ A ∇f> + <Σyx, ∇²_yu ℓ ∇f>`, which avoids
/// differentiating through `J⁽ⁱ⁾`. The mixed and output second derivatives
/// of all three losses are constant in `u`, so `R4` has no gradient.
/// Pass `hessian` to keep the `R2` term.
pub fn example_cotangents(
    kind: LossKind,
    p: &PreparedExample,
    u: &DVector<f64>,
    jf: &DMatrix<f64>,
    hessian: Option<&HessianTensor>,
) -> Result<ObjectiveCotangents> {
    let b = loss::bundle(kind, &p.y_tilde, u)?;
    let sxx = &p.cov.sxx;
    let syx = p.cov.syx();
    let jsx = jf * sxx;
    let q = &jsx * jf.transpose();
    let r1_r3 = frob(&b.hess_uu, &q) + 2.0 * frob(&syx, &(&b.hess_yu * jf));
    let r4 = frob(&p.cov.syy, &b.hess_yy);
    let mut value = b.value + 0.5 * (r1_r3 + r4);
    let mut wrt_output = &b.grad_u + curvature_trace_grad(kind, u, &q);
    let wrt_jacobian = &b.hess_uu * &jsx + b.hess_yu.transpose() * &syx;
    let hessian_weight = hessian.map(|hs| {
        let h = DVector::from_iterator(hs.len(), hs.iter().map(|hk| frob(sxx, hk)));
        value += 0.5 * b.grad_u.dot(&h);
        wrt_output += &b.hess_uu * &h * 0.5;
        &b.grad_u * 0.5
    });
    Ok(ObjectiveCotangents { value, wrt_output, wrt_jacobian, hessian_weight })
}

/// Value and parameter gradient of one example's contribution.
pub fn example_objective_grad<P: Predictor + ?Sized>(
    model: &P,
    kind: LossKind,
    p: &PreparedExample,
    drop_r2: bool,
) -> Result<(f64, DVector<f64>)> {
    let x = &p.x_tilde;
    let hess = if drop_r2 { None } else { Some(model.input_hessian(x)) };
    let c = example_cotangents(kind, p, &model.predict(x), &model.input_jacobian(x), hess.as_ref())?;
    let mut grad = model.output_vjp(x, &c.wrt_output) + model.jacobian_vjp(x, &c.wrt_jacobian);
    if let Some(v) = &c.hessian_weight {
        grad += model.hessian_vjp(x, v, &p.cov.sxx);
    }
    Ok((c.value, grad))
}

/// Mean value and gradient of the approximate objective over `idx`.
pub fn approx_objective_grad<P: Predictor + Sync + ?Sized>(
    model: &P,
    kind: LossKind,
    prepared: &[PreparedExample],
    idx: &[usize],
    drop_r2: bool,
) -> Result<(f64, DVector<f64>)> {
    if idx.is_empty() {
        return domain("empty index set");
    }
    let parts: Result<Vec<(f64, DVector<f64>)>> =
        idx.par_iter().map(|&i| example_objective_grad(model, kind, &prepared[i], drop_r2)).collect();
    let mut value = 0.0;
    let mut grad = DVector::zeros(model.num_params());
    for (v, g) in parts? {
        value += v;
        grad += g;
    }
    let m = idx.len() as f64;
    Ok((value / m, grad / m))
}
