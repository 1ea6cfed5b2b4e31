//! Differentiable predictors: an affine model `Wx + b` and a random Fourier
//! feature model `f(x) = w φ(x)`, `φ(x) = cos(Sx + B)/√M`.
//!
//! Besides values, both expose the input Jacobian `∇f(x)` (c×d), the input
//! Hessian `∇²f(x)` (c slices of d×d) and vector-Jacobian products with
//! respect to the trainable parameters for each of those three quantities.
//! All of them are linear in the parameters for both models, which is what
//! makes the approximate objective cheap to differentiate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{domain, shape, MixregError, Result};
use crate::loss::{self, LossKind};

/// Input Hessian as `c` symmetric d×d slices.
pub type HessianTensor = Vec<DMatrix<f64>>;

/// `Σ_k v_k ∇²f_k`, the contraction `vᵀ∇²f` used by the Hessian regularizer.
pub fn contract_hessian(h: &HessianTensor, v: &DVector<f64>) -> DMatrix<f64> {
    let d = h.first().map_or(0, |m| m.nrows());
    h.iter().zip(v.iter()).fold(DMatrix::zeros(d, d), |acc, (m, &c)| acc + m * c)
}

pub trait Predictor {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn predict(&self, x: &DVector<f64>) -> DVector<f64>;
    fn input_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn input_hessian(&self, x: &DVector<f64>) -> HessianTensor;

    fn num_params(&self) -> usize;
    fn params(&self) -> DVector<f64>;
    fn set_params(&mut self, p: &DVector<f64>) -> Result<()>;

    /// `(∂f(x)/∂p)ᵀ g` for an output cotangent `g ∈ ℝᶜ`.
    fn output_vjp(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64>;
    /// `Σ_{ij} G_ij ∂[∇f(x)]_ij/∂p` for `G ∈ ℝ^{c×d}`.
    fn jacobian_vjp(&self, x: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64>;
    /// `Σ_k v_k <Z, ∂[∇²f_k(x)]/∂p>` for `v ∈ ℝᶜ`, `Z ∈ ℝ^{d×d}`.
    fn hessian_vjp(&self, x: &DVector<f64>, v: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64>;

    /// Gradient of `ℓ(y, f(x))` with respect to the trainable parameters.
    fn param_gradient(&self, kind: LossKind, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.predict(x);
        let b = loss::bundle(kind, y, &u)?;
        Ok(self.output_vjp(x, &b.grad_u))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearModel {
    pub fn new(w: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return shape(format!("W has {} rows, b has {} entries", w.nrows(), b.len()));
        }
        Ok(Self { w, b })
    }

    pub fn zeros(d: usize, c: usize) -> Self {
        Self { w: DMatrix::zeros(c, d), b: DVector::zeros(c) }
    }
}

impl Predictor for LinearModel {
    fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * x + &self.b
    }

    fn input_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.w.clone()
    }

    fn input_hessian(&self, _x: &DVector<f64>) -> HessianTensor {
        let d = self.input_dim();
        vec![DMatrix::zeros(d, d); self.output_dim()]
    }

    fn num_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Row-major `W` followed by `b`.
    fn params(&self) -> DVector<f64> {
        let mut p: Vec<f64> = self.w.transpose().iter().copied().collect();
        p.extend(self.b.iter());
        DVector::from_vec(p)
    }

    fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.num_params() {
            return shape(format!("expected {} parameters, got {}", self.num_params(), p.len()));
        }
        let (c, d) = self.w.shape();
        self.w = DMatrix::from_row_slice(c, d, &p.as_slice()[..c * d]);
        self.b = DVector::from_row_slice(&p.as_slice()[c * d..]);
        Ok(())
    }

    fn output_vjp(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let gw = g * x.transpose();
        let mut p: Vec<f64> = gw.transpose().iter().copied().collect();
        p.extend(g.iter());
        DVector::from_vec(p)
    }

    fn jacobian_vjp(&self, _x: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64> {
        let mut p: Vec<f64> = g.transpose().iter().copied().collect();
        p.extend(std::iter::repeat_n(0.0, self.b.len()));
        DVector::from_vec(p)
    }

    fn hessian_vjp(&self, _x: &DVector<f64>, _v: &DVector<f64>, _z: &DMatrix<f64>) -> DVector<f64> {
        DVector::zeros(self.num_params())
    }
}

/// Random Fourier feature model with a frozen feature map and a linear head
/// without intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RffModel {
    /// M×d frequencies.
    pub s: DMatrix<f64>,
    /// M phases.
    pub b: DVector<f64>,
    /// c×M head.
    pub w: DMatrix<f64>,
}

impl RffModel {
    pub fn new(s: DMatrix<f64>, b: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != b.len() || w.ncols() != s.nrows() {
            return shape(format!(
                "inconsistent RFF shapes: S {:?}, B {}, w {:?}",
                s.shape(),
                b.len(),
                w.shape()
            ));
        }
        if s.nrows() == 0 {
            return domain("RFF model needs at least one feature");
        }
        Ok(Self { s, b, w })
    }

    pub fn num_features(&self) -> usize {
        self.s.nrows()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.num_features() as f64).sqrt()
    }

    fn phases(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.s * x + &self.b
    }

    /// `φ(x) = cos(Sx + B)/√M`.
    pub fn features(&self, x: &DVector<f64>) -> DVector<f64> {
        let k = self.scale();
        self.phases(x).map(|z| z.cos() * k)
    }

    /// `∂φ/∂x = −diag(sin(Sx + B)) S / √M` (M×d).
    pub fn feature_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let k = self.scale();
        let z = self.phases(x);
        let mut d = self.s.clone();
        for (m, mut r) in d.row_iter_mut().enumerate() {
            r *= -z[m].sin() * k;
        }
        d
    }
}

/// Draws `S_ij ~ N(0, σ²)`, `B_i ~ U[0, 2π)` and sets the head to zero.
pub fn init_rff(d: usize, m: usize, sigma_rff: f64, c: usize, seed: u64) -> Result<RffModel> {
    if m == 0 || d == 0 || c == 0 {
        return domain("RFF model needs positive d, M and c");
    }
    if !(sigma_rff > 0.0 && sigma_rff.is_finite()) {
        return domain(format!("sigma_rff must be positive (got {sigma_rff})"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_rff).expect("positive sigma");
    let unif = Uniform::new(0.0, 2.0 * std::f64::consts::PI);
    let s = DMatrix::from_fn(m, d, |_, _| normal.sample(&mut rng));
    let b = DVector::from_fn(m, |_, _| unif.sample(&mut rng));
    RffModel::new(s, b, DMatrix::zeros(c, m))
}

impl Predictor for RffModel {
    fn input_dim(&self) -> usize {
        self.s.ncols()
    }

    fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.w * self.features(x)
    }

    fn input_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.w * self.feature_jacobian(x)
    }

    fn input_hessian(&self, x: &DVector<f64>) -> HessianTensor {
        let k = self.scale();
        let z = self.phases(x);
        let d = self.input_dim();
        (0..self.output_dim())
            .map(|i| {
                let mut h = DMatrix::zeros(d, d);
                for m in 0..self.num_features() {
                    let coef = -k * self.w[(i, m)] * z[m].cos();
                    if coef == 0.0 {
                        continue;
                    }
                    let sm = self.s.row(m);
                    h += sm.transpose() * sm * coef;
                }
                h
            })
            .collect()
    }

    fn num_params(&self) -> usize {
        self.w.len()
    }

    /// Row-major head weights.
    fn params(&self) -> DVector<f64> {
        DVector::from_iterator(self.w.len(), self.w.transpose().iter().copied())
    }

    fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.num_params() {
            return shape(format!("expected {} parameters, got {}", self.num_params(), p.len()));
        }
        let (c, m) = self.w.shape();
        self.w = DMatrix::from_row_slice(c, m, p.as_slice());
        Ok(())
    }

    fn output_vjp(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let gw = g * self.features(x).transpose();
        DVector::from_iterator(gw.len(), gw.transpose().iter().copied())
    }

    fn jacobian_vjp(&self, x: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64> {
        let gw = g * self.feature_jacobian(x).transpose();
        DVector::from_iterator(gw.len(), gw.transpose().iter().copied())
    }

    fn hessian_vjp(&self, x: &DVector<f64>, v: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
        let k = self.scale();
        let ph = self.phases(x);
        // per-feature weight  −cos(z_m)/√M · S_mᵀ Z S_m
        let per_feature = DVector::from_fn(self.num_features(), |m, _| {
            let sm = self.s.row(m).transpose();
            -k * ph[m].cos() * (sm.transpose() * z * &sm)[0]
        });
        let gw = v * per_feature.transpose();
        DVector::from_iterator(gw.len(), gw.transpose().iter().copied())
    }
}

/// Closed set of models the experiment pipeline trains and serializes.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Rff(RffModel),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            Model::Linear($m) => $e,
            Model::Rff($m) => $e,
        }
    };
}

impl Predictor for Model {
    fn input_dim(&self) -> usize {
        dispatch!(self, m => m.input_dim())
    }
    fn output_dim(&self) -> usize {
        dispatch!(self, m => m.output_dim())
    }
    fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        dispatch!(self, m => m.predict(x))
    }
    fn input_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        dispatch!(self, m => m.input_jacobian(x))
    }
    fn input_hessian(&self, x: &DVector<f64>) -> HessianTensor {
        dispatch!(self, m => m.input_hessian(x))
    }
    fn num_params(&self) -> usize {
        dispatch!(self, m => m.num_params())
    }
    fn params(&self) -> DVector<f64> {
        dispatch!(self, m => m.params())
    }
    fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        dispatch!(self, m => m.set_params(p))
    }
    fn output_vjp(&self, x: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        dispatch!(self, m => m.output_vjp(x, g))
    }
    fn jacobian_vjp(&self, x: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64> {
        dispatch!(self, m => m.jacobian_vjp(x, g))
    }
    fn hessian_vjp(&self, x: &DVector<f64>, v: &DVector<f64>, z: &DMatrix<f64>) -> DVector<f64> {
        dispatch!(self, m => m.hessian_vjp(x, v, z))
    }
}

/// JSON layout: shape metadata plus row-major number arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelJson {
    Linear { d: usize, c: usize, w: Vec<f64>, b: Vec<f64> },
    Rff { d: usize, c: usize, m: usize, s: Vec<f64>, b: Vec<f64>, w: Vec<f64> },
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn from_row_major(rows: usize, cols: usize, v: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return shape(format!("{what}: expected {} numbers, got {}", rows * cols, v.len()));
    }
    Ok(DMatrix::from_row_slice(rows, cols, v))
}

impl From<&Model> for ModelJson {
    fn from(m: &Model) -> Self {
        match m {
            Model::Linear(l) => ModelJson::Linear {
                d: l.input_dim(),
                c: l.output_dim(),
                w: row_major(&l.w),
                b: l.b.iter().copied().collect(),
            },
            Model::Rff(r) => ModelJson::Rff {
                d: r.input_dim(),
                c: r.output_dim(),
                m: r.num_features(),
                s: row_major(&r.s),
                b: r.b.iter().copied().collect(),
                w: row_major(&r.w),
            },
        }
    }
}

impl TryFrom<ModelJson> for Model {
    type Error = MixregError;

    fn try_from(j: ModelJson) -> Result<Self> {
        match j {
            ModelJson::Linear { d, c, w, b } => {
                let w = from_row_major(c, d, &w, "W")?;
                if b.len() != c {
                    return shape("b length differs from c");
                }
                Ok(Model::Linear(LinearModel::new(w, DVector::from_vec(b))?))
            }
            ModelJson::Rff { d, c, m, s, b, w } => {
                let s = from_row_major(m, d, &s, "S")?;
                let w = from_row_major(c, m, &w, "w")?;
                if b.len() != m {
                    return shape("B length differs from M");
                }
                Ok(Model::Rff(RffModel::new(s, DVector::from_vec(b), w)?))
            }
        }
    }
}

impl Serialize for Model {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ModelJson::from(self).serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Model {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let j = ModelJson::deserialize(de)?;
        Model::try_from(j).map_err(serde::de::Error::custom)
    }
}

/// Both models are `f(x) = Θ ψ(x)` for a parameter-free basis `ψ`: `[x; 1]`
/// for the affine model and `φ` for random features. Training caches `ψ`
/// and `∂ψ/∂x` on fixed points through this view.
impl Model {
    pub fn basis(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Model::Linear(l) => x.clone().insert_row(l.input_dim(), 1.0),
            Model::Rff(r) => r.features(x),
        }
    }

    /// `∂ψ/∂x`, k×d.
    pub fn basis_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self {
            Model::Linear(l) => {
                let d = l.input_dim();
                DMatrix::identity(d, d).insert_row(d, 0.0)
            }
            Model::Rff(r) => r.feature_jacobian(x),
        }
    }

    /// `Θ`, c×k.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        match self {
            Model::Linear(l) => {
                let mut t = l.w.clone().insert_column(l.input_dim(), 0.0);
                t.set_column(l.input_dim(), &l.b);
                t
            }
            Model::Rff(r) => r.w.clone(),
        }
    }

    /// Parameter vector for a c×k gradient with respect to `Θ`.
    pub fn params_from_weight_grad(&self, g: &DMatrix<f64>) -> DVector<f64> {
        let body = g.columns(0, self.input_dim_or_features()).transpose();
        let mut p: Vec<f64> = body.iter().copied().collect();
        if let Model::Linear(l) = self {
            p.extend(g.column(l.input_dim()).iter());
        }
        DVector::from_vec(p)
    }

    fn input_dim_or_features(&self) -> usize {
        match self {
            Model::Linear(l) => l.input_dim(),
            Model::Rff(r) => r.num_features(),
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Model> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn linear_identity_and_homogeneity() {
        let m = LinearModel::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(m.predict(&v(&[1.0, 2.0])), v(&[1.0, 2.0]));
        let m = LinearModel::new(DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.3, 0.0, 4.0]), DVector::zeros(2))
            .unwrap();
        let x = v(&[0.7, -1.3, 2.2]);
        // scaling by 2 is exact in floating point
        assert_eq!(m.predict(&(&x * 2.0)), m.predict(&x) * 2.0);
        assert_eq!(m.input_jacobian(&x), m.w);
        assert!(m.input_hessian(&x).iter().all(|h| h.iter().all(|&e| e == 0.0)));
    }

    #[test]
    fn linear_se_gradient_is_outer_product() {
        let m = LinearModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]), v(&[0.1, -0.2])).unwrap();
        let x = v(&[0.3, -0.8]);
        let y = v(&[1.0, 0.0]);
        let g = m.param_gradient(LossKind::SquaredError, &x, &y).unwrap();
        let r = m.predict(&x) - &y;
        let gw = &r * x.transpose();
        assert_eq!(&g.as_slice()[..4], &[gw[(0, 0)], gw[(0, 1)], gw[(1, 0)], gw[(1, 1)]]);
        assert_eq!(&g.as_slice()[4..], r.as_slice());
        let at_target = m.param_gradient(LossKind::SquaredError, &x, &m.predict(&x)).unwrap();
        assert!(at_target.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn rff_zero_head_and_stationary_point() {
        let m = init_rff(2, 50, 10.0, 1, 3).unwrap();
        assert_eq!(m.predict(&v(&[0.3, 0.1]))[0], 0.0);
        let mut z = m.clone();
        z.b = DVector::zeros(50);
        z.w = DMatrix::from_element(1, 50, 0.7);
        assert!(z.input_jacobian(&v(&[0.0, 0.0])).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn rff_features_bounded() {
        let m = init_rff(2, 64, 10.0, 2, 8).unwrap();
        let bound = 1.0 / 8.0;
        for k in 0..20 {
            let x = v(&[k as f64 * 0.1, -0.3]);
            assert!(m.features(&x).iter().all(|p| p.abs() <= bound + 1e-16));
        }
        assert!(m.b.iter().all(|&b| (0.0..2.0 * std::f64::consts::PI).contains(&b)));
    }

    #[test]
    fn init_rff_rejects_bad_args() {
        assert!(init_rff(2, 0, 10.0, 1, 0).is_err());
        assert!(init_rff(2, 10, 0.0, 1, 0).is_err());
        assert!(init_rff(2, 10, -1.0, 1, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut r = init_rff(2, 7, 3.0, 2, 1).unwrap();
        r.w = DMatrix::from_fn(2, 7, |i, j| (i * 7 + j) as f64 * 0.1 - 0.3);
        let m = Model::Rff(r);
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"kind\":\"rff\""));
        let back: Model = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let lin = Model::Linear(LinearModel::new(DMatrix::from_row_slice(1, 2, &[1.5, -2.0]), v(&[0.25])).unwrap());
        let back: Model = serde_json::from_str(&serde_json::to_string(&lin).unwrap()).unwrap();
        assert_eq!(back, lin);
        let bad = r#"{"kind":"linear","d":2,"c":1,"w":[1.0],"b":[0.0]}"#;
        assert!(serde_json::from_str::<Model>(bad).is_err());
    }

    #[test]
    fn basis_view_matches_predict() {
        let x = v(&[0.4, -1.1]);
        let mut lin = LinearModel::zeros(2, 2);
        lin.set_params(&DVector::from_fn(6, |i, _| i as f64 - 2.5)).unwrap();
        let mut rff = init_rff(2, 9, 2.0, 2, 4).unwrap();
        rff.w = DMatrix::from_fn(2, 9, |i, j| (i as f64 - j as f64) * 0.3);
        for m in [Model::Linear(lin), Model::Rff(rff)] {
            let t = m.weight_matrix();
            assert!((&t * m.basis(&x) - m.predict(&x)).abs().max() < 1e-14);
            assert!((&t * m.basis_jacobian(&x) - m.input_jacobian(&x)).abs().max() < 1e-14);
            let g = DVector::from_vec(vec![0.7, -0.2]);
            let via_basis = m.params_from_weight_grad(&(&g * m.basis(&x).transpose()));
            assert!((via_basis - m.output_vjp(&x, &g)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut m = Model::Linear(LinearModel::zeros(3, 2));
        let p = DVector::from_fn(8, |i, _| i as f64);
        m.set_params(&p).unwrap();
        assert_eq!(m.params(), p);
        assert!(m.set_params(&DVector::zeros(3)).is_err());
    }
}
