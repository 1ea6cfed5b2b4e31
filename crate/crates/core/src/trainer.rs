//! Minibatch SGD under four objectives: ERM, Mixup, ERM on the modified
//! pairs and the approximate Mixup risk.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beta_moments::coefficients;
use crate::dataset::{modify, Dataset};
use crate::error::{domain, MixregError, Result};
use crate::evaluate;
use crate::loss::{self, LossKind};
use crate::mixup::{mixup_minibatch, LambdaMode};
use crate::model::{init_rff, LinearModel, Model, Predictor};
use crate::regularization::{example_cotangents, prepare};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Mixup,
    ErmModified,
    MixupApprox,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::ErmModified, Method::Mixup, Method::MixupApprox];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Mixup => "mixup",
            Method::ErmModified => "erm_modified",
            Method::MixupApprox => "mixup_approx",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = MixregError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "mixup" => Ok(Method::Mixup),
            "erm_modified" => Ok(Method::ErmModified),
            "mixup_approx" => Ok(Method::MixupApprox),
            other => domain(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Linear,
    Rff { m: usize, sigma_rff: f64 },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Rff { m: 1000, sigma_rff: 10.0 }
    }
}

impl ModelSpec {
    /// Zero-initialized trainable parameters; RFF frequencies drawn from `seed`.
    pub fn build(&self, d: usize, c: usize, seed: u64) -> Result<Model> {
        Ok(match *self {
            ModelSpec::Linear => Model::Linear(LinearModel::zeros(d, c)),
            ModelSpec::Rff { m, sigma_rff } => Model::Rff(init_rff(d, m, sigma_rff, c, seed)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    pub drop_r2: bool,
    pub model: ModelSpec,
    pub loss: LossKind,
    pub lambda_mode: LambdaMode,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            alpha: 1.0,
            epochs: 500,
            batch_size: 50,
            step_size: 5.0,
            seed: 0,
            drop_r2: true,
            model: ModelSpec::default(),
            loss: LossKind::Logistic,
            lambda_mode: LambdaMode::PerPair,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return domain(format!("batch size {} must lie in [1, n = {n}]", self.batch_size));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return domain("step size must be positive");
        }
        if self.method != Method::Erm && !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return domain(format!("alpha must be positive for {}", self.method.name()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return domain("momentum must lie in [0, 1) and weight decay be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    /// Mean minibatch objective over the epoch.
    pub objective: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "epoch,objective,train_acc,test_acc,test_loss";

    pub fn to_csv_string(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", r.epoch, r.objective, r.train_acc, r.test_acc, r.test_loss));
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Scalar `{0, 1}` labels for the logistic loss, one-hot otherwise.
pub fn adapt_targets(ds: &Dataset, kind: LossKind) -> Result<Dataset> {
    if kind == LossKind::Logistic && ds.output_dim() == 2 {
        ds.to_binary_scalar()
    } else {
        Ok(ds.clone())
    }
}

/// Basis rows `ψ(xᵢ)ᵀ` of a fixed point set.
fn basis_rows(model: &Model, x: &DMatrix<f64>) -> DMatrix<f64> {
    let rows: Vec<_> = (0..x.nrows()).map(|i| model.basis(&x.row(i).transpose()).transpose()).collect();
    DMatrix::from_rows(&rows)
}

/// Accuracy and mean label cross-entropy from cached basis rows.
fn eval_cached(theta: &DMatrix<f64>, psi: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, f64)> {
    let u_all = psi * theta.transpose();
    let (mut hits, mut ce) = (0usize, 0.0);
    for (i, &l) in labels.iter().enumerate() {
        let u = u_all.row(i).transpose();
        hits += usize::from(loss::probabilities(&u).argmax().0 == l);
        ce += evaluate::label_loss(&u, l)?;
    }
    let n = labels.len().max(1) as f64;
    Ok((hits as f64 / n, ce / n))
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

/// Mean loss and `Θ`-gradient over rows `(ψ(x_r), y_r)`.
fn batch_loss_grad(
    theta: &DMatrix<f64>,
    kind: LossKind,
    psi: &DMatrix<f64>,
    y: &DMatrix<f64>,
    idx: &[usize],
) -> Result<(f64, DMatrix<f64>)> {
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(theta.nrows(), theta.ncols());
    for &r in idx {
        let u = theta * psi.row(r).transpose();
        let b = loss::bundle(kind, &y.row(r).transpose(), &u)?;
        value += b.value;
        grad += &b.grad_u * psi.row(r);
    }
    let m = idx.len() as f64;
    Ok((value / m, grad / m))
}

/// Builds the model from `cfg.model` and trains it.
pub fn train(ds_train: &Dataset, ds_test: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    let c = if cfg.loss == LossKind::Logistic { 1 } else { ds_train.output_dim() };
    let model = cfg.model.build(ds_train.input_dim(), c, cfg.seed)?;
    train_model(model, ds_train, ds_test, cfg)
}

/// Trains a given model in place of a freshly built one.
pub fn train_model(mut model: Model, ds_train: &Dataset, ds_test: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    let train = adapt_targets(ds_train, cfg.loss)?;
    let test = adapt_targets(ds_test, cfg.loss)?;
    let n = train.len();
    cfg.validate(n)?;
    if model.output_dim() != train.output_dim() || model.input_dim() != train.input_dim() {
        return domain("model dimensions do not match the training data");
    }

    let coeffs = if cfg.method == Method::Erm { None } else { Some(coefficients(cfg.alpha)?) };
    let psi_train = basis_rows(&model, train.inputs());
    let psi_test = basis_rows(&model, test.inputs());
    let (train_labels, test_labels) = (train.labels(), test.labels());
    let modified = match (cfg.method, coeffs) {
        (Method::ErmModified, Some(c)) => {
            let m = modify(&train, c.theta_bar)?.data;
            Some((basis_rows(&model, m.inputs()), m))
        }
        _ => None,
    };
    let prepared = match (cfg.method, coeffs) {
        (Method::MixupApprox, Some(c)) => {
            let prep = prepare(&train, &c)?;
            let dpsi: Vec<DMatrix<f64>> = prep.iter().map(|p| model.basis_jacobian(&p.x_tilde)).collect();
            let xt: Vec<_> = prep.iter().map(|p| p.x_tilde.transpose()).collect();
            let psi = basis_rows(&model, &DMatrix::from_rows(&xt));
            Some((prep, psi, dpsi))
        }
        _ => None,
    };

    // independent streams for shuffling and for Mixup draws
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mix_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = DVector::zeros(model.num_params());
    let mut trace = TrainTrace::default();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut obj_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let theta = model.weight_matrix();
            let mut extra = None;
            let (value, grad_theta) = match cfg.method {
                Method::Erm => batch_loss_grad(&theta, cfg.loss, &psi_train, train.outputs(), idx)?,
                Method::ErmModified => {
                    let (psi, m) = modified.as_ref().expect("modified data");
                    batch_loss_grad(&theta, cfg.loss, psi, m.outputs(), idx)?
                }
                Method::Mixup => {
                    let bx = rows(train.inputs(), idx);
                    let by = rows(train.outputs(), idx);
                    let mixed = mixup_minibatch(&bx, &by, cfg.alpha, cfg.lambda_mode, &mut mix_rng)?;
                    let all: Vec<usize> = (0..idx.len()).collect();
                    batch_loss_grad(&theta, cfg.loss, &basis_rows(&model, &mixed.x), &mixed.y, &all)?
                }
                Method::MixupApprox => {
                    let (prep, psi, dpsi) = prepared.as_ref().expect("prepared");
                    let mut value = 0.0;
                    let mut g = DMatrix::zeros(theta.nrows(), theta.ncols());
                    let mut gh = DVector::zeros(model.num_params());
                    for &i in idx {
                        let p = &prep[i];
                        let u = &theta * psi.row(i).transpose();
                        let jf = &theta * &dpsi[i];
                        let hess = if cfg.drop_r2 { None } else { Some(model.input_hessian(&p.x_tilde)) };
                        let c = example_cotangents(cfg.loss, p, &u, &jf, hess.as_ref())?;
                        value += c.value;
                        g += &c.wrt_output * psi.row(i) + &c.wrt_jacobian * dpsi[i].transpose();
                        if let Some(v) = &c.hessian_weight {
                            gh += model.hessian_vjp(&p.x_tilde, v, &p.cov.sxx);
                        }
                    }
                    let m = idx.len() as f64;
                    extra = Some(gh / m);
                    (value / m, g / m)
                }
            };
            let mut grad = model.params_from_weight_grad(&grad_theta);
            if let Some(e) = extra {
                grad += e;
            }
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(MixregError::NonFinite(format!(
                    "objective diverged at epoch {epoch}; the step size {} is likely too large",
                    cfg.step_size
                )));
            }
            obj_sum += value;
            batches += 1;
            let mut p = model.params();
            velocity = &velocity * cfg.momentum + grad + &p * cfg.weight_decay;
            p -= &velocity * cfg.step_size;
            model.set_params(&p)?;
        }
        let theta = model.weight_matrix();
        let (train_acc, _) = eval_cached(&theta, &psi_train, &train_labels)?;
        let (test_acc, test_loss) = eval_cached(&theta, &psi_test, &test_labels)?;
        trace.rows.push(TraceRow { epoch, objective: obj_sum / batches as f64, train_acc, test_acc, test_loss });
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_two_moons;

    fn small_cfg(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            epochs: 5,
            batch_size: 10,
            step_size: 1.0,
            model: ModelSpec::Rff { m: 30, sigma_rff: 2.0 },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_and_trace_length() {
        let ds = make_two_moons(40, 0.1, 1).unwrap();
        let (tr, te) = ds.split(0.5).unwrap();
        for m in Method::ALL {
            let (a, ta) = train(&tr, &te, &small_cfg(m)).unwrap();
            let (b, tb) = train(&tr, &te, &small_cfg(m)).unwrap();
            assert_eq!(a, b);
            assert_eq!(ta, tb);
            assert_eq!(ta.rows.len(), 5);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let ds = make_two_moons(20, 0.1, 1).unwrap();
        let mut c = small_cfg(Method::Mixup);
        c.batch_size = 50;
        assert!(train(&ds, &ds, &c).is_err());
        let mut c = small_cfg(Method::Mixup);
        c.alpha = 0.0;
        assert!(train(&ds, &ds, &c).is_err());
        let mut c = small_cfg(Method::Erm);
        c.step_size = 1e200;
        c.loss = LossKind::SquaredError;
        c.model = ModelSpec::Linear;
        assert!(matches!(train(&ds, &ds, &c), Err(MixregError::NonFinite(_))));
    }
}
