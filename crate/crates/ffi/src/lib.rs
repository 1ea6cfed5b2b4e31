//! C ABI for the mixreg library.
//!
//! Datasets and models are opaque heap handles released with their `_free`
//! function. Every entry point returns a [`MixregStatus`]; on failure the
//! message is kept per thread and read with [`mixreg_last_error_message`].
//! Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use mixreg::beta_moments::coefficients;
use mixreg::evaluate::rescaled_predict;
use mixreg::regularization::r_terms_general;
use mixreg::trainer::{self, Method, ModelSpec, TrainConfig};
use mixreg::verify::{self, Mutation};
use mixreg::{Dataset, LossKind, MixregError, Model, Predictor};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixregStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Shape = 3,
    Io = 4,
    Numeric = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixregMethod {
    Erm = 0,
    Mixup = 1,
    ErmModified = 2,
    MixupApprox = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixregLoss {
    SquaredError = 0,
    CrossEntropy = 1,
    Logistic = 2,
}

/// Opaque dataset handle.
pub struct MixregDataset {
    inner: Dataset,
}

/// Opaque model handle.
pub struct MixregModel {
    inner: Model,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixregCoefficients {
    pub alpha: f64,
    pub theta_bar: f64,
    pub sigma_sq: f64,
    pub gamma_sq: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixregBreakdown {
    pub erm_modified: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
    pub total: f64,
}

/// Training options. `rff_features == 0` selects the linear model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixregTrainOptions {
    pub method: MixregMethod,
    pub loss: MixregLoss,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: f64,
    pub seed: u64,
    pub rff_features: usize,
    pub sigma_rff: f64,
    /// Nonzero drops the Hessian term of the approximate objective.
    pub drop_r2: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &MixregError) -> MixregStatus {
    match e {
        MixregError::Domain(_) | MixregError::Parse(_) => MixregStatus::Domain,
        MixregError::Shape(_) => MixregStatus::Shape,
        MixregError::NonFinite(_) => MixregStatus::Numeric,
        MixregError::Io(_) | MixregError::Csv(_) | MixregError::Json(_) => MixregStatus::Io,
    }
}

struct Fail(MixregStatus, String);

impl From<MixregError> for Fail {
    fn from(e: MixregError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MixregStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last error message.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> MixregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MixregStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MixregStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MixregStatus::Domain, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn loss_kind(l: MixregLoss) -> LossKind {
    match l {
        MixregLoss::SquaredError => LossKind::SquaredError,
        MixregLoss::CrossEntropy => LossKind::CrossEntropy,
        MixregLoss::Logistic => LossKind::Logistic,
    }
}

fn method(m: MixregMethod) -> Method {
    match m {
        MixregMethod::Erm => Method::Erm,
        MixregMethod::Mixup => Method::Mixup,
        MixregMethod::ErmModified => Method::ErmModified,
        MixregMethod::MixupApprox => Method::MixupApprox,
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length
/// without the terminator. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn mixreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_theta_bar(alpha: f64, out: *mut f64) -> MixregStatus {
    guard(|| write_out(out, coefficients(alpha)?.theta_bar, "out"))
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_coefficients(alpha: f64, out: *mut MixregCoefficients) -> MixregStatus {
    guard(|| {
        let c = coefficients(alpha)?;
        write_out(
            out,
            MixregCoefficients { alpha: c.alpha, theta_bar: c.theta_bar, sigma_sq: c.sigma_sq, gamma_sq: c.gamma_sq },
            "out",
        )
    })
}

fn boxed_dataset(ds: Dataset) -> *mut MixregDataset {
    Box::into_raw(Box::new(MixregDataset { inner: ds }))
}

/// Two-moons dataset with one-hot labels (`c = 2`).
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_dataset_two_moons(
    n: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut MixregDataset,
) -> MixregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = mixreg::dataset::make_two_moons(n, noise, seed)?;
        out.write(boxed_dataset(ds));
        Ok(())
    })
}

/// Dataset from row-major `x` (`n×d`) and `y` (`n×c`).
///
/// # Safety
/// `x` and `y` must point to `n*d` and `n*c` readable doubles; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_dataset_from_arrays(
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    c: usize,
    out: *mut *mut MixregDataset,
) -> MixregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let xs = slice(x, n * d, "x")?;
        let ys = slice(y, n * c, "y")?;
        let ds = Dataset::new(DMatrix::from_row_slice(n, d, xs), DMatrix::from_row_slice(n, c, ys))?;
        out.write(boxed_dataset(ds));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_dataset_load_csv(path_: *const c_char, out: *mut *mut MixregDataset) -> MixregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = Dataset::load_csv(path(path_)?)?;
        out.write(boxed_dataset(ds));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mixreg_dataset_save_csv(ds: *const MixregDataset, path_: *const c_char) -> MixregStatus {
    guard(|| {
        as_ref(ds, "dataset")?.inner.save_csv(path(path_)?)?;
        Ok(())
    })
}

/// Writes `n`, `d` and `c`.
///
/// # Safety
/// `ds` must be a live handle; outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_dataset_shape(
    ds: *const MixregDataset,
    n: *mut usize,
    d: *mut usize,
    c: *mut usize,
) -> MixregStatus {
    guard(|| {
        let ds = &as_ref(ds, "dataset")?.inner;
        write_out(n, ds.len(), "n")?;
        write_out(d, ds.input_dim(), "d")?;
        write_out(c, ds.output_dim(), "c")
    })
}

/// Releases a dataset; null is a no-op.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixreg_dataset_free(ds: *mut MixregDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Defaults of the two-moons protocol (logistic loss, RFF with 1000
/// features, `σ = 10`, batch 50, step 5, 500 epochs).
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_train_options_default(out: *mut MixregTrainOptions) -> MixregStatus {
    guard(|| {
        let d = TrainConfig::default();
        let (m, s) = match d.model {
            ModelSpec::Rff { m, sigma_rff } => (m, sigma_rff),
            ModelSpec::Linear => (0, 0.0),
        };
        write_out(
            out,
            MixregTrainOptions {
                method: MixregMethod::Erm,
                loss: MixregLoss::Logistic,
                alpha: d.alpha,
                epochs: d.epochs,
                batch_size: d.batch_size,
                step_size: d.step_size,
                seed: d.seed,
                rff_features: m,
                sigma_rff: s,
                drop_r2: i32::from(d.drop_r2),
            },
            "out",
        )
    })
}

fn train_config(o: &MixregTrainOptions) -> TrainConfig {
    TrainConfig {
        method: method(o.method),
        loss: loss_kind(o.loss),
        alpha: o.alpha,
        epochs: o.epochs,
        batch_size: o.batch_size,
        step_size: o.step_size,
        seed: o.seed,
        model: if o.rff_features == 0 {
            ModelSpec::Linear
        } else {
            ModelSpec::Rff { m: o.rff_features, sigma_rff: o.sigma_rff }
        },
        drop_r2: o.drop_r2 != 0,
        ..TrainConfig::default()
    }
}

/// Trains a fresh model. Two-class one-hot data is converted to a scalar
/// target under the logistic loss, so the model then has one output.
///
/// # Safety
/// Handles must be live; `opts` readable; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_train(
    train: *const MixregDataset,
    test: *const MixregDataset,
    opts: *const MixregTrainOptions,
    out: *mut *mut MixregModel,
) -> MixregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = train_config(as_ref(opts, "options")?);
        let (model, _) = trainer::train(&as_ref(train, "train")?.inner, &as_ref(test, "test")?.inner, &cfg)?;
        out.write(Box::into_raw(Box::new(MixregModel { inner: model })));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_model_load_json(path_: *const c_char, out: *mut *mut MixregModel) -> MixregStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = Model::load_json(path(path_)?)?;
        out.write(Box::into_raw(Box::new(MixregModel { inner: m })));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mixreg_model_save_json(model: *const MixregModel, path_: *const c_char) -> MixregStatus {
    guard(|| {
        as_ref(model, "model")?.inner.save_json(path(path_)?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_model_dims(model: *const MixregModel, d: *mut usize, c: *mut usize) -> MixregStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        write_out(d, m.input_dim(), "d")?;
        write_out(c, m.output_dim(), "c")
    })
}

/// Releases a model; null is a no-op.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixreg_model_free(model: *mut MixregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn check_dims(m: &Model, d: usize, c: usize) -> Result<(), Fail> {
    if d != m.input_dim() || c != m.output_dim() {
        return Err(Fail(
            MixregStatus::Shape,
            format!("model maps {} -> {}, buffers are {d} -> {c}", m.input_dim(), m.output_dim()),
        ));
    }
    Ok(())
}

/// `out = f(x)`.
///
/// # Safety
/// `x` must hold `d` doubles and `out` room for `c`.
#[no_mangle]
pub unsafe extern "C" fn mixreg_predict(
    model: *const MixregModel,
    x: *const f64,
    d: usize,
    out: *mut f64,
    c: usize,
) -> MixregStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        check_dims(m, d, c)?;
        let u = m.predict(&DVector::from_column_slice(slice(x, d, "x")?));
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(u.as_ptr(), out, c);
        Ok(())
    })
}

/// `out = ȳ(1 − 1/θ̄) + f(θ̄x + (1 − θ̄)x̄)/θ̄`.
///
/// # Safety
/// `x`, `xbar` must hold `d` doubles, `ybar` and `out` `c` doubles.
#[no_mangle]
pub unsafe extern "C" fn mixreg_rescaled_predict(
    model: *const MixregModel,
    x: *const f64,
    xbar: *const f64,
    d: usize,
    ybar: *const f64,
    theta_bar: f64,
    out: *mut f64,
    c: usize,
) -> MixregStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        check_dims(m, d, c)?;
        let u = rescaled_predict(
            m,
            &DVector::from_column_slice(slice(x, d, "x")?),
            &DVector::from_column_slice(slice(xbar, d, "xbar")?),
            &DVector::from_column_slice(slice(ybar, c, "ybar")?),
            theta_bar,
        )?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::ptr::copy_nonoverlapping(u.as_ptr(), out, c);
        Ok(())
    })
}

/// Regularizer breakdown of `model` on `ds`. Two-class one-hot data is
/// converted to a scalar target under the logistic loss.
///
/// # Safety
/// Handles must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_breakdown(
    ds: *const MixregDataset,
    model: *const MixregModel,
    loss: MixregLoss,
    alpha: f64,
    out: *mut MixregBreakdown,
) -> MixregStatus {
    guard(|| {
        let kind = loss_kind(loss);
        let ds = trainer::adapt_targets(&as_ref(ds, "dataset")?.inner, kind)?;
        let b = r_terms_general(&ds, &as_ref(model, "model")?.inner, kind, &coefficients(alpha)?)?;
        write_out(
            out,
            MixregBreakdown { erm_modified: b.erm_modified, r1: b.r1, r2: b.r2, r3: b.r3, r4: b.r4, total: b.total },
            "out",
        )
    })
}

/// Runs the verification suite. `mutation` indexes none, shift_theta_bar,
/// drop_gamma, drop_sigma, flip_r3_sign. Writes 1 to `all_passed` iff every
/// check passed, and the number of checks and failures.
///
/// # Safety
/// Outputs must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mixreg_verify_run_all(
    seed: u64,
    mutation: u32,
    all_passed: *mut i32,
    checks: *mut usize,
    failed: *mut usize,
) -> MixregStatus {
    guard(|| {
        let m: Mutation = *Mutation::ALL
            .get(mutation as usize)
            .ok_or_else(|| Fail(MixregStatus::Domain, format!("mutation index {mutation} out of range")))?;
        let reports = verify::run_all(seed, m)?;
        write_out(all_passed, i32::from(verify::all_passed(&reports)), "all_passed")?;
        write_out(checks, reports.len(), "checks")?;
        write_out(failed, reports.iter().filter(|r| !r.passed).count(), "failed")
    })
}
