//! C ABI over `flowens`.
//!
//! Models and datasets are opaque heap handles created by `*_new`,
//! `*_generate` or `*_load` and released with the matching `*_free`.
//! Every fallible call returns a [`FlowensStatus`]; on failure the message
//! is kept per thread and read with [`flowens_last_error_message`].
//! Arrays are row-major `double` buffers with explicit lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use flowens::ensembles::{load_model, save_model, train_ensemble, AnyModel, ModelKind, ModelSpec};
use flowens::environments::{collect, Dataset, EnvKind, Policy};
use flowens::training::TrainConfig;
use flowens::uncertainty::{epistemic_mi, SamplingConfig};
use flowens::Error;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowensStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    Numeric = 7,
    Estimator = 8,
    Panic = 9,
}

/// A trained or freshly initialised model.
pub struct FlowensModel {
    inner: AnyModel,
}

/// Input/output pairs collected from an environment.
pub struct FlowensDataset {
    inner: Dataset,
}

/// Uncertainty at one input, in nats.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlowensUncertainty {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    /// Sample rows drawn by the estimator.
    pub n_samples: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn status_of(e: &Error) -> FlowensStatus {
    match e {
        Error::Shape(_) | Error::ComponentIndex { .. } => FlowensStatus::Shape,
        Error::Config(_) | Error::Usage(_) => FlowensStatus::Config,
        Error::Io { .. } => FlowensStatus::Io,
        Error::Format(_) => FlowensStatus::Format,
        Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::GpFit(_) | Error::Scoring { .. } => {
            FlowensStatus::Numeric
        }
        Error::Estimator(_) => FlowensStatus::Estimator,
        Error::State(_) => FlowensStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> FfiResult) -> FlowensStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FlowensStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            FlowensStatus::NullPointer
        }
        Ok(Err(Failure::Arg(m))) => {
            set_last_error(m);
            FlowensStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            FlowensStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn parse<T: std::str::FromStr<Err = Error>>(p: *const c_char, what: &'static str) -> FfiResult<T> {
    Ok(text(p, what)?.parse::<T>()?)
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> FfiResult<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model<'a>(p: *const FlowensModel) -> FfiResult<&'a FlowensModel> {
    p.as_ref().ok_or(Failure::Null("model"))
}

unsafe fn dataset<'a>(p: *const FlowensDataset) -> FfiResult<&'a FlowensDataset> {
    p.as_ref().ok_or(Failure::Null("dataset"))
}

fn need(len: usize, want: usize, what: &str) -> FfiResult {
    if len != want {
        return Err(Failure::Arg(format!("{what} has length {len}, expected {want}")));
    }
    Ok(())
}

/// Library version, a static nul-terminated string.
#[no_mangle]
pub extern "C" fn flowens_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn flowens_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Collects `n` rows from environment `env` ("hetero", "bimodal",
/// "wet_chicken", "pendulum") under `policy` ("random", "heuristic").
///
/// # Safety
/// `env` and `policy` must be nul-terminated strings; `out` must be valid
/// for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn flowens_dataset_generate(
    env: *const c_char,
    policy: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut FlowensDataset,
) -> FlowensStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let env: EnvKind = parse(env, "env")?;
        let policy: Policy = parse(policy, "policy")?;
        let inner = collect(env, policy, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
        *out = Box::into_raw(Box::new(FlowensDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from row-major arrays: `x` holds `n_rows * x_dim`
/// values and `y` holds `n_rows * y_dim` values of environment `env`.
///
/// # Safety
/// `x` and `y` must point to arrays of the stated lengths; `out` must be
/// valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn flowens_dataset_from_arrays(
    env: *const c_char,
    x: *const f64,
    x_len: usize,
    y: *const f64,
    y_len: usize,
    n_rows: usize,
    out: *mut *mut FlowensDataset,
) -> FlowensStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let env: EnvKind = parse(env, "env")?;
        need(x_len, n_rows * env.x_dim(), "x")?;
        need(y_len, n_rows * env.y_dim(), "y")?;
        let xs = Array2::from_shape_vec((n_rows, env.x_dim()), slice(x, x_len, "x")?.to_vec()).expect("length checked");
        let ys = Array2::from_shape_vec((n_rows, env.y_dim()), slice(y, y_len, "y")?.to_vec()).expect("length checked");
        let inner = Dataset::new(xs, ys, env, Policy::Random)?;
        *out = Box::into_raw(Box::new(FlowensDataset { inner }));
        Ok(())
    })
}

/// Rows in the dataset, 0 for NULL.
///
/// # Safety
/// `ds` must be NULL or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn flowens_dataset_len(ds: *const FlowensDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Copies inputs and outputs into row-major buffers of exactly
/// `len * x_dim` and `len * y_dim` values.
///
/// # Safety
/// `ds` must be a live dataset handle; buffers must hold the stated
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn flowens_dataset_copy(
    ds: *const FlowensDataset,
    x_out: *mut f64,
    x_len: usize,
    y_out: *mut f64,
    y_len: usize,
) -> FlowensStatus {
    guard(|| {
        let d = &dataset(ds)?.inner;
        need(x_len, d.x.len(), "x_out")?;
        need(y_len, d.y.len(), "y_out")?;
        for (o, v) in slice_mut(x_out, x_len, "x_out")?.iter_mut().zip(d.x.iter()) {
            *o = *v;
        }
        for (o, v) in slice_mut(y_out, y_len, "y_out")?.iter_mut().zip(d.y.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowens_dataset_free(ds: *mut FlowensDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fresh model of `kind` ("nflows_out", "nflows_base", "nflows", "pne",
/// "mc_dropout", "gp") with the default architecture for `env`.
///
/// # Safety
/// `kind` and `env` must be nul-terminated strings; `out` must be valid for
/// one pointer write.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_new(
    kind: *const c_char,
    env: *const c_char,
    seed: u64,
    out: *mut *mut FlowensModel,
) -> FlowensStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let kind: ModelKind = parse(kind, "kind")?;
        let env: EnvKind = parse(env, "env")?;
        if kind == ModelKind::Fixed {
            return Err(Failure::Arg("fixed mixtures have no default construction".into()));
        }
        let spec = ModelSpec::for_env(kind, env);
        let inner = AnyModel::build(&spec, &mut ChaCha8Rng::seed_from_u64(seed))?;
        *out = Box::into_raw(Box::new(FlowensModel { inner }));
        Ok(())
    })
}

/// Trains for `steps` minibatch steps (a full refit for Gaussian
/// processes). The last minibatch loss goes to `final_loss` when it is not
/// NULL (NaN when no steps ran).
///
/// # Safety
/// `m` and `ds` must be live handles; `final_loss` must be NULL or valid
/// for one write.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_train(
    m: *mut FlowensModel,
    ds: *const FlowensDataset,
    steps: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    final_loss: *mut f64,
) -> FlowensStatus {
    guard(|| {
        let m = m.as_mut().ok_or(Failure::Null("model"))?;
        let d = &dataset(ds)?.inner;
        if batch_size == 0 || !(lr > 0.0 && lr.is_finite()) {
            return Err(Failure::Arg("batch_size and lr must be positive".into()));
        }
        let cfg = TrainConfig { steps, batch_size, lr };
        let losses = train_ensemble(&mut m.inner, d, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        if !final_loss.is_null() {
            *final_loss = losses.last().copied().unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Input and output dimensions and component count, each written when
/// its pointer is not NULL.
///
/// # Safety
/// `m` must be a live handle; non-NULL pointers must be valid for one
/// write.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_dims(
    m: *const FlowensModel,
    x_dim: *mut usize,
    y_dim: *mut usize,
    n_components: *mut usize,
) -> FlowensStatus {
    guard(|| {
        let spec = model(m)?.inner.spec();
        for (p, v) in [(x_dim, spec.x_dim), (y_dim, spec.y_dim), (n_components, spec.components)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Mixture log-density of `n_rows` outputs (row-major in `y`) at input `x`.
/// Fails on an unfitted Gaussian process.
///
/// # Safety
/// Arrays must hold the stated lengths; `out` must hold `n_rows` values.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_log_prob(
    m: *const FlowensModel,
    x: *const f64,
    x_len: usize,
    y: *const f64,
    y_len: usize,
    n_rows: usize,
    out: *mut f64,
    out_len: usize,
) -> FlowensStatus {
    guard(|| {
        let d = model(m)?.inner.density()?;
        need(x_len, d.x_dim(), "x")?;
        need(y_len, n_rows * d.y_dim(), "y")?;
        need(out_len, n_rows, "out")?;
        let ys = Array2::from_shape_vec((n_rows, d.y_dim()), slice(y, y_len, "y")?.to_vec()).expect("length checked");
        let lp = d.mixture_log_prob(slice(x, x_len, "x")?, &ys)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&lp);
        Ok(())
    })
}

/// `n` mixture draws at input `x`, row-major into `out`
/// (`n * y_dim` values).
///
/// # Safety
/// `x` must hold `x_len` values and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_sample(
    m: *const FlowensModel,
    x: *const f64,
    x_len: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> FlowensStatus {
    guard(|| {
        let d = model(m)?.inner.density()?;
        need(x_len, d.x_dim(), "x")?;
        need(out_len, n * d.y_dim(), "out")?;
        let s = d.mixture_sample(slice(x, x_len, "x")?, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
        for (o, v) in slice_mut(out, out_len, "out")?.iter_mut().zip(s.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Total, aleatoric and epistemic uncertainty at input `x` with the
/// model's default estimator and sample budget.
///
/// # Safety
/// `x` must hold `x_len` values; `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_uncertainty(
    m: *const FlowensModel,
    x: *const f64,
    x_len: usize,
    seed: u64,
    out: *mut FlowensUncertainty,
) -> FlowensStatus {
    guard(|| {
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        let d = model(m)?.inner.density()?;
        need(x_len, d.x_dim(), "x")?;
        let r = epistemic_mi(d, slice(x, x_len, "x")?, &SamplingConfig::for_model(d), seed)?;
        *out = FlowensUncertainty {
            total: r.total,
            aleatoric: r.aleatoric,
            epistemic: r.epistemic,
            n_samples: r.n_total_samples as u64,
        };
        Ok(())
    })
}

/// Writes a checkpoint to `path` (plus `path.manifest`).
///
/// # Safety
/// `m` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_save(m: *const FlowensModel, path: *const c_char) -> FlowensStatus {
    guard(|| {
        let m = model(m)?;
        let path = PathBuf::from(text(path, "path")?);
        save_model(&m.inner, &path)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` must be valid for one
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_load(path: *const c_char, out: *mut *mut FlowensModel) -> FlowensStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = PathBuf::from(text(path, "path")?);
        let inner = load_model(&path)?;
        *out = Box::into_raw(Box::new(FlowensModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flowens_model_free(m: *mut FlowensModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
