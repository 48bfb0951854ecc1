//! C ABI over the `wpsgd` library.
//!
//! Every function returns a [`WpsgdStatus`]; results come back through out
//! pointers. Datasets and models are opaque handles owned by the caller and
//! released with their `_free` function. After a failure,
//! [`wpsgd_last_error`] describes it on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use wpsgd::aggregation::{compute_weights, DelayProfile};
use wpsgd::cluster::{
    run_direct_average_unbalanced, run_periodic_averaging, run_simuparallel, run_wpsgd, ClusterSpec,
};
use wpsgd::config::ExperimentConfig;
use wpsgd::data::{generate_analog, read_sparse_text, GenSpec};
use wpsgd::delay::{run_delay_wpsgd, validate_step_size, CheckRoot, DelayConfig};
use wpsgd::error::Error;
use wpsgd::harness;
use wpsgd::objective::{error_rate, objective_value, LossParams};
use wpsgd::sparse::{Dataset, DenseModel};
use wpsgd::theory::corollary4_holds;
use wpsgd::trainer::{train, TrainConfig};

/// Result of every exported call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpsgdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    /// The run itself failed: non-finite weights, a stalled delay server.
    Training = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WpsgdAlgorithm {
    Sequential = 0,
    SimuParallel = 1,
    Wpsgd = 2,
    DirectAverage = 3,
    PeriodicAverage = 4,
    DelayWpsgd = 5,
}

/// Training parameters. Array pointers may be null when their length is
/// zero; `shares` may be null for equal data shares.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WpsgdTrainParams {
    pub algorithm: WpsgdAlgorithm,
    pub lambda: f64,
    pub eta: f64,
    pub iterations: u64,
    pub seed: u64,
    pub init_value: f64,
    /// Per-node delays; `k` entries, at least one zero. Ignored for
    /// sequential training.
    pub delays: *const u64,
    pub k: usize,
    pub shares: *const f64,
    pub partition_seed: u64,
    /// Contracting rate in (0, 1]; 0 selects `1 - eta * lambda`.
    pub rate: f64,
    /// Averaging span for periodic averaging.
    pub span: u64,
    pub threads: usize,
    /// Maximum delay `M` for delay-wpsgd.
    pub max_delay: usize,
    /// Use the `M`-th root for every check instead of the per-update lag.
    pub max_delay_root: bool,
}

/// Opaque dataset handle.
pub struct WpsgdDataset(Dataset);

/// Opaque model handle.
pub struct WpsgdModel(DenseModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WpsgdStatus {
    match e {
        Error::Io { .. } => WpsgdStatus::Io,
        Error::Parse { .. } | Error::Csv(_) => WpsgdStatus::Parse,
        Error::Config(_) => WpsgdStatus::Config,
        Error::NonFinite { .. } | Error::NoAdmissibleSample { .. } => WpsgdStatus::Training,
        _ => WpsgdStatus::InvalidArgument,
    }
}

/// Runs `f`, turning errors and panics into a status plus a last-error message.
fn guard(f: impl FnOnce() -> Result<(), (WpsgdStatus, String)>) -> WpsgdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WpsgdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            WpsgdStatus::Panic
        }
    }
}

fn lib<T>(r: wpsgd::error::Result<T>) -> Result<T, (WpsgdStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (WpsgdStatus, String) {
    (WpsgdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (WpsgdStatus, String) {
    (WpsgdStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (WpsgdStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid("path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (WpsgdStatus, String)> {
    match (p.is_null(), len) {
        (_, 0) => Ok(&[]),
        (true, _) => Err(null(what)),
        (false, n) => Ok(std::slice::from_raw_parts(p, n)),
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (WpsgdStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (WpsgdStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn wpsgd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a sparse text file. `dim` of 0 infers the dimension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_dataset_read(
    path: *const c_char,
    dim: usize,
    out: *mut *mut WpsgdDataset,
) -> WpsgdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = lib(read_sparse_text(path_arg(path)?, (dim > 0).then_some(dim)))?;
        *out = Box::into_raw(Box::new(WpsgdDataset(d)));
        Ok(())
    })
}

/// Generates the synthetic train/test pair.
///
/// # Safety
/// `out_train` and `out_test` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_dataset_generate(
    n_train: usize,
    n_test: usize,
    dim: usize,
    nnz_min: usize,
    nnz_max: usize,
    seed: u64,
    normalize: bool,
    out_train: *mut *mut WpsgdDataset,
    out_test: *mut *mut WpsgdDataset,
) -> WpsgdStatus {
    guard(|| {
        let out_train = out_arg(out_train, "out_train")?;
        let out_test = out_arg(out_test, "out_test")?;
        let spec = GenSpec {
            n_train,
            n_test,
            dim,
            nnz_min,
            nnz_max,
            seed,
            normalize,
        };
        let (a, b) = lib(generate_analog(&spec))?;
        *out_train = Box::into_raw(Box::new(WpsgdDataset(a)));
        *out_test = Box::into_raw(Box::new(WpsgdDataset(b)));
        Ok(())
    })
}

/// # Safety
/// `d` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_dataset_len(d: *const WpsgdDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `d` must be a live dataset handle or null.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_dataset_dim(d: *const WpsgdDataset) -> usize {
    d.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `d` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_dataset_free(d: *mut WpsgdDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

fn run(d: &Dataset, p: &WpsgdTrainParams, delays: &[u64], shares: &[f64]) -> wpsgd::error::Result<DenseModel> {
    let loss = LossParams::new(p.lambda, p.eta)?;
    let mut cfg = TrainConfig::new(loss, p.iterations, p.seed);
    cfg.init_value = p.init_value;
    if p.algorithm == WpsgdAlgorithm::Sequential {
        return Ok(train(d, &cfg)?.0);
    }
    let mut spec = ClusterSpec::new(DelayProfile::new(delays.to_vec())?, p.partition_seed).with_threads(p.threads.max(1));
    if !shares.is_empty() {
        spec = spec.with_shares(shares.to_vec());
    }
    let rate = if p.rate == 0.0 { loss.contraction() } else { p.rate };
    let result = match p.algorithm {
        WpsgdAlgorithm::Sequential => unreachable!(),
        WpsgdAlgorithm::SimuParallel => run_simuparallel(d, &spec, &cfg)?,
        WpsgdAlgorithm::Wpsgd => run_wpsgd(d, &spec, &cfg, rate)?,
        WpsgdAlgorithm::DirectAverage => run_direct_average_unbalanced(d, &spec, &cfg)?,
        WpsgdAlgorithm::PeriodicAverage => run_periodic_averaging(d, &spec, &cfg, p.span, rate)?,
        WpsgdAlgorithm::DelayWpsgd => {
            let mut dcfg = DelayConfig::new(p.max_delay);
            if p.max_delay_root {
                dcfg.check_root = CheckRoot::MaxDelay;
            }
            run_delay_wpsgd(d, &spec, &cfg, &dcfg, rate)?.run
        }
    };
    Ok(result.final_model)
}

/// Trains on `d` and returns the final (combined) model.
///
/// # Safety
/// `d` must be a live dataset handle, `params` a valid pointer whose arrays
/// hold `k` entries, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_train(
    d: *const WpsgdDataset,
    params: *const WpsgdTrainParams,
    out: *mut *mut WpsgdModel,
) -> WpsgdStatus {
    guard(|| {
        let d = handle(d, "dataset")?;
        let p = handle(params, "params")?;
        let out = out_arg(out, "out")?;
        let (delays, shares) = if p.algorithm == WpsgdAlgorithm::Sequential {
            (&[][..], &[][..])
        } else {
            if p.k == 0 {
                return Err(invalid("k must be at least 1"));
            }
            (slice_arg(p.delays, p.k, "delays")?, slice_arg(p.shares, p.k, "shares").unwrap_or(&[]))
        };
        let model = lib(run(&d.0, p, delays, shares))?;
        *out = Box::into_raw(Box::new(WpsgdModel(model)));
        Ok(())
    })
}

/// Runs the experiment described by a config file (same format as the CLI),
/// writing its metrics and model files when configured.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer or null.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_run_config(path: *const c_char, out: *mut *mut WpsgdModel) -> WpsgdStatus {
    guard(|| {
        let cfg = lib(ExperimentConfig::from_file(path_arg(path)?))?;
        let outcome = lib(harness::cmd_train(&cfg))?;
        if let Some(out) = out.as_mut() {
            *out = Box::into_raw(Box::new(WpsgdModel(outcome.output.final_model)));
        }
        Ok(())
    })
}

/// Reads a model file written by the CLI or [`wpsgd_model_write`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_read(path: *const c_char, out: *mut *mut WpsgdModel) -> WpsgdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = lib(harness::read_model(&path_arg(path)?))?;
        *out = Box::into_raw(Box::new(WpsgdModel(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live model handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_write(m: *const WpsgdModel, path: *const c_char) -> WpsgdStatus {
    guard(|| {
        let m = handle(m, "model")?;
        lib(harness::write_model_file(&m.0, &path_arg(path)?))
    })
}

/// # Safety
/// `m` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_dim(m: *const WpsgdModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.dim())
}

/// # Safety
/// `m` must be a live model handle or null.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_iterations(m: *const WpsgdModel) -> u64 {
    m.as_ref().map_or(0, |m| m.0.iterations)
}

/// Copies the weights into `out`, which must hold `len` values; `len` must
/// equal the model dimension.
///
/// # Safety
/// `m` must be a live model handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_weights(m: *const WpsgdModel, out: *mut f64, len: usize) -> WpsgdStatus {
    guard(|| {
        let m = handle(m, "model")?;
        if len != m.0.dim() {
            return Err(invalid(format!("buffer holds {len} values, model has {}", m.0.dim())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&m.0.weights);
        Ok(())
    })
}

/// Regularized hinge objective and error rate of `m` on `d`. Either out
/// pointer may be null.
///
/// # Safety
/// Handles must be live; out pointers valid or null.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_evaluate(
    m: *const WpsgdModel,
    d: *const WpsgdDataset,
    lambda: f64,
    out_objective: *mut f64,
    out_error_rate: *mut f64,
) -> WpsgdStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let d = handle(d, "dataset")?;
        // The step size does not enter the objective.
        let loss = lib(LossParams::new(lambda, 0.5 / lambda.max(f64::MIN_POSITIVE)))?;
        if let Some(o) = out_objective.as_mut() {
            *o = lib(objective_value(&m.0, &d.0, &loss))?;
        }
        if let Some(o) = out_error_rate.as_mut() {
            *o = lib(error_rate(&m.0, &d.0))?;
        }
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_model_free(m: *mut WpsgdModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Combination weights `rate^{T_i} / Σ rate^{T_j}` written to `out`.
///
/// # Safety
/// `delays` and `out` must be valid for `k` elements.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_compute_weights(delays: *const u64, k: usize, rate: f64, out: *mut f64) -> WpsgdStatus {
    guard(|| {
        let delays = slice_arg(delays, k, "delays")?;
        if out.is_null() && k > 0 {
            return Err(null("out"));
        }
        let w = lib(DelayProfile::new(delays.to_vec()).and_then(|p| compute_weights(&p, rate)))?;
        std::slice::from_raw_parts_mut(out, k).copy_from_slice(w.as_slice());
        Ok(())
    })
}

/// Whether `2 Σ rate^{T_i} > √k + k`.
///
/// # Safety
/// `delays` must be valid for `k` elements and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_corollary4_holds(delays: *const u64, k: usize, rate: f64, out: *mut bool) -> WpsgdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let profile = lib(DelayProfile::new(slice_arg(delays, k, "delays")?.to_vec()))?;
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(invalid(format!("rate {rate} outside (0, 1]")));
        }
        *out = corollary4_holds(&profile, rate);
        Ok(())
    })
}

/// Whether `ηλ + η β²_max c* <= (1 − ηλ)^M`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wpsgd_step_size_valid(
    lambda: f64,
    eta: f64,
    beta_sq_max: f64,
    c_star: f64,
    max_delay: usize,
    out: *mut bool,
) -> WpsgdStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let loss = lib(LossParams::new(lambda, eta))?;
        let mut cfg = DelayConfig::new(max_delay);
        cfg.c_star = c_star;
        lib(cfg.validate())?;
        *out = validate_step_size(&loss, beta_sq_max, &cfg);
        Ok(())
    })
}
