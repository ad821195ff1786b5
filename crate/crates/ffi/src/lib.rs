//! C ABI over the `eegdecode` library.
//!
//! Conventions:
//! - Every fallible function returns an [`EegStatus`]; results go through out
//!   pointers, which are written only on `EEG_OK`.
//! - Objects are opaque handles created by `*_new`/`*_load`/`*_fit` calls and
//!   released by the matching `*_free` (which accepts NULL).
//! - The message of the last failure on the calling thread is available from
//!   [`eeg_last_error`] until the next failing call on that thread.
//! - Panics never cross the boundary; they surface as `EEG_ERR_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use eegdecode::cluster::{self, ClusterConfig, ClusterError, ClusterResult, TimeGrid};
use eegdecode::dataset::{self, Dataset, DatasetError};
use eegdecode::logreg::{self, FitConfig, FitError, LogRegModel};
use eegdecode::ndarray::ArrayView2;
use eegdecode::stats;

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EegStatus {
    EEG_OK = 0,
    /// A required pointer argument was NULL.
    EEG_ERR_NULL = 1,
    /// Invalid argument or configuration.
    EEG_ERR_INVALID = 2,
    /// The input data cannot be used (unreadable, malformed, degenerate).
    EEG_ERR_DATA = 3,
    /// Internal failure, including caught panics.
    EEG_ERR_INTERNAL = 4,
    /// The caller's buffer is too small; the needed length was written.
    EEG_ERR_BUFFER = 5,
}

use EegStatus::*;

/// Loaded dataset.
pub struct EegDataset(Dataset);

/// Fitted sparse logistic regression model.
pub struct EegLogReg(LogRegModel);

/// Result of one cluster permutation test.
pub struct EegClusterResult(ClusterResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs replaced"));
}

struct Failure(EegStatus, String);

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        Failure(EEG_ERR_DATA, e.to_string())
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        let code = match e {
            FitError::Config(_) | FitError::DimensionMismatch { .. } | FitError::LabelCount(..) => EEG_ERR_INVALID,
            _ => EEG_ERR_DATA,
        };
        Failure(code, e.to_string())
    }
}

impl From<ClusterError> for Failure {
    fn from(e: ClusterError) -> Self {
        let code = match e {
            ClusterError::Config(_) | ClusterError::TooFewPermutations { .. } | ClusterError::TooManyRuns(_) => {
                EEG_ERR_INVALID
            }
            _ => EEG_ERR_DATA,
        };
        Failure(code, e.to_string())
    }
}

impl From<stats::StatsError> for Failure {
    fn from(e: stats::StatsError) -> Self {
        Failure(EEG_ERR_DATA, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EEG_ERR_NULL, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EEG_ERR_INVALID, msg.into())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EEG_OK,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EEG_ERR_INTERNAL
        }
    }
}

/// # Safety
/// `p` must be NULL or valid for `len` reads.
unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or valid for `len` writes.
unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` must be NULL or point to a live value.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn matrix<'a>(x: &'a [f64], rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>, Failure> {
    ArrayView2::from_shape((rows, cols), x).map_err(|e| invalid(format!("x: {e}")))
}

fn labels(y: &[u8]) -> Result<Vec<bool>, Failure> {
    y.iter()
        .map(|&v| match v {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(invalid(format!("labels must be 0 or 1, got {v}"))),
        })
        .collect()
}

/// NUL-terminated message of the calling thread's last failure; empty if
/// none. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn eeg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eeg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads and validates a dataset directory.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_dataset_load(path: *const c_char, out: *mut *mut EegDataset) -> EegStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ds = dataset::load_dataset(Path::new(path))?;
        *out = Box::into_raw(Box::new(EegDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle from [`eeg_dataset_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_dataset_free(ds: *mut EegDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_dataset_n_subjects(ds: *const EegDataset, out: *mut usize) -> EegStatus {
    guard(|| {
        let ds = handle(ds, "ds")?;
        output(out, 1, "out")?[0] = ds.0.subjects.len();
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_dataset_n_channels(ds: *const EegDataset, out: *mut usize) -> EegStatus {
    guard(|| {
        let ds = handle(ds, "ds")?;
        output(out, 1, "out")?[0] = ds.0.layout.len();
        Ok(())
    })
}

/// Fits an L1 logistic regression on the row-major `n_samples × n_features`
/// matrix `x` with 0/1 labels `y`. `standardize` is 0 or 1.
///
/// # Safety
/// `x` valid for `n_samples * n_features` reads, `y` for `n_samples`; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_logreg_fit(
    x: *const f64,
    n_samples: usize,
    n_features: usize,
    y: *const u8,
    lambda: f64,
    standardize: i32,
    out: *mut *mut EegLogReg,
) -> EegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_samples
            .checked_mul(n_features)
            .ok_or_else(|| invalid("n_samples * n_features overflows"))?;
        let xs = input(x, len, "x")?;
        let ys = labels(input(y, n_samples, "y")?)?;
        let cfg = FitConfig {
            lambda,
            standardize: standardize != 0,
            ..FitConfig::default()
        };
        let model = logreg::fit(matrix(xs, n_samples, n_features)?, &ys, &cfg)?;
        *out = Box::into_raw(Box::new(EegLogReg(model)));
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from [`eeg_logreg_fit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_logreg_free(m: *mut EegLogReg) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Copies the weights (in original feature units) into `out[0..len]`.
/// Fails with `EEG_ERR_BUFFER` when `len` is less than the feature count.
///
/// # Safety
/// `m` live; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn eeg_logreg_weights(m: *const EegLogReg, out: *mut f64, len: usize) -> EegStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let w = &m.0.weights;
        if len < w.len() {
            return Err(Failure(EEG_ERR_BUFFER, format!("need {} slots, got {len}", w.len())));
        }
        output(out, w.len(), "out")?.copy_from_slice(w);
        Ok(())
    })
}

/// # Safety
/// `m` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_logreg_intercept(m: *const EegLogReg, out: *mut f64) -> EegStatus {
    guard(|| {
        let m = handle(m, "model")?;
        output(out, 1, "out")?[0] = m.0.intercept;
        Ok(())
    })
}

/// # Safety
/// `m` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_logreg_n_features(m: *const EegLogReg, out: *mut usize) -> EegStatus {
    guard(|| {
        let m = handle(m, "model")?;
        output(out, 1, "out")?[0] = m.0.n_features();
        Ok(())
    })
}

/// Positive-class probabilities of the `n_samples` rows of `x`.
///
/// # Safety
/// `x` valid for `n_samples * n_features` reads; `out` for `n_samples` writes.
#[no_mangle]
pub unsafe extern "C" fn eeg_logreg_predict_proba(
    m: *const EegLogReg,
    x: *const f64,
    n_samples: usize,
    n_features: usize,
    out: *mut f64,
) -> EegStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let len = n_samples
            .checked_mul(n_features)
            .ok_or_else(|| invalid("n_samples * n_features overflows"))?;
        let p = m.0.predict_proba(matrix(input(x, len, "x")?, n_samples, n_features)?)?;
        output(out, n_samples, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Sign-flip cluster test on a row-major `n_runs × n_timepoints` AUC matrix.
/// `exact` non-zero enumerates all sign patterns (at most 20 runs) instead of
/// drawing `n_perm` random ones.
///
/// # Safety
/// `auc` valid for `n_runs * n_timepoints` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cluster_test(
    auc: *const f64,
    n_runs: usize,
    n_timepoints: usize,
    start_ms: f64,
    step_ms: f64,
    n_perm: usize,
    seed: u64,
    exact: i32,
    out: *mut *mut EegClusterResult,
) -> EegStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_runs
            .checked_mul(n_timepoints)
            .ok_or_else(|| invalid("n_runs * n_timepoints overflows"))?;
        let view = matrix(input(auc, len, "auc")?, n_runs, n_timepoints)?;
        let grid = TimeGrid { start_ms, step_ms };
        let cfg = ClusterConfig {
            n_perm,
            rng_seed: seed,
            ..ClusterConfig::default()
        };
        let res = if exact != 0 {
            cluster::enumerate_null(view, grid, &cfg)?
        } else {
            cluster::cluster_test(view, grid, &cfg)?
        };
        *out = Box::into_raw(Box::new(EegClusterResult(res)));
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a handle from [`eeg_cluster_test`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eeg_cluster_free(r: *mut EegClusterResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of clusters at or below the significance level.
///
/// # Safety
/// `r` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cluster_n_significant(r: *const EegClusterResult, out: *mut usize) -> EegStatus {
    guard(|| {
        let r = handle(r, "result")?;
        output(out, 1, "out")?[0] = r.0.significant.len();
        Ok(())
    })
}

/// Copies the pointwise p-values into `out[0..len]`; `EEG_ERR_BUFFER` when
/// `len` is less than the number of timepoints.
///
/// # Safety
/// `r` live; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn eeg_cluster_pointwise_p(r: *const EegClusterResult, out: *mut f64, len: usize) -> EegStatus {
    guard(|| {
        let r = handle(r, "result")?;
        let p = &r.0.pointwise_p;
        if len < p.len() {
            return Err(Failure(EEG_ERR_BUFFER, format!("need {} slots, got {len}", p.len())));
        }
        output(out, p.len(), "out")?.copy_from_slice(p);
        Ok(())
    })
}

/// Writes the full result as NUL-terminated JSON into `buf`. `*needed`
/// receives the size including the NUL; when `len` is too small nothing but
/// `*needed` is written and `EEG_ERR_BUFFER` is returned.
///
/// # Safety
/// `r` live; `buf` valid for `len` writes (may be NULL when `len` is 0);
/// `needed` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_cluster_to_json(
    r: *const EegClusterResult,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> EegStatus {
    guard(|| {
        let r = handle(r, "result")?;
        if needed.is_null() {
            return Err(null("needed"));
        }
        let text = serde_json::to_string(&r.0).map_err(|e| Failure(EEG_ERR_INTERNAL, e.to_string()))?;
        *needed = text.len() + 1;
        if len < text.len() + 1 {
            return Err(Failure(EEG_ERR_BUFFER, format!("need {} bytes, got {len}", text.len() + 1)));
        }
        let dst = output(buf.cast::<u8>(), len, "buf")?;
        dst[..text.len()].copy_from_slice(text.as_bytes());
        dst[text.len()] = 0;
        Ok(())
    })
}

/// ROC AUC of `scores` against 0/1 `labels`, ties counted as one half.
///
/// # Safety
/// `scores` and `labels` valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_auc(scores: *const f64, labels_: *const u8, n: usize, out: *mut f64) -> EegStatus {
    guard(|| {
        let s = input(scores, n, "scores")?;
        let l = labels(input(labels_, n, "labels")?)?;
        let a = stats::auc(s, &l)?;
        output(out, 1, "out")?[0] = a;
        Ok(())
    })
}

/// Spearman rank correlation with average ranks for ties.
///
/// # Safety
/// `x` and `y` valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eeg_spearman(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> EegStatus {
    guard(|| {
        let rho = stats::spearman(input(x, n, "x")?, input(y, n, "y")?)?;
        output(out, 1, "out")?[0] = rho;
        Ok(())
    })
}
