//! C ABI for the suppression-training laboratory.
//!
//! Conventions: every function returns an error code (0 = ok) or a pointer
//! that is null on failure; the message for the most recent failure on the
//! calling thread is available through `dasn_last_error_message`. Handles
//! are opaque and must be released with the matching `_free` function.
//! See `include/dasn.h` for the C declarations.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dasn_lab::config::RunConfig;
use dasn_lab::error::Error;
use dasn_lab::metrics::{auc, hter, ScoreSet};
use dasn_lab::model::DasnModel;
use dasn_lab::synthdata::FactorDataset;

pub const DASN_OK: i32 = 0;
pub const DASN_ERR_RUNTIME: i32 = 1;
pub const DASN_ERR_IO: i32 = 2;
pub const DASN_ERR_DIVERGENCE: i32 = 3;
pub const DASN_ERR_INVALID_ARG: i32 = 4;
pub const DASN_ERR_PANIC: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn code_of(err: &Error) -> i32 {
    match err.exit_code() {
        2 => DASN_ERR_IO,
        3 => DASN_ERR_DIVERGENCE,
        _ => DASN_ERR_RUNTIME,
    }
}

fn fail(err: Error) -> i32 {
    let code = code_of(&err);
    set_error(err.to_string());
    code
}

fn invalid(msg: &str) -> i32 {
    set_error(msg);
    DASN_ERR_INVALID_ARG
}

/// Run `f`, converting panics into an error code instead of unwinding
/// across the FFI boundary.
fn guarded(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            DASN_ERR_PANIC
        }
    }
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, i32> {
    if ptr.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

/// Copy the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn dasn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------
// Model handle
// ---------------------------------------------------------------------------

pub struct DasnModelHandle(DasnModel);

/// Load a model checkpoint. Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dasn_model_load(path: *const c_char) -> *mut DasnModelHandle {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let path = match unsafe { cstr_arg(path, "path") } {
            Ok(p) => p,
            Err(_) => return std::ptr::null_mut(),
        };
        match DasnModel::load(Path::new(path)) {
            Ok(model) => Box::into_raw(Box::new(DasnModelHandle(model))),
            Err(err) => {
                set_error(err.to_string());
                std::ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic");
        std::ptr::null_mut()
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from `dasn_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dasn_model_free(model: *mut DasnModelHandle) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Input dimension the model expects, or 0 if `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dasn_model_input_dim(model: *const DasnModelHandle) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.0.config.input_dim
}

/// Score `n_samples` rows of `input_dim` features each; writes one genuine
/// probability per sample into `out_scores`.
///
/// # Safety
/// `x` must hold `n_samples * input_dim` doubles and `out_scores` must hold
/// `n_samples` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dasn_model_infer(
    model: *const DasnModelHandle,
    x: *const f64,
    n_samples: usize,
    input_dim: usize,
    out_scores: *mut f64,
) -> i32 {
    guarded(|| {
        if model.is_null() || x.is_null() || out_scores.is_null() {
            return invalid("null pointer argument");
        }
        let model = unsafe { &(*model).0 };
        if input_dim != model.config.input_dim {
            return invalid("input_dim does not match the model");
        }
        let data = unsafe { std::slice::from_raw_parts(x, n_samples * input_dim) };
        let tensor = match dasn_lab::autodiff::Tensor::new(vec![n_samples, input_dim], data.to_vec())
        {
            Ok(t) => t,
            Err(err) => return fail(err),
        };
        match model.infer(&tensor) {
            Ok(scores) => {
                unsafe {
                    std::ptr::copy_nonoverlapping(scores.as_ptr(), out_scores, n_samples);
                }
                DASN_OK
            }
            Err(err) => fail(err),
        }
    })
}

// ---------------------------------------------------------------------------
// Dataset handle
// ---------------------------------------------------------------------------

pub struct DasnDatasetHandle(FactorDataset);

/// Load a dataset CSV. Returns null on failure.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dasn_dataset_load(path: *const c_char) -> *mut DasnDatasetHandle {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let path = match unsafe { cstr_arg(path, "path") } {
            Ok(p) => p,
            Err(_) => return std::ptr::null_mut(),
        };
        match FactorDataset::load(Path::new(path)) {
            Ok(data) => Box::into_raw(Box::new(DasnDatasetHandle(data))),
            Err(err) => {
                set_error(err.to_string());
                std::ptr::null_mut()
            }
        }
    }));
    result.unwrap_or_else(|_| {
        set_error("internal panic");
        std::ptr::null_mut()
    })
}

/// Release a dataset handle. Null is a no-op.
///
/// # Safety
/// `dataset` must come from `dasn_dataset_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dasn_dataset_free(dataset: *mut DasnDatasetHandle) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Number of samples, or 0 if `dataset` is null.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dasn_dataset_len(dataset: *const DasnDatasetHandle) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.0.len()
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

unsafe fn score_set(
    scores: *const f64,
    labels: *const u8,
    n: usize,
) -> Result<ScoreSet, i32> {
    if scores.is_null() || labels.is_null() {
        return Err(invalid("null pointer argument"));
    }
    let scores = unsafe { std::slice::from_raw_parts(scores, n) }.to_vec();
    let labels = unsafe { std::slice::from_raw_parts(labels, n) }.to_vec();
    ScoreSet::new(scores, labels).map_err(fail)
}

/// Area under the ROC curve for scores labeled 1 = genuine, 0 = spoof.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dasn_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        let set = match unsafe { score_set(scores, labels, n) } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match auc(&set) {
            Ok(v) => {
                unsafe { *out = v };
                DASN_OK
            }
            Err(err) => fail(err),
        }
    })
}

/// Half total error rate at the equal-error-rate threshold.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; out pointers must be
/// writable or null (null outputs are skipped).
#[no_mangle]
pub unsafe extern "C" fn dasn_hter(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_hter: *mut f64,
    out_threshold: *mut f64,
) -> i32 {
    guarded(|| {
        let set = match unsafe { score_set(scores, labels, n) } {
            Ok(s) => s,
            Err(code) => return code,
        };
        match hter(&set) {
            Ok((h, threshold, _, _)) => {
                unsafe {
                    if !out_hter.is_null() {
                        *out_hter = h;
                    }
                    if !out_threshold.is_null() {
                        *out_threshold = threshold;
                    }
                }
                DASN_OK
            }
            Err(err) => fail(err),
        }
    })
}

// ---------------------------------------------------------------------------
// Pipeline commands driven by a JSON run config
// ---------------------------------------------------------------------------

fn parse_config(json: &str) -> Result<RunConfig, i32> {
    let config: RunConfig = serde_json::from_str(json)
        .map_err(|e| fail(Error::Config(format!("config error: {e}"))))?;
    config.validate().map_err(fail)?;
    Ok(config)
}

/// Generate the benchmark data suite described by a JSON run config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dasn_gen_data(config_json: *const c_char) -> i32 {
    guarded(|| {
        let json = match unsafe { cstr_arg(config_json, "config_json") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config = match parse_config(json) {
            Ok(c) => c,
            Err(code) => return code,
        };
        match dasn_lab::cli::cmd_gen_data(&config) {
            Ok(()) => DASN_OK,
            Err(err) => fail(err),
        }
    })
}

/// Train per a JSON run config (non-resuming).
///
/// # Safety
/// `config_json` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dasn_train(config_json: *const c_char) -> i32 {
    guarded(|| {
        let json = match unsafe { cstr_arg(config_json, "config_json") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config = match parse_config(json) {
            Ok(c) => c,
            Err(code) => return code,
        };
        match dasn_lab::cli::cmd_train(&config, false) {
            Ok(()) => DASN_OK,
            Err(err) => fail(err),
        }
    })
}

/// Evaluate a checkpoint on the held-out domain of the configured task.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dasn_eval(
    config_json: *const c_char,
    checkpoint_path: *const c_char,
) -> i32 {
    guarded(|| {
        let json = match unsafe { cstr_arg(config_json, "config_json") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let ckpt = match unsafe { cstr_arg(checkpoint_path, "checkpoint_path") } {
            Ok(s) => s,
            Err(code) => return code,
        };
        let config = match parse_config(json) {
            Ok(c) => c,
            Err(code) => return code,
        };
        match dasn_lab::cli::cmd_eval(&config, Path::new(ckpt)) {
            Ok(()) => DASN_OK,
            Err(err) => fail(err),
        }
    })
}
