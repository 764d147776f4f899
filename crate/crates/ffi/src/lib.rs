//! C interface to `fcr`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an [`FcrStatus`]; on failure [`fcr_last_error`] describes the
//! most recent error on the calling thread. Panics are caught and reported
//! as [`FcrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fcr::eval::{evaluate, mcc, Correlation};
use fcr::io::{load_dataset_dir, RunConfig};
use fcr::simgen::generate_synthetic;
use fcr::train::{load_checkpoint, save_checkpoint, split_dataset, train};
use fcr::{Dataset, FcrError, ModelConfig};
use ndarray::ArrayView2;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcrStatus {
    Ok = 0,
    NullPointer = 1,
    /// A string argument was not valid UTF-8 or a size was inconsistent.
    InvalidArgument = 2,
    /// Bad configuration, file or dataset.
    Validation = 3,
    /// A computation failed, for example training diverged.
    Runtime = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Opaque dataset handle.
pub struct FcrDataset {
    inner: Dataset,
}

/// Opaque trained-model handle.
pub struct FcrModel {
    inner: fcr::FcrModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

enum Failure {
    Status(FcrStatus, String),
    Lib(FcrError),
}

impl From<FcrError> for Failure {
    fn from(e: FcrError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcrStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            if e.is_validation() {
                FcrStatus::Validation
            } else {
                FcrStatus::Runtime
            }
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            FcrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(FcrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(FcrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Newline-separated `key=value` overrides on top of the defaults.
unsafe fn config(overrides: *const c_char) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if !overrides.is_null() {
        for line in text(overrides, "overrides")?.lines().map(str::trim).filter(|l| !l.is_empty()) {
            cfg.apply_override(line)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fcr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Simulates a synthetic dataset. `overrides` may be null.
///
/// # Safety
/// `overrides` must be null or a valid C string; `out_dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcr_simulate(overrides: *const c_char, out_dataset: *mut *mut FcrDataset) -> FcrStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let cfg = config(overrides)?;
        let ds = generate_synthetic(&cfg.sim)?;
        *slot = Box::into_raw(Box::new(FcrDataset { inner: ds }));
        Ok(())
    })
}

/// Loads a dataset directory containing `schema.toml`.
///
/// # Safety
/// `dir` must be a valid C string; `out_dataset` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcr_dataset_load(dir: *const c_char, out_dataset: *mut *mut FcrDataset) -> FcrStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let path = PathBuf::from(text(dir, "dir")?);
        let ds = load_dataset_dir(&path)?.dataset;
        *slot = Box::into_raw(Box::new(FcrDataset { inner: ds }));
        Ok(())
    })
}

/// Writes the cell and gene counts.
///
/// # Safety
/// `dataset` must come from this library; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcr_dataset_shape(dataset: *const FcrDataset, n_cells: *mut usize, n_genes: *mut usize) -> FcrStatus {
    guard(|| {
        let ds = &borrow(dataset, "dataset")?.inner;
        *out(n_cells, "n_cells")? = ds.n_cells();
        *out(n_genes, "n_genes")? = ds.n_genes();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcr_dataset_free(dataset: *mut FcrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains on the dataset with optional overrides and returns the best model.
///
/// # Safety
/// Pointers must be valid as described for the other functions.
#[no_mangle]
pub unsafe extern "C" fn fcr_train(dataset: *const FcrDataset, overrides: *const c_char, out_model: *mut *mut FcrModel) -> FcrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let ds = &borrow(dataset, "dataset")?.inner;
        let cfg = config(overrides)?;
        let mut mc = ModelConfig::for_dataset(ds, cfg.model.dims, cfg.model.arch.clone(), cfg.model.seed);
        if !cfg.model.scale_genes {
            mc.scaling = None;
        }
        let outcome = train(ds, &mc, &cfg.train)?.into_result()?;
        *slot = Box::into_raw(Box::new(FcrModel { inner: outcome.model }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid C string; `out_model` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcr_model_load(path: *const c_char, out_model: *mut *mut FcrModel) -> FcrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let model = load_checkpoint(&PathBuf::from(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(FcrModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn fcr_model_save(model: *const FcrModel, path: *const c_char) -> FcrStatus {
    guard(|| {
        let m = &borrow(model, "model")?.inner;
        save_checkpoint(m, &PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Writes the latent block widths.
///
/// # Safety
/// `model` must come from this library; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcr_model_dims(model: *const FcrModel, n_x: *mut usize, n_tx: *mut usize, n_t: *mut usize) -> FcrStatus {
    guard(|| {
        let d = borrow(model, "model")?.inner.dims();
        *out(n_x, "n_x")? = d.n_x;
        *out(n_tx, "n_tx")? = d.n_tx;
        *out(n_t, "n_t")? = d.n_t;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcr_model_free(model: *mut FcrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Posterior means `[z_x, z_tx, z_t]` of every cell, row-major into
/// `buffer`, which must hold `n_cells × (n_x + n_tx + n_t)` values.
///
/// # Safety
/// `buffer` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fcr_encode(model: *const FcrModel, dataset: *const FcrDataset, buffer: *mut f64, len: usize) -> FcrStatus {
    guard(|| {
        let m = &borrow(model, "model")?.inner;
        let ds = &borrow(dataset, "dataset")?.inner;
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        let need = ds.n_cells() * m.dims().total();
        if len < need {
            return Err(Failure::Status(FcrStatus::BufferTooSmall, format!("buffer holds {len} values, {need} needed")));
        }
        let rows: Vec<usize> = (0..ds.n_cells()).collect();
        let z = m.encode_rows(ds, &rows)?.stacked_means();
        let dst = std::slice::from_raw_parts_mut(buffer, need);
        for (d, v) in dst.iter_mut().zip(z.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Full metrics report as a JSON string on the test split of the
/// configured seed. Release it with [`fcr_string_free`].
///
/// # Safety
/// Handles must come from this library; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fcr_evaluate_json(
    model: *const FcrModel,
    dataset: *const FcrDataset,
    overrides: *const c_char,
    out_json: *mut *mut c_char,
) -> FcrStatus {
    guard(|| {
        let slot = out(out_json, "out_json")?;
        let m = &borrow(model, "model")?.inner;
        let ds = &borrow(dataset, "dataset")?.inner;
        let cfg = config(overrides)?;
        let splits = split_dataset(ds, &cfg.train.split, cfg.train.seed)?;
        let report = evaluate(m, ds, Some(&splits), &cfg.eval)?;
        let json = serde_json::to_string(&report).map_err(FcrError::from)?;
        *slot = CString::new(json).expect("JSON has no nul bytes").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn fcr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Rank-based mean correlation coefficient between two row-major
/// `rows × cols` matrices after optimal column matching.
///
/// # Safety
/// Both inputs must be readable for `rows × cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn fcr_mcc(z_true: *const f64, z_est: *const f64, rows: usize, cols: usize, out_mcc: *mut f64) -> FcrStatus {
    guard(|| {
        if z_true.is_null() || z_est.is_null() {
            return Err(null("input matrix"));
        }
        let slot = out(out_mcc, "out_mcc")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure::Status(FcrStatus::InvalidArgument, "rows × cols overflows".into()))?;
        let a = ArrayView2::from_shape((rows, cols), std::slice::from_raw_parts(z_true, n)).expect("length matches");
        let b = ArrayView2::from_shape((rows, cols), std::slice::from_raw_parts(z_est, n)).expect("length matches");
        *slot = mcc(&a.to_owned(), &b.to_owned(), Correlation::Rank)?.mcc;
        Ok(())
    })
}
