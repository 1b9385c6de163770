//! C ABI over the causal factor model: opaque dataset and fit handles,
//! integer status codes and a thread-local last-error message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cfm::estimands::summarize_sate;
use cfm::gibbs::{run_chain, ChainOutput};
use cfm::simulation::{generate, ScenarioSpec};
use cfm::{CfmError, Dataset, ModelConfig, Schema};
use nalgebra::DMatrix;

/// Status returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfmStatus {
    Ok = 0,
    /// Null pointer, bad length or malformed string.
    InvalidArgument = 1,
    Validation = 2,
    Numerical = 3,
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// Observed data: outcomes, treatment and covariates.
pub struct CfmDataset {
    inner: Dataset,
    true_sate: Option<Vec<f64>>,
}

/// Kept effect draws of one chain.
pub struct CfmFit {
    inner: ChainOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &CfmError) -> CfmStatus {
    match err.exit_code() {
        3 => CfmStatus::Numerical,
        4 => CfmStatus::Io,
        _ => CfmStatus::Validation,
    }
}

/// Run `f`, record any failure as the last error and map it to a status.
fn guard(f: impl FnOnce() -> Result<(), (CfmStatus, String)>) -> CfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CfmStatus::Internal
        }
    }
}

fn core(err: CfmError) -> (CfmStatus, String) {
    (status_of(&err), err.to_string())
}

fn invalid(msg: &str) -> (CfmStatus, String) {
    (CfmStatus::InvalidArgument, msg.to_string())
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (CfmStatus, String)> {
    if s.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (CfmStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cfm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a dataset from row-major arrays: `y` is `n x q`, `x` is `n x p`
/// on the original covariate scale, `t` holds 0 or 1 per unit.
///
/// # Safety
/// Array pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfm_dataset_new(
    n: usize,
    q: usize,
    p: usize,
    y: *const f64,
    t: *const u8,
    x: *const f64,
    out: *mut *mut CfmDataset,
) -> CfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let ny = n.checked_mul(q).ok_or_else(|| invalid("n * q overflows"))?;
        let nx = n.checked_mul(p).ok_or_else(|| invalid("n * p overflows"))?;
        let y = slice(y, ny, "y")?;
        let t = slice(t, n, "t")?;
        let x = slice(x, nx, "x")?;
        let data = Dataset::new(
            (1..=n).map(|i| i.to_string()).collect(),
            (1..=q).map(|k| format!("y_{k}")).collect(),
            (1..=p).map(|k| format!("x_{k}")).collect(),
            DMatrix::from_row_slice(n, q, y),
            t.to_vec(),
            DMatrix::from_row_slice(n, p, x),
        )
        .map_err(core)?;
        *out = Box::into_raw(Box::new(CfmDataset { inner: data, true_sate: None }));
        Ok(())
    })
}

/// Load a dataset CSV with the default column layout (`id`, `t`, `y_*`, `x_*`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfm_dataset_load_csv(path: *const c_char, out: *mut *mut CfmDataset) -> CfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let path = c_str(path, "path")?;
        let data = Dataset::load_csv(Path::new(path), &Schema::default()).map_err(core)?;
        *out = Box::into_raw(Box::new(CfmDataset { inner: data, true_sate: None }));
        Ok(())
    })
}

/// Simulate a reduced-size dataset for scenario 1-6. The true effects are
/// kept on the handle.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfm_dataset_simulate(scenario: u8, seed: u64, out: *mut *mut CfmDataset) -> CfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let sim = ScenarioSpec::desk(scenario, seed).and_then(|s| generate(&s)).map_err(core)?;
        let true_sate = Some(sim.sate.iter().copied().collect());
        *out = Box::into_raw(Box::new(CfmDataset { inner: sim.data, true_sate }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from a `cfm_dataset_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn cfm_dataset_free(data: *mut CfmDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Write the unit, outcome and covariate counts.
///
/// # Safety
/// `data` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfm_dataset_dims(data: *const CfmDataset, n: *mut usize, q: *mut usize, p: *mut usize) -> CfmStatus {
    guard(|| {
        let d = data.as_ref().ok_or_else(|| invalid("data is null"))?;
        if n.is_null() || q.is_null() || p.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *n = d.inner.n();
        *q = d.inner.q();
        *p = d.inner.p();
        Ok(())
    })
}

/// Copy the true effects of a simulated dataset into `out[0..len]`, where
/// `len` must equal the outcome count.
///
/// # Safety
/// `data` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cfm_dataset_true_sate(data: *const CfmDataset, out: *mut f64, len: usize) -> CfmStatus {
    guard(|| {
        let d = data.as_ref().ok_or_else(|| invalid("data is null"))?;
        let sate = d.true_sate.as_ref().ok_or_else(|| (CfmStatus::Validation, "dataset was not simulated".into()))?;
        if len != sate.len() || out.is_null() {
            return Err(invalid("output buffer does not match the outcome count"));
        }
        ptr::copy_nonoverlapping(sate.as_ptr(), out, len);
        Ok(())
    })
}

/// Run one chain. `config_json` may be null for the default configuration.
///
/// # Safety
/// `data` must be a live handle; `config_json` null or NUL-terminated;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfm_fit(
    data: *const CfmDataset,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut CfmFit,
) -> CfmStatus {
    guard(|| {
        let d = data.as_ref().ok_or_else(|| invalid("data is null"))?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let cfg = if config_json.is_null() {
            ModelConfig::default()
        } else {
            ModelConfig::from_json_str(c_str(config_json, "config_json")?).map_err(core)?
        };
        let chain = run_chain(&d.inner, &cfg, seed).map_err(core)?;
        *out = Box::into_raw(Box::new(CfmFit { inner: chain }));
        Ok(())
    })
}

/// # Safety
/// `fit` must come from `cfm_fit` or be null.
#[no_mangle]
pub unsafe extern "C" fn cfm_fit_free(fit: *mut CfmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Kept draw and outcome counts of a fit.
///
/// # Safety
/// `fit` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cfm_fit_dims(fit: *const CfmFit, draws: *mut usize, outcomes: *mut usize) -> CfmStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| invalid("fit is null"))?;
        if draws.is_null() || outcomes.is_null() {
            return Err(invalid("output pointer is null"));
        }
        *draws = f.inner.sate.nrows();
        *outcomes = f.inner.sate.ncols();
        Ok(())
    })
}

/// Copy the effect draws row-major (`draws x outcomes`) into `out[0..len]`.
///
/// # Safety
/// `fit` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cfm_fit_sate_draws(fit: *const CfmFit, out: *mut f64, len: usize) -> CfmStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| invalid("fit is null"))?;
        let m = &f.inner.sate;
        if out.is_null() || len != m.len() {
            return Err(invalid("output buffer does not match draws x outcomes"));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (i, row) in m.row_iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                dst[i * m.ncols() + k] = *v;
            }
        }
        Ok(())
    })
}

/// Posterior mean and equal-tailed interval bounds per outcome. Each
/// output buffer must hold `len` values, the outcome count.
///
/// # Safety
/// `fit` must be a live handle; buffers must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cfm_fit_summary(
    fit: *const CfmFit,
    level: f64,
    mean: *mut f64,
    lo: *mut f64,
    hi: *mut f64,
    len: usize,
) -> CfmStatus {
    guard(|| {
        let f = fit.as_ref().ok_or_else(|| invalid("fit is null"))?;
        if mean.is_null() || lo.is_null() || hi.is_null() || len != f.inner.sate.ncols() {
            return Err(invalid("output buffers do not match the outcome count"));
        }
        let s = summarize_sate(&f.inner.sate, level, None).map_err(core)?;
        for (k, o) in s.outcomes.iter().enumerate() {
            *mean.add(k) = o.mean;
            *lo.add(k) = o.lo;
            *hi.add(k) = o.hi;
        }
        Ok(())
    })
}
