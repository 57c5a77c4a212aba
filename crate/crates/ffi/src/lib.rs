//! C interface to the raggededge library.
//!
//! Every function returns an [`RgStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`rg_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::DMatrix;
use raggededge::dataio::{generate_synthetic_panel, load_panel, SyntheticSpec};
use raggededge::disagg::{chow_lin, ChowLinOptions};
use raggededge::evalkit::lagged_correlation;
use raggededge::model::Predictor;
use raggededge::neuralnet::{load_model, MlpEnsemble};
use raggededge::{Error, Result};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Loaded or generated panel.
pub struct RgPanel {
    inner: raggededge::dataio::Panel,
}

/// Trained network ensemble.
pub struct RgEnsemble {
    inner: MlpEnsemble,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgLagCorrelation {
    /// Positive when the first series leads.
    pub lag: i64,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|e| {
        let mut b = e.into_vec();
        b.retain(|&c| c != 0);
        CString::new(b).expect("nul bytes removed")
    });
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RgStatus {
    match e {
        Error::Io { .. } | Error::MissingArtifact { .. } => RgStatus::Io,
        Error::Csv { .. }
        | Error::Schema { .. }
        | Error::NonNumeric { .. }
        | Error::NonContiguousMonths { .. }
        | Error::ModelFormat(_)
        | Error::UnsupportedVersion { .. } => RgStatus::Format,
        Error::RankDeficient { .. }
        | Error::Singular(_)
        | Error::NoConvergence { .. }
        | Error::NonFiniteLoss { .. } => RgStatus::Numerical,
        _ => RgStatus::InvalidInput,
    }
}

/// Runs `f`, recording any error or panic for [`rg_last_error_message`].
fn guard(f: impl FnOnce() -> std::result::Result<(), RgStatus>) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RgStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RgStatus::Panic
        }
    }
}

fn fail(status: RgStatus, msg: impl Into<String>) -> RgStatus {
    set_error(msg.into());
    status
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, RgStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> std::result::Result<&'a str, RgStatus> {
    if p.is_null() {
        return Err(fail(RgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RgStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> std::result::Result<&'a [f64], RgStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RgStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, name: &str) -> std::result::Result<&'a mut [T], RgStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(RgStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn non_null<T>(p: *const T, name: &str) -> std::result::Result<(), RgStatus> {
    if p.is_null() {
        Err(fail(RgStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a panel from the GERD CSV, the SVI directory and the macro CSV.
///
/// # Safety
/// The paths must be NUL-terminated strings and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_panel_load(
    gerd_csv: *const c_char,
    svi_dir: *const c_char,
    macro_csv: *const c_char,
    out: *mut *mut RgPanel,
) -> RgStatus {
    guard(|| {
        non_null(out, "out")?;
        let (g, s, m) = (
            str_arg(gerd_csv, "gerd_csv")?,
            str_arg(svi_dir, "svi_dir")?,
            str_arg(macro_csv, "macro_csv")?,
        );
        let inner = lib(load_panel(Path::new(g), Path::new(s), Path::new(m)))?;
        *out = Box::into_raw(Box::new(RgPanel { inner }));
        Ok(())
    })
}

/// Generates a synthetic panel from a JSON spec.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_panel_synthetic(spec_json: *const c_char, seed: u64, out: *mut *mut RgPanel) -> RgStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = lib(SyntheticSpec::from_json(str_arg(spec_json, "spec_json")?))?;
        let (inner, _) = lib(generate_synthetic_panel(&spec, seed))?;
        *out = Box::into_raw(Box::new(RgPanel { inner }));
        Ok(())
    })
}

/// Writes the number of countries and years.
///
/// # Safety
/// `panel` must come from this library; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_panel_shape(
    panel: *const RgPanel,
    n_countries: *mut usize,
    n_years: *mut usize,
) -> RgStatus {
    guard(|| {
        non_null(panel, "panel")?;
        non_null(n_countries, "n_countries")?;
        non_null(n_years, "n_years")?;
        let p = &(*panel).inner;
        *n_countries = p.n_countries();
        *n_years = p.n_years();
        Ok(())
    })
}

/// Annual target of one country, one value per panel year starting with the
/// first year.
///
/// # Safety
/// `panel` must come from this library and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_panel_targets(
    panel: *const RgPanel,
    country: usize,
    out: *mut f64,
    len: usize,
) -> RgStatus {
    guard(|| {
        non_null(panel, "panel")?;
        let p = &(*panel).inner;
        if country >= p.n_countries() {
            return Err(fail(RgStatus::InvalidInput, format!("country {country} out of range")));
        }
        let t = p.targets(country);
        if len < t.len() {
            return Err(fail(
                RgStatus::BufferTooSmall,
                format!("need {} values, got {len}", t.len()),
            ));
        }
        for (o, v) in out_slice(out, t.len(), "out")?.iter_mut().zip(t) {
            *o = v.value;
        }
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rg_panel_free(panel: *mut RgPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Loads a model file written by the `train` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rg_ensemble_load(path: *const c_char, out: *mut *mut RgEnsemble) -> RgStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = lib(load_model(Path::new(str_arg(path, "path")?)))?;
        *out = Box::into_raw(Box::new(RgEnsemble { inner }));
        Ok(())
    })
}

/// Raw row width the ensemble expects.
///
/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_ensemble_input_width(model: *const RgEnsemble, out: *mut usize) -> RgStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).inner.input_width();
        Ok(())
    })
}

/// Ensemble-mean predictions for `n_rows` raw rows stored row-major.
///
/// # Safety
/// `rows` must hold `n_rows * n_cols` doubles and `out` `n_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_ensemble_predict(
    model: *const RgEnsemble,
    rows: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        non_null(model, "model")?;
        let x = slice_arg(rows, n_rows * n_cols, "rows")?;
        let out = out_slice(out, n_rows, "out")?;
        let m = DMatrix::from_row_slice(n_rows, n_cols, x);
        out.copy_from_slice(&lib((*model).inner.predict_raw(&m))?);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rg_ensemble_free(model: *mut RgEnsemble) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Chow-Lin disaggregation with a constant and the default `rho` grid.
///
/// `indicators` is row-major with `12 * n_years` rows and `n_indicators`
/// columns. `out_monthly` receives `12 * n_years` values; `out_rho` may be
/// null.
///
/// # Safety
/// The buffers must have the sizes above.
#[no_mangle]
pub unsafe extern "C" fn rg_chow_lin(
    annual: *const f64,
    n_years: usize,
    indicators: *const f64,
    n_indicators: usize,
    out_monthly: *mut f64,
    out_rho: *mut f64,
) -> RgStatus {
    guard(|| {
        let a = slice_arg(annual, n_years, "annual")?;
        let x = slice_arg(indicators, 12 * n_years * n_indicators, "indicators")?;
        let out = out_slice(out_monthly, 12 * n_years, "out_monthly")?;
        let x = DMatrix::from_row_slice(12 * n_years, n_indicators, x);
        let fit = lib(chow_lin(a, &x, &ChowLinOptions::default()))?;
        out.copy_from_slice(&fit.monthly);
        if !out_rho.is_null() {
            *out_rho = fit.rho;
        }
        Ok(())
    })
}

/// Correlations of two equally long series at lags `-max_lag..=max_lag`,
/// strongest first. `capacity` must be at least `2 * max_lag + 1`.
///
/// # Safety
/// `a` and `b` must hold `len` doubles, `out` `capacity` records and
/// `out_len` be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_lagged_correlation(
    a: *const f64,
    b: *const f64,
    len: usize,
    max_lag: usize,
    out: *mut RgLagCorrelation,
    capacity: usize,
    out_len: *mut usize,
) -> RgStatus {
    guard(|| {
        non_null(out_len, "out_len")?;
        let need = 2 * max_lag + 1;
        if capacity < need {
            return Err(fail(
                RgStatus::BufferTooSmall,
                format!("need {need} records, got {capacity}"),
            ));
        }
        let (a, b) = (slice_arg(a, len, "a")?, slice_arg(b, len, "b")?);
        let rows = lib(lagged_correlation(a, b, max_lag))?;
        for (o, r) in out_slice(out, rows.len(), "out")?.iter_mut().zip(&rows) {
            *o = RgLagCorrelation {
                lag: r.lag,
                r: r.r,
                p_value: r.p_value,
                n: r.n,
            };
        }
        *out_len = rows.len();
        Ok(())
    })
}
