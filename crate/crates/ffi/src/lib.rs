//! C ABI over the `msacm` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` / `*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! function returns an [`MsacmStatus`]; on failure a description is available
//! from [`msacm_last_error`] on the same thread. Panics never unwind into C:
//! they are caught and reported as [`MsacmStatus::Panic`].
//!
//! Strings returned by the library are NUL-terminated UTF-8 and must be
//! released with [`msacm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use msacm::classify::{adjusted_rand, uncertainty_from_labels, Group};
use msacm::cli::RunConfig;
use msacm::data::{demean_proxy, load_market_csv, CsvSchema, MarketSeries};
use msacm::estimation::{fit_qml, FitResult};
use msacm::model::MsAcmParams;
use msacm::regime::{exact_path_loglik, hamilton_kim_filter, FilterOutput};
use msacm::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsacmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Estimation = 3,
    EmptyTask = 4,
    Domain = 5,
    Io = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Market data: dates, realized volatility, negative-return dummy, proxy
/// forecast and announcement mask.
pub struct MsacmSeries(MarketSeries);

/// Switching-model parameters.
pub struct MsacmParams(MsAcmParams);

/// Output of the Hamilton filter with Kim collapsing and smoothing.
pub struct MsacmFilter(FilterOutput);

/// Outcome of a multi-start fit.
pub struct MsacmFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

struct Failure {
    status: MsacmStatus,
    message: String,
}

fn fail(status: MsacmStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

fn status_of(e: &Error) -> MsacmStatus {
    match e {
        Error::Estimation { .. } => MsacmStatus::Estimation,
        Error::EmptyTask(_) | Error::Alignment(_) => MsacmStatus::EmptyTask,
        Error::Domain(_) | Error::Degenerate(_) | Error::RankDeficient | Error::TooManyPaths { .. } => {
            MsacmStatus::Domain
        }
        Error::Io(_) => MsacmStatus::Io,
        _ => MsacmStatus::InvalidInput,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsacmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsacmStatus::Ok,
        Ok(Err(f)) => {
            set_error(&f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            MsacmStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    fail(MsacmStatus::NullPointer, format!("`{name}` is null"))
}

/// # Safety
/// `p` is null or points to a valid `T` for the duration of the call.
unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn text<'a>(s: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(MsacmStatus::InvalidInput, format!("`{name}` is not UTF-8")))
}

/// # Safety
/// `p` is null or valid for `n` reads.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(name));
    }
    // SAFETY: non-null and, per the API contract, writable.
    unsafe { out.write(value) };
    Ok(())
}

fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| fail(MsacmStatus::InvalidInput, "string contains NUL"))?;
    put(out, c.into_raw(), "out")
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msacm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn msacm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a market CSV with the default column names.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_series_load_csv(path: *const c_char, out: *mut *mut MsacmSeries) -> MsacmStatus {
    guard(|| {
        let path = text(path, "path")?;
        let series = demean_proxy(&load_market_csv(path, &CsvSchema::default())?);
        put(out, Box::into_raw(Box::new(MsacmSeries(series))), "out")
    })
}

fn ymd(v: i32) -> Option<chrono::NaiveDate> {
    chrono::NaiveDate::from_ymd_opt(v / 10_000, (v / 100 % 100) as u32, (v % 100) as u32)
}

/// Builds a series from parallel arrays of length `n`. Dates are integers
/// `YYYYMMDD`. `x_hat` and `lambda` may be null (no proxy, no
/// announcements). The proxy mean is the sample mean of `x_hat`.
///
/// # Safety
/// Non-null arrays are valid for `n` reads; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_series_from_arrays(
    n: usize,
    dates: *const i32,
    rv: *const f64,
    d: *const u8,
    x_hat: *const f64,
    lambda: *const u8,
    out: *mut *mut MsacmSeries,
) -> MsacmStatus {
    guard(|| {
        let dates = slice(dates, n, "dates")?
            .iter()
            .enumerate()
            .map(|(i, &v)| ymd(v).ok_or_else(|| fail(MsacmStatus::InvalidInput, format!("row {}: bad date {v}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        let x_hat = (!x_hat.is_null()).then(|| slice(x_hat, n, "x_hat").map(<[f64]>::to_vec)).transpose()?;
        let lambda = if lambda.is_null() {
            vec![0; n]
        } else {
            slice(lambda, n, "lambda")?.to_vec()
        };
        let series = MarketSeries {
            dates,
            rv: slice(rv, n, "rv")?.to_vec(),
            ret: None,
            d: slice(d, n, "d")?.to_vec(),
            x: None,
            x_hat,
            x_bar: 0.0,
            lambda,
        };
        let series = demean_proxy(&series);
        series.validate()?;
        put(out, Box::into_raw(Box::new(MsacmSeries(series))), "out")
    })
}

/// Number of observations; 0 for null.
///
/// # Safety
/// `s` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msacm_series_len(s: *const MsacmSeries) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `s` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msacm_series_free(s: *mut MsacmSeries) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Parses parameters from JSON (`base`, `policy`, `trans`, `theta`) and
/// checks admissibility.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_params_from_json(json: *const c_char, out: *mut *mut MsacmParams) -> MsacmStatus {
    guard(|| {
        let p: MsAcmParams = serde_json::from_str(text(json, "json")?).map_err(Error::from)?;
        p.validate()?;
        put(out, Box::into_raw(Box::new(MsacmParams(p))), "out")
    })
}

/// Serializes parameters to JSON; free the result with [`msacm_string_free`].
///
/// # Safety
/// `p` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_params_to_json(p: *const MsacmParams, out: *mut *mut c_char) -> MsacmStatus {
    guard(|| {
        let p = borrow(p, "params")?;
        put_string(out, serde_json::to_string(&p.0).map_err(Error::from)?)
    })
}

/// # Safety
/// `p` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msacm_params_free(p: *mut MsacmParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Runs the filter and smoother.
///
/// # Safety
/// `params` and `series` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_filter_run(
    params: *const MsacmParams,
    series: *const MsacmSeries,
    out: *mut *mut MsacmFilter,
) -> MsacmStatus {
    guard(|| {
        let f = hamilton_kim_filter(&borrow(params, "params")?.0, &borrow(series, "series")?.0)?;
        put(out, Box::into_raw(Box::new(MsacmFilter(f))), "out")
    })
}

/// Log-likelihood from the filter (`-inf` if the mean turned non-positive).
///
/// # Safety
/// `f` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_filter_loglik(f: *const MsacmFilter, out: *mut f64) -> MsacmStatus {
    guard(|| put(out, borrow(f, "filter")?.0.loglik, "out"))
}

/// Copies the smoothed probabilities of `regime` into `buf`, which must
/// hold at least as many values as the series has observations.
///
/// # Safety
/// `f` is a live handle; `buf` is valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn msacm_filter_smoothed(
    f: *const MsacmFilter,
    regime: usize,
    buf: *mut f64,
    len: usize,
) -> MsacmStatus {
    guard(|| {
        let f = &borrow(f, "filter")?.0;
        if regime >= f.k() {
            return Err(fail(MsacmStatus::InvalidInput, format!("regime {regime} out of range for {} regimes", f.k())));
        }
        if len < f.len() {
            return Err(fail(MsacmStatus::BufferTooSmall, format!("buffer holds {len}, need {}", f.len())));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        let col = f.smoothed.column(regime);
        // SAFETY: caller guarantees `len >= col.len()` writable slots.
        ptr::copy_nonoverlapping(col.as_ptr(), buf, col.len());
        Ok(())
    })
}

/// # Safety
/// `f` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msacm_filter_free(f: *mut MsacmFilter) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Exact log-likelihood by enumerating all regime paths; only feasible for
/// short series.
///
/// # Safety
/// `params` and `series` are live handles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_exact_loglik(
    params: *const MsacmParams,
    series: *const MsacmSeries,
    out: *mut f64,
) -> MsacmStatus {
    guard(|| {
        let ll = exact_path_loglik(&borrow(params, "params")?.0, &borrow(series, "series")?.0)?;
        put(out, ll, "out")
    })
}

/// Fits a model. `config_json` uses the command-line configuration format
/// (`model`, `k`, `seed`, `flags`, `optimizer`); null means the defaults.
///
/// # Safety
/// `series` is a live handle; `config_json` is null or NUL-terminated;
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_fit(
    series: *const MsacmSeries,
    config_json: *const c_char,
    out: *mut *mut MsacmFit,
) -> MsacmStatus {
    guard(|| {
        let series = &borrow(series, "series")?.0;
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(text(config_json, "config_json")?)?
        };
        let fit = fit_qml(&cfg.spec(), series, &cfg.fit_settings())?;
        put(out, Box::into_raw(Box::new(MsacmFit(fit))), "out")
    })
}

/// # Safety
/// `fit` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_fit_loglik(fit: *const MsacmFit, out: *mut f64) -> MsacmStatus {
    guard(|| put(out, borrow(fit, "fit")?.0.loglik, "out"))
}

/// Full fit result as JSON; free with [`msacm_string_free`].
///
/// # Safety
/// `fit` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_fit_to_json(fit: *const MsacmFit, out: *mut *mut c_char) -> MsacmStatus {
    guard(|| {
        let fit = borrow(fit, "fit")?;
        put_string(out, serde_json::to_string(&fit.0).map_err(Error::from)?)
    })
}

/// Estimated parameters of a fit as a new handle.
///
/// # Safety
/// `fit` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_fit_params(fit: *const MsacmFit, out: *mut *mut MsacmParams) -> MsacmStatus {
    guard(|| {
        let p = borrow(fit, "fit")?.0.params.params.clone();
        put(out, Box::into_raw(Box::new(MsacmParams(p))), "out")
    })
}

/// # Safety
/// `fit` is null or a live handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msacm_fit_free(fit: *mut MsacmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Adjusted Rand index between two integer labelings of length `n`.
///
/// # Safety
/// `a` and `b` are valid for `n` reads; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_adjusted_rand(a: *const i32, b: *const i32, n: usize, out: *mut f64) -> MsacmStatus {
    guard(|| {
        let v = adjusted_rand(slice(a, n, "a")?, slice(b, n, "b")?)?;
        put(out, v, "out")
    })
}

/// Uncertainty index for `n` announcements with probability changes
/// `delta_p` and labels `0 = Plank`, `1 = Squat`, `2 = Jump`.
///
/// # Safety
/// `delta_p` and `labels` are valid for `n` reads; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn msacm_uncertainty_index(
    delta_p: *const f64,
    labels: *const i32,
    n: usize,
    out: *mut f64,
) -> MsacmStatus {
    guard(|| {
        let groups = slice(labels, n, "labels")?
            .iter()
            .map(|&l| match l {
                0 => Ok(Group::Plank),
                1 => Ok(Group::Squat),
                2 => Ok(Group::Jump),
                other => Err(fail(MsacmStatus::InvalidInput, format!("label {other} is not 0, 1 or 2"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        put(out, uncertainty_from_labels(slice(delta_p, n, "delta_p")?, &groups)?, "out")
    })
}
