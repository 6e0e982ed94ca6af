//! C interface to the pricing, correlation and factor-model routines.
//!
//! Every fallible function returns a [`CorrsurfStatus`] and writes its result
//! through an out pointer. On failure the message is available from
//! [`corrsurf_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use corrsurf::correlation::{basket_variance, equicorrelation, fisher_z, fisher_z_inv};
use corrsurf::dsfm::{evaluate_surface, FactorModel};
use corrsurf::marketdata::OptionRight;
use corrsurf::vol::{implied_vol, PricingInputs, PricingModel};
use corrsurf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrsurfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Domain = 3,
    Unattainable = 4,
    NoConvergence = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
    Other = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrsurfRight {
    Put = 0,
    Call = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrsurfStyle {
    European = 0,
    American = 1,
}

/// Fitted factor model loaded from JSON.
pub struct CorrsurfModel {
    inner: FactorModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CorrsurfStatus {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::InsufficientData(_) | Error::Singular(_) => {
            CorrsurfStatus::InvalidInput
        }
        Error::Domain(_) => CorrsurfStatus::Domain,
        Error::UnattainablePrice { .. } => CorrsurfStatus::Unattainable,
        Error::NoConvergence { .. } => CorrsurfStatus::NoConvergence,
        Error::Io(_) => CorrsurfStatus::Io,
        Error::Row { .. } | Error::Csv(_) | Error::Json(_) => CorrsurfStatus::Parse,
        Error::Stage { source, .. } => status_of(source),
        _ => CorrsurfStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard<T>(out: *mut T, f: impl FnOnce() -> Result<T, Fail>) -> CorrsurfStatus {
    if out.is_null() {
        set_error("out pointer is null".into());
        return CorrsurfStatus::NullPointer;
    }
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => {
            // SAFETY: checked non-null above; the caller provides writable storage.
            unsafe { out.write(v) };
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CorrsurfStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            CorrsurfStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CorrsurfStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null only when `len` is zero, otherwise valid for `len` reads.
unsafe fn view<'a>(ptr: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn corrsurf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

fn right(r: CorrsurfRight) -> OptionRight {
    match r {
        CorrsurfRight::Put => OptionRight::Put,
        CorrsurfRight::Call => OptionRight::Call,
    }
}

fn model(style: CorrsurfStyle, steps: usize) -> PricingModel {
    match style {
        CorrsurfStyle::European => PricingModel::European,
        CorrsurfStyle::American => PricingModel::American { steps },
    }
}

/// # Safety
/// Dividend arrays must hold `n_dividends` values each.
#[allow(clippy::too_many_arguments)]
unsafe fn inputs(
    spot: f64,
    strike: f64,
    rate: f64,
    tau: f64,
    vol: f64,
    r: CorrsurfRight,
    div_times: *const f64,
    div_amounts: *const f64,
    n_dividends: usize,
) -> Result<PricingInputs, Fail> {
    let times = view(div_times, n_dividends, "div_times")?;
    let amounts = view(div_amounts, n_dividends, "div_amounts")?;
    let mut p = PricingInputs::new(spot, strike, rate, tau, vol, right(r));
    p.dividends = times.iter().copied().zip(amounts.iter().copied()).collect();
    Ok(p)
}

/// Option value. `steps` is the tree size for American style and ignored for
/// European style, which also ignores dividends.
///
/// # Safety
/// `div_times` and `div_amounts` must each point to `n_dividends` doubles (or
/// be null when it is zero); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_option_price(
    spot: f64,
    strike: f64,
    rate: f64,
    tau: f64,
    vol: f64,
    right: CorrsurfRight,
    style: CorrsurfStyle,
    steps: usize,
    div_times: *const f64,
    div_amounts: *const f64,
    n_dividends: usize,
    out: *mut f64,
) -> CorrsurfStatus {
    guard(out, || {
        let p = inputs(spot, strike, rate, tau, vol, right, div_times, div_amounts, n_dividends)?;
        Ok(model(style, steps).price(&p)?)
    })
}

/// Volatility reproducing `price` under the same conventions as
/// [`corrsurf_option_price`].
///
/// # Safety
/// As for [`corrsurf_option_price`].
#[no_mangle]
pub unsafe extern "C" fn corrsurf_implied_vol(
    price: f64,
    spot: f64,
    strike: f64,
    rate: f64,
    tau: f64,
    right: CorrsurfRight,
    style: CorrsurfStyle,
    steps: usize,
    div_times: *const f64,
    div_amounts: *const f64,
    n_dividends: usize,
    out: *mut f64,
) -> CorrsurfStatus {
    guard(out, || {
        let p = inputs(spot, strike, rate, tau, 0.2, right, div_times, div_amounts, n_dividends)?;
        Ok(implied_vol(price, &p, model(style, steps))?)
    })
}

/// Variance of a weighted basket whose members share one correlation.
///
/// # Safety
/// `vols` and `weights` must each point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_basket_variance(
    vols: *const f64,
    weights: *const f64,
    n: usize,
    rho: f64,
    out: *mut f64,
) -> CorrsurfStatus {
    guard(out, || {
        Ok(basket_variance(view(vols, n, "vols")?, view(weights, n, "weights")?, rho)?)
    })
}

/// Common correlation implied by a basket variance.
///
/// # Safety
/// `vols` and `weights` must each point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_equicorrelation(
    basket_var: f64,
    vols: *const f64,
    weights: *const f64,
    n: usize,
    out: *mut f64,
) -> CorrsurfStatus {
    guard(out, || {
        Ok(equicorrelation(basket_var, view(vols, n, "vols")?, view(weights, n, "weights")?)?)
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_fisher_z(rho: f64, out: *mut f64) -> CorrsurfStatus {
    guard(out, || Ok(fisher_z(rho)?))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_fisher_z_inv(z: f64, out: *mut f64) -> CorrsurfStatus {
    guard(out, || Ok(fisher_z_inv(z)))
}

/// Loads a model written by the `fit` command. Release it with
/// [`corrsurf_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_model_load(path: *const c_char, out: *mut *mut CorrsurfModel) -> CorrsurfStatus {
    guard(out, || {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::InvalidInput("path is not UTF-8".into()))?;
        let file = File::open(path).map_err(Error::Io)?;
        let inner = FactorModel::read(BufReader::new(file))?;
        Ok(Box::into_raw(Box::new(CorrsurfModel { inner })))
    })
}

/// Number of retained factors.
///
/// # Safety
/// `model` must come from [`corrsurf_model_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_model_factor_count(model: *const CorrsurfModel, out: *mut usize) -> CorrsurfStatus {
    guard(out, || Ok(model.as_ref().ok_or(Fail::Null("model"))?.inner.l()))
}

/// Copies the scores of the last estimation day into `scores` and their
/// count into `out`.
///
/// # Safety
/// `model` must come from [`corrsurf_model_load`]; `scores` must have room
/// for the factor count; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_model_last_scores(
    model: *const CorrsurfModel,
    scores: *mut f64,
    capacity: usize,
    out: *mut usize,
) -> CorrsurfStatus {
    guard(out, || {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.inner;
        let last = m
            .scores
            .last()
            .ok_or_else(|| Error::InsufficientData("model has no scores".into()))?;
        if capacity < last.len() {
            return Err(Error::InvalidInput(format!("need room for {} scores", last.len())).into());
        }
        if !last.is_empty() {
            if scores.is_null() {
                return Err(Fail::Null("scores"));
            }
            slice::from_raw_parts_mut(scores, last.len()).copy_from_slice(last);
        }
        Ok(last.len())
    })
}

/// Correlation of the surface with factor scores `scores` at `(kappa, tau)`.
///
/// # Safety
/// `model` must come from [`corrsurf_model_load`]; `scores` must point to
/// `n_scores` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_model_evaluate(
    model: *const CorrsurfModel,
    scores: *const f64,
    n_scores: usize,
    kappa: f64,
    tau: f64,
    out: *mut f64,
) -> CorrsurfStatus {
    guard(out, || {
        let m = &model.as_ref().ok_or(Fail::Null("model"))?.inner;
        Ok(evaluate_surface(m, view(scores, n_scores, "scores")?, kappa, tau)?)
    })
}

/// # Safety
/// `model` must come from [`corrsurf_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn corrsurf_model_free(model: *mut CorrsurfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
