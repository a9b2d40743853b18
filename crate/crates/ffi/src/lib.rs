//! C interface to the factorisation library.
//!
//! Every fallible call returns an [`RprnmfStatus`]; on failure the message is
//! available from [`rprnmf_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rprnmf::constraints::parse_constraints;
use rprnmf::{Constraints, DenseMatrix, Error, FactorisationReport, MaskMatrix, Measure, SolverConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RprnmfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Parse = 4,
    Overflow = 5,
    Numerical = 6,
    Internal = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RprnmfMeasure {
    Euclidean = 0,
    Divergence = 1,
}

/// Solver settings; obtain defaults from [`rprnmf_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RprnmfOptions {
    pub latent_dim: usize,
    pub measure: RprnmfMeasure,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

/// Parsed constraint sets for W and H.
pub struct RprnmfConstraints(Constraints);

/// Result of one factorisation.
pub struct RprnmfReport(FactorisationReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> RprnmfStatus {
    match e {
        Error::ShapeMismatch { .. } | Error::LengthMismatch { .. } => RprnmfStatus::ShapeMismatch,
        Error::Ragged { .. } | Error::NonNumeric { .. } | Error::Malformed { .. } => RprnmfStatus::Parse,
        Error::Overflow { .. } => RprnmfStatus::Overflow,
        Error::NonPositiveModelEntry { .. } => RprnmfStatus::Numerical,
        Error::Io(_) | Error::File { .. } | Error::Json(_) | Error::Csv(_) => RprnmfStatus::Internal,
        _ => RprnmfStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), RprnmfStatus>) -> RprnmfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RprnmfStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            RprnmfStatus::Internal
        }
    }
}

fn fail(e: Error) -> RprnmfStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> RprnmfStatus {
    set_error(format!("{what} is null"));
    RprnmfStatus::NullPointer
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rprnmf_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rprnmf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn rprnmf_options_default(latent_dim: usize) -> RprnmfOptions {
    RprnmfOptions {
        latent_dim,
        measure: RprnmfMeasure::Euclidean,
        lambda_w: 0.0,
        lambda_h: 0.0,
        max_iters: rprnmf::solver::DEFAULT_MAX_ITERS,
        rel_tol: rprnmf::solver::DEFAULT_REL_TOL,
        seed: 0,
    }
}

/// Parses constraints in the `W q r s` / `H q r s` text format.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rprnmf_constraints_parse(text: *const c_char, out: *mut *mut RprnmfConstraints) -> RprnmfStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(text).to_str().map_err(|_| {
            set_error("constraint text is not UTF-8");
            RprnmfStatus::Parse
        })?;
        let sets = parse_constraints(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(RprnmfConstraints(sets)));
        Ok(())
    })
}

/// Number of triples on W and on H; either output pointer may be null.
///
/// # Safety
/// `constraints` must come from [`rprnmf_constraints_parse`].
#[no_mangle]
pub unsafe extern "C" fn rprnmf_constraints_count(
    constraints: *const RprnmfConstraints,
    on_w: *mut usize,
    on_h: *mut usize,
) -> RprnmfStatus {
    let Some(c) = constraints.as_ref() else {
        return null("constraints");
    };
    if !on_w.is_null() {
        *on_w = c.0.w.as_ref().map_or(0, |s| s.len());
    }
    if !on_h.is_null() {
        *on_h = c.0.h.as_ref().map_or(0, |s| s.len());
    }
    RprnmfStatus::Ok
}

/// # Safety
/// `constraints` must be null or come from [`rprnmf_constraints_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rprnmf_constraints_free(constraints: *mut RprnmfConstraints) {
    if !constraints.is_null() {
        drop(Box::from_raw(constraints));
    }
}

/// Factorises the row-major `rows × cols` matrix `v`.
///
/// `mask` is null for a fully observed matrix, otherwise `rows × cols` bytes
/// with non-zero meaning observed. `constraints` may be null.
///
/// # Safety
/// `v` (and `mask` when non-null) must point to `rows * cols` readable
/// elements; `options` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rprnmf_factorize(
    v: *const f64,
    rows: usize,
    cols: usize,
    mask: *const u8,
    constraints: *const RprnmfConstraints,
    options: *const RprnmfOptions,
    out: *mut *mut RprnmfReport,
) -> RprnmfStatus {
    guard(|| {
        if v.is_null() {
            return Err(null("v"));
        }
        let Some(options) = options.as_ref() else {
            return Err(null("options"));
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let len = rows.checked_mul(cols).ok_or_else(|| {
            set_error("rows * cols overflows");
            RprnmfStatus::InvalidArgument
        })?;
        let matrix = DenseMatrix::new_nonneg(rows, cols, std::slice::from_raw_parts(v, len).to_vec()).map_err(fail)?;
        let measure = match options.measure {
            RprnmfMeasure::Euclidean => Measure::Euclidean,
            RprnmfMeasure::Divergence => Measure::Divergence,
        };
        let mut config = SolverConfig::new(options.latent_dim, measure)
            .with_lambdas(options.lambda_w, options.lambda_h)
            .with_iters(options.max_iters, options.rel_tol)
            .with_seed(options.seed);
        if !mask.is_null() {
            let bits = std::slice::from_raw_parts(mask, len).iter().map(|&b| b != 0).collect();
            config = config.with_mask(MaskMatrix::new(rows, cols, bits).map_err(fail)?);
        }
        let none = Constraints::none();
        let sets = constraints.as_ref().map_or(&none, |c| &c.0);
        let report = rprnmf::run(&matrix, sets, &config).map_err(fail)?;
        *out = Box::into_raw(Box::new(RprnmfReport(report)));
        Ok(())
    })
}

/// Writes the factor shapes `W: rows × k`, `H: k × cols`; null outputs are skipped.
///
/// # Safety
/// `report` must come from [`rprnmf_factorize`].
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_shape(
    report: *const RprnmfReport,
    rows: *mut usize,
    k: *mut usize,
    cols: *mut usize,
) -> RprnmfStatus {
    let Some(r) = report.as_ref() else {
        return null("report");
    };
    for (slot, value) in [(rows, r.0.w.rows()), (k, r.0.w.cols()), (cols, r.0.h.cols())] {
        if !slot.is_null() {
            *slot = value;
        }
    }
    RprnmfStatus::Ok
}

unsafe fn copy_factor(report: *const RprnmfReport, pick: fn(&FactorisationReport) -> &DenseMatrix, buf: *mut f64, len: usize) -> RprnmfStatus {
    let Some(r) = report.as_ref() else {
        return null("report");
    };
    if buf.is_null() {
        return null("buf");
    }
    let data = pick(&r.0).data();
    if len != data.len() {
        set_error(format!("buffer holds {len} values, factor has {}", data.len()));
        return RprnmfStatus::ShapeMismatch;
    }
    ptr::copy_nonoverlapping(data.as_ptr(), buf, len);
    RprnmfStatus::Ok
}

/// Copies W row-major into `buf`, which must hold exactly `rows * k` values.
///
/// # Safety
/// `report` must come from [`rprnmf_factorize`]; `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_copy_w(report: *const RprnmfReport, buf: *mut f64, len: usize) -> RprnmfStatus {
    copy_factor(report, |r| &r.w, buf, len)
}

/// Copies H row-major into `buf`, which must hold exactly `k * cols` values.
///
/// # Safety
/// `report` must come from [`rprnmf_factorize`]; `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_copy_h(report: *const RprnmfReport, buf: *mut f64, len: usize) -> RprnmfStatus {
    copy_factor(report, |r| &r.h, buf, len)
}

/// Accepted iterations; 0 for a null report.
///
/// # Safety
/// `report` must be null or come from [`rprnmf_factorize`].
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_iterations(report: *const RprnmfReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.iterations)
}

/// Final objective value; NaN for a null report.
///
/// # Safety
/// `report` must be null or come from [`rprnmf_factorize`].
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_objective(report: *const RprnmfReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.0.final_objective)
}

/// Constraint satisfaction rate; NaN when the run had no constraints.
///
/// # Safety
/// `report` must be null or come from [`rprnmf_factorize`].
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_csr(report: *const RprnmfReport) -> f64 {
    report.as_ref().and_then(|r| r.0.csr).unwrap_or(f64::NAN)
}

/// # Safety
/// `report` must be null or come from [`rprnmf_factorize`].
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_converged(report: *const RprnmfReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.converged)
}

/// # Safety
/// `report` must be null or come from [`rprnmf_factorize`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rprnmf_report_free(report: *mut RprnmfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
