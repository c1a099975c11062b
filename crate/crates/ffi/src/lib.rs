//! C ABI for the switchback randomization tests.
//!
//! Designs are opaque [`SwxDesign`] handles. Every fallible call returns a
//! [`SwxStatus`]; on failure [`swx_last_error`] describes the problem for the
//! calling thread. Strings returned through `char **` out-parameters are owned
//! by the caller and must be released with [`swx_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use swx::anticipation::{pirt_test, PrefixScheme};
use swx::carryover::{crt_carryover_test, sequential_m};
use swx::power::{power_total, PowerInputs};
use swx::sections::greedy_pool;
use swx::total::crt_total_test;
use swx::{optimal_regular_design, AssignmentPath, Error, McOptions, RngStream, Sidedness, SwitchbackDesign, TestReport};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidDesign = 3,
    InvalidInput = 4,
    Domain = 5,
    Parse = 6,
    Panic = 7,
}

/// Opaque design handle.
pub struct SwxDesign(SwitchbackDesign);

/// Monte Carlo settings. `two_sided` is 0 for the upper-tailed test.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SwxMcOptions {
    pub draws: usize,
    pub two_sided: i32,
    pub seed: u64,
}

/// Summary of a randomization test. `degenerate` is 1 when no focal unit was
/// available, in which case `p_value` is 1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SwxTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub focal_count: usize,
    pub sections_used: usize,
    pub degenerate: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SwxStatus {
    match e {
        Error::InvalidDesign(_) => SwxStatus::InvalidDesign,
        Error::Domain(_) => SwxStatus::Domain,
        Error::Parse(_) => SwxStatus::Parse,
        _ => SwxStatus::InvalidInput,
    }
}

struct Fail(SwxStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SwxStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SwxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SwxStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SwxStatus::Panic
        }
    }
}

unsafe fn design_ref<'a>(d: *const SwxDesign) -> Result<&'a SwitchbackDesign, Fail> {
    d.as_ref().map(|d| &d.0).ok_or_else(|| null("design"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(SwxStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    let c = CString::new(s).map_err(|_| Fail(SwxStatus::InvalidInput, "string contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put_design(out: *mut *mut SwxDesign, d: SwitchbackDesign) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(SwxDesign(d)));
    Ok(())
}

unsafe fn mc_options(opts: *const SwxMcOptions) -> Result<McOptions, Fail> {
    let o = opts.as_ref().ok_or_else(|| null("options"))?;
    if o.draws == 0 {
        return Err(Fail(SwxStatus::InvalidInput, "draws must be at least 1".into()));
    }
    let sidedness = if o.two_sided != 0 { Sidedness::TwoSided } else { Sidedness::Upper };
    Ok(McOptions { draws: o.draws, sidedness, seed: o.seed })
}

unsafe fn observations<'a>(y: *const f64, w: *const u8, len: usize) -> Result<(&'a [f64], AssignmentPath), Fail> {
    let y = slice(y, len, "y")?;
    let w = slice(w, len, "w")?;
    Ok((y, AssignmentPath::from_bits(w)?))
}

unsafe fn write_result(report: &TestReport, out: *mut SwxTestResult, json: *mut *mut c_char) -> Result<(), Fail> {
    let out = out.as_mut().ok_or_else(|| null("out"))?;
    *out = SwxTestResult {
        statistic: report.statistic_obs,
        p_value: report.p_value,
        focal_count: report.focal_count,
        sections_used: report.sections_used,
        degenerate: report.degenerate as i32,
    };
    if !json.is_null() {
        put_string(json, serde_json::to_string(report).expect("reports serialize"))?;
    }
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn swx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn swx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a design from `n_blocks` 1-based switch times and block probabilities.
///
/// # Safety
/// `switch_times` and `block_probs` must point to `n_blocks` values.
#[no_mangle]
pub unsafe extern "C" fn swx_design_new(
    horizon: usize,
    switch_times: *const usize,
    block_probs: *const f64,
    n_blocks: usize,
    out: *mut *mut SwxDesign,
) -> SwxStatus {
    guard(|| {
        let s = slice(switch_times, n_blocks, "switch_times")?.to_vec();
        let q = slice(block_probs, n_blocks, "block_probs")?.to_vec();
        put_design(out, SwitchbackDesign::new(horizon, s, q)?)
    })
}

/// The minimax design with `n_blocks` units of length `m` (T = n m).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn swx_design_optimal(n_blocks: usize, m: usize, out: *mut *mut SwxDesign) -> SwxStatus {
    guard(|| put_design(out, optimal_regular_design(n_blocks, m)?))
}

/// Parse a design from JSON with keys `T`, `switch_times`, `block_probs`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn swx_design_from_json(json: *const c_char, out: *mut *mut SwxDesign) -> SwxStatus {
    guard(|| put_design(out, SwitchbackDesign::from_json(str_arg(json, "json")?)?))
}

/// Serialize a design to JSON. Free the result with [`swx_string_free`].
///
/// # Safety
/// `design` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn swx_design_to_json(design: *const SwxDesign, out: *mut *mut c_char) -> SwxStatus {
    guard(|| put_string(out, design_ref(design)?.to_json()))
}

/// Horizon T, or 0 for a null handle.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swx_design_horizon(design: *const SwxDesign) -> usize {
    design.as_ref().map_or(0, |d| d.0.horizon())
}

/// Number of blocks, or 0 for a null handle.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn swx_design_n_blocks(design: *const SwxDesign) -> usize {
    design.as_ref().map_or(0, |d| d.0.n_blocks())
}

/// Draw an assignment path into `w` (T bytes of 0 or 1) from stream
/// (`seed`, `stream`).
///
/// # Safety
/// `design` must be a live handle and `w` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn swx_design_sample(
    design: *const SwxDesign,
    seed: u64,
    stream: u64,
    w: *mut u8,
    len: usize,
) -> SwxStatus {
    guard(|| {
        let d = design_ref(design)?;
        if len != d.horizon() {
            return Err(Error::LengthMismatch { expected: d.horizon(), got: len }.into());
        }
        if w.is_null() {
            return Err(null("w"));
        }
        let path = d.sample_assignment(&mut RngStream::new(seed, stream).rng());
        std::slice::from_raw_parts_mut(w, len).copy_from_slice(&path.to_bits());
        Ok(())
    })
}

/// Release a design. Null is ignored.
///
/// # Safety
/// `design` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn swx_design_free(design: *mut SwxDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Total-effect CRT with greedy pooling at burn-in `m`. When `report_json` is
/// not null it receives the full report as JSON.
///
/// # Safety
/// `y` and `w` must hold `len` values, `options` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn swx_test_total(
    design: *const SwxDesign,
    y: *const f64,
    w: *const u8,
    len: usize,
    m: usize,
    options: *const SwxMcOptions,
    out: *mut SwxTestResult,
    report_json: *mut *mut c_char,
) -> SwxStatus {
    guard(|| {
        let d = design_ref(design)?;
        let (y, path) = observations(y, w, len)?;
        let report = crt_total_test(y, &path, d, m, &mc_options(options)?)?;
        write_result(&report, out, report_json)
    })
}

/// m-carryover CRT on the greedy section family for `m`.
///
/// # Safety
/// As for [`swx_test_total`].
#[no_mangle]
pub unsafe extern "C" fn swx_test_carryover(
    design: *const SwxDesign,
    y: *const f64,
    w: *const u8,
    len: usize,
    m: usize,
    options: *const SwxMcOptions,
    out: *mut SwxTestResult,
    report_json: *mut *mut c_char,
) -> SwxStatus {
    guard(|| {
        let d = design_ref(design)?;
        let (y, path) = observations(y, w, len)?;
        let family = greedy_pool(d, m)?;
        let report = crt_carryover_test(y, &path, d, &family, m, &mc_options(options)?)?;
        write_result(&report, out, report_json)
    })
}

/// Non-anticipation test with a held-out prefix of `holdout` periods.
///
/// # Safety
/// As for [`swx_test_total`].
#[no_mangle]
pub unsafe extern "C" fn swx_test_anticipation(
    design: *const SwxDesign,
    y: *const f64,
    w: *const u8,
    len: usize,
    holdout: usize,
    options: *const SwxMcOptions,
    out: *mut SwxTestResult,
    report_json: *mut *mut c_char,
) -> SwxStatus {
    guard(|| {
        let d = design_ref(design)?;
        let (y, path) = observations(y, w, len)?;
        let report = pirt_test(y, &path, d, PrefixScheme { holdout }, &mc_options(options)?)?;
        write_result(&report, out, report_json)
    })
}

/// Sequential estimate of the carryover horizon over levels `0..m_max`.
///
/// # Safety
/// As for [`swx_test_total`]; `m_hat` must be writable.
#[no_mangle]
pub unsafe extern "C" fn swx_sequential_m(
    design: *const SwxDesign,
    y: *const f64,
    w: *const u8,
    len: usize,
    alpha: f64,
    m_max: usize,
    options: *const SwxMcOptions,
    m_hat: *mut usize,
    report_json: *mut *mut c_char,
) -> SwxStatus {
    guard(|| {
        let d = design_ref(design)?;
        let (y, path) = observations(y, w, len)?;
        let report = sequential_m(y, &path, d, alpha, m_max, &mc_options(options)?)?;
        *m_hat.as_mut().ok_or_else(|| null("m_hat"))? = report.m_hat;
        if !report_json.is_null() {
            put_string(report_json, serde_json::to_string(&report).expect("reports serialize"))?;
        }
        Ok(())
    })
}

/// Total-effect power from JSON inputs; the result is a JSON object.
///
/// # Safety
/// `inputs_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn swx_power_total(inputs_json: *const c_char, out: *mut *mut c_char) -> SwxStatus {
    guard(|| {
        let inputs: PowerInputs =
            serde_json::from_str(str_arg(inputs_json, "inputs_json")?).map_err(|e| Fail(SwxStatus::Parse, e.to_string()))?;
        let power = power_total(&inputs)?;
        put_string(out, serde_json::to_string(&power).expect("serializes"))
    })
}
