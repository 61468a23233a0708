//! C ABI over the stratopt core.
//!
//! Functions return a [`StratoptStatus`]; on failure the message is available
//! from [`stratopt_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function. Strings returned by the
//! library are owned by the caller and released with [`stratopt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stratopt::analytics;
use stratopt::config::{Mode, RunConfig};
use stratopt::guiding_agent::FinalResult;
use stratopt::model::{classify_tool, AbstractionLevel, BudgetLedger, ToolClass, ToolDescriptor};
use stratopt::session::{self, SessionError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BudgetExceeded = 4,
    Config = 10,
    CompileRefused = 11,
    ScriptGenerationFailed = 12,
    ProviderAbort = 13,
    RunDirCollision = 14,
    Fatal = 15,
    Panic = 99,
}

impl From<&SessionError> for StratoptStatus {
    fn from(e: &SessionError) -> Self {
        match e {
            SessionError::Config(_) => StratoptStatus::Config,
            SessionError::CompileRefused(_) => StratoptStatus::CompileRefused,
            SessionError::ScriptGeneration(_) => StratoptStatus::ScriptGenerationFailed,
            SessionError::ProviderAbort(_) => StratoptStatus::ProviderAbort,
            SessionError::RunDirCollision(_) => StratoptStatus::RunDirCollision,
            SessionError::Fatal(_) => StratoptStatus::Fatal,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratoptToolClass {
    Rewrite = 0,
    Lowering = 1,
    Invalid = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StratoptSpeedupStats {
    pub geomean: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p99: f64,
    pub count: usize,
}

/// Budget ledger handle.
pub struct StratoptLedger {
    inner: BudgetLedger,
}

/// Run configuration handle.
pub struct StratoptConfig {
    inner: RunConfig,
}

/// Result of an optimization run.
pub struct StratoptResult {
    inner: FinalResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg.into()));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: StratoptStatus, msg: impl Into<String>) -> StratoptStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> StratoptStatus) -> StratoptStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(StratoptStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, StratoptStatus> {
    if p.is_null() {
        return Err(fail(StratoptStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(StratoptStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', ""))
        .expect("NUL bytes removed")
        .into_raw()
}

/// Message of the last failed call on this thread, or NULL. Free with
/// `stratopt_string_free`.
#[no_mangle]
pub extern "C" fn stratopt_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(m) => to_c_string(m.clone()),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn stratopt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn level(ordinal: u32) -> Option<AbstractionLevel> {
    match ordinal {
        1 => Some(AbstractionLevel::source()),
        2 => Some(AbstractionLevel::ir()),
        3 => Some(AbstractionLevel::assembly()),
        _ => None,
    }
}

#[no_mangle]
pub extern "C" fn stratopt_classify_tool(domain: u32, range: u32) -> StratoptToolClass {
    let d = AbstractionLevel::new(domain, "");
    let r = AbstractionLevel::new(range, "");
    match classify_tool(&d, &r) {
        ToolClass::Rewrite => StratoptToolClass::Rewrite,
        ToolClass::Lowering => StratoptToolClass::Lowering,
        ToolClass::Invalid => StratoptToolClass::Invalid,
    }
}

#[no_mangle]
pub extern "C" fn stratopt_ledger_new(total: u64) -> *mut StratoptLedger {
    Box::into_raw(Box::new(StratoptLedger {
        inner: BudgetLedger::new(total),
    }))
}

/// # Safety
/// `ledger` must be NULL or a live handle from `stratopt_ledger_new`.
#[no_mangle]
pub unsafe extern "C" fn stratopt_ledger_free(ledger: *mut StratoptLedger) {
    if !ledger.is_null() {
        drop(Box::from_raw(ledger));
    }
}

/// Charges one call of the level agent at `level_ordinal` (1..=3).
///
/// # Safety
/// `ledger` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_ledger_charge_agent(
    ledger: *mut StratoptLedger,
    level_ordinal: u32,
) -> StratoptStatus {
    guard(|| {
        let Some(l) = ledger.as_mut() else {
            return fail(StratoptStatus::NullPointer, "null ledger");
        };
        let Some(lvl) = level(level_ordinal) else {
            return fail(StratoptStatus::InvalidArgument, format!("no level {level_ordinal}"));
        };
        match l.inner.charge(&ToolDescriptor::level_agent(lvl)) {
            Ok(next) => {
                l.inner = next;
                StratoptStatus::Ok
            }
            Err(e) => fail(StratoptStatus::BudgetExceeded, e.to_string()),
        }
    })
}

/// # Safety
/// `ledger` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_ledger_spent(ledger: *const StratoptLedger) -> u64 {
    ledger.as_ref().map(|l| l.inner.spent()).unwrap_or(0)
}

/// # Safety
/// `ledger` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_ledger_remaining(ledger: *const StratoptLedger) -> u64 {
    ledger.as_ref().map(|l| l.inner.remaining()).unwrap_or(0)
}

/// # Safety
/// `ledger` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_ledger_is_exhausted(ledger: *const StratoptLedger) -> bool {
    ledger.as_ref().map(|l| l.inner.is_exhausted()).unwrap_or(true)
}

/// # Safety
/// `values` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratopt_speedup_stats(
    values: *const f64,
    len: usize,
    out: *mut StratoptSpeedupStats,
) -> StratoptStatus {
    guard(|| {
        if values.is_null() || out.is_null() {
            return fail(StratoptStatus::NullPointer, "null argument");
        }
        let xs = std::slice::from_raw_parts(values, len);
        match analytics::speedup_stats(xs) {
            Ok(s) => {
                *out = StratoptSpeedupStats {
                    geomean: s.geomean,
                    p25: s.percentiles[&25],
                    p50: s.percentiles[&50],
                    p75: s.percentiles[&75],
                    p99: s.percentiles[&99],
                    count: s.count,
                };
                StratoptStatus::Ok
            }
            Err(e) => fail(StratoptStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `runtimes` must point to `len` doubles (or be NULL with `len` 0).
#[no_mangle]
pub unsafe extern "C" fn stratopt_variability_filter(
    runtimes: *const f64,
    len: usize,
    min_programs: usize,
    threshold: f64,
) -> bool {
    if runtimes.is_null() || len == 0 {
        return false;
    }
    analytics::variability_filter(std::slice::from_raw_parts(runtimes, len), min_programs, threshold)
}

#[no_mangle]
pub extern "C" fn stratopt_config_default() -> *mut StratoptConfig {
    Box::into_raw(Box::new(StratoptConfig {
        inner: RunConfig::default(),
    }))
}

/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratopt_config_from_toml(
    toml: *const c_char,
    out: *mut *mut StratoptConfig,
) -> StratoptStatus {
    guard(|| {
        if out.is_null() {
            return fail(StratoptStatus::NullPointer, "null out pointer");
        }
        let text = match read_str(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml(text) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(StratoptConfig { inner: c }));
                StratoptStatus::Ok
            }
            Err(e) => fail(StratoptStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `config` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_config_free(config: *mut StratoptConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_config_set_budget(config: *mut StratoptConfig, budget: u64) -> StratoptStatus {
    match config.as_mut() {
        Some(c) => {
            c.inner.budget = budget;
            StratoptStatus::Ok
        }
        None => fail(StratoptStatus::NullPointer, "null config"),
    }
}

/// # Safety
/// `config` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stratopt_config_set_run_dir(
    config: *mut StratoptConfig,
    dir: *const c_char,
) -> StratoptStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(StratoptStatus::NullPointer, "null config");
        };
        match read_str(dir) {
            Ok(d) => {
                c.inner.run_dir = Some(PathBuf::from(d));
                StratoptStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// `mode` is one of `full`, `source-only`, `ir-only`, `assembly-only`.
///
/// # Safety
/// `config` must be a live handle and `mode` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stratopt_config_set_mode(
    config: *mut StratoptConfig,
    mode: *const c_char,
) -> StratoptStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(StratoptStatus::NullPointer, "null config");
        };
        let m = match read_str(mode) {
            Ok(m) => m,
            Err(s) => return s,
        };
        match m.parse::<Mode>() {
            Ok(mode) => {
                c.inner.mode = mode;
                StratoptStatus::Ok
            }
            Err(e) => fail(StratoptStatus::InvalidArgument, e),
        }
    })
}

/// The configuration as TOML. Free with `stratopt_string_free`.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_config_to_toml(config: *const StratoptConfig) -> *mut c_char {
    match config.as_ref() {
        Some(c) => to_c_string(c.inner.to_toml()),
        None => {
            set_error("null config");
            ptr::null_mut()
        }
    }
}

/// Runs a full optimization of the C program `source` under `config`.
///
/// # Safety
/// `config` must be a live handle, `source` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stratopt_optimize(
    config: *const StratoptConfig,
    source: *const c_char,
    out: *mut *mut StratoptResult,
) -> StratoptStatus {
    guard(|| {
        let (Some(c), false) = (config.as_ref(), out.is_null()) else {
            return fail(StratoptStatus::NullPointer, "null argument");
        };
        let text = match read_str(source) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match session::optimize(text, &c.inner) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(StratoptResult { inner: r }));
                StratoptStatus::Ok
            }
            Err(e) => fail(StratoptStatus::from(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_result_free(result: *mut StratoptResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_result_speedup(result: *const StratoptResult) -> f64 {
    result.as_ref().map(|r| r.inner.speedup).unwrap_or(0.0)
}

/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_result_budget_spent(result: *const StratoptResult) -> u64 {
    result.as_ref().map(|r| r.inner.ledger.spent()).unwrap_or(0)
}

/// The final assembly program. Free with `stratopt_string_free`.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_result_program(result: *const StratoptResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => to_c_string(r.inner.program.text().to_string()),
        None => ptr::null_mut(),
    }
}

/// The whole result as JSON. Free with `stratopt_string_free`.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stratopt_result_json(result: *const StratoptResult) -> *mut c_char {
    match result.as_ref() {
        Some(r) => to_c_string(serde_json::to_string(&r.inner).expect("result serializes")),
        None => ptr::null_mut(),
    }
}
