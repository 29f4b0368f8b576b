//! C ABI over the `twinsim` simulator.
//!
//! Configs and finished runs are opaque heap handles owned by the caller and
//! released with their `_free` function. Every fallible call returns a
//! [`TwinsimStatus`]; on failure [`twinsim_last_error`] describes what went
//! wrong on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use twinsim::runner::{self, RunOutput};
use twinsim::{ConfigError, RunConfig, RunError};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwinsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    IoError = 4,
    Panic = 5,
    RunFailed = 6,
}

/// Run parameters. Opaque.
pub struct TwinsimConfig {
    inner: RunConfig,
}

/// A finished run. Opaque.
pub struct TwinsimRun {
    inner: RunOutput,
}

/// Headline metrics of a run. Optional values carry a `has_` flag; the
/// value is 0 when the flag is false.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TwinsimMetrics {
    pub has_avg_tx_latency: bool,
    pub avg_tx_latency: f64,
    pub has_avg_inter_block_time: bool,
    pub avg_inter_block_time: f64,
    pub throughput: f64,
    pub blocks: u64,
    pub committed_txs: u64,
    pub generated_txs: u64,
    pub runtime: f64,
    /// Twin decisions logged; 0 outside dynamic mode.
    pub decisions: u64,
    /// Decisions that switched protocol.
    pub switches: u64,
    pub quorum_violations: u64,
    pub conflicts: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(TwinsimStatus, String);

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure(TwinsimStatus::ConfigError, e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let status = match e {
            RunError::Config(_) | RunError::MismatchedConfigs(_) => TwinsimStatus::ConfigError,
            RunError::Io(_) => TwinsimStatus::IoError,
            RunError::Metrics(_) | RunError::Serialize(_) => TwinsimStatus::RunFailed,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TwinsimStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TwinsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TwinsimStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TwinsimStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            TwinsimStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn twinsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn twinsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A config holding the default parameters. Never NULL.
#[no_mangle]
pub extern "C" fn twinsim_config_default() -> *mut TwinsimConfig {
    Box::into_raw(Box::new(TwinsimConfig {
        inner: RunConfig::default(),
    }))
}

/// Parse `key = value` config text into a new handle stored in `*out`.
///
/// # Safety
/// `text` must be NULL or a valid NUL-terminated string; `out` must be NULL
/// or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn twinsim_config_from_str(
    text: *const c_char,
    out: *mut *mut TwinsimConfig,
) -> TwinsimStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        write_out(
            out,
            TwinsimConfig {
                inner: RunConfig::parse(text)?,
            },
        )
    })
}

/// Read a config file into a new handle stored in `*out`.
///
/// # Safety
/// As for [`twinsim_config_from_str`], with `path` in place of `text`.
#[no_mangle]
pub unsafe extern "C" fn twinsim_config_from_file(
    path: *const c_char,
    out: *mut *mut TwinsimConfig,
) -> TwinsimStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let inner = RunConfig::from_file(Path::new(path)).map_err(|e| match e {
            ConfigError::Io(m) => Failure(TwinsimStatus::IoError, m),
            e => e.into(),
        })?;
        write_out(out, TwinsimConfig { inner })
    })
}

/// Set one parameter from its textual form, as in a config file. The whole
/// config is validated again when it is run.
///
/// # Safety
/// `cfg` must be NULL or a live handle; `key` and `value` must be NULL or
/// valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn twinsim_config_set(
    cfg: *mut TwinsimConfig,
    key: *const c_char,
    value: *const c_char,
) -> TwinsimStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let (key, value) = (read_str(key, "key")?, read_str(value, "value")?);
        Ok(cfg.inner.set(key, value)?)
    })
}

/// Check every invariant of the config.
///
/// # Safety
/// `cfg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn twinsim_config_validate(cfg: *const TwinsimConfig) -> TwinsimStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        Ok(cfg.inner.validate()?)
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn twinsim_config_free(cfg: *mut TwinsimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulate `cfg` to completion and store the result in `*out`. Blocks the
/// calling thread; independent runs may proceed on separate threads.
///
/// # Safety
/// `cfg` must be NULL or a live handle; `out` must be NULL or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn twinsim_run(
    cfg: *const TwinsimConfig,
    out: *mut *mut TwinsimRun,
) -> TwinsimStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = runner::run(&cfg.inner)?;
        write_out(out, TwinsimRun { inner })
    })
}

/// Fill `*out` with the run's metrics and counters.
///
/// # Safety
/// `run` must be NULL or a live handle; `out` must be NULL or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn twinsim_run_metrics(
    run: *const TwinsimRun,
    out: *mut TwinsimMetrics,
) -> TwinsimStatus {
    guard(|| {
        let run = &run.as_ref().ok_or_else(|| null("run"))?.inner;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = &run.report;
        *out = TwinsimMetrics {
            has_avg_tx_latency: r.avg_tx_latency.is_some(),
            avg_tx_latency: r.avg_tx_latency.unwrap_or(0.0),
            has_avg_inter_block_time: r.avg_inter_block_time.is_some(),
            avg_inter_block_time: r.avg_inter_block_time.unwrap_or(0.0),
            throughput: r.throughput,
            blocks: r.blocks as u64,
            committed_txs: r.committed_txs as u64,
            generated_txs: run.generated_txs as u64,
            runtime: r.runtime,
            decisions: run.decisions.len() as u64,
            switches: run.switches() as u64,
            quorum_violations: run.safety.quorum_violations as u64,
            conflicts: run.safety.conflicts.len() as u64,
        };
        Ok(())
    })
}

/// The twin's decision log as JSON lines, in a new string stored in `*out`
/// and released with [`twinsim_string_free`]. Empty outside dynamic mode.
///
/// # Safety
/// `run` must be NULL or a live handle; `out` must be NULL or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn twinsim_run_decisions_jsonl(
    run: *const TwinsimRun,
    out: *mut *mut c_char,
) -> TwinsimStatus {
    guard(|| {
        let run = &run.as_ref().ok_or_else(|| null("run"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let text = run.decisions_jsonl()?;
        *out = CString::new(text)
            .map_err(|_| Failure(TwinsimStatus::RunFailed, "decision log contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// Write the run's artifacts (`metrics.csv`, `blocks.csv`, `summary.json`,
/// and `decisions.jsonl` in dynamic mode) into directory `dir`.
///
/// # Safety
/// `run` must be NULL or a live handle; `dir` must be NULL or a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn twinsim_run_write_outputs(
    run: *const TwinsimRun,
    dir: *const c_char,
    dump_chain: bool,
) -> TwinsimStatus {
    guard(|| {
        let run = &run.as_ref().ok_or_else(|| null("run"))?.inner;
        let dir = read_str(dir, "dir")?;
        Ok(run.write_outputs(Path::new(dir), dump_chain)?)
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn twinsim_run_free(run: *mut TwinsimRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn twinsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
