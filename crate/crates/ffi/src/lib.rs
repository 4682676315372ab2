//! C interface to fiberlab.
//!
//! Every function returns an [`FlStatus`]. On failure a human-readable
//! message is stored per thread and can be fetched with
//! [`fl_last_error_message`]. Objects crossing the boundary are opaque
//! handles created by `*_new`/`*_load` and released by the matching
//! `*_free`; passing null to a `*_free` function is a no-op. Panics never
//! unwind into the caller; they surface as `FL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fiberlab::bench::{run_pipeline, ExperimentConfig, Method};
use fiberlab::dataset::{float_to_word, FEATURES_PER_TOKEN};
use fiberlab::nn::{equalize, Checkpoint};
use fiberlab::txrx::SymbolFrame;
use fiberlab::{Error, C64};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Numerical = 6,
    Panic = 7,
}

/// Method identifiers used in [`FlMetrics`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlMethod {
    LinearEq = 0,
    Dbp = 1,
    Fcnn = 2,
    Transformer = 3,
}

impl From<Method> for FlMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::LinearEq => FlMethod::LinearEq,
            Method::Dbp => FlMethod::Dbp,
            Method::Fcnn => FlMethod::Fcnn,
            Method::Transformer => FlMethod::Transformer,
        }
    }
}

/// Figures of merit for one receiver method.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlMetrics {
    pub method: FlMethod,
    pub ber: f64,
    pub ser: f64,
    pub q_db: f64,
    pub evm_pct: f64,
    /// Nonzero when no bit errors were seen and `q_db` is a lower bound.
    pub ber_is_floor: u8,
    pub runtime_s: f64,
}

/// Experiment configuration handle.
pub struct FlExperiment {
    config: ExperimentConfig,
}

/// Results of one pipeline run.
pub struct FlReport {
    rows: Vec<FlMetrics>,
}

/// Trained equalizer handle.
pub struct FlCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FlStatus {
    match e {
        Error::InvalidArgument(_) | Error::Shape { .. } => FlStatus::InvalidArgument,
        Error::Io { .. } => FlStatus::Io,
        Error::Format { .. } => FlStatus::Format,
        Error::Config(_) => FlStatus::Config,
        Error::Stage { source, .. } => status_of(source),
        _ => FlStatus::Numerical,
    }
}

fn guard<F>(f: F) -> FlStatus
where
    F: FnOnce() -> Result<(), (FlStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlStatus::Ok,
        Ok(Err((status, msg))) => {
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
            FlStatus::Panic
        }
    }
}

fn lift(e: Error) -> (FlStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FlStatus, String) {
    (FlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FlStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (FlStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator, so a caller can size a second attempt.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: n + 1 <= len bytes are writable per the contract.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Q factor in dB for a bit error rate in `(0, 0.5)`.
///
/// # Safety
/// `out` must be null or valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fl_q_factor(ber: f64, out: *mut f64) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let q = fiberlab::metrics::q_factor(ber).map_err(lift)?;
        // SAFETY: checked non-null above.
        unsafe { *out = q };
        Ok(())
    })
}

/// Writes the 32 binary32 bits of `x`, most significant first, as 0/1 bytes.
///
/// # Safety
/// `out` must be null or point to 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fl_float_to_bits(x: f64, out: *mut u8) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let word = float_to_word(x).map_err(lift)?;
        // SAFETY: 32 bytes writable per the contract.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, FEATURES_PER_TOKEN) };
        for (k, d) in dst.iter_mut().enumerate() {
            *d = ((word >> (31 - k)) & 1) as u8;
        }
        Ok(())
    })
}

/// Creates an experiment from TOML text; null selects the defaults.
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out` must be valid for
/// a write.
#[no_mangle]
pub unsafe extern "C" fn fl_experiment_new(toml: *const c_char, out: *mut *mut FlExperiment) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = if toml.is_null() {
            ExperimentConfig::default()
        } else {
            ExperimentConfig::from_toml(unsafe { str_arg(toml, "toml") }?).map_err(lift)?
        };
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(FlExperiment { config })) };
        Ok(())
    })
}

/// Applies one `key=value` override, e.g. `run.n_symbols=4096`.
///
/// # Safety
/// `exp` must be a live handle; `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fl_experiment_set(exp: *mut FlExperiment, assignment: *const c_char) -> FlStatus {
    guard(|| {
        // SAFETY: live handle per the contract.
        let exp = unsafe { exp.as_mut() }.ok_or_else(|| null("experiment"))?;
        let a = unsafe { str_arg(assignment, "assignment") }?;
        exp.config = exp.config.with_overrides(&[a]).map_err(lift)?;
        Ok(())
    })
}

/// Runs transmission, propagation and every configured receiver once.
///
/// # Safety
/// `exp` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fl_experiment_run(exp: *const FlExperiment, seed: u64, out: *mut *mut FlReport) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: live handle per the contract.
        let exp = unsafe { exp.as_ref() }.ok_or_else(|| null("experiment"))?;
        let res = run_pipeline(&exp.config, seed).map_err(lift)?;
        let rows = res
            .methods
            .iter()
            .map(|m| FlMetrics {
                method: m.method.into(),
                ber: m.report.ber,
                ser: m.report.ser,
                q_db: m.report.q_db,
                evm_pct: m.report.evm_pct,
                ber_is_floor: m.report.ber_is_floor as u8,
                runtime_s: m.runtime_s,
            })
            .collect();
        unsafe { *out = Box::into_raw(Box::new(FlReport { rows })) };
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or a handle from [`fl_experiment_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fl_experiment_free(exp: *mut FlExperiment) {
    if !exp.is_null() {
        drop(unsafe { Box::from_raw(exp) });
    }
}

/// Number of method rows in a report; 0 for null.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_report_len(report: *const FlReport) -> usize {
    unsafe { report.as_ref() }.map_or(0, |r| r.rows.len())
}

/// # Safety
/// `report` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fl_report_get(report: *const FlReport, index: usize, out: *mut FlMetrics) -> FlStatus {
    guard(|| {
        let r = unsafe { report.as_ref() }.ok_or_else(|| null("report"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let row = r.rows.get(index).ok_or_else(|| {
            (
                FlStatus::InvalidArgument,
                format!("index {index} out of range for {} rows", r.rows.len()),
            )
        })?;
        unsafe { *out = *row };
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fl_report_free(report: *mut FlReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn fl_checkpoint_load(path: *const c_char, out: *mut *mut FlCheckpoint) -> FlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = unsafe { str_arg(path, "path") }?;
        let inner = Checkpoint::load(Path::new(p)).map_err(lift)?;
        unsafe { *out = Box::into_raw(Box::new(FlCheckpoint { inner })) };
        Ok(())
    })
}

/// Trainable parameter count of the stored model; 0 for null.
///
/// # Safety
/// `ck` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_checkpoint_n_params(ck: *const FlCheckpoint) -> usize {
    unsafe { ck.as_ref() }.map_or(0, |c| c.inner.model.n_params())
}

/// Equalizes `n_symbols` received symbols given as interleaved `I, Q`
/// pairs. The first and last `window_n` symbols are copied through.
///
/// # Safety
/// `ck` must be a live handle; `input` and `output` must each hold
/// `2 * n_symbols` doubles and may alias.
#[no_mangle]
pub unsafe extern "C" fn fl_checkpoint_equalize(
    ck: *const FlCheckpoint,
    input: *const f64,
    output: *mut f64,
    n_symbols: usize,
) -> FlStatus {
    guard(|| {
        let ck = unsafe { ck.as_ref() }.ok_or_else(|| null("checkpoint"))?;
        if input.is_null() || output.is_null() {
            return Err(null("buffer"));
        }
        let iq = unsafe { std::slice::from_raw_parts(input, 2 * n_symbols) };
        let frame = SymbolFrame::new(iq.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect());
        let meta = &ck.inner.meta;
        let eq = equalize(&ck.inner.model, &frame, meta.window_n as usize, meta.normalization).map_err(lift)?;
        let dst = unsafe { std::slice::from_raw_parts_mut(output, 2 * n_symbols) };
        for (d, s) in dst.chunks_exact_mut(2).zip(&eq.symbols) {
            d[0] = s.re;
            d[1] = s.im;
        }
        Ok(())
    })
}

/// # Safety
/// `ck` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fl_checkpoint_free(ck: *mut FlCheckpoint) {
    if !ck.is_null() {
        drop(unsafe { Box::from_raw(ck) });
    }
}
