//! C ABI over `pocoopt`.
//!
//! Handles are opaque heap pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns a [`PocoStatus`]; on failure
//! [`poco_last_error`] gives a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::DVector;
use pocoopt::harness::{run_seed, BuiltProblem, ExperimentConfig, ProblemSpec};
use pocoopt::trace::{Event, Trace};
use pocoopt::Error;

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PocoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    Panic = 6,
}

/// A built problem together with its reference optimum.
pub struct PocoProblem {
    built: BuiltProblem,
}

/// The trace of one finished run.
pub struct PocoRun {
    trace: Trace,
    reference: f64,
}

/// One trace row as seen from C.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PocoRow {
    pub step: u64,
    pub grad_evals: u64,
    pub objective: f64,
    pub param_hash: u64,
    /// Bit set of events: 1 refresh, 2 correction start, 4 clamp, 8 divergence.
    pub events: u32,
}

pub const POCO_EVENT_REFRESH: u32 = 1;
pub const POCO_EVENT_CORRECTION_START: u32 = 2;
pub const POCO_EVENT_CLAMP: u32 = 4;
pub const POCO_EVENT_DIVERGENCE: u32 = 8;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn status_of(e: &Error) -> PocoStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Parse { .. } | Error::InvalidDataset(_) => PocoStatus::Config,
        Error::IndexOutOfRange { .. } => PocoStatus::InvalidArgument,
        Error::Io(_) | Error::Plot(_) => PocoStatus::Io,
        Error::NotPositiveDefinite { .. } | Error::NonFinite { .. } | Error::NoConvergence { .. } => PocoStatus::Numeric,
    }
}

struct Fail(PocoStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PocoStatus::NullPointer, format!("{what} is null"))
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PocoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PocoStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PocoStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(PocoStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn vec_arg(p: *const f64, len: usize, dim: usize) -> Result<DVector<f64>, Fail> {
    if p.is_null() {
        return Err(null("theta"));
    }
    if len != dim {
        return Err(Fail(PocoStatus::InvalidArgument, format!("theta has length {len}, problem dimension is {dim}")));
    }
    Ok(DVector::from_column_slice(std::slice::from_raw_parts(p, len)))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread ("" after a success).
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn poco_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build a problem from a JSON problem spec, e.g.
/// `{"kind": "logistic", "n": 100, "d": 5, "seed": 1, "s0": 1.0}`.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poco_problem_new(json: *const c_char, out_problem: *mut *mut PocoProblem) -> PocoStatus {
    guard(|| {
        let slot = out(out_problem, "out_problem")?;
        *slot = ptr::null_mut();
        let spec: ProblemSpec = serde_json::from_str(str_arg(json, "json")?).map_err(|e| Fail(PocoStatus::Config, e.to_string()))?;
        let built = spec.build()?;
        *slot = Box::into_raw(Box::new(PocoProblem { built }));
        Ok(())
    })
}

/// # Safety
/// `problem` must come from [`poco_problem_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn poco_problem_free(problem: *mut PocoProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Dimension and number of examples.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn poco_problem_shape(problem: *const PocoProblem, dim: *mut usize, len: *mut usize) -> PocoStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.built.problem;
        *out(dim, "dim")? = p.dim();
        *out(len, "len")? = p.len();
        Ok(())
    })
}

/// Mean-scaled objective at the optimum.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn poco_problem_reference(problem: *const PocoProblem, value: *mut f64) -> PocoStatus {
    guard(|| {
        let p = problem.as_ref().ok_or_else(|| null("problem"))?;
        *out(value, "value")? = p.built.reference;
        Ok(())
    })
}

/// Mean-scaled objective at `theta[0..len]`.
///
/// # Safety
/// `theta` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn poco_problem_objective(
    problem: *const PocoProblem,
    theta: *const f64,
    len: usize,
    value: *mut f64,
) -> PocoStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.built.problem;
        let th = vec_arg(theta, len, p.dim())?;
        *out(value, "value")? = p.mean_objective(&th);
        Ok(())
    })
}

/// Gradient of the summed objective at `theta`, written to `grad[0..len]`.
///
/// # Safety
/// `theta` and `grad` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn poco_problem_gradient(
    problem: *const PocoProblem,
    theta: *const f64,
    len: usize,
    grad: *mut f64,
) -> PocoStatus {
    guard(|| {
        let p = &problem.as_ref().ok_or_else(|| null("problem"))?.built.problem;
        let th = vec_arg(theta, len, p.dim())?;
        if grad.is_null() {
            return Err(null("grad"));
        }
        std::slice::from_raw_parts_mut(grad, len).copy_from_slice(p.full_grad(&th).as_slice());
        Ok(())
    })
}

/// Run one seed of an experiment given as a JSON config (same format as the
/// CLI). Nothing is written to disk.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out_run` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poco_run_new(json: *const c_char, seed: u64, out_run: *mut *mut PocoRun) -> PocoStatus {
    guard(|| {
        let slot = out(out_run, "out_run")?;
        *slot = ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(json, "json")?)?;
        cfg.validate()?;
        let built = cfg.problem.build()?;
        let r = run_seed(&cfg, &built, seed)?;
        *slot = Box::into_raw(Box::new(PocoRun { trace: r.trace, reference: r.meta.reference }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`poco_run_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn poco_run_free(run: *mut PocoRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of recorded rows.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn poco_run_rows(run: *const PocoRun, rows: *mut usize) -> PocoStatus {
    guard(|| {
        *out(rows, "rows")? = run.as_ref().ok_or_else(|| null("run"))?.trace.rows.len();
        Ok(())
    })
}

/// Row `index` of the trace.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn poco_run_row(run: *const PocoRun, index: usize, row: *mut PocoRow) -> PocoStatus {
    guard(|| {
        let t = &run.as_ref().ok_or_else(|| null("run"))?.trace;
        let r = t.rows.get(index).ok_or_else(|| {
            Fail(PocoStatus::InvalidArgument, format!("row {index} out of range for {} rows", t.rows.len()))
        })?;
        let bit = |e, b| if r.has(e) { b } else { 0 };
        *out(row, "row")? = PocoRow {
            step: r.step,
            grad_evals: r.grad_evals,
            objective: r.objective,
            param_hash: r.param_hash,
            events: bit(Event::Refresh, POCO_EVENT_REFRESH)
                | bit(Event::CorrectionStart, POCO_EVENT_CORRECTION_START)
                | bit(Event::Clamp, POCO_EVENT_CLAMP)
                | bit(Event::Divergence, POCO_EVENT_DIVERGENCE),
        };
        Ok(())
    })
}

/// Final objective and its gap to the reference optimum.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn poco_run_final(run: *const PocoRun, objective: *mut f64, gap: *mut f64) -> PocoStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let last = r.trace.final_objective().ok_or_else(|| Fail(PocoStatus::InvalidArgument, "empty trace".into()))?;
        *out(objective, "objective")? = last;
        *out(gap, "gap")? = last - r.reference;
        Ok(())
    })
}

/// Write the trace as CSV to `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn poco_run_write_csv(run: *const PocoRun, path: *const c_char) -> PocoStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        r.trace.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_codes() {
        assert_eq!(status_of(&Error::config("x")), PocoStatus::Config);
        assert_eq!(status_of(&Error::NonFinite { what: "m", step: None }), PocoStatus::Numeric);
        assert_eq!(status_of(&Error::IndexOutOfRange { index: 3, len: 2 }), PocoStatus::InvalidArgument);
    }

    #[test]
    fn panics_are_caught() {
        assert_eq!(guard(|| panic!("boom")), PocoStatus::Panic);
        let msg = unsafe { CStr::from_ptr(poco_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }
}
