//! C ABI over the simulator core: opaque handles, integer status codes, and
//! JSON at the boundary for structured inputs. The header is generated by
//! cbindgen into `include/qnncluster.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use qnncluster::abb;
use qnncluster::calib::Calibration;
use qnncluster::rbe::{self, RbeJob};
use qnncluster::tiler;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QnnStatus {
    Ok = 0,
    /// Null pointer or malformed UTF-8/JSON argument.
    InvalidArgument = 1,
    /// Structurally valid input rejected by model validation.
    Validation = 2,
    /// Simulation failed at runtime.
    Runtime = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

/// Message describing the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[unsafe(no_mangle)]
pub extern "C" fn qnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque calibration handle.
pub struct QnnCalibration(Calibration);

/// Opaque convolution-job handle.
pub struct QnnRbeJob(RbeJob);

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, QnnStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(QnnStatus::InvalidArgument);
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        QnnStatus::InvalidArgument
    })
}

/// Built-in calibration constants. Free with `qnn_calibration_free`.
#[unsafe(no_mangle)]
pub extern "C" fn qnn_calibration_default() -> *mut QnnCalibration {
    Box::into_raw(Box::new(QnnCalibration(Calibration::default())))
}

/// Loads calibration constants from a JSON file; returns null on failure.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_calibration_load(path: *const c_char) -> *mut QnnCalibration {
    let Ok(path) = (unsafe { str_arg(path) }) else {
        return ptr::null_mut();
    };
    match Calibration::load(Path::new(path)) {
        Ok(c) => Box::into_raw(Box::new(QnnCalibration(c))),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `c` must come from a `qnn_calibration_*` constructor and not be freed twice.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_calibration_free(c: *mut QnnCalibration) {
    if !c.is_null() {
        drop(unsafe { Box::from_raw(c) });
    }
}

/// Parses and validates a job from its JSON description.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_rbe_job_from_json(
    json: *const c_char,
    out: *mut *mut QnnRbeJob,
) -> QnnStatus {
    if out.is_null() {
        set_error("null output pointer");
        return QnnStatus::InvalidArgument;
    }
    let text = match unsafe { str_arg(json) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let job: RbeJob = match serde_json::from_str(text) {
        Ok(j) => j,
        Err(e) => {
            set_error(&e.to_string());
            return QnnStatus::InvalidArgument;
        }
    };
    if let Err(errs) = job.validate() {
        set_error(&errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "));
        return QnnStatus::Validation;
    }
    unsafe { *out = Box::into_raw(Box::new(QnnRbeJob(job))) };
    QnnStatus::Ok
}

/// # Safety
/// `j` must come from `qnn_rbe_job_from_json` and not be freed twice.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_rbe_job_free(j: *mut QnnRbeJob) {
    if !j.is_null() {
        drop(unsafe { Box::from_raw(j) });
    }
}

/// Cycle breakdown of one engine job.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QnnCycleReport {
    pub total_cycles: u64,
    pub load_cycles: u64,
    pub compute_cycles: u64,
    pub normquant_cycles: u64,
    pub streamout_cycles: u64,
    pub ops_per_cycle: f64,
}

/// Runs the cycle model for a validated job.
///
/// # Safety
/// All pointers must be live handles/writable memory.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_rbe_cycle_report(
    job: *const QnnRbeJob,
    calib: *const QnnCalibration,
    out: *mut QnnCycleReport,
) -> QnnStatus {
    if job.is_null() || calib.is_null() || out.is_null() {
        set_error("null handle");
        return QnnStatus::InvalidArgument;
    }
    let (job, calib) = unsafe { (&(*job).0, &(*calib).0) };
    let r = rbe::execute_timed(job, &calib.rbe);
    unsafe {
        *out = QnnCycleReport {
            total_cycles: r.total,
            load_cycles: r.load,
            compute_cycles: r.compute,
            normquant_cycles: r.normquant,
            streamout_cycles: r.streamout,
            ops_per_cycle: r.ops_per_cycle,
        };
    }
    QnnStatus::Ok
}

/// Minimum error-free supply voltage at `freq_hz`, with or without the
/// adaptive body-bias loop.
///
/// # Safety
/// `calib` must be a live handle and `out_vdd` writable.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_min_vdd(
    calib: *const QnnCalibration,
    freq_hz: f64,
    abb_on: bool,
    out_vdd: *mut f64,
) -> QnnStatus {
    if calib.is_null() || out_vdd.is_null() {
        set_error("null handle");
        return QnnStatus::InvalidArgument;
    }
    let calib = unsafe { &(*calib).0 };
    let model = match abb::DelayModel::calibrate(&calib.delay, &calib.abb) {
        Ok(m) => m,
        Err(e) => {
            set_error(&e.to_string());
            return QnnStatus::Validation;
        }
    };
    let pop = abb::PathPopulation::generate(&calib.abb);
    match abb::find_min_vdd(freq_hz, abb_on, &model, &pop, calib) {
        Ok(v) => {
            unsafe { *out_vdd = v };
            QnnStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            QnnStatus::Runtime
        }
    }
}

/// Tiles and schedules a network (JSON array of layer descriptors) and
/// returns the per-layer cost table as a CSV string. Free the string with
/// `qnn_string_free`.
///
/// # Safety
/// All pointers must be valid; `out_csv` receives an owned C string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_net_schedule_csv(
    calib: *const QnnCalibration,
    network_json: *const c_char,
    vdd: f64,
    freq_hz: f64,
    vbb: f64,
    out_csv: *mut *mut c_char,
) -> QnnStatus {
    if calib.is_null() || out_csv.is_null() {
        set_error("null handle");
        return QnnStatus::InvalidArgument;
    }
    let text = match unsafe { str_arg(network_json) } {
        Ok(t) => t,
        Err(s) => return s,
    };
    let layers: Vec<tiler::LayerDescriptor> = match serde_json::from_str(text) {
        Ok(l) => l,
        Err(e) => {
            set_error(&e.to_string());
            return QnnStatus::InvalidArgument;
        }
    };
    let calib = unsafe { &(*calib).0 };
    let op = tiler::OperatingPoint { vdd, freq_hz, vbb };
    match tiler::schedule_network(&layers, &op, calib) {
        Ok(s) => {
            let csv = CString::new(tiler::schedule_csv(&s)).expect("CSV has no NUL");
            unsafe { *out_csv = csv.into_raw() };
            QnnStatus::Ok
        }
        Err(e @ (tiler::TilerError::InvalidLayer { .. } | tiler::TilerError::Infeasible { .. })) => {
            set_error(&e.to_string());
            QnnStatus::Validation
        }
        Err(e) => {
            set_error(&e.to_string());
            QnnStatus::Runtime
        }
    }
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn qnn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
