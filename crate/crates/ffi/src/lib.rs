//! C ABI for `qfilter`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `qf_*_free`. Every fallible call returns a [`QfStatus`]; on
//! failure `qf_last_error` describes what went wrong on the calling thread.
//! Operators are passed as `2 * dim * dim` doubles: row-major entries with
//! real and imaginary parts interleaved.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use num_complex::Complex64;
use qfilter::config::{preset_model, Preset, PresetParams};
use qfilter::filter::{run_filter, FilterKind, FilterStates};
use qfilter::io::{format_record, parse_record};
use qfilter::master::integrate_master;
use qfilter::simulate::{derive_seed, simulate_trajectory, SimulationSpec};
use qfilter::{
    DensityMatrix, Detection, Error, FilterTrajectory, Method, ObservationRecord, Operator,
    SystemModel, TimeGrid,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    InvalidRecord = 4,
    Divergence = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

pub const QF_HOMODYNE: i32 = 0;
pub const QF_COUNTING: i32 = 1;

pub const QF_FILTER_NORMALIZED: i32 = 0;
pub const QF_FILTER_LINEAR: i32 = 1;

pub const QF_METHOD_EULER: i32 = 0;
pub const QF_METHOD_RK4: i32 = 1;

/// A system model: Hamiltonian, coupling, initial state, detection scheme.
pub struct QfModel(SystemModel);

/// An observation record on a time grid.
pub struct QfRecord(ObservationRecord);

/// A filter trajectory (normalized states, or linear states with norms).
pub struct QfTrajectory(FilterTrajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Message for the most recent failure on this thread; empty if none.
/// The pointer stays valid until the next `qf_*` call on this thread.
#[no_mangle]
pub extern "C" fn qf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

struct Failure(QfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Divergence { .. }
            | Error::TooManyDiverged { .. }
            | Error::NonPositiveTrace(_)
            | Error::ImpossibleJump { .. }
            | Error::RateTooLarge { .. }
            | Error::ZeroTrace => QfStatus::Divergence,
            Error::LengthMismatch { .. }
            | Error::InvalidRecord(_)
            | Error::Syntax { .. }
            | Error::BadIncrement(_)
            | Error::DetectionMismatch { .. } => QfStatus::InvalidRecord,
            Error::InvalidGrid(_) | Error::LinearRequiresHomodyne => QfStatus::InvalidArgument,
            _ => QfStatus::InvalidModel,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(QfStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            QfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            QfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(QfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(QfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn read_operator(p: *const f64, dim: usize, what: &str) -> Result<Operator, Failure> {
    if p.is_null() {
        return Err(Failure(QfStatus::NullPointer, format!("{what} is null")));
    }
    let raw = slice::from_raw_parts(p, 2 * dim * dim);
    let entries = raw.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok(Operator::from_row_major(dim, entries)?)
}

fn detection(code: i32) -> Result<Detection, Failure> {
    match code {
        QF_HOMODYNE => Ok(Detection::Homodyne),
        QF_COUNTING => Ok(Detection::Counting),
        other => Err(invalid(format!("unknown detection code {other}"))),
    }
}

fn write_out(values: &[f64], out: *mut f64, out_len: usize) -> Result<(), Failure> {
    if out_len < values.len() {
        return Err(Failure(
            QfStatus::BufferTooSmall,
            format!("buffer holds {out_len} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(Failure(
            QfStatus::NullPointer,
            "output buffer is null".into(),
        ));
    }
    // SAFETY: caller guarantees `out` has room for `out_len >= values.len()` doubles.
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

/// Builds a preset model (`"qubit-decay"`, `"rabi-decay"`, `"constant-rate-counting"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn qf_model_preset(
    name: *const c_char,
    gamma: f64,
    omega: f64,
    lambda: f64,
    detection_code: i32,
    out: *mut *mut QfModel,
) -> QfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let name = deref(name, "name")?;
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| invalid("name is not UTF-8"))?;
        let preset: Preset = name.parse().map_err(invalid)?;
        let params = PresetParams {
            gamma,
            omega,
            lambda,
        };
        let model = preset_model(preset, params, detection(detection_code)?)?;
        *out = Box::into_raw(Box::new(QfModel(model)));
        Ok(())
    })
}

/// Builds a model from explicit `H`, `L` and initial state.
///
/// # Safety
/// `h`, `l` and `rho0` must each point to `2 * dim * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qf_model_explicit(
    dim: usize,
    h: *const f64,
    l: *const f64,
    rho0: *const f64,
    detection_code: i32,
    out: *mut *mut QfModel,
) -> QfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if dim == 0 || dim > qfilter::operator::MAX_DIM {
            return Err(Error::InvalidDimension(dim).into());
        }
        let h = read_operator(h, dim, "h")?;
        let l = read_operator(l, dim, "l")?;
        let rho0 = DensityMatrix::new(read_operator(rho0, dim, "rho0")?)?;
        let model = SystemModel::new(h, l, rho0, detection(detection_code)?)?;
        *out = Box::into_raw(Box::new(QfModel(model)));
        Ok(())
    })
}

/// Hilbert-space dimension of `model`, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle from `qf_model_*`.
#[no_mangle]
pub unsafe extern "C" fn qf_model_dim(model: *const QfModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.dim())
}

/// # Safety
/// `model` must be null or a live handle from `qf_model_*`; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn qf_model_free(model: *mut QfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Per-trajectory seed derived from a master seed.
#[no_mangle]
pub extern "C" fn qf_derive_seed(master_seed: u64, index: u64) -> u64 {
    derive_seed(master_seed, index)
}

/// Simulates trajectory `index` of the ensemble seeded by `master_seed`,
/// returning its record and normalized conditional states.
///
/// # Safety
/// `model` must be a live handle; `out_record` and `out_trajectory` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qf_simulate(
    model: *const QfModel,
    t0: f64,
    dt: f64,
    n_steps: usize,
    master_seed: u64,
    index: u64,
    out_record: *mut *mut QfRecord,
    out_trajectory: *mut *mut QfTrajectory,
) -> QfStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let out_record = out_ptr(out_record, "out_record")?;
        let out_trajectory = out_ptr(out_trajectory, "out_trajectory")?;
        let grid = TimeGrid::new(t0, dt, n_steps)?;
        let index = usize::try_from(index).map_err(|_| invalid("index out of range"))?;
        let n_traj = index
            .checked_add(1)
            .ok_or_else(|| invalid("index out of range"))?;
        let spec = SimulationSpec::new(model.0.clone(), grid, n_traj, master_seed, vec![])?;
        let t = simulate_trajectory(&spec, index).map_err(|d| {
            Failure(
                QfStatus::Divergence,
                format!(
                    "trajectory {} diverged at step {}: {}",
                    d.index, d.step, d.message
                ),
            )
        })?;
        *out_record = Box::into_raw(Box::new(QfRecord(t.record)));
        *out_trajectory = Box::into_raw(Box::new(QfTrajectory(t.filter)));
        Ok(())
    })
}

/// Runs the normalized (`QF_FILTER_NORMALIZED`) or linear (`QF_FILTER_LINEAR`) filter on `record`.
///
/// # Safety
/// `model` and `record` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qf_run_filter(
    model: *const QfModel,
    record: *const QfRecord,
    kind: i32,
    out: *mut *mut QfTrajectory,
) -> QfStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let record = deref(record, "record")?;
        let out = out_ptr(out, "out")?;
        let kind = match kind {
            QF_FILTER_NORMALIZED => FilterKind::Normalized,
            QF_FILTER_LINEAR => FilterKind::Linear,
            other => return Err(invalid(format!("unknown filter kind {other}"))),
        };
        let traj = run_filter(&model.0, &record.0, kind)?;
        *out = Box::into_raw(Box::new(QfTrajectory(traj)));
        Ok(())
    })
}

/// Number of stored states (`n_steps + 1`), or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_trajectory_len(traj: *const QfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Writes the conditional expectation of `X` at every stored state; linear
/// trajectories are divided by their norms.
///
/// # Safety
/// `traj` must be a live handle, `x` must point to `2 * dim * dim` doubles,
/// and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qf_trajectory_expectations(
    traj: *const QfTrajectory,
    x: *const f64,
    dim: usize,
    out: *mut f64,
    out_len: usize,
) -> QfStatus {
    guard(|| {
        let traj = deref(traj, "trajectory")?;
        let x = read_operator(x, dim, "x")?;
        let expected = state_dim(&traj.0);
        if expected != dim {
            return Err(Error::DimensionMismatch {
                expected,
                found: dim,
            }
            .into());
        }
        write_out(&traj.0.expectations(&x), out, out_len)
    })
}

fn state_dim(t: &FilterTrajectory) -> usize {
    match &t.states {
        FilterStates::Linear { states, .. } => states.first().map_or(0, Operator::dim),
        FilterStates::Normalized(s) => s.first().map_or(0, DensityMatrix::dim),
    }
}

/// Writes the traces of a linear trajectory's unnormalized states.
///
/// # Safety
/// `traj` must be a live handle and `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qf_trajectory_norms(
    traj: *const QfTrajectory,
    out: *mut f64,
    out_len: usize,
) -> QfStatus {
    guard(|| {
        let traj = deref(traj, "trajectory")?;
        let norms = traj
            .0
            .norms()
            .ok_or_else(|| invalid("norms exist only for linear-filter trajectories"))?;
        write_out(norms, out, out_len)
    })
}

/// # Safety
/// `traj` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn qf_trajectory_free(traj: *mut QfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Integrates the master equation and writes `tr(rho(t_k) X)` for `k = 0..=n_steps`.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `2 * dim * dim` doubles
/// for the model's dimension, and `out` to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qf_integrate_master(
    model: *const QfModel,
    t0: f64,
    dt: f64,
    n_steps: usize,
    method: i32,
    x: *const f64,
    out: *mut f64,
    out_len: usize,
) -> QfStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let method = match method {
            QF_METHOD_EULER => Method::Euler,
            QF_METHOD_RK4 => Method::Rk4,
            other => return Err(invalid(format!("unknown method {other}"))),
        };
        let x = read_operator(x, model.0.dim(), "x")?;
        let grid = TimeGrid::new(t0, dt, n_steps)?;
        if out_len < n_steps.saturating_add(1) {
            return Err(Failure(
                QfStatus::BufferTooSmall,
                format!(
                    "buffer holds {out_len} values, {} needed",
                    n_steps.saturating_add(1)
                ),
            ));
        }
        let traj = integrate_master(&model.0, &grid, method)?;
        write_out(&traj.expectations(&x), out, out_len)
    })
}

/// Builds a record from raw increments (`dy` for homodyne, 0/1 for counting).
///
/// # Safety
/// `increments` must point to `n_steps` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qf_record_new(
    detection_code: i32,
    t0: f64,
    dt: f64,
    n_steps: usize,
    increments: *const f64,
    out: *mut *mut QfRecord,
) -> QfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let grid = TimeGrid::new(t0, dt, n_steps)?;
        let values = if n_steps == 0 {
            Vec::new()
        } else {
            deref(increments, "increments")?;
            slice::from_raw_parts(increments, n_steps).to_vec()
        };
        let record = ObservationRecord::new(grid, detection(detection_code)?, values, None)?;
        *out = Box::into_raw(Box::new(QfRecord(record)));
        Ok(())
    })
}

/// Number of increments in `record`, or 0 for a null handle.
///
/// # Safety
/// `record` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qf_record_len(record: *const QfRecord) -> usize {
    record.as_ref().map_or(0, |r| r.0.increments().len())
}

/// # Safety
/// `record` must be a live handle and `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qf_record_increments(
    record: *const QfRecord,
    out: *mut f64,
    out_len: usize,
) -> QfStatus {
    guard(|| {
        let record = deref(record, "record")?;
        write_out(record.0.increments(), out, out_len)
    })
}

/// Serializes `record` to CSV; free the string with `qf_string_free`.
///
/// # Safety
/// `record` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qf_record_to_csv(
    record: *const QfRecord,
    out: *mut *mut c_char,
) -> QfStatus {
    guard(|| {
        let record = deref(record, "record")?;
        let out = out_ptr(out, "out")?;
        let text = CString::new(format_record(&record.0))
            .map_err(|_| invalid("record text contains NUL"))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// Parses a record CSV.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qf_record_from_csv(
    text: *const c_char,
    out: *mut *mut QfRecord,
) -> QfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let text = deref(text, "text")?;
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| invalid("text is not UTF-8"))?;
        *out = Box::into_raw(Box::new(QfRecord(parse_record(text)?)));
        Ok(())
    })
}

/// # Safety
/// `record` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn qf_record_free(record: *mut QfRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
