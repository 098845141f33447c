//! C ABI over the `tendonid` toolkit.
//!
//! Models and datasets cross the boundary as opaque handles owned by the
//! caller and released with the matching `_free` function. Every fallible
//! call returns a [`TendonidStatus`]; on failure the message is available
//! from [`tendonid_last_error`] on the same thread.
//!
//! Matrices are passed as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, c_double, size_t};
use nalgebra::{DMatrix, DVector};
use tendonid::config::{IdentificationConfig, KinematicsConfig};
use tendonid::dataset::{load_csv, Dataset};
use tendonid::kinematics::{forward_kinematics, reconstruct_joints};
use tendonid::model::{load_model, model_from_json, model_to_json, simulate_matrix, InitialCondition, ModelKind};
use tendonid::mpc::{solve_qp, Qp};
use tendonid::pipeline::{identify, validate, Method};
use tendonid::Error;

/// Result code of every fallible call. Values 2 to 5 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TendonidStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or a buffer of the wrong length.
    InvalidArgument = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Infeasible = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Identified model of any kind.
pub struct TendonidModel {
    inner: ModelKind,
}

/// Input/output record loaded from CSV.
pub struct TendonidDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> TendonidStatus {
    match err.exit_code() {
        2 => TendonidStatus::Config,
        3 => TendonidStatus::Data,
        4 => TendonidStatus::Numeric,
        5 => TendonidStatus::Infeasible,
        _ => TendonidStatus::Internal,
    }
}

struct ArgError(String);

enum Failure {
    Arg(ArgError),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<ArgError> for Failure {
    fn from(e: ArgError) -> Self {
        Failure::Arg(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TendonidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TendonidStatus::Ok,
        Ok(Err(Failure::Arg(ArgError(msg)))) => {
            set_last_error(msg);
            TendonidStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(format!("{}: {e}", e.tag()));
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            TendonidStatus::Internal
        }
    }
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, ArgError> {
    if s.is_null() {
        return Err(ArgError(format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| ArgError(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const c_double, len: usize, what: &str) -> Result<&'a [f64], ArgError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(ArgError(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut c_double, len: usize, what: &str) -> Result<&'a mut [f64], ArgError> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(ArgError(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, ArgError> {
    p.as_ref().ok_or_else(|| ArgError(format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, ArgError> {
    p.as_mut().ok_or_else(|| ArgError(format!("{what} is null")))
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            out[i * cols + j] = m[(i, j)];
        }
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tendonid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tendonid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from [`tendonid_model_to_json`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn tendonid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_load(path: *const c_char, out: *mut *mut TendonidModel) -> TendonidStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = load_model(c_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(TendonidModel { inner: model }));
        Ok(())
    })
}

/// Parses a model from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_from_json(json: *const c_char, out: *mut *mut TendonidModel) -> TendonidStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = model_from_json(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(TendonidModel { inner: model }));
        Ok(())
    })
}

/// Serializes a model; free the result with [`tendonid_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_to_json(model: *const TendonidModel, out: *mut *mut c_char) -> TendonidStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = model_to_json(&handle(model, "model")?.inner)?;
        let c = CString::new(text).map_err(|_| ArgError("model JSON contains NUL".into()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_free(model: *mut TendonidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of model inputs, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_num_inputs(model: *const TendonidModel) -> size_t {
    model.as_ref().map_or(0, |m| m.inner.num_inputs())
}

/// Number of model outputs, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_num_outputs(model: *const TendonidModel) -> size_t {
    model.as_ref().map_or(0, |m| m.inner.num_outputs())
}

/// Length of the initial condition expected by [`tendonid_model_simulate`]:
/// the state dimension, or `max_lag · outputs` for ARX models.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_initial_len(model: *const TendonidModel) -> size_t {
    model.as_ref().map_or(0, |m| match &m.inner {
        ModelKind::StateSpace(s) => s.order(),
        ModelKind::Arx(a) => a.max_lag() * a.num_outputs(),
        ModelKind::Sindy(s) => s.num_outputs(),
    })
}

/// Free-run simulation. `u` is `rows × num_inputs`, `y_out` receives
/// `rows × num_outputs`. For ARX models `init` holds the leading output
/// rows of the lag window.
///
/// # Safety
/// All buffers must be valid for the lengths implied by the arguments.
#[no_mangle]
pub unsafe extern "C" fn tendonid_model_simulate(
    model: *const TendonidModel,
    u: *const c_double,
    rows: size_t,
    init: *const c_double,
    init_len: size_t,
    y_out: *mut c_double,
) -> TendonidStatus {
    guard(|| {
        let model = &handle(model, "model")?.inner;
        let p = model.num_inputs();
        let q = model.num_outputs();
        let u = DMatrix::from_row_slice(rows, p, slice(u, rows * p, "u")?);
        let init_vals = slice(init, init_len, "init")?;
        let init = match model {
            ModelKind::Arx(_) => {
                if init_len % q != 0 {
                    return Err(ArgError(format!("ARX window length {init_len} is not a multiple of {q}")).into());
                }
                InitialCondition::OutputWindow(DMatrix::from_row_slice(init_len / q, q, init_vals))
            }
            _ => InitialCondition::State(DVector::from_column_slice(init_vals)),
        };
        let y = simulate_matrix(model, &u, &init)?;
        write_row_major(&y, slice_mut(y_out, rows * q, "y_out")?);
        Ok(())
    })
}

/// Loads a `t,u1..,y1..` CSV record.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tendonid_dataset_load(path: *const c_char, out: *mut *mut TendonidDataset) -> TendonidStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let ds = load_csv(c_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(TendonidDataset { inner: ds }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tendonid_dataset_free(ds: *mut TendonidDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tendonid_dataset_len(ds: *const TendonidDataset) -> size_t {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Identifies a model with default settings. `method` is `n4sid`, `arx` or `sindyc`.
///
/// # Safety
/// `method` must be a NUL-terminated string, `train` a live handle and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tendonid_identify(
    method: *const c_char,
    train: *const TendonidDataset,
    out: *mut *mut TendonidModel,
) -> TendonidStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let method: Method = c_str(method, "method")?.parse()?;
        let model = identify(method, &handle(train, "train")?.inner, &IdentificationConfig::default())?;
        *out = Box::into_raw(Box::new(TendonidModel { inner: model }));
        Ok(())
    })
}

/// Validation fit in percent. `per_channel` receives `num_outputs` values
/// and may be null when `channels` is 0.
///
/// # Safety
/// Handles must be live; `mean_fit` must be valid; `per_channel` must hold
/// `channels` doubles.
#[no_mangle]
pub unsafe extern "C" fn tendonid_validate(
    model: *const TendonidModel,
    val: *const TendonidDataset,
    mean_fit: *mut c_double,
    per_channel: *mut c_double,
    channels: size_t,
) -> TendonidStatus {
    guard(|| {
        let mean_fit = out_ptr(mean_fit, "mean_fit")?;
        let v = validate(&handle(model, "model")?.inner, &handle(val, "val")?.inner)?;
        let fits = &v.report.per_channel_fit;
        if channels != 0 {
            if channels != fits.len() {
                return Err(ArgError(format!("per_channel holds {channels} values, model has {}", fits.len())).into());
            }
            slice_mut(per_channel, channels, "per_channel")?.copy_from_slice(fits);
        }
        *mean_fit = v.report.mean_fit;
        Ok(())
    })
}

/// End-effector position in metres for motor angles `q1`, `q2` with the
/// default joint ratios and the given link length.
///
/// # Safety
/// `xyz` must point to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tendonid_forward_kinematics(
    q1: c_double,
    q2: c_double,
    link_length_m: c_double,
    xyz: *mut c_double,
) -> TendonidStatus {
    guard(|| {
        let out = slice_mut(xyz, 3, "xyz")?;
        let kin = KinematicsConfig { link_length_m, ..KinematicsConfig::default() };
        let joints = reconstruct_joints(q1, q2, &kin.ratios());
        let p = forward_kinematics(&joints, &kin.geometry()?)?;
        out.copy_from_slice(p.as_slice());
        Ok(())
    })
}

/// Solves `min ½zᵀHz + gᵀz` subject to `Az ≤ b` with `H` (`n × n`)
/// positive definite and `A` (`m × n`). `z_out` receives `n` values.
///
/// # Safety
/// Buffers must be valid for the lengths implied by `n` and `m`;
/// `a` and `b` may be null when `m` is 0; `objective` may be null.
#[no_mangle]
pub unsafe extern "C" fn tendonid_solve_qp(
    n: size_t,
    m: size_t,
    h: *const c_double,
    g: *const c_double,
    a: *const c_double,
    b: *const c_double,
    z_out: *mut c_double,
    objective: *mut c_double,
) -> TendonidStatus {
    guard(|| {
        let qp = Qp {
            h: DMatrix::from_row_slice(n, n, slice(h, n * n, "h")?),
            g: DVector::from_column_slice(slice(g, n, "g")?),
            a: DMatrix::from_row_slice(m, n, slice(a, m * n, "a")?),
            b: DVector::from_column_slice(slice(b, m, "b")?),
        };
        let sol = solve_qp(&qp)?;
        slice_mut(z_out, n, "z_out")?.copy_from_slice(sol.z.as_slice());
        if let Some(obj) = objective.as_mut() {
            *obj = sol.objective;
        }
        Ok(())
    })
}
