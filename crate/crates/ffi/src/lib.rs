//! C interface to the `signfl` simulator.
//!
//! Every fallible function returns a [`SignflStatus`]. On failure the message
//! is available from [`signfl_last_error`] on the same thread until the next
//! failing call. Handles are opaque; each has a matching `_free` function that
//! accepts null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use signfl::aggregation::{agg_majority, SignMatrix};
use signfl::analysis::{bound_convergence, BoundInputs};
use signfl::compressor::{compress, epsilon_worst_case, prob_plus_one, CompressorParams, Epsilon};
use signfl::orchestrator::{initial_point, Experiment, ExperimentConfig, Trajectory};
use signfl::rng::{seeded, SimRng};
use signfl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    BufferTooSmall = 5,
    Unavailable = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SignflStatus {
    match err {
        Error::Config { .. } | Error::Json(_) | Error::TauExceedsClients { .. } => SignflStatus::Config,
        Error::Io { .. } | Error::Idx(_) => SignflStatus::Io,
        Error::BoundUnavailable(_) => SignflStatus::Unavailable,
        _ => SignflStatus::InvalidArgument,
    }
}

fn fail(status: SignflStatus, message: impl Into<String>) -> SignflStatus {
    set_error(message.into());
    status
}

/// Runs `f`, recording any error or panic as the last error.
fn guard(f: impl FnOnce() -> Result<(), SignflStatus>) -> SignflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SignflStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(SignflStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: signfl::Result<T>) -> Result<T, SignflStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), SignflStatus> {
    if p.is_null() {
        Err(fail(SignflStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn signfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Probability that the compressor emits `+1` for coordinate value `g`.
///
/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_prob_plus_one(g: f64, clip_bound: f64, beta: f64, out: *mut f64) -> SignflStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = lift(CompressorParams::new(clip_bound, beta))?;
        *out = lift(prob_plus_one(g, &params))?;
        Ok(())
    })
}

/// Worst-case per-round ε for dimension `dim`; `+inf` when `beta = 0`.
///
/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_epsilon_worst_case(
    clip_bound: f64,
    beta: f64,
    dim: usize,
    out: *mut f64,
) -> SignflStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = lift(CompressorParams::new(clip_bound, beta))?;
        *out = match epsilon_worst_case(&params, dim) {
            Epsilon::Private(e) => e,
            Epsilon::NonPrivate => f64::INFINITY,
        };
        Ok(())
    })
}

/// Majority vote over a row-major `rows × cols` matrix of `±1` entries.
/// Writes `cols` values in `{-1, 0, +1}` to `out`.
///
/// # Safety
/// `matrix` must hold `rows * cols` values and `out` room for `cols`.
#[no_mangle]
pub unsafe extern "C" fn signfl_aggregate_majority(
    matrix: *const i8,
    rows: usize,
    cols: usize,
    out: *mut i8,
) -> SignflStatus {
    guard(|| {
        non_null(matrix, "matrix")?;
        non_null(out, "out")?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(SignflStatus::InvalidArgument, "rows * cols overflows"))?;
        let data = slice::from_raw_parts(matrix, len);
        let values: Vec<Vec<i8>> = data.chunks(cols.max(1)).map(<[i8]>::to_vec).collect();
        let m = lift(SignMatrix::from_values(&values))?;
        let signs = lift(agg_majority(&m))?;
        slice::from_raw_parts_mut(out, cols).copy_from_slice(signs.as_slice());
        Ok(())
    })
}

/// A seeded stochastic sign compressor.
pub struct SignflCompressor {
    params: CompressorParams,
    rng: SimRng,
}

/// # Safety
/// `out` must be null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_compressor_new(
    clip_bound: f64,
    beta: f64,
    seed: u64,
    out: *mut *mut SignflCompressor,
) -> SignflStatus {
    guard(|| {
        non_null(out, "out")?;
        let params = lift(CompressorParams::new(clip_bound, beta))?;
        *out = Box::into_raw(Box::new(SignflCompressor {
            params,
            rng: seeded(seed),
        }));
        Ok(())
    })
}

/// Compresses `dim` coordinates of `g` into `out` (values `±1`).
///
/// # Safety
/// `c` must come from [`signfl_compressor_new`]; `g` and `out` must hold
/// `dim` values.
#[no_mangle]
pub unsafe extern "C" fn signfl_compressor_compress(
    c: *mut SignflCompressor,
    g: *const f64,
    dim: usize,
    out: *mut i8,
) -> SignflStatus {
    guard(|| {
        non_null(c, "compressor")?;
        non_null(g, "g")?;
        non_null(out, "out")?;
        let c = &mut *c;
        let signs = lift(compress(slice::from_raw_parts(g, dim), &c.params, &mut c.rng))?;
        for (o, s) in slice::from_raw_parts_mut(out, dim).iter_mut().zip(signs) {
            *o = s.value();
        }
        Ok(())
    })
}

/// # Safety
/// `c` must be null or come from [`signfl_compressor_new`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn signfl_compressor_free(c: *mut SignflCompressor) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// A validated experiment with its task built.
pub struct SignflExperiment {
    inner: Experiment,
}

/// Builds an experiment from a JSON config. Relative data paths resolve
/// against the working directory.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_experiment_new(
    config_json: *const c_char,
    out: *mut *mut SignflExperiment,
) -> SignflStatus {
    guard(|| {
        non_null(config_json, "config_json")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(config_json)
            .to_str()
            .map_err(|_| fail(SignflStatus::InvalidArgument, "config is not UTF-8"))?;
        let config = lift(ExperimentConfig::from_json(text))?;
        let inner = lift(Experiment::new(config))?;
        *out = Box::into_raw(Box::new(SignflExperiment { inner }));
        Ok(())
    })
}

/// Model dimension `d`, or 0 for a null handle.
///
/// # Safety
/// `e` must be null or a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn signfl_experiment_dim(e: *const SignflExperiment) -> usize {
    e.as_ref().map_or(0, |e| e.inner.task.as_task().dim())
}

/// Convergence bound for the experiment's config, evaluated at its initial
/// point.
///
/// # Safety
/// `e` must be a live experiment handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_experiment_bound(e: *const SignflExperiment, out: *mut f64) -> SignflStatus {
    guard(|| {
        non_null(e, "experiment")?;
        non_null(out, "out")?;
        let exp = &(*e).inner;
        let task = exp.task.as_task();
        let f0 = task.loss(&lift(initial_point(&exp.config, task))?);
        let inputs = BoundInputs::from_config(&exp.config, task, f0);
        *out = lift(bound_convergence(&inputs))?.value;
        Ok(())
    })
}

/// Runs all rounds and returns the trajectory.
///
/// # Safety
/// `e` must be a live experiment handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_experiment_run(
    e: *const SignflExperiment,
    out: *mut *mut SignflTrajectory,
) -> SignflStatus {
    guard(|| {
        non_null(e, "experiment")?;
        non_null(out, "out")?;
        let inner = lift((*e).inner.run())?;
        *out = Box::into_raw(Box::new(SignflTrajectory { inner }));
        Ok(())
    })
}

/// # Safety
/// `e` must be null or a live experiment handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn signfl_experiment_free(e: *mut SignflExperiment) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Per-round records and the final model of one run.
pub struct SignflTrajectory {
    inner: Trajectory,
}

/// Number of recorded rounds, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn signfl_trajectory_rounds(t: *const SignflTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.inner.records.len())
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> Result<(), SignflStatus> {
    non_null(buf, "buf")?;
    if len < values.len() {
        return Err(fail(
            SignflStatus::BufferTooSmall,
            format!("need {} values, buffer holds {len}", values.len()),
        ));
    }
    slice::from_raw_parts_mut(buf, values.len()).copy_from_slice(values);
    Ok(())
}

/// Copies `F(w(t))` for every round into `buf`.
///
/// # Safety
/// `t` must be a live trajectory handle and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn signfl_trajectory_losses(
    t: *const SignflTrajectory,
    buf: *mut f64,
    len: usize,
) -> SignflStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        copy_out(&(*t).inner.losses(), buf, len)
    })
}

/// Copies `‖∇F(w(t))‖₁` for every round into `buf`.
///
/// # Safety
/// `t` must be a live trajectory handle and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn signfl_trajectory_grad_norms(
    t: *const SignflTrajectory,
    buf: *mut f64,
    len: usize,
) -> SignflStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        let norms: Vec<f64> = (*t).inner.records.iter().map(|r| r.grad_norm_1).collect();
        copy_out(&norms, buf, len)
    })
}

/// Copies the final model into `buf`.
///
/// # Safety
/// `t` must be a live trajectory handle and `buf` hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn signfl_trajectory_final_w(
    t: *const SignflTrajectory,
    buf: *mut f64,
    len: usize,
) -> SignflStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        copy_out(&(*t).inner.final_w, buf, len)
    })
}

/// The trajectory as CSV. Release the string with [`signfl_string_free`].
///
/// # Safety
/// `t` must be a live trajectory handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn signfl_trajectory_csv(t: *const SignflTrajectory, out: *mut *mut c_char) -> SignflStatus {
    guard(|| {
        non_null(t, "trajectory")?;
        non_null(out, "out")?;
        let csv = CString::new((*t).inner.to_csv()).expect("CSV has no NUL bytes");
        *out = csv.into_raw();
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a live trajectory handle, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn signfl_trajectory_free(t: *mut SignflTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn signfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
