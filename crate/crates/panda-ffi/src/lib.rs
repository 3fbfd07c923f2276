//! C ABI for the decentralized-optimization simulator.
//!
//! All objects cross the boundary as opaque handles owned by this library;
//! every constructor has a matching `_free`, and every fallible call returns
//! a `PandaStatus` code. Pointers must not be used after being freed.

use std::ffi::CStr;
use std::os::raw::c_char;
use std::ptr;

use panda_core::model::{generate_least_squares_instance, instance_from_text, ProblemInstance};
use panda_core::network::{iid_link_failure_sequence, MixingSequence};
use panda_core::solvers::{run, Algorithm, RoundMatrices, RunStatus, RunTrace};

/// Result code for every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PandaStatus {
    /// Operation succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A numeric or string argument was out of range or unrecognized.
    InvalidArgument = 2,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 3,
    /// Instance generation or parsing failed.
    ModelError = 4,
    /// The solver rejected its inputs or aborted.
    SolverError = 5,
    /// The output buffer was too small.
    BufferTooSmall = 6,
}

/// Opaque problem-instance handle.
pub struct PandaInstance {
    inner: ProblemInstance,
}

/// Opaque run-trace handle.
pub struct PandaTrace {
    inner: RunTrace,
}

/// Generate a random least-squares instance. On success writes a handle to
/// `out`; free it with `panda_instance_free`.
#[no_mangle]
pub extern "C" fn panda_instance_generate(
    n: usize,
    p: usize,
    cond_cap: f64,
    seed: u64,
    out: *mut *mut PandaInstance,
) -> PandaStatus {
    if out.is_null() {
        return PandaStatus::NullPointer;
    }
    if n == 0 || p == 0 || !(cond_cap >= 1.0) {
        return PandaStatus::InvalidArgument;
    }
    match generate_least_squares_instance(n, p, cond_cap, 1.0, seed) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(PandaInstance { inner })) };
            PandaStatus::Ok
        }
        Err(_) => PandaStatus::ModelError,
    }
}

/// Parse an instance from its text serialization (NUL-terminated).
#[no_mangle]
pub unsafe extern "C" fn panda_instance_from_text(
    text: *const c_char,
    out: *mut *mut PandaInstance,
) -> PandaStatus {
    if text.is_null() || out.is_null() {
        return PandaStatus::NullPointer;
    }
    let text = match CStr::from_ptr(text).to_str() {
        Ok(s) => s,
        Err(_) => return PandaStatus::InvalidUtf8,
    };
    match instance_from_text(text) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PandaInstance { inner }));
            PandaStatus::Ok
        }
        Err(_) => PandaStatus::ModelError,
    }
}

/// Number of agents, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn panda_instance_agents(instance: *const PandaInstance) -> usize {
    if instance.is_null() {
        return 0;
    }
    (*instance).inner.n()
}

/// Local variable dimension, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn panda_instance_dimension(instance: *const PandaInstance) -> usize {
    if instance.is_null() {
        return 0;
    }
    (*instance).inner.p()
}

#[no_mangle]
pub unsafe extern "C" fn panda_instance_free(instance: *mut PandaInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

fn parse_algorithm(name: &str, c: f64, alpha: f64, eta: f64) -> Option<Algorithm> {
    match name {
        "panda" => Some(Algorithm::Panda { c }),
        "panda-accel" => Some(Algorithm::AcceleratedPanda { c, eta }),
        "diging" => Some(Algorithm::Diging { alpha }),
        "exact-avg" => Some(Algorithm::ExactAverage { c }),
        _ => None,
    }
}

/// Run an algorithm on an instance over an i.i.d. link-failure graph
/// sequence derived from `graph_seed`. `algorithm` is one of "panda",
/// "panda-accel", "diging" or "exact-avg". On success writes a trace handle
/// to `out`; free it with `panda_trace_free`.
#[no_mangle]
pub unsafe extern "C" fn panda_run(
    instance: *const PandaInstance,
    algorithm: *const c_char,
    step_size: f64,
    diging_step: f64,
    eta: f64,
    removal_prob: f64,
    graph_seed: u64,
    iters: u64,
    out: *mut *mut PandaTrace,
) -> PandaStatus {
    if instance.is_null() || algorithm.is_null() || out.is_null() {
        return PandaStatus::NullPointer;
    }
    let name = match CStr::from_ptr(algorithm).to_str() {
        Ok(s) => s,
        Err(_) => return PandaStatus::InvalidUtf8,
    };
    let algo = match parse_algorithm(name, step_size, diging_step, eta) {
        Some(a) => a,
        None => return PandaStatus::InvalidArgument,
    };
    if !(0.0..1.0).contains(&removal_prob) || iters == 0 {
        return PandaStatus::InvalidArgument;
    }
    let prob = &(*instance).inner;
    let mix = MixingSequence::metropolis(iid_link_failure_sequence(
        prob.n(),
        removal_prob,
        graph_seed,
    ));
    let matrices = match algo {
        Algorithm::ExactAverage { .. } => RoundMatrices::None,
        _ => RoundMatrices::Mixing(&mix),
    };
    match run(&algo, prob, matrices, iters, 1) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PandaTrace { inner }));
            PandaStatus::Ok
        }
        Err(_) => PandaStatus::SolverError,
    }
}

/// Number of recorded residuals (rounds completed plus one), or 0 for null.
#[no_mangle]
pub unsafe extern "C" fn panda_trace_len(trace: *const PandaTrace) -> usize {
    if trace.is_null() {
        return 0;
    }
    (*trace).inner.residuals.len()
}

/// 1 when the divergence guard stopped the run, 0 otherwise or on null.
#[no_mangle]
pub unsafe extern "C" fn panda_trace_diverged(trace: *const PandaTrace) -> i32 {
    if trace.is_null() {
        return 0;
    }
    matches!((*trace).inner.status, RunStatus::Diverged { .. }) as i32
}

/// Copy the relative residual sequence into `buf` (capacity `len` doubles).
#[no_mangle]
pub unsafe extern "C" fn panda_trace_residuals(
    trace: *const PandaTrace,
    buf: *mut f64,
    len: usize,
) -> PandaStatus {
    if trace.is_null() || buf.is_null() {
        return PandaStatus::NullPointer;
    }
    let residuals = &(*trace).inner.residuals;
    if len < residuals.len() {
        return PandaStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(residuals.as_ptr(), buf, residuals.len());
    PandaStatus::Ok
}

/// Copy the cumulative message counts (one entry per completed round,
/// `panda_trace_len - 1` values) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn panda_trace_messages(
    trace: *const PandaTrace,
    buf: *mut u64,
    len: usize,
) -> PandaStatus {
    if trace.is_null() || buf.is_null() {
        return PandaStatus::NullPointer;
    }
    let messages = &(*trace).inner.cumulative_messages;
    if len < messages.len() {
        return PandaStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(messages.as_ptr(), buf, messages.len());
    PandaStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn panda_trace_free(trace: *mut PandaTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
