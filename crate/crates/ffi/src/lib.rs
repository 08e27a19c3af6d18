//! C interface to sparseids.
//!
//! Objects cross the boundary as opaque pointers that the caller releases
//! with the matching `*_free` function. Fallible functions return a
//! [`SpidStatus`]; on failure [`spid_last_error`] describes the most recent
//! error of the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sparseids::baseline::{PolicyKind, SamplingPolicy};
use sparseids::checkpoint::Checkpoint;
use sparseids::evaluator::evaluate;
use sparseids::flow_data::{generate_synthetic, load_flows_csv, FlowDataset, SynthConfig};
use sparseids::rollout::deploy_episode;
use sparseids::steering::{SteeringConfig, SteeringState};
use sparseids::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Data = 4,
    Checkpoint = 5,
    Topology = 6,
    InvalidArgument = 7,
    Diverged = 8,
    Internal = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpidPolicy {
    Rl = 0,
    Random = 1,
    RelativeFirstM = 2,
    FirstM = 3,
    EveryIth = 4,
}

impl From<SpidPolicy> for PolicyKind {
    fn from(p: SpidPolicy) -> Self {
        match p {
            SpidPolicy::Rl => PolicyKind::Rl,
            SpidPolicy::Random => PolicyKind::Random,
            SpidPolicy::RelativeFirstM => PolicyKind::RelativeFirstM,
            SpidPolicy::FirstM => PolicyKind::FirstM,
            SpidPolicy::EveryIth => PolicyKind::EveryIth,
        }
    }
}

/// Flow-level metrics of one evaluation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SpidMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub youden: f64,
    pub sparsity: f64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub true_negatives: u64,
    pub false_negatives: u64,
    pub consumed_packets: u64,
    pub total_packets: u64,
}

/// A set of flows.
pub struct SpidDataset(FlowDataset);

/// A trained checkpoint.
pub struct SpidModel(Checkpoint);

/// Tradeoff controller state.
pub struct SpidSteering(SteeringState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SpidStatus {
    match e {
        Error::Io { .. } => SpidStatus::Io,
        Error::MalformedRow { .. } | Error::InvalidFlow { .. } | Error::EmptyDataset => SpidStatus::Data,
        Error::CorruptCheckpoint { .. } | Error::VersionMismatch { .. } => SpidStatus::Checkpoint,
        Error::TopologyMismatch(_) => SpidStatus::Topology,
        Error::InvalidArgument(_) | Error::UnknownAttackType { .. } | Error::DimensionMismatch { .. } => {
            SpidStatus::InvalidArgument
        }
        Error::Diverged(_) | Error::NonFinite(_) => SpidStatus::Diverged,
        Error::Tape(_) => SpidStatus::Internal,
    }
}

enum Failure {
    Status(SpidStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, turning errors and panics into a status plus the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpidStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside sparseids".to_string());
            SpidStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(SpidStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(SpidStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a per-packet flow CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spid_dataset_load(path: *const c_char, out: *mut *mut SpidDataset) -> SpidStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, SpidDataset(load_flows_csv(path)?))
    })
}

/// Generate a synthetic dataset whose attacks differ from benign flows
/// only at packet `signal_index`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spid_dataset_synthetic(
    flows: usize,
    max_len: usize,
    signal_index: usize,
    seed: u64,
    out: *mut *mut SpidDataset,
) -> SpidStatus {
    guard(|| {
        let config = SynthConfig {
            flows,
            max_len,
            signal_index,
            ..SynthConfig::default()
        };
        put(out, SpidDataset(generate_synthetic(&config, seed)?))
    })
}

/// Number of flows; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spid_dataset_len(ds: *const SpidDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn spid_dataset_free(ds: *mut SpidDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spid_model_load(path: *const c_char, out: *mut *mut SpidModel) -> SpidStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        put(out, SpidModel(Checkpoint::load(path)?))
    })
}

/// # Safety
/// `m` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn spid_model_free(m: *mut SpidModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of trainable scalars; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spid_model_param_count(m: *const SpidModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.model.num_parameters())
}

/// 1 if the model takes a tradeoff input (trained with uniform alpha).
///
/// # Safety
/// `m` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spid_model_has_tradeoff(m: *const SpidModel) -> i32 {
    m.as_ref().map_or(0, |m| i32::from(m.0.train.alpha.is_uniform()))
}

fn tradeoff_arg(m: &SpidModel, tradeoff: f64) -> Option<f64> {
    m.0.train.alpha.is_uniform().then_some(tradeoff)
}

/// Evaluate every flow of `ds` under `policy`. `rate` is ignored for the
/// RL policy; `avg_len` is used by first-m, and a non-positive value means
/// the mean flow length of `ds`. `tradeoff` is ignored by models without a
/// tradeoff input.
///
/// # Safety
/// Handles must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spid_evaluate(
    m: *const SpidModel,
    ds: *const SpidDataset,
    policy: SpidPolicy,
    rate: f64,
    avg_len: f64,
    tradeoff: f64,
    seed: u64,
    out: *mut SpidMetrics,
) -> SpidStatus {
    guard(|| {
        let m = obj(m, "model")?;
        let ds = obj(ds, "dataset")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let kind = PolicyKind::from(policy);
        let policy = if kind == PolicyKind::Rl {
            SamplingPolicy::rl()
        } else {
            let avg = if avg_len > 0.0 { avg_len } else { ds.0.mean_flow_length() };
            SamplingPolicy::new(kind, rate, Some(avg))?
        };
        let ev = evaluate(&m.0.model, &m.0.encoder(), &ds.0, &policy, tradeoff_arg(m, tradeoff), seed)?;
        let r = &ev.report;
        *out = SpidMetrics {
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            specificity: r.specificity,
            f1: r.f1,
            youden: r.youden,
            sparsity: r.sparsity,
            true_positives: r.confusion.tp,
            false_positives: r.confusion.fp,
            true_negatives: r.confusion.tn,
            false_negatives: r.confusion.fn_,
            consumed_packets: r.consumed_packets,
            total_packets: r.total_packets,
        };
        Ok(())
    })
}

/// Run flow `index` of `ds` in deployment mode and report the final attack
/// confidence and the number of packets consumed.
///
/// # Safety
/// Handles must come from this library; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn spid_classify_flow(
    m: *const SpidModel,
    ds: *const SpidDataset,
    index: usize,
    tradeoff: f64,
    confidence: *mut f64,
    consumed: *mut usize,
) -> SpidStatus {
    guard(|| {
        let m = obj(m, "model")?;
        let ds = obj(ds, "dataset")?;
        if confidence.is_null() || consumed.is_null() {
            return Err(null("output pointer"));
        }
        let flow = ds.0.flows.get(index).ok_or_else(|| {
            Failure::Status(
                SpidStatus::InvalidArgument,
                format!("flow index {index} out of range for {} flows", ds.0.len()),
            )
        })?;
        let mut flow = flow.clone();
        flow.packets.truncate(m.0.train.max_len);
        let trace = deploy_episode(&m.0.model, &m.0.encoder(), &flow, tradeoff_arg(m, tradeoff))?;
        *confidence = trace.steps.last().map_or(0.5, |s| s.confidence);
        *consumed = trace.consumed();
        Ok(())
    })
}

/// New tradeoff controller starting at `tradeoff_max`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spid_steering_new(
    tradeoff_max: f64,
    step: f64,
    target: f64,
    out: *mut *mut SpidSteering,
) -> SpidStatus {
    guard(|| {
        let config = SteeringConfig {
            tradeoff_max,
            step,
            target,
            ..SteeringConfig::default()
        };
        config.validate()?;
        put(out, SpidSteering(SteeringState::new(&config)))
    })
}

/// Current tradeoff; NaN for a null handle.
///
/// # Safety
/// `s` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spid_steering_tradeoff(s: *const SpidSteering) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.0.tradeoff())
}

/// Feed the sparsity of a finished window. Returns 1 if the tradeoff was
/// lowered, 0 if not, -1 for a null handle.
///
/// # Safety
/// `s` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn spid_steering_step(s: *mut SpidSteering, window_sparsity: f64) -> i32 {
    match s.as_mut() {
        Some(s) => i32::from(s.0.steering_step(window_sparsity)),
        None => -1,
    }
}

/// # Safety
/// `s` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn spid_steering_free(s: *mut SpidSteering) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}
