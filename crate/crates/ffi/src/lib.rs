//! C ABI over the `thinlb` library.
//!
//! Every function returns a [`ThinlbStatus`]. On failure the message is kept
//! per thread and can be read with [`thinlb_last_error_message`]. Objects are
//! opaque handles created by `*_new`/`thinlb_simulate`-style calls and must be
//! released with the matching `*_free`. Output buffers are caller-allocated;
//! each function documents the length it writes.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use thinlb::harness::{self, HarnessError};
use thinlb::model::{self, DiffusionParams, ModelParams};
use thinlb::queue::{self, EventLog, ScaledPath};
use thinlb::sde::{self, SdePath, TieRule};
use thinlb::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThinlbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Capacity = 3,
    Parse = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Tie-breaking rule for the drift at coincident coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThinlbTieRule {
    Index = 0,
    ReverseIndex = 1,
    BlockAverage = 2,
    RandomShuffle = 3,
}

impl From<ThinlbTieRule> for TieRule {
    fn from(r: ThinlbTieRule) -> Self {
        match r {
            ThinlbTieRule::Index => TieRule::Index,
            ThinlbTieRule::ReverseIndex => TieRule::ReverseIndex,
            ThinlbTieRule::BlockAverage => TieRule::BlockAverage,
            ThinlbTieRule::RandomShuffle => TieRule::RandomShuffle,
        }
    }
}

/// Per-server series of a scaled queue path.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThinlbSeries {
    /// `X̂` (or `X̌` in the large-initial-condition regime).
    Queue = 0,
    LocalTime = 1,
    Free = 2,
    Martingale = 3,
    RoutedArrivals = 4,
}

/// Prelimit model at a fixed scaling parameter.
pub struct ThinlbModel {
    params: ModelParams,
}

pub struct ThinlbEventLog {
    log: EventLog,
}

pub struct ThinlbScaledPath {
    path: ScaledPath,
}

pub struct ThinlbSdePath {
    path: SdePath,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ThinlbStatus, msg: impl Into<String>) -> ThinlbStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> ThinlbStatus {
    let status = match e {
        Error::InvalidInput { .. } => ThinlbStatus::InvalidInput,
        Error::Capacity(_) => ThinlbStatus::Capacity,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => ThinlbStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> ThinlbStatus) -> ThinlbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == ThinlbStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Err(_) => fail(ThinlbStatus::Panic, "internal panic"),
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(ThinlbStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

macro_rules! try_lib {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return from_error(err),
        }
    };
}

unsafe fn input<'a>(p: *const f64, len: usize) -> &'a [f64] {
    if len == 0 {
        &[]
    } else {
        slice::from_raw_parts(p, len)
    }
}

unsafe fn output<'a, T>(p: *mut T, len: usize) -> &'a mut [T] {
    if len == 0 {
        &mut []
    } else {
        slice::from_raw_parts_mut(p, len)
    }
}

fn into_handle<T>(value: T, out: *mut *mut T) -> ThinlbStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    ThinlbStatus::Ok
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn thinlb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// 1-based ranks of `x[0..len]` (ties to the smaller index) into `out[0..len]`.
///
/// # Safety
/// `x` and `out` must point to `len` valid elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_rank_vector(x: *const f64, len: usize, out: *mut usize) -> ThinlbStatus {
    guard(|| {
        non_null!(x, out);
        let r = try_lib!(model::rank_vector(input(x, len)));
        output(out, len).copy_from_slice(&r);
        ThinlbStatus::Ok
    })
}

/// Power-of-choice rank probabilities into `out[0..servers]`.
///
/// # Safety
/// `out` must point to `servers` writable elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_poc_probabilities(
    servers: usize,
    ell: usize,
    with_replacement: bool,
    out: *mut f64,
) -> ThinlbStatus {
    guard(|| {
        non_null!(out);
        let p = try_lib!(model::poc_probabilities(servers, ell, with_replacement));
        output(out, servers).copy_from_slice(&p);
        ThinlbStatus::Ok
    })
}

/// Whether `beta` is an admissible drift at state `x`; all arrays have `len` entries.
///
/// # Safety
/// Array arguments must point to `len` valid elements; `out` to one bool.
#[no_mangle]
pub unsafe extern "C" fn thinlb_in_drift_hull(
    beta: *const f64,
    x: *const f64,
    b: *const f64,
    len: usize,
    tol: f64,
    out: *mut bool,
) -> ThinlbStatus {
    guard(|| {
        non_null!(beta, x, b, out);
        *out = try_lib!(model::in_drift_hull(
            input(beta, len),
            input(x, len),
            input(b, len),
            tol
        ));
        ThinlbStatus::Ok
    })
}

/// One-dimensional Skorokhod map of the piecewise-linear path `(t, y)`.
///
/// # Safety
/// All arrays must point to `len` valid elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_skorokhod_map(
    t: *const f64,
    y: *const f64,
    len: usize,
    x_out: *mut f64,
    z_out: *mut f64,
) -> ThinlbStatus {
    guard(|| {
        non_null!(t, y, x_out, z_out);
        let pair = try_lib!(thinlb::reflect::skorokhod_map(input(t, len), input(y, len)));
        output(x_out, len).copy_from_slice(&pair.x);
        output(z_out, len).copy_from_slice(&pair.z);
        ThinlbStatus::Ok
    })
}

/// Build a model from the TOML body of a `[model]` table at scaling `n`.
///
/// # Safety
/// `toml` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn thinlb_model_new(toml: *const c_char, n: u64, out: *mut *mut ThinlbModel) -> ThinlbStatus {
    guard(|| {
        non_null!(toml, out);
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(ThinlbStatus::Parse, "model text is not UTF-8");
        };
        let section = match harness::parse_model(text) {
            Ok(s) => s,
            Err(HarnessError::Parse(m)) => return fail(ThinlbStatus::Parse, m),
            Err(e) => return fail(ThinlbStatus::InvalidInput, e.to_string()),
        };
        let params = try_lib!(section.params(n));
        into_handle(ThinlbModel { params }, out)
    })
}

/// # Safety
/// `model` must come from [`thinlb_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn thinlb_model_free(model: *mut ThinlbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of servers.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn thinlb_model_servers(model: *const ThinlbModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.servers())
}

/// Limit-equation data `b`, `m`, `σ`, `x0`; each output holds `servers` values.
///
/// # Safety
/// `model` must be live; outputs must hold `servers` elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_model_diffusion(
    model: *const ThinlbModel,
    b: *mut f64,
    m: *mut f64,
    sigma: *mut f64,
    x0: *mut f64,
) -> ThinlbStatus {
    guard(|| {
        non_null!(model, b, m, sigma, x0);
        let dp = try_lib!(model::diffusion_params(&(*model).params));
        let k = dp.dim();
        output(b, k).copy_from_slice(&dp.b);
        output(m, k).copy_from_slice(&dp.m);
        output(sigma, k).copy_from_slice(&dp.sigma);
        output(x0, k).copy_from_slice(&dp.x0);
        ThinlbStatus::Ok
    })
}

/// Simulate the queueing system on `[0, horizon]`.
///
/// # Safety
/// `model` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn thinlb_simulate(
    model: *const ThinlbModel,
    horizon: f64,
    seed: u64,
    out: *mut *mut ThinlbEventLog,
) -> ThinlbStatus {
    guard(|| {
        non_null!(model, out);
        let log = try_lib!(queue::simulate(&(*model).params, horizon, seed));
        into_handle(ThinlbEventLog { log }, out)
    })
}

/// # Safety
/// `log` must come from [`thinlb_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn thinlb_event_log_free(log: *mut ThinlbEventLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Number of events.
///
/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn thinlb_event_log_len(log: *const ThinlbEventLog) -> usize {
    log.as_ref().map_or(0, |l| l.log.len())
}

/// Time of event `k` and the queue lengths just after it (`servers` values).
///
/// # Safety
/// `log` must be live; `time` writable; `queue` must hold `servers` elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_event_log_event(
    log: *const ThinlbEventLog,
    k: usize,
    time: *mut f64,
    queue: *mut u64,
) -> ThinlbStatus {
    guard(|| {
        non_null!(log, time, queue);
        let l = &(*log).log;
        if k >= l.len() {
            return fail(ThinlbStatus::OutOfRange, format!("event {k} of {}", l.len()));
        }
        *time = l.times[k];
        output(queue, l.servers()).copy_from_slice(l.queue_after(k));
        ThinlbStatus::Ok
    })
}

/// Diffusion-scaled processes of a logged run.
///
/// # Safety
/// `log` and `model` must be live, `model` the one that produced `log`.
#[no_mangle]
pub unsafe extern "C" fn thinlb_scaled_path(
    log: *const ThinlbEventLog,
    model: *const ThinlbModel,
    out: *mut *mut ThinlbScaledPath,
) -> ThinlbStatus {
    guard(|| {
        non_null!(log, model, out);
        let mp = &(*model).params;
        let path = try_lib!(queue::scaled_path(&(*log).log, mp, &mp.ic.regime));
        into_handle(ThinlbScaledPath { path }, out)
    })
}

/// # Safety
/// `path` must come from [`thinlb_scaled_path`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn thinlb_scaled_path_free(path: *mut ThinlbScaledPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of grid points.
///
/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn thinlb_scaled_path_len(path: *const ThinlbScaledPath) -> usize {
    path.as_ref().map_or(0, |p| p.path.grid.len())
}

/// Copy the time grid (`len` values).
///
/// # Safety
/// `path` must be live; `out` must hold `thinlb_scaled_path_len` elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_scaled_path_grid(path: *const ThinlbScaledPath, out: *mut f64) -> ThinlbStatus {
    guard(|| {
        non_null!(path, out);
        let g = &(*path).path.grid;
        output(out, g.len()).copy_from_slice(g);
        ThinlbStatus::Ok
    })
}

/// Copy one per-server series (0-based `server`) sampled on the grid.
///
/// # Safety
/// `path` must be live; `out` must hold `thinlb_scaled_path_len` elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_scaled_path_series(
    path: *const ThinlbScaledPath,
    series: ThinlbSeries,
    server: usize,
    out: *mut f64,
) -> ThinlbStatus {
    guard(|| {
        non_null!(path, out);
        let p = &(*path).path;
        if server >= p.servers() {
            return fail(ThinlbStatus::OutOfRange, format!("server {server} of {}", p.servers()));
        }
        let src = match series {
            ThinlbSeries::Queue => &p.x_scaled,
            ThinlbSeries::LocalTime => &p.l_hat,
            ThinlbSeries::Free => &p.u,
            ThinlbSeries::Martingale => &p.martingale,
            ThinlbSeries::RoutedArrivals => &p.a_hat,
        };
        output(out, p.grid.len()).copy_from_slice(&src[server]);
        ThinlbStatus::Ok
    })
}

/// Euler scheme for the rank-based equation; arrays hold `dim` values.
///
/// # Safety
/// Array arguments must point to `dim` valid elements; `out` writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn thinlb_sde_integrate(
    b: *const f64,
    m: *const f64,
    sigma: *const f64,
    x0: *const f64,
    dim: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
    reflected: bool,
    tie_rule: ThinlbTieRule,
    out: *mut *mut ThinlbSdePath,
) -> ThinlbStatus {
    guard(|| {
        non_null!(b, m, sigma, x0, out);
        let dp = DiffusionParams {
            b: input(b, dim).to_vec(),
            m: input(m, dim).to_vec(),
            sigma: input(sigma, dim).to_vec(),
            x0: input(x0, dim).to_vec(),
        };
        try_lib!(dp.validate());
        let path = try_lib!(sde::integrate(
            &dp,
            horizon,
            dt,
            seed,
            reflected,
            tie_rule.into(),
            &dp.x0
        ));
        into_handle(ThinlbSdePath { path }, out)
    })
}

/// # Safety
/// `path` must come from [`thinlb_sde_integrate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn thinlb_sde_path_free(path: *mut ThinlbSdePath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of steps; the grid has `steps + 1` points.
///
/// # Safety
/// `path` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn thinlb_sde_path_steps(path: *const ThinlbSdePath) -> usize {
    path.as_ref().map_or(0, |p| p.path.steps())
}

/// State and cumulative local time at grid point `k` (`dim` values each).
///
/// # Safety
/// `path` must be live; outputs must hold `dim` elements.
#[no_mangle]
pub unsafe extern "C" fn thinlb_sde_path_point(
    path: *const ThinlbSdePath,
    k: usize,
    state: *mut f64,
    local_time: *mut f64,
) -> ThinlbStatus {
    guard(|| {
        non_null!(path, state, local_time);
        let p = &(*path).path;
        if k >= p.states.len() {
            return fail(ThinlbStatus::OutOfRange, format!("point {k} of {}", p.states.len()));
        }
        let dim = p.dim();
        output(state, dim).copy_from_slice(&p.states[k]);
        output(local_time, dim).copy_from_slice(&p.local_times[k]);
        ThinlbStatus::Ok
    })
}
