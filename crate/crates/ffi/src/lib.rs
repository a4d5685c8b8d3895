//! C interface to the coded-arq analysis and simulator.
//!
//! Channels live behind an opaque handle created by [`carq_channel_new`] and released
//! with [`carq_channel_free`]. Every fallible call returns a [`CarqStatus`]; the message
//! of the most recent failure on the calling thread is available from
//! [`carq_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coded_arq::protocols::{analyze, AnalysisOptions, ProtocolParams};
use coded_arq::sim::{simulate, GeParams, SimConfig};
use coded_arq::{build_composite, CompositeChannel, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarqStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    DegenerateChain = 3,
    Dimension = 4,
    NonConvergent = 5,
    Truncation = 6,
    ImproperMgf = 7,
    Graph = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarqScheme {
    Uncoded = 0,
    Harq = 1,
    Coded = 2,
}

/// One direction of a Gilbert-Elliott channel.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CarqGe {
    pub r: f64,
    pub eps_g: f64,
    pub eps_b: f64,
    /// Average block-error rate.
    pub eps: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CarqParams {
    pub scheme: CarqScheme,
    pub k: u32,
    pub timeout: u32,
    /// Ignored unless `scheme` is coded.
    pub frame_size: u32,
    /// Ignored unless `scheme` is coded.
    pub dof: u32,
    /// Ignored unless `scheme` is HARQ.
    pub gamma_over_rho: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CarqMetrics {
    pub throughput: f64,
    pub tau_mean: f64,
    pub delay_mean: f64,
    pub frame_tau_mean: f64,
    pub frame_delay_mean: f64,
    pub mgf_tau: f64,
    pub mgf_delay: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CarqSimStats {
    pub tau_mean: f64,
    pub tau_stderr: f64,
    pub delay_mean: f64,
    pub delay_stderr: f64,
    pub throughput: f64,
    pub throughput_stderr: f64,
    pub delivered: u64,
    pub slots_elapsed: u64,
}

/// Opaque composite forward/reverse channel.
pub struct CarqChannel {
    inner: CompositeChannel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CarqStatus {
    match e {
        Error::Domain(_) => CarqStatus::Domain,
        Error::DegenerateChain(_) => CarqStatus::DegenerateChain,
        Error::Dimension { .. } => CarqStatus::Dimension,
        Error::NonConvergent { .. } => CarqStatus::NonConvergent,
        Error::Truncation { .. } => CarqStatus::Truncation,
        Error::ImproperMgf { .. } => CarqStatus::ImproperMgf,
        Error::Graph(_) => CarqStatus::Graph,
    }
}

fn guard(f: impl FnOnce() -> Result<(), CarqStatus>) -> CarqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CarqStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside coded-arq".into());
            CarqStatus::Panic
        }
    }
}

fn lift<T>(r: coded_arq::Result<T>) -> Result<T, CarqStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null() -> CarqStatus {
    set_error("null pointer argument".into());
    CarqStatus::NullPointer
}

fn ge(g: &CarqGe) -> GeParams {
    GeParams {
        r: g.r,
        eps_g: g.eps_g,
        eps_b: g.eps_b,
        eps: g.eps,
    }
}

fn params(p: &CarqParams) -> ProtocolParams {
    match p.scheme {
        CarqScheme::Uncoded => ProtocolParams::uncoded(p.k, p.timeout),
        CarqScheme::Harq => ProtocolParams::harq(p.k, p.timeout, p.gamma_over_rho),
        CarqScheme::Coded => ProtocolParams::coded(p.k, p.timeout, p.frame_size, p.dof),
    }
}

/// Builds a channel from forward and reverse parameters.
///
/// # Safety
/// `forward` and `reverse` must point to valid `CarqGe` values and `out` to writable
/// storage for one pointer. On success `*out` owns a handle to release with
/// [`carq_channel_free`].
#[no_mangle]
pub unsafe extern "C" fn carq_channel_new(
    forward: *const CarqGe,
    reverse: *const CarqGe,
    out: *mut *mut CarqChannel,
) -> CarqStatus {
    if forward.is_null() || reverse.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let f = lift(ge(&*forward).build())?;
        let r = lift(ge(&*reverse).build())?;
        let inner = lift(build_composite(&f, &r))?;
        *out = Box::into_raw(Box::new(CarqChannel { inner }));
        Ok(())
    })
}

/// # Safety
/// `channel` must be null or a handle from [`carq_channel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn carq_channel_free(channel: *mut CarqChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Forward block-error rate of the channel, or NaN for a null handle.
///
/// # Safety
/// `channel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn carq_channel_eps(channel: *const CarqChannel) -> f64 {
    match channel.as_ref() {
        Some(c) => c.inner.eps,
        None => f64::NAN,
    }
}

/// Analytic throughput and delay. Per-packet values for coded frames are the frame
/// values divided by the frame size.
///
/// # Safety
/// `channel` must be a live handle, `params` valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn carq_analyze(
    channel: *const CarqChannel,
    params: *const CarqParams,
    out: *mut CarqMetrics,
) -> CarqStatus {
    if channel.is_null() || params.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let m = lift(analyze(&(*channel).inner, &self::params(&*params), &AnalysisOptions::default()))?;
        *out = CarqMetrics {
            throughput: m.throughput,
            tau_mean: m.tau_mean,
            delay_mean: m.delay_mean,
            frame_tau_mean: m.frame_tau_mean,
            frame_delay_mean: m.frame_delay_mean,
            mgf_tau: m.mgf_tau,
            mgf_delay: m.mgf_delay,
        };
        Ok(())
    })
}

/// Runs one simulation of `horizon` delivered packets.
///
/// # Safety
/// `params`, `forward` and `reverse` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn carq_simulate(
    params: *const CarqParams,
    forward: *const CarqGe,
    reverse: *const CarqGe,
    seed: u64,
    horizon: u64,
    out: *mut CarqSimStats,
) -> CarqStatus {
    if params.is_null() || forward.is_null() || reverse.is_null() || out.is_null() {
        return null();
    }
    guard(|| {
        let cfg = SimConfig {
            params: self::params(&*params),
            forward: ge(&*forward),
            reverse: ge(&*reverse),
            seed,
            horizon,
            attempts: None,
        };
        let s = lift(simulate(&cfg))?;
        *out = CarqSimStats {
            tau_mean: s.tau.mean,
            tau_stderr: s.tau.stderr(),
            delay_mean: s.delay.mean,
            delay_stderr: s.delay.stderr(),
            throughput: s.throughput_hat(),
            throughput_stderr: s.throughput_stderr(),
            delivered: s.delivered,
            slots_elapsed: s.slots_elapsed,
        };
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. The pointer stays valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn carq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
