//! C ABI for the `wmlab` library.
//!
//! Objects cross the boundary as opaque handles created and released by
//! paired `*_new`/`*_free` functions. Every fallible call returns a
//! [`WmlabStatus`]; the message of the last error on the calling thread is
//! available from [`wmlab_last_error`]. Panics are caught and reported as
//! [`WmlabStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wmlab::harness::{run_named, ExperimentConfig};
use wmlab::metrics::{amplification, classify_risk_tier, measure_with, RiskTier, WeightSource};
use wmlab::models::{init_models, load_params, save_params, Dims, GruParams};
use wmlab::mathcore::RngStream;
use wmlab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WmlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    /// Training failure, non-finite loss or degenerate gradient.
    Runtime = 3,
    Io = 4,
    /// A string argument was not valid UTF-8.
    Utf8 = 5,
    /// A caller-provided buffer is too small.
    Buffer = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WmlabTier {
    Low = 0,
    Moderate = 1,
    High = 2,
}

/// Opaque experiment configuration.
pub struct WmlabConfig {
    inner: ExperimentConfig,
}

/// Opaque world-model parameters.
pub struct WmlabParams {
    inner: GruParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("no interior nul")));
}

fn status_of(e: &Error) -> WmlabStatus {
    match e {
        Error::InvalidParameter(_) | Error::Parse { .. } => WmlabStatus::InvalidParameter,
        Error::Io { .. } => WmlabStatus::Io,
        _ => WmlabStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), WmlabStatus>) -> WmlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WmlabStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside wmlab");
            WmlabStatus::Panic
        }
    }
}

fn fail(e: Error) -> WmlabStatus {
    set_error(e.to_string());
    status_of(&e)
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, WmlabStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(WmlabStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        WmlabStatus::Utf8
    })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, WmlabStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        WmlabStatus::NullPointer
    })
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, WmlabStatus> {
    p.as_mut().ok_or_else(|| {
        set_error(format!("{what} is null"));
        WmlabStatus::NullPointer
    })
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, WmlabStatus> {
    handle_mut(p, "output pointer")
}

/// Message of the last error on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn wmlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn wmlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A config with every default.
#[no_mangle]
pub extern "C" fn wmlab_config_new() -> *mut WmlabConfig {
    Box::into_raw(Box::new(WmlabConfig { inner: ExperimentConfig::default() }))
}

/// Parse a TOML config.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmlab_config_from_toml(toml: *const c_char, out: *mut *mut WmlabConfig) -> WmlabStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let text = str_arg(toml, "toml")?;
        let inner = ExperimentConfig::from_toml(text, Path::new("<ffi>")).map_err(fail)?;
        inner.validate().map_err(fail)?;
        *out = Box::into_raw(Box::new(WmlabConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wmlab_config_free(cfg: *mut WmlabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wmlab_config_set_seed(cfg: *mut WmlabConfig, seed: u64) -> WmlabStatus {
    guard(|| {
        handle_mut(cfg, "config")?.inner.master_seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wmlab_config_set_trials(cfg: *mut WmlabConfig, trials: usize) -> WmlabStatus {
    guard(|| {
        let c = handle_mut(cfg, "config")?;
        let next = ExperimentConfig { trials, ..c.inner.clone() };
        next.validate().map_err(fail)?;
        c.inner = next;
        Ok(())
    })
}

/// Rollout length `K` of the config.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmlab_config_steps(cfg: *const WmlabConfig, out: *mut usize) -> WmlabStatus {
    guard(|| {
        *out_ptr(out)? = handle(cfg, "config")?.inner.steps;
        Ok(())
    })
}

/// Run a named experiment (`core`, `arch-compare`, `mitigate`,
/// `reward-gap`, `risk`, `gradcheck`), writing its files under `out_dir`.
/// `checks_failed` receives the number of failed property checks.
///
/// # Safety
/// String arguments must be nul-terminated; pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn wmlab_run_experiment(
    cfg: *const WmlabConfig,
    name: *const c_char,
    out_dir: *const c_char,
    checks_failed: *mut usize,
) -> WmlabStatus {
    guard(|| {
        let c = handle(cfg, "config")?;
        let name = str_arg(name, "name")?;
        let dir = str_arg(out_dir, "out_dir")?;
        let failed = out_ptr(checks_failed)?;
        let o = run_named(name, &c.inner, Path::new(dir)).map_err(fail)?;
        *failed = o.checks.iter().filter(|c| !c.passed).count();
        Ok(())
    })
}

/// Amplification ratios `A_1..A_K` of the world model over the baseline.
/// `ratios` must hold `capacity` doubles; `written` receives `K`. Fails with
/// [`WmlabStatus::Buffer`] (and still sets `written`) when `capacity < K`.
///
/// # Safety
/// `ratios` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wmlab_amplification(
    cfg: *const WmlabConfig,
    ratios: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> WmlabStatus {
    guard(|| {
        let c = &handle(cfg, "config")?.inner;
        let written = out_ptr(written)?;
        if ratios.is_null() {
            set_error("ratios is null");
            return Err(WmlabStatus::NullPointer);
        }
        let set = measure_with(c, WeightSource::Drawn, &c.attack_spec(), false).map_err(fail)?;
        let a = amplification(&set.wm, &set.ss, c.eta).map_err(fail)?;
        *written = a.ratios.len();
        if capacity < a.ratios.len() {
            set_error(format!("buffer holds {capacity}, need {}", a.ratios.len()));
            return Err(WmlabStatus::Buffer);
        }
        std::slice::from_raw_parts_mut(ratios, a.ratios.len()).copy_from_slice(&a.ratios);
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmlab_classify_tier(a_1: f64, out: *mut WmlabTier) -> WmlabStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = match classify_risk_tier(a_1).map_err(fail)? {
            RiskTier::Low => WmlabTier::Low,
            RiskTier::Moderate => WmlabTier::Moderate,
            RiskTier::High => WmlabTier::High,
        };
        Ok(())
    })
}

/// Draw world-model parameters with entries `N(0, weight_std²)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmlab_params_new(
    d_o: usize,
    d_h: usize,
    d_z: usize,
    weight_std: f64,
    seed: u64,
    out: *mut *mut WmlabParams,
) -> WmlabStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let mut rng = RngStream::tagged(seed, wmlab::mathcore::rng::tags::WEIGHTS, 0);
        let (inner, ..) = init_models(Dims { d_o, d_h, d_z }, weight_std, &mut rng).map_err(fail)?;
        *out = Box::into_raw(Box::new(WmlabParams { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be nul-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmlab_params_load(path: *const c_char, out: *mut *mut WmlabParams) -> WmlabStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let inner = load_params(Path::new(str_arg(path, "path")?)).map_err(fail)?;
        *out = Box::into_raw(Box::new(WmlabParams { inner }));
        Ok(())
    })
}

/// # Safety
/// `params` must be a live handle and `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn wmlab_params_save(params: *const WmlabParams, path: *const c_char) -> WmlabStatus {
    guard(|| {
        let p = handle(params, "params")?;
        save_params(&p.inner, Path::new(str_arg(path, "path")?)).map_err(fail)
    })
}

/// Total scalar count of the parameters.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmlab_params_len(params: *const WmlabParams, out: *mut usize) -> WmlabStatus {
    guard(|| {
        *out_ptr(out)? = handle(params, "params")?.inner.num_params();
        Ok(())
    })
}

/// # Safety
/// `params` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wmlab_params_free(params: *mut WmlabParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}
