//! C ABI over the pcsf simulator: opaque handles, integer status codes,
//! and a thread-local last-error message. The header is generated into
//! `include/pcsf.h` by the build script.
//!
//! Conventions: every function returns a `PcsfStatus`; output parameters
//! are written only on `Ok`. Handles are created and destroyed by this
//! library only; passing a handle to the wrong `_free` is undefined
//! behavior, passing NULL anywhere is reported as `NullPointer`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pcsf::galerkin::{FlowParams, RhsMethod};
use pcsf::integrator::{integrate_to_blowup, BlowupEstimate, IntegratorOptions, Trajectory};
use pcsf::rates::predicted_rates;
use pcsf::spectral::FourierState;

/// Status codes mirroring the CLI exit-code contract, plus FFI-specific
/// argument errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcsfStatus {
    Ok = 0,
    NumericalError = 1,
    InvalidParameter = 2,
    IoError = 3,
    NullPointer = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &pcsf::Error) -> PcsfStatus {
    set_error(&err.to_string());
    match err.exit_code() {
        2 => PcsfStatus::InvalidParameter,
        3 => PcsfStatus::IoError,
        _ => PcsfStatus::NumericalError,
    }
}

fn guarded(body: impl FnOnce() -> PcsfStatus) -> PcsfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&message);
            PcsfStatus::Panic
        }
    }
}

/// Opaque truncated Fourier curvature state.
pub struct PcsfState {
    inner: FourierState,
}

/// Opaque integration result: sampled trajectory plus blow-up estimate.
pub struct PcsfTrajectory {
    trajectory: Trajectory,
    estimate: BlowupEstimate,
}

/// Copy the last error message of this thread into `buffer` (always
/// NUL-terminated, truncated to `length` bytes). Returns the full message
/// length in bytes, excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn pcsf_last_error_message(buffer: *mut c_char, length: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buffer.is_null() && length > 0 {
            let n = bytes.len().min(length - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buffer, n);
            *buffer.add(n) = 0;
        }
        bytes.len()
    })
}

/// Constant curvature `value` on mode radius `n_modes` (a round circle of
/// radius `1/value`).
#[no_mangle]
pub unsafe extern "C" fn pcsf_state_new_round(
    value: f64,
    n_modes: usize,
    out: *mut *mut PcsfState,
) -> PcsfStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out is NULL");
            return PcsfStatus::NullPointer;
        }
        if !(value > 0.0) || n_modes == 0 {
            set_error("need value > 0 and n_modes >= 1");
            return PcsfStatus::InvalidParameter;
        }
        let state = FourierState::constant(value, n_modes);
        *out = Box::into_raw(Box::new(PcsfState { inner: state }));
        PcsfStatus::Ok
    })
}

/// Build a state from a support-function spec in JSON:
/// `{"base": float, "harmonics": {"n": [a, b], ...}}`.
#[no_mangle]
pub unsafe extern "C" fn pcsf_state_from_support_json(
    json: *const c_char,
    n_modes: usize,
    out: *mut *mut PcsfState,
) -> PcsfStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            set_error("json or out is NULL");
            return PcsfStatus::NullPointer;
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("json is not valid UTF-8");
                return PcsfStatus::InvalidParameter;
            }
        };
        let spec: pcsf::datagen::SupportSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => {
                set_error(&e.to_string());
                return PcsfStatus::InvalidParameter;
            }
        };
        let modes = pcsf::spectral::make_mode_set(n_modes);
        match pcsf::datagen::curvature_from_support(&spec, modes, 4096) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(PcsfState { inner: state }));
                PcsfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pcsf_state_free(state: *mut PcsfState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Mode radius N of the state.
#[no_mangle]
pub unsafe extern "C" fn pcsf_state_radius(
    state: *const PcsfState,
    out: *mut usize,
) -> PcsfStatus {
    guarded(|| {
        if state.is_null() || out.is_null() {
            set_error("state or out is NULL");
            return PcsfStatus::NullPointer;
        }
        *out = (*state).inner.radius();
        PcsfStatus::Ok
    })
}

/// Coefficient of wavenumber `n`, `|n| <= N`.
#[no_mangle]
pub unsafe extern "C" fn pcsf_state_coeff(
    state: *const PcsfState,
    n: i64,
    re: *mut f64,
    im: *mut f64,
) -> PcsfStatus {
    guarded(|| {
        if state.is_null() || re.is_null() || im.is_null() {
            set_error("state, re or im is NULL");
            return PcsfStatus::NullPointer;
        }
        let inner = &(*state).inner;
        if !inner.modes().contains(n) {
            set_error("wavenumber outside the mode set");
            return PcsfStatus::InvalidParameter;
        }
        let c = inner.get(n);
        *re = c.re;
        *im = c.im;
        PcsfStatus::Ok
    })
}

/// Flow time stamp of the state.
#[no_mangle]
pub unsafe extern "C" fn pcsf_state_time(
    state: *const PcsfState,
    out: *mut f64,
) -> PcsfStatus {
    guarded(|| {
        if state.is_null() || out.is_null() {
            set_error("state or out is NULL");
            return PcsfStatus::NullPointer;
        }
        *out = (*state).inner.time_stamp;
        PcsfStatus::Ok
    })
}

/// Integrate the flow with exponent `p` from `initial` until the mean
/// curvature coefficient reaches `blowup_cap` (pass 0 or a negative value
/// for the default cap), then estimate the blow-up time. `rel_tol <= 0`
/// selects the default 1e-10.
#[no_mangle]
pub unsafe extern "C" fn pcsf_integrate_blowup(
    initial: *const PcsfState,
    p: u32,
    rel_tol: f64,
    blowup_cap: f64,
    out: *mut *mut PcsfTrajectory,
) -> PcsfStatus {
    guarded(|| {
        if initial.is_null() || out.is_null() {
            set_error("initial or out is NULL");
            return PcsfStatus::NullPointer;
        }
        let state = &(*initial).inner;
        let params = match FlowParams::new(p, state.radius(), RhsMethod::Convolution) {
            Ok(params) => params,
            Err(e) => return status_of(&e),
        };
        let mut opts = IntegratorOptions::default();
        if rel_tol > 0.0 {
            opts.rel_tol = rel_tol;
        }
        if blowup_cap > 0.0 {
            opts.blowup_cap = Some(blowup_cap);
        }
        match integrate_to_blowup(state, &params, &opts) {
            Ok((trajectory, estimate)) => {
                *out = Box::into_raw(Box::new(PcsfTrajectory {
                    trajectory,
                    estimate,
                }));
                PcsfStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pcsf_trajectory_free(trajectory: *mut PcsfTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of retained samples.
#[no_mangle]
pub unsafe extern "C" fn pcsf_trajectory_len(
    trajectory: *const PcsfTrajectory,
    out: *mut usize,
) -> PcsfStatus {
    guarded(|| {
        if trajectory.is_null() || out.is_null() {
            set_error("trajectory or out is NULL");
            return PcsfStatus::NullPointer;
        }
        *out = (*trajectory).trajectory.samples.len();
        PcsfStatus::Ok
    })
}

/// Copy of sample `index` as a fresh state handle.
#[no_mangle]
pub unsafe extern "C" fn pcsf_trajectory_sample(
    trajectory: *const PcsfTrajectory,
    index: usize,
    out: *mut *mut PcsfState,
) -> PcsfStatus {
    guarded(|| {
        if trajectory.is_null() || out.is_null() {
            set_error("trajectory or out is NULL");
            return PcsfStatus::NullPointer;
        }
        let samples = &(*trajectory).trajectory.samples;
        match samples.get(index) {
            Some(sample) => {
                *out = Box::into_raw(Box::new(PcsfState {
                    inner: sample.clone(),
                }));
                PcsfStatus::Ok
            }
            None => {
                set_error("sample index out of range");
                return PcsfStatus::InvalidParameter;
            }
        }
    })
}

/// Estimated blow-up time and its least-squares uncertainty.
#[no_mangle]
pub unsafe extern "C" fn pcsf_trajectory_blowup_time(
    trajectory: *const PcsfTrajectory,
    t_blowup: *mut f64,
    uncertainty: *mut f64,
) -> PcsfStatus {
    guarded(|| {
        if trajectory.is_null() || t_blowup.is_null() || uncertainty.is_null() {
            set_error("trajectory, t_blowup or uncertainty is NULL");
            return PcsfStatus::NullPointer;
        }
        let estimate = &(*trajectory).estimate;
        *t_blowup = estimate.t_blowup;
        *uncertainty = estimate.uncertainty;
        PcsfStatus::Ok
    })
}

/// Closed-form predicted rates for exponent `p`: convergence rate `3p - 1`
/// (in normalized time), generic mode decay `(3p-2)/(p+1)` and blow-up
/// exponent `1/(p+1)` (in `T - t`), and the mean-offset rate `6p - 2`.
#[no_mangle]
pub unsafe extern "C" fn pcsf_predicted_rates(
    p: u32,
    convergence_rate: *mut f64,
    mode_decay: *mut f64,
    blowup_exponent: *mut f64,
    mean_offset_rate: *mut f64,
) -> PcsfStatus {
    guarded(|| {
        if convergence_rate.is_null()
            || mode_decay.is_null()
            || blowup_exponent.is_null()
            || mean_offset_rate.is_null()
        {
            set_error("output pointer is NULL");
            return PcsfStatus::NullPointer;
        }
        if p < 1 {
            set_error("p must be >= 1");
            return PcsfStatus::InvalidParameter;
        }
        let rates = predicted_rates(p);
        *convergence_rate = rates.convergence_rate;
        *mode_decay = rates.mode_decay;
        *blowup_exponent = rates.blowup_exponent;
        *mean_offset_rate = rates.mean_offset_rate;
        PcsfStatus::Ok
    })
}
