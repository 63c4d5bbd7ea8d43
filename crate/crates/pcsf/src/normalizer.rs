//! Normalization of blowing-up solutions and direct integration of the
//! normalized flow.
//!
//! The map `ktilde = ((p+1)/p)^{1/(p+1)} (T-t)^{1/(p+1)} k` with
//! `tau = -(1/(p+1)) log(1 - t/T)` sends the shrinking circle to the
//! constant 1 and converts the blow-up into relaxation toward that fixed
//! point. Integrating the normalized equation directly is an independent
//! cross-check of the physical-time path: it validates the estimated T,
//! the normalization map and both right-hand sides at once.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::galerkin::FlowParams;
use crate::integrator::{rk_attempt, DomainTag, IntegratorOptions, StepController, Trajectory};
use crate::spectral::{evaluate_real_unchecked, transform_real_unchecked, FourierState};

/// Curvature in the normalized frame, stamped with normalized time `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedState {
    pub state: FourierState,
    pub tau: f64,
}

/// `tau = -(1/(p+1)) log(1 - t/T)`.
pub fn tau_of_t(t: f64, t_blowup: f64, p: u32) -> Result<f64> {
    if !(t >= 0.0 && t < t_blowup) {
        return Err(Error::DomainViolation(format!(
            "t = {t} must lie in [0, T) with T = {t_blowup}"
        )));
    }
    Ok(-(1.0 - t / t_blowup).ln() / (p as f64 + 1.0))
}

/// Inverse of [`tau_of_t`]: `t = T (1 - e^{-(p+1) tau})`.
pub fn t_of_tau(tau: f64, t_blowup: f64, p: u32) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::DomainViolation(format!("tau = {tau} must be >= 0")));
    }
    Ok(t_blowup * (-((-(p as f64 + 1.0) * tau).exp() - 1.0)))
}

/// Normalization factor `((p+1)/p)^{1/(p+1)} (T-t)^{1/(p+1)}`.
pub fn normalization_factor(t: f64, t_blowup: f64, p: u32) -> f64 {
    let p1 = p as f64 + 1.0;
    (p1 / p as f64 * (t_blowup - t)).powf(1.0 / p1)
}

/// Rescale a physical-time state into the normalized frame.
pub fn normalize(state: &FourierState, t_blowup: f64, params: &FlowParams) -> Result<NormalizedState> {
    let tau = tau_of_t(state.time_stamp, t_blowup, params.p)?;
    let mut scaled = state.scaled(normalization_factor(state.time_stamp, t_blowup, params.p));
    scaled.time_stamp = tau;
    Ok(NormalizedState { state: scaled, tau })
}

/// Normalized right-hand side
/// `p ktilde^{p+1} ktilde'' + p(p-1) ktilde^p (ktilde')^2 + ktilde^{p+2} - ktilde`,
/// evaluated pseudo-spectrally on the same de-aliased grid as the physical
/// flow. The constant 1 is an exact fixed point; mode `n` of the
/// linearization carries eigenvalue `-p n^2 + p + 1`. Fails if `ktilde`
/// loses positivity on the grid.
pub fn rhs_normalized(state: &FourierState, params: &FlowParams) -> Result<FourierState> {
    assert_eq!(state.radius(), params.n_modes, "state radius must match params");
    let m = params.dealiased_grid_size();
    let p = params.p;

    let one = Complex64::new(1.0, 0.0);
    let d0 = evaluate_real_unchecked(state, m, |_| one);
    let d1 = evaluate_real_unchecked(state, m, |n| Complex64::new(0.0, n as f64));
    let d2 = evaluate_real_unchecked(state, m, |n| Complex64::new(-((n * n) as f64), 0.0));

    let min_sample = d0.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_sample <= 0.0 {
        return Err(Error::NonPositiveCurvature { min_sample });
    }

    let pf = p as f64;
    let mut g = vec![0.0f64; m];
    for j in 0..m {
        let kp = d0[j].powi(p as i32);
        g[j] = pf * kp * (d0[j] * d2[j] + (pf - 1.0) * d1[j] * d1[j]) + kp * d0[j] * d0[j]
            - d0[j];
    }

    let mut out = transform_real_unchecked(&g, params.mode_set());
    out.time_stamp = state.time_stamp;
    Ok(out)
}

/// Integrate the normalized flow from `initial` up to `tau_max` with the
/// same embedded RK5(4) machinery as the physical path. `checkpoints` are
/// tau values the stepper is forced to land on exactly (they and the
/// endpoint are always recorded as samples).
pub fn integrate_normalized_through(
    initial: &NormalizedState,
    params: &FlowParams,
    opts: &IntegratorOptions,
    tau_max: f64,
    checkpoints: &[f64],
) -> Result<Trajectory> {
    params.validate()?;
    opts.validate()?;
    if !(tau_max > initial.tau) {
        return Err(Error::DomainViolation(format!(
            "tau_max = {tau_max} must exceed the initial tau = {}",
            initial.tau
        )));
    }
    let mut targets: Vec<f64> = checkpoints
        .iter()
        .copied()
        .filter(|&tau| tau > initial.tau && tau <= tau_max)
        .collect();
    targets.sort_by(|a, b| a.partial_cmp(b).expect("finite checkpoints"));
    targets.push(tau_max);

    let mut f = |y: &FourierState| rhs_normalized(y, params);
    let mut controller = StepController::new();

    let mut y = initial.state.clone();
    y.time_stamp = initial.tau;
    let mut k1 = rhs_normalized(&y, params)?;
    let mut dt = opts.dt_init;
    let mut samples = vec![y.clone()];
    let mut accepted: usize = 0;
    let mut total_attempts: usize = 0;
    let mut next_target = 0usize;

    while next_target < targets.len() {
        if total_attempts >= opts.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: opts.max_steps,
                t: y.time_stamp,
            });
        }
        if dt < opts.dt_min {
            return Err(Error::StepUnderflow {
                dt,
                dt_min: opts.dt_min,
                t: y.time_stamp,
            });
        }
        total_attempts += 1;
        let remaining = targets[next_target] - y.time_stamp;
        let dt_try = dt.min(remaining);
        let (mut y_new, k7, err) = rk_attempt(&mut f, &y, &k1, dt_try, opts)?;
        let fac = controller.factor(err, opts.safety);
        if err > 1.0 {
            dt = dt_try * fac;
            continue;
        }
        y_new.symmetrize();
        accepted += 1;

        let on_target = dt_try >= remaining;
        if on_target {
            y_new.time_stamp = targets[next_target]; // kill roundoff drift
            next_target += 1;
        }
        if accepted % opts.sample_stride == 0 || on_target {
            samples.push(y_new.clone());
        }
        y = y_new;
        k1 = k7;
        dt = dt_try * fac;
    }

    Ok(Trajectory {
        params: *params,
        samples,
        domain_tag: DomainTag::NormalizedTau,
    })
}

/// [`integrate_normalized_through`] without forced checkpoints.
pub fn integrate_normalized(
    initial: &NormalizedState,
    params: &FlowParams,
    opts: &IntegratorOptions,
    tau_max: f64,
) -> Result<Trajectory> {
    integrate_normalized_through(initial, params, opts, tau_max, &[])
}

/// Default tau horizon `10 / (3p - 1)`: the distance to the round state
/// decays like `e^{-(3p-1) tau}`, so this keeps the dynamic range of the
/// fits comparable across p.
pub fn default_tau_max(p: u32) -> f64 {
    10.0 / (3.0 * p as f64 - 1.0)
}
