//! Adaptive explicit time integration of the Galerkin system toward
//! curvature blow-up, and blow-up time estimation from trajectory tails.
//!
//! The stepper is the embedded Dormand-Prince RK5(4) pair with PI step-size
//! control and local extrapolation (the 5th-order solution is propagated).
//! Near blow-up the controller shrinks dt proportionally to (T - t), which
//! is acceptable because runs stop at a finite curvature cap. The default
//! safety factor is deliberately conservative: tracking a blow-up amplifies
//! any early time-shift error like 1/(T - t), and a safety of 0.4 keeps the
//! achieved global error within an order of magnitude of rel_tol even at
//! caps of 10-100 times the initial curvature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{rhs, FlowParams};
use crate::spectral::{evaluate_real_unchecked, FourierState};

/// Tolerances and stopping rules for an integration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Stop once `khat(0) >= blowup_cap`. `None` selects the default
    /// `10^(6/(p+1))`, which makes (T - t) span about six decades.
    pub blowup_cap: Option<f64>,
    pub max_steps: usize,
    /// Keep every `sample_stride`-th accepted step (first and last are
    /// always kept).
    pub sample_stride: usize,
    /// Step-size safety factor of the PI controller.
    pub safety: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            dt_init: 1e-4,
            dt_min: 1e-14,
            blowup_cap: None,
            max_steps: 1_000_000,
            sample_stride: 1,
            safety: 0.4,
        }
    }
}

impl IntegratorOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "rel_tol and abs_tol must be positive".into(),
            ));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init) {
            return Err(Error::InvalidParameter(
                "need 0 < dt_min <= dt_init".into(),
            ));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidParameter("sample_stride must be >= 1".into()));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::InvalidParameter("safety must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn cap_for(&self, p: u32) -> f64 {
        self.blowup_cap
            .unwrap_or_else(|| 10f64.powf(6.0 / (p as f64 + 1.0)))
    }
}

/// Which time variable the trajectory samples live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    PhysicalT,
    NormalizedTau,
}

/// Time-stamped sequence of states from one integration run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: FlowParams,
    pub samples: Vec<FourierState>,
    pub domain_tag: DomainTag,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.time_stamp).collect()
    }

    pub fn mode0(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.mean()).collect()
    }

    pub fn last(&self) -> &FourierState {
        self.samples.last().expect("trajectory is never empty")
    }
}

/// Estimated blow-up time with fit diagnostics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BlowupEstimate {
    #[serde(rename = "T")]
    pub t_blowup: f64,
    pub uncertainty: f64,
    pub fit_window: (f64, f64),
    /// RMS relative residual of the reciprocal-power fit.
    pub fit_residual: f64,
}

// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

// Error weights: 5th-order minus embedded 4th-order solution.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// PI step-size controller state.
#[derive(Debug, Clone, Copy)]
pub struct StepController {
    err_old: f64,
    rejected_last: bool,
}

impl StepController {
    pub fn new() -> Self {
        StepController {
            err_old: 1e-4,
            rejected_last: false,
        }
    }

    /// Next step-size factor from the current scaled error (accept iff
    /// `err <= 1`).
    pub(crate) fn factor(&mut self, err: f64, safety: f64) -> f64 {
        const ALPHA: f64 = 0.17; // 1/5 - 0.75 * beta
        const BETA: f64 = 0.04;
        let err = err.max(1e-30);
        let mut fac = safety * err.powf(-ALPHA) * self.err_old.powf(BETA);
        fac = fac.clamp(0.2, 5.0);
        if err <= 1.0 {
            if self.rejected_last {
                fac = fac.min(1.0);
            }
            self.rejected_last = false;
            self.err_old = err.max(1e-4);
        } else {
            self.rejected_last = true;
            fac = fac.min(1.0).max(0.1);
        }
        fac
    }
}

impl Default for StepController {
    fn default() -> Self {
        Self::new()
    }
}

/// One embedded RK5(4) stage evaluation: returns the 5th-order update and
/// the scaled error estimate (accept iff `err <= 1`). `k1` is the derivative
/// at the left endpoint (FSAL: the caller can reuse the derivative at the
/// accepted point).
pub(crate) fn rk_attempt<F>(
    f: &mut F,
    y: &FourierState,
    k1: &FourierState,
    dt: f64,
    opts: &IntegratorOptions,
) -> Result<(FourierState, FourierState, f64)>
where
    F: FnMut(&FourierState) -> Result<FourierState>,
{
    let mut stages: Vec<FourierState> = Vec::with_capacity(7);
    stages.push(k1.clone());
    for (i, row) in A.iter().enumerate().take(5) {
        let mut arg = y.clone();
        for (j, stage) in stages.iter().enumerate() {
            if row[j] != 0.0 {
                arg = arg.axpy(dt * row[j], stage);
            }
        }
        arg.time_stamp = y.time_stamp + dt * [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0][i];
        stages.push(f(&arg)?);
    }
    // 5th-order solution (row 6 of A holds the b weights)
    let mut y_new = y.clone();
    for (j, stage) in stages.iter().enumerate() {
        if A[5][j] != 0.0 {
            y_new = y_new.axpy(dt * A[5][j], stage);
        }
    }
    y_new.time_stamp = y.time_stamp + dt;
    let k7 = f(&y_new)?;
    stages.push(k7);

    // scaled error norm
    let n = y.coeffs().len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut err_i = num_complex::Complex64::new(0.0, 0.0);
        for (j, stage) in stages.iter().enumerate() {
            if E[j] != 0.0 {
                err_i += dt * E[j] * stage.coeffs()[i];
            }
        }
        let sc = opts.abs_tol
            + opts.rel_tol * y.coeffs()[i].norm().max(y_new.coeffs()[i].norm());
        acc += (err_i.norm() / sc).powi(2);
    }
    let err = (acc / n as f64).sqrt();
    let k7 = stages.pop().expect("stage 7 present");
    Ok((y_new, k7, err))
}

/// One accepted adaptive step of the physical-time Galerkin system.
///
/// Retries with shrinking dt until the embedded error estimate passes,
/// re-symmetrizes the result, and returns the accepted state, the scaled
/// error estimate of the accepted step, and the suggested next step size.
pub fn step(
    state: &FourierState,
    params: &FlowParams,
    dt: f64,
    opts: &IntegratorOptions,
) -> Result<(FourierState, f64, f64)> {
    let mut f = |y: &FourierState| Ok(rhs(y, params));
    let mut controller = StepController::new();
    let k1 = rhs(state, params);
    let mut dt = dt;
    loop {
        if dt < opts.dt_min {
            return Err(Error::StepUnderflow {
                dt,
                dt_min: opts.dt_min,
                t: state.time_stamp,
            });
        }
        let (mut y_new, _, err) = rk_attempt(&mut f, state, &k1, dt, opts)?;
        let fac = controller.factor(err, opts.safety);
        if err <= 1.0 {
            if y_new.reality_defect() > 0.0 {
                y_new.symmetrize();
            }
            return Ok((y_new, err, dt * fac));
        }
        dt *= fac;
    }
}

fn positivity_grid(n_modes: usize) -> usize {
    (4 * n_modes + 8).next_power_of_two().max(64)
}

/// Integrate the physical-time system from `initial` until `khat(0)` reaches
/// the blow-up cap (or the step size underflows), then estimate the blow-up
/// time from the trajectory tail.
pub fn integrate_to_blowup(
    initial: &FourierState,
    params: &FlowParams,
    opts: &IntegratorOptions,
) -> Result<(Trajectory, BlowupEstimate)> {
    params.validate()?;
    opts.validate()?;
    let k0 = initial.get(0);
    if !(k0.re > 0.0) || k0.im.abs() > 1e-12 * k0.re {
        return Err(Error::InvalidParameter(
            "initial khat(0) must be real and positive".into(),
        ));
    }
    let cap = opts.cap_for(params.p);
    if cap <= k0.re {
        return Err(Error::InvalidParameter(format!(
            "blowup_cap {cap} must exceed initial khat(0) = {}",
            k0.re
        )));
    }
    // Smallness warning (the trapping lemmas assume delta < 1/4): not fatal,
    // but trajectories started outside the trapped regime may lose convexity.
    for n in 1..=params.n_modes as i64 {
        let ratio = (n * n) as f64 * initial.get(n).norm() / k0.re;
        if ratio > 0.25 {
            log::warn!(
                "initial data outside the trapped regime: n^2 |khat({n})| / khat(0) = {ratio:.3}"
            );
            break;
        }
    }

    let mut f = |y: &FourierState| Ok(rhs(y, params));
    let mut controller = StepController::new();
    let grid = positivity_grid(params.n_modes);
    let one = num_complex::Complex64::new(1.0, 0.0);

    let mut y = initial.clone();
    let mut k1 = rhs(&y, params);
    let mut dt = opts.dt_init;
    let mut samples = vec![y.clone()];
    let mut accepted: usize = 0;
    let mut total_attempts: usize = 0;

    loop {
        if total_attempts >= opts.max_steps {
            return Err(Error::MaxStepsExceeded {
                max_steps: opts.max_steps,
                t: y.time_stamp,
            });
        }
        if dt < opts.dt_min {
            // Underflow terminates the run; the tail accumulated so far is
            // what estimate_T gets to work with.
            log::debug!("step underflow at t = {:.12e}, stopping", y.time_stamp);
            break;
        }
        total_attempts += 1;
        let (mut y_new, k7, err) = rk_attempt(&mut f, &y, &k1, dt, opts)?;
        let fac = controller.factor(err, opts.safety);
        if err > 1.0 {
            dt *= fac;
            continue;
        }
        y_new.symmetrize();
        accepted += 1;

        let min_sample = evaluate_real_unchecked(&y_new, grid, |_| one)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_sample <= 0.0 {
            return Err(Error::NonPositiveCurvature { min_sample });
        }

        let reached_cap = y_new.mean() >= cap;
        if accepted % opts.sample_stride == 0 || reached_cap {
            samples.push(y_new.clone());
        }
        y = y_new;
        // FSAL, valid because symmetrize() only removed O(eps) asymmetry
        k1 = k7;
        dt *= fac;
        if reached_cap {
            break;
        }
    }
    if samples.last().map(|s| s.time_stamp) != Some(y.time_stamp) {
        samples.push(y.clone());
    }

    let trajectory = Trajectory {
        params: *params,
        samples,
        domain_tag: DomainTag::PhysicalT,
    };
    let estimate = estimate_blowup_time(&trajectory, params)?;
    Ok((trajectory, estimate))
}

/// Estimate the blow-up time `T` by a linear least-squares fit of
/// `y(t) = ((p+1)/p) khat(0,t)^-(p+1)` against `t` on the trajectory tail.
/// For the exact shrinking circle `y` is affine in `t` with root `T`, and
/// the leading correction vanishes fastest on the last samples, so the fit
/// is restricted to the final 20% of the trajectory.
pub fn estimate_blowup_time(traj: &Trajectory, params: &FlowParams) -> Result<BlowupEstimate> {
    let k0: Vec<f64> = traj.mode0();
    let times = traj.times();
    let first = *k0.first().ok_or(Error::InsufficientTail {
        found: 0,
        needed: 10,
    })?;

    // tail = samples past 10x growth of the mode-0 coefficient
    let tail_start = k0.iter().position(|&v| v >= 10.0 * first).ok_or({
        Error::InsufficientTail {
            found: 0,
            needed: 10,
        }
    })?;
    let tail_len = k0.len() - tail_start;
    if tail_len < 10 {
        return Err(Error::InsufficientTail {
            found: tail_len,
            needed: 10,
        });
    }
    if k0[tail_start..].windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotoneTail);
    }

    // last 20% of all samples, but never earlier than the 10x tail
    let fit_start = tail_start.max(k0.len() - (k0.len() / 5).max(10));
    let p1 = params.p as f64 + 1.0;
    let scale = p1 / params.p as f64;
    let ts = &times[fit_start..];
    let ys: Vec<f64> = k0[fit_start..].iter().map(|&v| scale * v.powf(-p1)).collect();

    let (intercept, slope, var_a, var_b, cov_ab) = ols_with_covariance(ts, &ys);
    if !(slope < 0.0) {
        return Err(Error::DegenerateFit(
            "reciprocal-power fit has non-negative slope".into(),
        ));
    }
    let t_blowup = -intercept / slope;
    // delta method for T = -a/b
    let var_t =
        (var_a + t_blowup * t_blowup * var_b + 2.0 * t_blowup * cov_ab) / (slope * slope);
    let uncertainty = var_t.max(0.0).sqrt();

    let mut rss = 0.0;
    for (&t, &yv) in ts.iter().zip(&ys) {
        let fit = intercept + slope * t;
        rss += ((yv - fit) / yv).powi(2);
    }
    let fit_residual = (rss / ys.len() as f64).sqrt();

    Ok(BlowupEstimate {
        t_blowup,
        uncertainty,
        fit_window: (ts[0], ts[ts.len() - 1]),
        fit_residual,
    })
}

/// Ordinary least squares `y = a + b t` with parameter (co)variances
/// estimated from the residuals.
fn ols_with_covariance(ts: &[f64], ys: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (&t, &y) in ts.iter().zip(ys) {
        stt += (t - t_mean) * (t - t_mean);
        sty += (t - t_mean) * (y - y_mean);
    }
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let dof = (n - 2.0).max(1.0);
    let mut rss = 0.0;
    for (&t, &y) in ts.iter().zip(ys) {
        let r = y - intercept - slope * t;
        rss += r * r;
    }
    let sigma2 = rss / dof;
    let var_b = sigma2 / stt;
    let var_a = sigma2 * (1.0 / n + t_mean * t_mean / stt);
    let cov_ab = -sigma2 * t_mean / stt;
    (intercept, slope, var_a, var_b, cov_ab)
}

/// Closed-form round solution `khat(0,t)` for constant initial curvature
/// `psi0`: the shrinking circle blows up at `T = p / ((p+1) psi0^(p+1))`.
pub fn round_solution(psi0: f64, p: u32, t: f64) -> f64 {
    let p1 = p as f64 + 1.0;
    psi0 * (1.0 - p1 / p as f64 * psi0.powf(p1) * t).powf(-1.0 / p1)
}

/// Blow-up time of the round solution.
pub fn round_blowup_time(psi0: f64, p: u32) -> f64 {
    let p1 = p as f64 + 1.0;
    p as f64 / (p1 * psi0.powf(p1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::RhsMethod;
    use num_complex::Complex64;

    fn round_params(p: u32, n_modes: usize) -> FlowParams {
        FlowParams::new(p, n_modes, RhsMethod::Convolution).unwrap()
    }

    #[test]
    fn options_validation() {
        let mut opts = IntegratorOptions::default();
        assert!(opts.validate().is_ok());
        opts.dt_min = 1.0;
        assert!(opts.validate().is_err());
    }

    #[test]
    fn single_step_tracks_cubic_ode() {
        let params = round_params(1, 2);
        let opts = IntegratorOptions::default();
        let state = FourierState::constant(1.0, 2);
        let (new_state, err, dt_next) = step(&state, &params, 1e-4, &opts).unwrap();
        assert!(err <= 1.0);
        assert!(dt_next > 0.0);
        let exact = round_solution(1.0, 1, new_state.time_stamp);
        assert!((new_state.mean() - exact).abs() < 1e-12);
    }

    #[test]
    fn constant_manifold_is_invariant_under_oracle_rhs() {
        // With the oracle RHS the off-modes stay exactly zero.
        let params = FlowParams::new(1, 3, RhsMethod::Oracle).unwrap();
        let opts = IntegratorOptions {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let mut state = FourierState::constant(1.0, 3);
        for _ in 0..50 {
            let (next, _, _) = step(&state, &params, 1e-3, &opts).unwrap();
            state = next;
        }
        for n in 1..=3i64 {
            assert_eq!(state.get(n), Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn reality_preserved_over_many_steps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let params = round_params(1, 4);
        let opts = IntegratorOptions {
            rel_tol: 1e-8,
            ..Default::default()
        };
        let mut state = FourierState::constant(1.0, 4);
        for n in 2..=4i64 {
            let c = Complex64::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
            state.set(n, c);
            state.set(-n, c.conj());
        }
        let mut dt = 1e-4;
        for _ in 0..200 {
            let (next, _, dt_next) = step(&state, &params, dt, &opts).unwrap();
            state = next;
            dt = dt_next.min(1e-3);
        }
        assert!(state.reality_defect() <= 1e-12);
    }

    #[test]
    fn round_blowup_p1() {
        let params = round_params(1, 1);
        let opts = IntegratorOptions {
            blowup_cap: Some(1e3),
            ..Default::default()
        };
        let initial = FourierState::constant(1.0, 1);
        let (traj, est) = integrate_to_blowup(&initial, &params, &opts).unwrap();
        assert!((est.t_blowup - 0.5).abs() < 1e-6, "T = {}", est.t_blowup);
        assert!(est.t_blowup > traj.last().time_stamp);
        // trajectory tracks the closed form
        for s in &traj.samples {
            let exact = round_solution(1.0, 1, s.time_stamp);
            assert!((s.mean() / exact - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn round_blowup_general_p() {
        for p in [2u32, 3] {
            let params = round_params(p, 1);
            let opts = IntegratorOptions {
                blowup_cap: Some(50.0),
                ..Default::default()
            };
            let initial = FourierState::constant(1.0, 1);
            let (_, est) = integrate_to_blowup(&initial, &params, &opts).unwrap();
            let expected = p as f64 / (p as f64 + 1.0);
            assert!(
                (est.t_blowup - expected).abs() < 1e-6,
                "p={p}: T = {} vs {expected}",
                est.t_blowup
            );
        }
    }

    #[test]
    fn estimate_t_exact_on_analytic_trajectory() {
        // sample the closed form directly; the reciprocal fit is affine and
        // recovers T to near machine precision
        for p in [1u32, 2] {
            let t_star = round_blowup_time(1.0, p);
            let mut samples = Vec::new();
            for i in 0..200 {
                let t = t_star * (1.0 - 10f64.powf(-6.0 * i as f64 / 199.0));
                let mut s = FourierState::constant(round_solution(1.0, p, t), 1);
                s.time_stamp = t;
                samples.push(s);
            }
            let traj = Trajectory {
                params: round_params(p, 1),
                samples,
                domain_tag: DomainTag::PhysicalT,
            };
            let est = estimate_blowup_time(&traj, &traj.params.clone()).unwrap();
            assert!(
                (est.t_blowup - t_star).abs() < 1e-10,
                "p={p}: {} vs {t_star}",
                est.t_blowup
            );
            assert!(est.fit_residual < 1e-10);
        }
    }

    #[test]
    fn estimate_t_requires_tail_samples() {
        let mut samples = Vec::new();
        for i in 0..5 {
            let mut s = FourierState::constant(1.0 + 20.0 * i as f64, 1);
            s.time_stamp = 0.1 * i as f64;
            samples.push(s);
        }
        let traj = Trajectory {
            params: round_params(1, 1),
            samples,
            domain_tag: DomainTag::PhysicalT,
        };
        assert!(matches!(
            estimate_blowup_time(&traj, &traj.params.clone()),
            Err(Error::InsufficientTail { .. })
        ));
    }

    #[test]
    fn perturbed_round_blowup_is_finite_and_consistent() {
        // mode-2 support amplitude 0.05 shifts T slightly from p/(p+1)
        let spec = crate::datagen::SupportSpec::with_harmonic(2, 0.05, 0.0);
        let initial = crate::datagen::curvature_from_support(&spec, crate::spectral::make_mode_set(16), 4096).unwrap();
        let params = round_params(1, 16);
        let opts = IntegratorOptions {
            rel_tol: 1e-9,
            blowup_cap: Some(100.0),
            ..Default::default()
        };
        let (_, est) = integrate_to_blowup(&initial, &params, &opts).unwrap();
        let round_t = round_blowup_time(initial.mean(), 1);
        assert!((est.t_blowup / round_t - 1.0).abs() < 0.05);
        assert!(est.fit_residual < 1e-4);
    }
}
