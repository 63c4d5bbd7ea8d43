//! Fourier representation of 2*pi-periodic real functions: mode sets,
//! forward/inverse transforms, seminorms, C^l distances and the convexity
//! functional `Q(k) = integral of e^{i theta} / k(theta)`.
//!
//! Conventions: a state of radius `N` stores the wavenumbers
//! `khat(n) = (1/2pi) int f(theta) e^{-in theta} dtheta` for `n = -N..=N`.
//! Grid quadrature is the uniform trapezoid rule, which for periodic
//! integrands coincides with the DFT and is spectrally accurate.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the imaginary residue left after evaluating a
/// reality-symmetric state on a grid.
pub const IMAG_RESIDUE_TOL: f64 = 1e-12;

thread_local! {
    static FFT_CACHE: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    FFT_CACHE.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        let fft = cache
            .entry((buf.len(), inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(buf.len(), dir)
            })
            .clone();
        fft.process(buf);
    });
}

/// The symmetric integer mode set `{-N, ..., N}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSet {
    radius: usize,
}

impl ModeSet {
    pub fn new(radius: usize) -> Self {
        ModeSet { radius }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of members, `2N + 1`.
    pub fn len(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn is_empty(&self) -> bool {
        false // always contains 0
    }

    pub fn contains(&self, n: i64) -> bool {
        n.unsigned_abs() as usize <= self.radius
    }

    /// Members in increasing order, `-N..=N`.
    pub fn iter(&self) -> impl Iterator<Item = i64> {
        let r = self.radius as i64;
        -r..=r
    }
}

/// Construct the mode set `{-N, ..., N}`.
pub fn make_mode_set(radius: usize) -> ModeSet {
    ModeSet::new(radius)
}

/// Truncated Fourier representation of a real 2*pi-periodic function,
/// stamped with the flow time it belongs to.
///
/// Reality symmetry `khat(-n) = conj(khat(n))` is an invariant of every
/// operation in this crate; [`FourierState::reality_defect`] measures drift
/// and [`FourierState::symmetrize`] restores it.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierState {
    radius: usize,
    /// Coefficients ordered `n = -N..=N`, so index `n + N`.
    coeffs: Vec<Complex64>,
    pub time_stamp: f64,
}

impl FourierState {
    pub fn zero(radius: usize) -> Self {
        FourierState {
            radius,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * radius + 1],
            time_stamp: 0.0,
        }
    }

    /// The constant function `c` on a mode set of the given radius.
    pub fn constant(c: f64, radius: usize) -> Self {
        let mut s = Self::zero(radius);
        s.set(0, Complex64::new(c, 0.0));
        s
    }

    pub fn from_coeffs(coeffs: Vec<Complex64>, time_stamp: f64) -> Self {
        assert!(coeffs.len() % 2 == 1, "coefficient vector must have odd length");
        FourierState {
            radius: (coeffs.len() - 1) / 2,
            coeffs,
            time_stamp,
        }
    }

    pub fn modes(&self) -> ModeSet {
        ModeSet::new(self.radius)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Coefficient of mode `n`; zero outside the mode set.
    pub fn get(&self, n: i64) -> Complex64 {
        if n.unsigned_abs() as usize > self.radius {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(n + self.radius as i64) as usize]
        }
    }

    pub fn set(&mut self, n: i64, value: Complex64) {
        let r = self.radius as i64;
        assert!(n.abs() <= r, "mode {n} outside radius {r}");
        self.coeffs[(n + r) as usize] = value;
    }

    /// Mode-0 coefficient as a real number (the curvature mean).
    pub fn mean(&self) -> f64 {
        self.get(0).re
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Largest coefficient modulus.
    pub fn max_modulus(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Worst-case deviation from `khat(-n) = conj(khat(n))`.
    pub fn reality_defect(&self) -> f64 {
        let mut worst: f64 = self.get(0).im.abs();
        for n in 1..=self.radius as i64 {
            worst = worst.max((self.get(-n) - self.get(n).conj()).norm());
        }
        worst
    }

    /// Restore reality symmetry by averaging `khat(n)` with `conj(khat(-n))`.
    pub fn symmetrize(&mut self) {
        self.set(0, Complex64::new(self.get(0).re, 0.0));
        for n in 1..=self.radius as i64 {
            let avg = 0.5 * (self.get(n) + self.get(-n).conj());
            self.set(n, avg);
            self.set(-n, avg.conj());
        }
    }

    /// Mode-wise `self + scale * other` (same radius required).
    pub fn axpy(&self, scale: f64, other: &FourierState) -> FourierState {
        assert_eq!(self.radius, other.radius);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a + scale * b)
            .collect();
        FourierState::from_coeffs(coeffs, self.time_stamp)
    }

    pub fn scaled(&self, scale: f64) -> FourierState {
        let coeffs = self.coeffs.iter().map(|c| scale * c).collect();
        FourierState::from_coeffs(coeffs, self.time_stamp)
    }
}

/// Wire format: `{"N": int, "re": [...], "im": [...], "t": float}` with
/// coefficients ordered `n = -N..=N`.
#[derive(Serialize, Deserialize)]
struct FourierStateWire {
    #[serde(rename = "N")]
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    t: f64,
}

impl Serialize for FourierState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        FourierStateWire {
            n: self.radius,
            re: self.coeffs.iter().map(|c| c.re).collect(),
            im: self.coeffs.iter().map(|c| c.im).collect(),
            t: self.time_stamp,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FourierState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = FourierStateWire::deserialize(deserializer)?;
        let len = 2 * wire.n + 1;
        if wire.re.len() != len || wire.im.len() != len {
            return Err(serde::de::Error::custom(format!(
                "expected {len} coefficients for radius {}",
                wire.n
            )));
        }
        let coeffs = wire
            .re
            .iter()
            .zip(&wire.im)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        Ok(FourierState::from_coeffs(coeffs, wire.t))
    }
}

/// Real samples at the uniform grid `theta_j = 2 pi j / M`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    samples: Vec<f64>,
}

impl GridFunction {
    pub fn new(samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty());
        GridFunction { samples }
    }

    pub fn grid_size(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn theta(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.samples.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.samples.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.abs()).fold(0.0, f64::max)
    }

    /// Sample a closure over the uniform grid.
    pub fn sample<F: Fn(f64) -> f64>(grid_size: usize, f: F) -> Self {
        let samples = (0..grid_size)
            .map(|j| f(2.0 * PI * j as f64 / grid_size as f64))
            .collect();
        GridFunction::new(samples)
    }
}

/// Discrete Fourier coefficients of a real grid function, restricted to the
/// mode set. Exact for trigonometric polynomials of degree <= N sampled on
/// `M >= 2N + 2` points.
pub fn forward_transform(g: &GridFunction, modes: ModeSet) -> Result<FourierState> {
    let m = g.grid_size();
    let radius = modes.radius();
    let needed = 2 * radius + 2;
    if m < needed {
        return Err(Error::GridTooSmall {
            grid_size: m,
            radius,
            needed,
        });
    }
    let mut buf: Vec<Complex64> = g.samples().iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf, false);
    let mut state = FourierState::zero(radius);
    let scale = 1.0 / m as f64;
    for n in modes.iter() {
        let idx = n.rem_euclid(m as i64) as usize;
        state.set(n, buf[idx] * scale);
    }
    Ok(state)
}

/// Evaluate the trigonometric polynomial on `grid_size` uniform points.
///
/// Fails with [`Error::RealityViolation`] if the imaginary residue exceeds
/// `1e-12` relative to the largest coefficient modulus.
pub fn evaluate(state: &FourierState, grid_size: usize) -> Result<GridFunction> {
    let radius = state.radius();
    let needed = 2 * radius + 2;
    if grid_size < needed {
        return Err(Error::GridTooSmall {
            grid_size,
            radius,
            needed,
        });
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); grid_size];
    for n in state.modes().iter() {
        let idx = n.rem_euclid(grid_size as i64) as usize;
        buf[idx] += state.get(n);
    }
    fft_in_place(&mut buf, true);
    let scale = state.max_modulus();
    let tolerance = IMAG_RESIDUE_TOL * scale.max(f64::MIN_POSITIVE);
    let residue = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if residue > tolerance {
        return Err(Error::RealityViolation { residue, tolerance });
    }
    Ok(GridFunction::new(buf.iter().map(|c| c.re).collect()))
}

/// Inverse transform without the reality-residue check, for internal hot
/// paths that operate on states already known to be (re-)symmetrized.
/// `multiplier(n)` is applied to each coefficient before evaluation.
pub(crate) fn evaluate_real_unchecked<F>(
    state: &FourierState,
    grid_size: usize,
    multiplier: F,
) -> Vec<f64>
where
    F: Fn(i64) -> Complex64,
{
    debug_assert!(grid_size >= 2 * state.radius() + 2);
    let mut buf = vec![Complex64::new(0.0, 0.0); grid_size];
    for n in state.modes().iter() {
        let idx = n.rem_euclid(grid_size as i64) as usize;
        buf[idx] += state.get(n) * multiplier(n);
    }
    fft_in_place(&mut buf, true);
    buf.iter().map(|c| c.re).collect()
}

/// Forward transform of raw real samples restricted to the mode set, without
/// constructing a `GridFunction`.
pub(crate) fn transform_real_unchecked(samples: &[f64], modes: ModeSet) -> FourierState {
    let m = samples.len();
    debug_assert!(m >= 2 * modes.radius() + 2);
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf, false);
    let mut state = FourierState::zero(modes.radius());
    let scale = 1.0 / m as f64;
    for n in modes.iter() {
        let idx = n.rem_euclid(m as i64) as usize;
        state.set(n, buf[idx] * scale);
    }
    state
}

/// The seminorm `max over modes of |xi|^beta * max(|Re khat(xi)|, |Im khat(xi)|)`.
///
/// The `xi = 0` term uses `|0|^beta = 0` for `beta > 0` and `1` for
/// `beta = 0`, so that for `beta > 0` only nonzero modes are measured.
pub fn seminorm(state: &FourierState, beta: f64) -> f64 {
    let mut sup: f64 = 0.0;
    for n in state.modes().iter() {
        let weight = if n == 0 {
            if beta > 0.0 {
                0.0
            } else {
                1.0
            }
        } else {
            (n.abs() as f64).powf(beta)
        };
        let c = state.get(n);
        sup = sup.max(weight * c.re.abs().max(c.im.abs()));
    }
    sup
}

/// The convexity functional `Q(k) = int_0^{2pi} e^{i theta} / k(theta) dtheta`,
/// computed by trapezoidal quadrature on `grid_size` uniform points.
///
/// `Q(k) = 0` identically when `k` is the curvature of a closed convex curve,
/// so a drift away from zero signals loss of convexity or under-resolution.
pub fn convexity_functional_q(state: &FourierState, grid_size: usize) -> Result<Complex64> {
    let g = evaluate(state, grid_size)?;
    let min_sample = g.min();
    if min_sample <= 0.0 {
        return Err(Error::NonPositiveCurvature { min_sample });
    }
    let m = g.grid_size();
    let dtheta = 2.0 * PI / m as f64;
    let mut q = Complex64::new(0.0, 0.0);
    for (j, &k) in g.samples().iter().enumerate() {
        let theta = 2.0 * PI * j as f64 / m as f64;
        q += Complex64::new(theta.cos(), theta.sin()) / k;
    }
    Ok(q * dtheta)
}

/// Derivative state: coefficients multiplied by `(i n)^order`.
pub fn derivative(state: &FourierState, order: u32) -> FourierState {
    let mut out = state.clone();
    for n in state.modes().iter() {
        let mult = Complex64::new(0.0, n as f64).powu(order);
        out.set(n, state.get(n) * mult);
    }
    out
}

/// `max_{j=0..l} sup |d^j/dtheta^j (state - reference)|`, with derivatives
/// taken as `(i n)^j` multipliers in Fourier space and the sup over a grid
/// of `grid_size` points.
pub fn cl_distance(state: &FourierState, reference: f64, l: u32, grid_size: usize) -> Result<f64> {
    let mut shifted = state.clone();
    shifted.set(0, shifted.get(0) - Complex64::new(reference, 0.0));
    let mut worst: f64 = 0.0;
    for j in 0..=l {
        let d = derivative(&shifted, j);
        worst = worst.max(evaluate(&d, grid_size)?.sup_norm());
    }
    Ok(worst)
}
