//! Admissible initial curvature data from support functions of convex
//! curves.
//!
//! For a convex curve with support function `h(theta)` the curvature
//! satisfies `1/k = h + h''`. Building `k` this way makes the convexity
//! functional vanish identically: `Q(k) = int e^{i theta} (h + h'') dtheta`
//! and `h + h''` has no `+-1` Fourier modes when `h` carries no `n = 1`
//! harmonics (the factor `1 - n^2` kills them anyway). Direct Fourier
//! perturbation of `k` would need a projection step with its own error;
//! this construction is exact up to quadrature roundoff.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::{check_delta_smallness, check_trapping};
use crate::spectral::{forward_transform, FourierState, GridFunction, ModeSet};

/// Support-function description of a convex curve: `h(theta) = base +
/// sum over n of a_n cos(n theta) + b_n sin(n theta)`, harmonics keyed by
/// `n >= 2`. `n = 1` harmonics are pure translations, invisible in
/// curvature, and rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSpec {
    #[serde(default = "default_base")]
    pub base: f64,
    /// Map from harmonic index `n` to `[a_n, b_n]`.
    #[serde(default)]
    pub harmonics: BTreeMap<u32, [f64; 2]>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_base() -> f64 {
    1.0
}

impl Default for SupportSpec {
    fn default() -> Self {
        SupportSpec {
            base: 1.0,
            harmonics: BTreeMap::new(),
            seed: None,
        }
    }
}

impl SupportSpec {
    /// The unit circle plus a single harmonic.
    pub fn with_harmonic(n: u32, a: f64, b: f64) -> Self {
        let mut spec = SupportSpec::default();
        spec.harmonics.insert(n, [a, b]);
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.harmonics.contains_key(&0) || self.harmonics.contains_key(&1) {
            return Err(Error::InvalidParameter(
                "support harmonics must have n >= 2 (n = 0 is the base, n = 1 a translation)"
                    .into(),
            ));
        }
        if !(self.base > 0.0) {
            return Err(Error::InvalidParameter("support base must be positive".into()));
        }
        Ok(())
    }

    pub fn max_harmonic(&self) -> u32 {
        self.harmonics.keys().copied().max().unwrap_or(0)
    }

    /// `h(theta) + h''(theta)`, the reciprocal curvature.
    pub fn radius_of_curvature(&self, theta: f64) -> f64 {
        let mut w = self.base;
        for (&n, &[a, b]) in &self.harmonics {
            let nf = n as f64;
            let factor = 1.0 - nf * nf;
            w += factor * (a * (nf * theta).cos() + b * (nf * theta).sin());
        }
        w
    }
}

/// Curvature state `k = 1/(h + h'')` sampled on `grid_size` points and
/// transformed to the mode set. Fails if the spec is not strictly convex.
pub fn curvature_from_support(
    spec: &SupportSpec,
    modes: ModeSet,
    grid_size: usize,
) -> Result<FourierState> {
    spec.validate()?;
    let w = GridFunction::sample(grid_size, |theta| spec.radius_of_curvature(theta));
    let min_value = w.min();
    if min_value <= 0.0 {
        return Err(Error::ConvexityViolation { min_value });
    }
    let k = GridFunction::new(w.samples().iter().map(|&v| 1.0 / v).collect());
    forward_transform(&k, modes)
}

/// Draw a random support spec with harmonics in `2..=min(N, 6)` and shrink
/// its amplitudes until the delta-smallness and trapping checks both pass
/// with at least 10% margin. Deterministic in `seed`.
pub fn random_admissible(
    seed: u64,
    modes: ModeSet,
    delta_target: f64,
    c_p: f64,
) -> Result<(FourierState, SupportSpec)> {
    if !(delta_target > 0.0 && delta_target < 0.25) {
        return Err(Error::InvalidParameter(
            "delta_target must lie in (0, 1/4)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = SupportSpec {
        base: 1.0,
        harmonics: BTreeMap::new(),
        seed: Some(seed),
    };
    let n_max = modes.radius().min(6) as u32;
    for n in 2..=n_max {
        // scale down with n so high harmonics do not dominate h + h''
        let scale = 0.05 / ((n * n) as f64 - 1.0);
        spec.harmonics.insert(
            n,
            [
                rng.gen_range(-scale..scale),
                rng.gen_range(-scale..scale),
            ],
        );
    }
    let grid_size = 4096;
    loop {
        let convex = spec
            .harmonics
            .values()
            .map(|&[a, b]| a.abs() + b.abs())
            .sum::<f64>()
            < spec.base; // cheap sufficient bound before the grid check
        if convex {
            if let Ok(state) = curvature_from_support(&spec, modes, grid_size) {
                let (delta_ok, _) = check_delta_smallness(&state, 0.9 * delta_target);
                let (trap_ok, _) = check_trapping(&state, c_p / 0.9);
                if delta_ok && trap_ok {
                    return Ok((state, spec));
                }
            }
        }
        for amps in spec.harmonics.values_mut() {
            amps[0] *= 0.5;
            amps[1] *= 0.5;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{convexity_functional_q, evaluate, make_mode_set};

    #[test]
    fn unit_circle_gives_constant_state() {
        let spec = SupportSpec::default();
        let state = curvature_from_support(&spec, make_mode_set(8), 4096).unwrap();
        assert!((state.get(0).re - 1.0).abs() < 1e-14);
        for n in 1..=8i64 {
            assert!(state.get(n).norm() < 1e-14);
        }
    }

    #[test]
    fn mode2_perturbation_values() {
        // h = 1 + 0.05 cos(2 theta) gives 1/k = 1 - 0.15 cos(2 theta) and
        // k = 1/(1 - m cos(phi)) with m = 0.15, phi = 2 theta, whose Fourier
        // coefficients are r^|n| / sqrt(1 - m^2), r = (1 - sqrt(1-m^2))/m.
        let spec = SupportSpec::with_harmonic(2, 0.05, 0.0);
        let state = curvature_from_support(&spec, make_mode_set(16), 4096).unwrap();
        let m = 0.15f64;
        let s = (1.0 - m * m).sqrt();
        let r = (1.0 - s) / m;
        assert!((state.get(0).re - 1.0 / s).abs() < 1e-12);
        assert!((state.get(2).re - r / s).abs() < 1e-12);
        assert!((state.get(4).re - r * r / s).abs() < 1e-12);
        assert!(state.get(1).norm() < 1e-14);
        assert!(state.get(3).norm() < 1e-14);
    }

    #[test]
    fn convexity_violation_detected() {
        // a2 = 0.4 forces h + h'' = 1 - 1.2 cos(2 theta) <= 0 somewhere
        let spec = SupportSpec::with_harmonic(2, 0.4, 0.0);
        assert!(matches!(
            curvature_from_support(&spec, make_mode_set(8), 4096),
            Err(Error::ConvexityViolation { .. })
        ));
    }

    #[test]
    fn n1_harmonics_rejected() {
        let spec = SupportSpec::with_harmonic(1, 0.1, 0.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn generated_states_satisfy_q_and_positivity() {
        for seed in [1u64, 2, 3] {
            let (state, _) = random_admissible(seed, make_mode_set(16), 0.1, 4.0).unwrap();
            let q = convexity_functional_q(&state, 4096).unwrap();
            assert!(q.norm() <= 1e-10, "seed {seed}: |Q| = {}", q.norm());
            assert!(evaluate(&state, 4096).unwrap().min() > 0.0);
        }
    }

    #[test]
    fn random_admissible_passes_checkers_and_is_deterministic() {
        let z = make_mode_set(12);
        let (state, spec) = random_admissible(7, z, 0.1, 4.0).unwrap();
        let (pass_delta, _) = check_delta_smallness(&state, 0.1);
        let (pass_trap, _) = check_trapping(&state, 4.0);
        assert!(pass_delta && pass_trap);
        let (state2, spec2) = random_admissible(7, z, 0.1, 4.0).unwrap();
        assert_eq!(spec, spec2);
        assert_eq!(state, state2);
    }

    #[test]
    fn delta_target_domain_enforced() {
        assert!(random_admissible(1, make_mode_set(4), 0.3, 4.0).is_err());
        assert!(random_admissible(1, make_mode_set(4), 0.0, 4.0).is_err());
    }

    #[test]
    fn spec_serialization() {
        let spec = SupportSpec::with_harmonic(2, 0.05, -0.01);
        let json = serde_json::to_string(&spec).unwrap();
        let back: SupportSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
