//! Spectral (Fourier-Galerkin) simulator for the p-curve shortening flow
//! in curvature form, plus a measurement harness that extracts blow-up
//! times and convergence-rate exponents from simulated trajectories.
//!
//! The flow is simulated purely in curvature form: the curvature
//! `k(theta, t)` of a convex curve evolves under
//!
//! ```text
//! dk/dt = k^2 ( k^(p-1) k'' + (p-1) k^(p-2) (k')^2 + (1/p) k^p )
//! ```
//!
//! truncated to a finite symmetric set of Fourier modes. The crate provides
//!
//! * [`spectral`] — Fourier representation, transforms, seminorms and the
//!   convexity functional `Q`,
//! * [`galerkin`] — the truncated spectral right-hand side, with a
//!   brute-force tuple-enumeration oracle and a fast de-aliased
//!   pseudo-spectral evaluator,
//! * [`integrator`] — adaptive embedded RK5(4) time stepping toward
//!   curvature blow-up and blow-up time estimation,
//! * [`normalizer`] — the self-similar normalization `(k~, tau)` and direct
//!   integration of the normalized flow,
//! * [`rates`] — power-law / exponential exponent fitting and admissibility
//!   checkers,
//! * [`datagen`] — admissible initial data built from support functions of
//!   convex curves (so that `Q = 0` holds exactly),
//! * [`config`] / [`experiments`] — run configuration and the experiment
//!   pipelines behind the `pcsf` binary.

pub mod config;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod galerkin;
pub mod integrator;
pub mod normalizer;
pub mod rates;
pub mod spectral;

pub use error::{Error, Result};
