//! End-to-end acceptance measurements: one test per gate, each printing a
//! PASS/FAIL line (visible with `--nocapture`). The blow-up and mode-decay
//! gates share one physical run per p; the convergence gates reuse the same
//! run's normalized continuation.

use std::collections::BTreeMap;

use num_complex::Complex64;
use once_cell::sync::Lazy;

use pcsf::datagen::SupportSpec;
use pcsf::galerkin::{rhs_convolution, rhs_oracle, FlowParams, RhsMethod};
use pcsf::integrator::{
    integrate_to_blowup, round_blowup_time, round_solution, BlowupEstimate, IntegratorOptions,
    Trajectory,
};
use pcsf::normalizer::{
    default_tau_max, integrate_normalized, integrate_normalized_through, normalize,
    rhs_normalized, tau_of_t,
};
use pcsf::rates::{fit_exponential, mode_decay_report, predicted_rates};
use pcsf::spectral::{cl_distance, convexity_functional_q, make_mode_set, FourierState};

fn report(name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance: {name} {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
}

struct Fixture {
    params: FlowParams,
    physical: Trajectory,
    estimate: BlowupEstimate,
    normalized: Trajectory,
}

fn make_fixture(p: u32) -> Fixture {
    let params = FlowParams::new(p, 32, RhsMethod::Convolution).unwrap();
    let mut spec = SupportSpec::default();
    // mode-2 amplitude 0.05 is the measured perturbation; the small mode-3
    // term breaks even parity so the mode-1 coefficient is not identically
    // zero and its decay exponent is measurable
    spec.harmonics.insert(2, [0.05, 0.0]);
    spec.harmonics.insert(3, [0.002, 0.0]);
    let initial =
        pcsf::datagen::curvature_from_support(&spec, params.mode_set(), 4096).unwrap();
    let opts = IntegratorOptions {
        sample_stride: 2,
        ..Default::default()
    };
    let (physical, estimate) = integrate_to_blowup(&initial, &params, &opts).unwrap();
    let start = normalize(&physical.samples[0], estimate.t_blowup, &params).unwrap();
    let normalized =
        integrate_normalized(&start, &params, &opts, default_tau_max(p)).unwrap();
    Fixture {
        params,
        physical,
        estimate,
        normalized,
    }
}

static FIXTURES: Lazy<BTreeMap<u32, Fixture>> =
    Lazy::new(|| (1..=3).map(|p| (p, make_fixture(p))).collect());

fn random_symmetric_state(rng: &mut impl rand::Rng, radius: usize) -> FourierState {
    let mut s = FourierState::zero(radius);
    s.set(0, Complex64::new(rng.gen_range(0.5..2.0), 0.0));
    for n in 1..=radius as i64 {
        let c = Complex64::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
        s.set(n, c);
        s.set(-n, c.conj());
    }
    s
}

#[test]
fn oracle_equivalence() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for p in 1..=3u32 {
        for n_modes in 1..=4usize {
            let params = FlowParams::new(p, n_modes, RhsMethod::Convolution).unwrap();
            for _ in 0..50 {
                let state = random_symmetric_state(&mut rng, n_modes);
                let conv = rhs_convolution(&state, &params);
                let orac = rhs_oracle(&state, &params);
                let rel = conv.axpy(-1.0, &orac).max_modulus() / orac.max_modulus().max(1e-300);
                worst = worst.max(rel);
            }
        }
    }
    report(
        "oracle_equivalence",
        worst <= 1e-12,
        &format!("worst relative discrepancy {worst:.3e}, bound 1e-12"),
    );
}

#[test]
fn analytic_round_solution() {
    let mut detail = String::new();
    let mut pass = true;
    for p in 1..=3u32 {
        let params = FlowParams::new(p, 1, RhsMethod::Convolution).unwrap();
        let opts = IntegratorOptions {
            blowup_cap: Some(12.0),
            ..Default::default()
        };
        let initial = FourierState::constant(1.0, 1);
        let (traj, est) = integrate_to_blowup(&initial, &params, &opts).unwrap();
        let worst = traj
            .samples
            .iter()
            .map(|s| (s.mean() / round_solution(1.0, p, s.time_stamp) - 1.0).abs())
            .fold(0.0f64, f64::max);
        let t_err = (est.t_blowup - round_blowup_time(1.0, p)).abs();
        pass &= worst <= 10.0 * opts.rel_tol && t_err <= 1e-6;
        detail.push_str(&format!("p={p}: track {worst:.1e}, T err {t_err:.1e}; "));
    }
    report("analytic_round_solution", pass, detail.trim_end());
}

#[test]
fn blowup_exponent() {
    let mut detail = String::new();
    let mut pass = true;
    for (p, fixture) in FIXTURES.iter() {
        let reports =
            mode_decay_report(&fixture.physical, fixture.estimate.t_blowup, &fixture.params, 0.01)
                .unwrap();
        let row = reports
            .iter()
            .find(|r| r.quantity == "khat0_blowup")
            .expect("blow-up row");
        let predicted = -predicted_rates(*p).blowup_exponent;
        pass &= (row.fitted_exponent - predicted).abs() <= 0.01;
        detail.push_str(&format!("p={p}: {:.5} vs {predicted:.5}; ", row.fitted_exponent));
    }
    report("blowup_exponent", pass, detail.trim_end());
}

#[test]
fn mode_decay() {
    let mut detail = String::new();
    let mut pass = true;
    for (p, fixture) in FIXTURES.iter() {
        let reports =
            mode_decay_report(&fixture.physical, fixture.estimate.t_blowup, &fixture.params, 0.0)
                .unwrap();
        let predicted = predicted_rates(*p).mode_decay;
        let mode2 = reports
            .iter()
            .find(|r| r.quantity == "khat2_decay")
            .expect("mode-2 row");
        let mode1 = reports
            .iter()
            .find(|r| r.quantity == "khat1_decay")
            .expect("mode-1 row");
        // the prediction is sharp for mode 2, only an upper amplitude
        // bound (lower exponent bound) for mode 1
        pass &= (mode2.fitted_exponent - predicted).abs() <= 0.1 * predicted;
        pass &= mode1.fitted_exponent >= 0.9 * predicted;
        detail.push_str(&format!(
            "p={p}: n=2 {:.4} vs {predicted:.4}, n=1 {:.3} >= {:.3}; ",
            mode2.fitted_exponent,
            mode1.fitted_exponent,
            0.9 * predicted
        ));
    }
    report("mode_decay", pass, detail.trim_end());
}

#[test]
fn convergence_rate() {
    let mut detail = String::new();
    let mut pass = true;
    for (p, fixture) in FIXTURES.iter() {
        let predicted = predicted_rates(*p).convergence_rate;
        for l in 0..=2u32 {
            let points: Vec<(f64, f64)> = fixture
                .normalized
                .samples
                .iter()
                .filter(|s| s.time_stamp >= 1.0)
                .filter_map(|s| {
                    let d = cl_distance(s, 1.0, l, 2048).ok()?;
                    (d > 1e-12).then_some((s.time_stamp, d))
                })
                .collect();
            let (rate, _, _) = fit_exponential(&points).unwrap();
            pass &= (rate - predicted).abs() <= 0.05 * predicted;
            detail.push_str(&format!("p={p} l={l}: {rate:.4}; "));
        }
        detail.push_str(&format!("(predicted {predicted}); "));
    }
    report("convergence_rate", pass, detail.trim_end());
}

#[test]
fn mean_offset_rate() {
    let mut detail = String::new();
    let mut pass = true;
    for (p, fixture) in FIXTURES.iter() {
        let rates = predicted_rates(*p);
        let hi = 0.3 + 6.0 / rates.mean_offset_rate;
        let points: Vec<(f64, f64)> = fixture
            .normalized
            .samples
            .iter()
            .filter(|s| s.time_stamp >= 0.3 && s.time_stamp <= hi)
            .filter_map(|s| {
                let y = (s.mean() - 1.0).abs();
                (y > 1e-9).then_some((s.time_stamp, y))
            })
            .collect();
        let (rate, _, _) = fit_exponential(&points).unwrap();
        // gate: strictly faster than the headline rate by at least 1.5x
        pass &= rate >= 1.5 * rates.convergence_rate;
        detail.push_str(&format!(
            "p={p}: {rate:.3} (headline {}, reported target {}); ",
            rates.convergence_rate, rates.mean_offset_rate
        ));
    }
    report("mean_offset_rate", pass, detail.trim_end());
}

#[test]
fn linearized_spectrum() {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 1..=3u32 {
        let params = FlowParams::new(p, 8, RhsMethod::Convolution).unwrap();
        for n in 0..=3i64 {
            let perturbed = |sign: f64| {
                let mut state = FourierState::constant(1.0, 8);
                if n == 0 {
                    state.set(0, Complex64::new(1.0 + sign * eps, 0.0));
                } else {
                    state.set(n, Complex64::new(sign * eps / 2.0, 0.0));
                    state.set(-n, Complex64::new(sign * eps / 2.0, 0.0));
                }
                rhs_normalized(&state, &params).unwrap()
            };
            let (plus, minus) = (perturbed(1.0), perturbed(-1.0));
            let scale = if n == 0 { eps } else { eps / 2.0 };
            let response = (plus.get(n).re - minus.get(n).re) / (2.0 * scale);
            let expected = -(p as f64) * (n * n) as f64 + p as f64 + 1.0;
            worst = worst.max((response - expected).abs());
        }
    }
    report(
        "linearized_spectrum",
        worst <= 1e-6,
        &format!("worst eigenvalue error {worst:.3e}, bound 1e-6"),
    );
}

#[test]
fn q_conservation_and_trapping() {
    let delta = 0.1;
    let mut detail = String::new();
    let mut pass = true;
    for (p, fixture) in FIXTURES.iter() {
        let mut worst_q: f64 = 0.0;
        let mut worst_ratio: f64 = 0.0;
        let mut worst_time = 0.0;
        for s in &fixture.physical.samples {
            worst_q = worst_q.max(convexity_functional_q(s, 4096).unwrap().norm());
            let mean = s.mean();
            for n in 1..=fixture.params.n_modes as i64 {
                let ratio = (n * n) as f64 * s.get(n).norm() / mean;
                if ratio > worst_ratio {
                    worst_ratio = ratio;
                    worst_time = s.time_stamp;
                }
            }
        }
        pass &= worst_q <= 1e-8 && worst_ratio <= delta;
        detail.push_str(&format!(
            "p={p}: |Q| {worst_q:.2e}, worst n^2|khat(n)|/khat(0) {worst_ratio:.3} at t={worst_time:.3}; "
        ));
    }
    report(
        "q_conservation_and_trapping",
        pass,
        &format!("{} delta {delta}", detail.trim_end()),
    );
}

#[test]
fn two_path_consistency() {
    let params = FlowParams::new(1, 16, RhsMethod::Convolution).unwrap();
    let spec = SupportSpec::with_harmonic(2, 0.05, 0.0);
    let initial = pcsf::datagen::curvature_from_support(&spec, make_mode_set(16), 4096).unwrap();
    let opts = IntegratorOptions {
        blowup_cap: Some(1e3),
        sample_stride: 5,
        ..Default::default()
    };
    let (physical, est) = integrate_to_blowup(&initial, &params, &opts).unwrap();

    let start = normalize(&physical.samples[0], est.t_blowup, &params).unwrap();
    let taus: Vec<f64> = physical
        .samples
        .iter()
        .skip(1)
        .filter_map(|s| tau_of_t(s.time_stamp, est.t_blowup, params.p).ok())
        .filter(|&tau| tau <= 2.0)
        .collect();
    let direct = integrate_normalized_through(
        &start,
        &params,
        &IntegratorOptions::default(),
        2.0,
        &taus,
    )
    .unwrap();

    let mut worst: f64 = 0.0;
    let mut matched = 0;
    for s in physical.samples.iter().skip(1) {
        let tau = match tau_of_t(s.time_stamp, est.t_blowup, params.p) {
            Ok(tau) if tau <= 2.0 => tau,
            _ => continue,
        };
        let from_physical = normalize(s, est.t_blowup, &params).unwrap();
        let twin = direct
            .samples
            .iter()
            .find(|d| (d.time_stamp - tau).abs() < 1e-12)
            .expect("matched tau sample");
        let diff = from_physical.state.axpy(-1.0, twin);
        worst = worst.max(cl_distance(&diff, 0.0, 0, 2048).unwrap());
        matched += 1;
    }
    report(
        "two_path_consistency",
        worst <= 1e-6 && matched >= 10,
        &format!("worst sup distance {worst:.3e} over {matched} matched tau points, bound 1e-6"),
    );
}

#[test]
fn sweep_determinism() {
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_pcsf");
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let status = Command::new(bin)
            .args([
                "sweep",
                "--p-list=1",
                "--seeds=3,7",
                "--n-modes=8",
                "--jobs=2",
                "--opts.rel_tol=1e-8",
                "--opts.blowup_cap=100.0",
                "--opts.sample_stride=2",
            ])
            .arg("--out")
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join("sweep.csv")).unwrap()
    };
    let first = run();
    let second = run();
    report(
        "sweep_determinism",
        first == second && !first.is_empty(),
        &format!("two runs, {} bytes each, byte-identical", first.len()),
    );
}
