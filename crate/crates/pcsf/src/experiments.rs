//! Experiment pipelines behind the CLI subcommands: physical blow-up runs,
//! normalized cross-check runs, rate extraction, self-verification suites
//! and deterministic parameter sweeps.
//!
//! All artifacts go to `output_dir` from the config; files are written
//! atomically (temp file in the target directory, then rename). Floats are
//! serialized with 17 significant digits so reruns with identical seeds
//! produce byte-identical data files; wall-clock timestamps appear only in
//! the sidecar metadata block.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitSpec, RunConfig};
use crate::datagen::{curvature_from_support, random_admissible};
use crate::error::{Error, Result};
use crate::galerkin::{rhs_convolution, rhs_oracle, FlowParams, RhsMethod};
use crate::integrator::{
    integrate_to_blowup, BlowupEstimate, DomainTag, IntegratorOptions, Trajectory,
};
use crate::normalizer::{
    default_tau_max, integrate_normalized, normalize, rhs_normalized,
};
use crate::rates::{fit_exponential, mode_decay_report, predicted_rates, RateReport};
use crate::spectral::{cl_distance, convexity_functional_q, FourierState};

const CL_GRID: usize = 2048;
const Q_GRID: usize = 4096;

fn fmt_float(x: f64) -> String {
    format!("{x:.17e}")
}

/// Write-temp-rename in the target directory, so concurrent sweep cells
/// never observe partial files.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Materialize the configured initial datum on the configured mode set.
/// Explicit states are padded or truncated to the mode radius.
pub fn resolve_initial(config: &RunConfig) -> Result<FourierState> {
    match &config.init {
        InitSpec::Support(spec) => {
            let grid = Q_GRID.max(4 * (config.params.n_modes + 1)).next_power_of_two();
            curvature_from_support(spec, config.params.mode_set(), grid)
        }
        InitSpec::State(state) => {
            if state.radius() == config.params.n_modes {
                return Ok(state.clone());
            }
            let mut out = FourierState::zero(config.params.n_modes);
            out.time_stamp = state.time_stamp;
            for n in out.modes().iter() {
                if state.modes().contains(n) {
                    out.set(n, state.get(n));
                }
            }
            Ok(out)
        }
    }
}

fn trajectory_csv(traj: &Trajectory, time_label: &str) -> String {
    let n = traj.params.n_modes as i64;
    let mut header = vec![time_label.to_string(), "khat0_re".to_string()];
    for m in 1..=n {
        header.push(format!("khat{m}_re"));
        header.push(format!("khat{m}_im"));
    }
    let mut out = header.join(",");
    out.push('\n');
    for s in &traj.samples {
        let mut row = vec![fmt_float(s.time_stamp), fmt_float(s.get(0).re)];
        for m in 1..=n {
            let c = s.get(m);
            row.push(fmt_float(c.re));
            row.push(fmt_float(c.im));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SidecarMetadata {
    created_unix: u64,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    params: &'a FlowParams,
    opts: &'a IntegratorOptions,
    domain_tag: DomainTag,
    n_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<&'a BlowupEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_blowup_used: Option<f64>,
    metadata: SidecarMetadata,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_trajectory(
    traj: &Trajectory,
    estimate: Option<&BlowupEstimate>,
    t_blowup_used: Option<f64>,
    opts: &IntegratorOptions,
    dir: &Path,
    stem: &str,
    time_label: &str,
) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(format!("{stem}.csv"));
    write_atomic(&csv_path, trajectory_csv(traj, time_label).as_bytes())?;
    let sidecar = Sidecar {
        params: &traj.params,
        opts,
        domain_tag: traj.domain_tag,
        n_samples: traj.samples.len(),
        estimate,
        t_blowup_used,
        metadata: SidecarMetadata {
            created_unix: now_unix(),
        },
    };
    let sidecar_path = dir.join(format!("{stem}.json"));
    write_atomic(
        &sidecar_path,
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    Ok((csv_path, sidecar_path))
}

pub struct SimulateArtifacts {
    pub trajectory: Trajectory,
    pub estimate: BlowupEstimate,
    pub csv_path: PathBuf,
    pub sidecar_path: PathBuf,
}

/// Physical-time run to the blow-up cap: trajectory CSV plus sidecar with
/// the blow-up estimate.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulateArtifacts> {
    config.validate()?;
    let initial = resolve_initial(config)?;
    let (trajectory, estimate) = integrate_to_blowup(&initial, &config.params, &config.opts)?;
    let (csv_path, sidecar_path) = write_trajectory(
        &trajectory,
        Some(&estimate),
        None,
        &config.opts,
        &config.output_dir,
        "trajectory",
        "t",
    )?;
    Ok(SimulateArtifacts {
        trajectory,
        estimate,
        csv_path,
        sidecar_path,
    })
}

/// Physical run, then direct integration of the normalized flow from the
/// normalized initial datum (the blow-up time comes from the physical run).
fn run_normalized_pipeline(
    config: &RunConfig,
) -> Result<(Trajectory, BlowupEstimate, Trajectory)> {
    let initial = resolve_initial(config)?;
    let (physical, estimate) = integrate_to_blowup(&initial, &config.params, &config.opts)?;
    let start = normalize(&physical.samples[0], estimate.t_blowup, &config.params)?;
    let tau_max = config
        .tau_max
        .unwrap_or_else(|| default_tau_max(config.params.p));
    let normalized = integrate_normalized(&start, &config.params, &config.opts, tau_max)?;
    Ok((physical, estimate, normalized))
}

pub struct NormalizedArtifacts {
    pub physical: Trajectory,
    pub estimate: BlowupEstimate,
    pub normalized: Trajectory,
    pub csv_path: PathBuf,
    pub sidecar_path: PathBuf,
}

pub fn cmd_normalized(config: &RunConfig) -> Result<NormalizedArtifacts> {
    config.validate()?;
    let (physical, estimate, normalized) = run_normalized_pipeline(config)?;
    let (csv_path, sidecar_path) = write_trajectory(
        &normalized,
        Some(&estimate),
        Some(estimate.t_blowup),
        &config.opts,
        &config.output_dir,
        "normalized",
        "tau",
    )?;
    Ok(NormalizedArtifacts {
        physical,
        estimate,
        normalized,
        csv_path,
        sidecar_path,
    })
}

fn default_tolerance(quantity: &str, predicted: f64) -> f64 {
    if quantity == "khat0_blowup" {
        0.01
    } else if quantity.starts_with("khat") {
        0.1 * predicted.abs()
    } else if quantity.starts_with("convergence") {
        0.05 * predicted.abs()
    } else {
        // mean offset: reported, not gated (sharpness of 6p-2 is unclaimed)
        f64::INFINITY
    }
}

fn exponential_report(
    quantity: &str,
    points: &[(f64, f64)],
    predicted: f64,
    config: &RunConfig,
) -> Result<RateReport> {
    let (rate, _, rms) = fit_exponential(points)?;
    let window = [points.first().unwrap().0, points.last().unwrap().0];
    let tol = config.tolerance_for(quantity, default_tolerance(quantity, predicted));
    Ok(RateReport::new(quantity, rate, predicted, window, rms, tol))
}

/// All rate measurements for one initial datum: blow-up and per-mode decay
/// exponents from the physical run, convergence and mean-offset rates from
/// the normalized run.
pub fn measure_rates(config: &RunConfig) -> Result<(Vec<RateReport>, BlowupEstimate)> {
    let (physical, estimate, normalized) = run_normalized_pipeline(config)?;
    let rates = predicted_rates(config.params.p);

    let mut reports = mode_decay_report(&physical, estimate.t_blowup, &config.params, 0.0)?;
    for report in &mut reports {
        let tol = config.tolerance_for(
            &report.quantity,
            default_tolerance(&report.quantity, report.predicted_exponent),
        );
        report.tolerance = tol;
        // the predicted decay is sharp only for mode 2 (and the mode-0
        // blow-up); for the other modes it is an upper bound on the
        // amplitude, so any faster decay passes
        let sharp = report.quantity == "khat0_blowup" || report.quantity == "khat2_decay";
        report.pass = if sharp {
            (report.fitted_exponent - report.predicted_exponent).abs() <= tol
        } else {
            report.fitted_exponent >= report.predicted_exponent - tol
        };
    }

    let tau_max = config
        .tau_max
        .unwrap_or_else(|| default_tau_max(config.params.p));
    for l in 0..=2u32 {
        let points: Vec<(f64, f64)> = normalized
            .samples
            .iter()
            .filter(|s| s.time_stamp >= 1.0 && s.time_stamp <= tau_max)
            .filter_map(|s| {
                let d = cl_distance(s, 1.0, l, CL_GRID).ok()?;
                (d > 1e-12).then_some((s.time_stamp, d))
            })
            .collect();
        reports.push(exponential_report(
            &format!("convergence_l{l}"),
            &points,
            rates.convergence_rate,
            config,
        )?);
    }

    // The mean offset decays much faster than the other modes, so its fit
    // window sits early, before the signal sinks under the slow growth of
    // the unstable constant mode seeded by the finite accuracy of T.
    let offset_hi = 0.3 + 6.0 / rates.mean_offset_rate;
    let offset_points: Vec<(f64, f64)> = normalized
        .samples
        .iter()
        .filter(|s| s.time_stamp >= 0.3 && s.time_stamp <= offset_hi)
        .filter_map(|s| {
            let y = (s.mean() - 1.0).abs();
            (y > 1e-9).then_some((s.time_stamp, y))
        })
        .collect();
    reports.push(exponential_report(
        "mean_offset",
        &offset_points,
        rates.mean_offset_rate,
        config,
    )?);

    Ok((reports, estimate))
}

/// Fixed-width plain-text summary, stable for golden-file comparison.
pub fn summary_table(reports: &[RateReport]) -> String {
    let mut out = format!(
        "{:<18} {:>14} {:>14} {:>6}\n",
        "quantity", "fitted", "predicted", "pass"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<18} {:>14.6e} {:>14.6e} {:>6}\n",
            r.quantity,
            r.fitted_exponent,
            r.predicted_exponent,
            if r.pass { "yes" } else { "no" }
        ));
    }
    out
}

pub struct RatesArtifacts {
    pub reports: Vec<RateReport>,
    pub table: String,
    pub json_path: PathBuf,
    pub table_path: PathBuf,
}

pub fn cmd_rates(config: &RunConfig) -> Result<RatesArtifacts> {
    config.validate()?;
    let (reports, _) = measure_rates(config)?;
    let table = summary_table(&reports);
    let json_path = config.output_dir.join("rates.json");
    write_atomic(&json_path, serde_json::to_string_pretty(&reports)?.as_bytes())?;
    let table_path = config.output_dir.join("rates.txt");
    write_atomic(&table_path, table.as_bytes())?;
    Ok(RatesArtifacts {
        reports,
        table,
        json_path,
        table_path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn suite(name: &str, result: std::result::Result<String, String>) -> SuiteResult {
    match result {
        Ok(detail) => SuiteResult {
            name: name.to_string(),
            pass: true,
            detail,
        },
        Err(detail) => SuiteResult {
            name: name.to_string(),
            pass: false,
            detail,
        },
    }
}

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

fn verify_oracle_equivalence() -> std::result::Result<String, String> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for p in 1..=3u32 {
        for n_modes in 1..=4usize {
            let params = FlowParams::new(p, n_modes, RhsMethod::Convolution)
                .map_err(|e| e.to_string())?;
            for _ in 0..50 {
                let state = random_symmetric_state(&mut rng, n_modes);
                let conv = rhs_convolution(&state, &params);
                let orac = rhs_oracle(&state, &params);
                let scale = orac.max_modulus().max(1e-300);
                let diff = conv.axpy(-1.0, &orac).max_modulus() / scale;
                worst = worst.max(diff);
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!("worst relative discrepancy {worst:.3e}"))
    } else {
        Err(format!("worst relative discrepancy {worst:.3e} > 1e-12"))
    }
}

fn verify_analytic_round() -> std::result::Result<String, String> {
    use crate::integrator::{round_blowup_time, round_solution};
    let mut detail = String::new();
    for p in 1..=3u32 {
        let params = FlowParams::new(p, 1, RhsMethod::Convolution).map_err(|e| e.to_string())?;
        // the cap bounds the error amplification near blow-up: a time-shift
        // error delta-t inflates the relative error like 1/((p+1)(T - t)),
        // and a cap of 12 keeps the end-to-end error within 10 rel_tol
        let opts = IntegratorOptions {
            blowup_cap: Some(12.0),
            ..Default::default()
        };
        let initial = FourierState::constant(1.0, 1);
        let (traj, est) =
            integrate_to_blowup(&initial, &params, &opts).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for s in &traj.samples {
            let exact = round_solution(1.0, p, s.time_stamp);
            worst = worst.max((s.mean() / exact - 1.0).abs());
        }
        let t_err = (est.t_blowup - round_blowup_time(1.0, p)).abs();
        if worst > 10.0 * opts.rel_tol {
            return Err(format!("p={p}: tracking error {worst:.3e} > 10*rel_tol"));
        }
        if t_err > 1e-6 {
            return Err(format!("p={p}: estimated T off by {t_err:.3e}"));
        }
        detail.push_str(&format!("p={p}: track {worst:.1e}, T err {t_err:.1e}; "));
    }
    Ok(detail)
}

fn verify_reality(config: &RunConfig) -> std::result::Result<String, String> {
    let mut cfg = config.clone();
    cfg.params.n_modes = cfg.params.n_modes.min(8);
    let initial = random_admissible(cfg.seed, cfg.params.mode_set(), 0.1, cfg.c_p)
        .map_err(|e| e.to_string())?
        .0;
    let opts = IntegratorOptions {
        blowup_cap: Some(50.0),
        ..cfg.opts
    };
    let (traj, _) =
        integrate_to_blowup(&initial, &cfg.params, &opts).map_err(|e| e.to_string())?;
    let worst = traj
        .samples
        .iter()
        .map(|s| s.reality_defect())
        .fold(0.0f64, f64::max);
    if worst <= 1e-12 {
        Ok(format!("worst reality defect {worst:.3e}"))
    } else {
        Err(format!("worst reality defect {worst:.3e} > 1e-12"))
    }
}

fn verify_q_drift(config: &RunConfig) -> std::result::Result<String, String> {
    let mut cfg = config.clone();
    cfg.params.n_modes = 16;
    cfg.init = InitSpec::Support(crate::datagen::SupportSpec::with_harmonic(2, 0.05, 0.0));
    let initial = resolve_initial(&cfg).map_err(|e| e.to_string())?;
    let opts = IntegratorOptions {
        blowup_cap: Some(50.0),
        sample_stride: 5,
        ..cfg.opts
    };
    let (traj, _) =
        integrate_to_blowup(&initial, &cfg.params, &opts).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for s in &traj.samples {
        let q = convexity_functional_q(s, Q_GRID).map_err(|e| e.to_string())?;
        worst = worst.max(q.norm());
    }
    if worst <= 1e-8 {
        Ok(format!("worst |Q| {worst:.3e}"))
    } else {
        Err(format!("worst |Q| {worst:.3e} > 1e-8"))
    }
}

fn verify_linear_spectrum() -> std::result::Result<String, String> {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 1..=3u32 {
        let params = FlowParams::new(p, 8, RhsMethod::Convolution).map_err(|e| e.to_string())?;
        for n in 0..=3i64 {
            let perturbed = |sign: f64| -> std::result::Result<FourierState, String> {
                let mut state = FourierState::constant(1.0, 8);
                if n == 0 {
                    state.set(0, Complex64::new(1.0 + sign * eps, 0.0));
                } else {
                    state.set(n, Complex64::new(sign * eps / 2.0, 0.0));
                    state.set(-n, Complex64::new(sign * eps / 2.0, 0.0));
                }
                rhs_normalized(&state, &params).map_err(|e| e.to_string())
            };
            let plus = perturbed(1.0)?;
            let minus = perturbed(-1.0)?;
            let scale = if n == 0 { eps } else { eps / 2.0 };
            let response = (plus.get(n).re - minus.get(n).re) / (2.0 * scale);
            let expected = -(p as f64) * (n * n) as f64 + p as f64 + 1.0;
            worst = worst.max((response - expected).abs());
        }
    }
    if worst <= 1e-6 {
        Ok(format!("worst eigenvalue error {worst:.3e}"))
    } else {
        Err(format!("worst eigenvalue error {worst:.3e} > 1e-6"))
    }
}

/// Self-verification: the oracle-equivalence, analytic-round, reality,
/// Q-drift and linear-spectrum suites.
pub fn cmd_verify(config: &RunConfig) -> Result<Vec<SuiteResult>> {
    config.validate()?;
    Ok(vec![
        suite("oracle_equivalence", verify_oracle_equivalence()),
        suite("analytic_round", verify_analytic_round()),
        suite("reality", verify_reality(config)),
        suite("q_drift", verify_q_drift(config)),
        suite("linear_spectrum", verify_linear_spectrum()),
    ])
}

#[derive(Debug, Clone)]
struct SweepRow {
    p: u32,
    seed: u64,
    t_blowup: f64,
    blowup: f64,
    mode2: f64,
    convergence: f64,
    mean_offset: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SweepFailure {
    p: u32,
    seed: u64,
    error: String,
}

fn sweep_cell(config: &RunConfig, p: u32, seed: u64) -> Result<SweepRow> {
    let mut cfg = config.clone();
    cfg.params.p = p;
    cfg.seed = seed;
    let (state, _) = random_admissible(seed, cfg.params.mode_set(), cfg.delta, cfg.c_p)?;
    cfg.init = InitSpec::State(state);
    let (reports, estimate) = measure_rates(&cfg)?;
    let find = |q: &str| -> f64 {
        reports
            .iter()
            .find(|r| r.quantity == q)
            .map(|r| r.fitted_exponent)
            .unwrap_or(f64::NAN)
    };
    Ok(SweepRow {
        p,
        seed,
        t_blowup: estimate.t_blowup,
        blowup: find("khat0_blowup"),
        mode2: find("khat2_decay"),
        convergence: find("convergence_l0"),
        mean_offset: find("mean_offset"),
    })
}

/// Cross-product of (p, seed) cells run concurrently; aggregate CSV sorted
/// by (p, seed) so identical seeds give byte-identical output. Failed cells
/// are reported in `sweep_failures.json` and make the whole sweep fail
/// after the valid rows are written.
pub fn cmd_sweep(
    config: &RunConfig,
    p_list: &[u32],
    seed_list: &[u64],
    jobs: usize,
) -> Result<PathBuf> {
    config.validate()?;
    if p_list.is_empty() || seed_list.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs nonempty p and seed lists".into(),
        ));
    }
    let cells: Vec<(u32, u64)> = p_list
        .iter()
        .flat_map(|&p| seed_list.iter().map(move |&s| (p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let results: Vec<(u32, u64, Result<SweepRow>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(p, seed)| (p, seed, sweep_cell(config, p, seed)))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (p, seed, result) in results {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(SweepFailure {
                p,
                seed,
                error: e.to_string(),
            }),
        }
    }
    rows.sort_by_key(|r| (r.p, r.seed));
    failures.sort_by_key(|f| (f.p, f.seed));

    let mut csv =
        String::from("p,seed,T,blowup_exponent,mode2_decay,convergence_rate,mean_offset_rate\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.p,
            r.seed,
            fmt_float(r.t_blowup),
            fmt_float(r.blowup),
            fmt_float(r.mode2),
            fmt_float(r.convergence),
            fmt_float(r.mean_offset)
        ));
    }
    let csv_path = config.output_dir.join("sweep.csv");
    write_atomic(&csv_path, csv.as_bytes())?;

    if !failures.is_empty() {
        let failures_path = config.output_dir.join("sweep_failures.json");
        write_atomic(
            &failures_path,
            serde_json::to_string_pretty(&failures)?.as_bytes(),
        )?;
        return Err(Error::SweepPartialFailure {
            failed: failures.len(),
            total: cells.len(),
        });
    }
    Ok(csv_path)
}
