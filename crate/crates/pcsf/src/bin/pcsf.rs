//! Command-line driver: config loading, flag overrides, experiment
//! dispatch. Data goes to files under `--out`; standard output carries only
//! summary tables, diagnostics go to standard error (controlled by the
//! `PCSF_LOG` env var). Exit codes: 0 success, 1 numerical failure,
//! 2 config validation, 3 I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pcsf::config::{apply_overrides, load_config, Experiment, InitSpec, RunConfig};
use pcsf::experiments::{cmd_normalized, cmd_rates, cmd_simulate, cmd_sweep, cmd_verify};
use pcsf::galerkin::RhsMethod;
use pcsf::Result;

#[derive(Parser)]
#[command(
    name = "pcsf",
    about = "Spectral simulator for the p-curve shortening flow in curvature form",
    after_help = "Any config field can be overridden with --path.to.field=value, \
                  e.g. --opts.rel_tol=1e-8 or --params.rhs_method=oracle."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Flow exponent p >= 1
    #[arg(long, global = true)]
    p: Option<u32>,

    /// Mode radius N
    #[arg(long = "n-modes", global = true)]
    n_modes: Option<usize>,

    /// Right-hand-side evaluator
    #[arg(long, global = true, value_parser = parse_rhs)]
    rhs: Option<RhsMethod>,

    /// Initial datum: path to a JSON file, or inline JSON
    #[arg(long = "init-spec", global = true)]
    init_spec: Option<String>,

    /// Seed for generated initial data
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker pool size for sweeps (default: logical cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the physical-time flow to blow-up and estimate T
    Simulate,
    /// Integrate the normalized flow (T from a prior physical leg)
    Normalized,
    /// Full rate-extraction pipeline with a summary table
    Rates,
    /// Run the self-verification property suites
    Verify,
    /// Cross-product of (p, seed) cells with an aggregate CSV
    Sweep {
        /// Comma-separated flow exponents
        #[arg(long = "p-list", value_delimiter = ',')]
        p_list: Vec<u32>,
        /// Comma-separated seeds
        #[arg(long = "seeds", value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn parse_rhs(raw: &str) -> std::result::Result<RhsMethod, String> {
    match raw {
        "oracle" => Ok(RhsMethod::Oracle),
        "conv" | "convolution" => Ok(RhsMethod::Convolution),
        other => Err(format!("unknown rhs '{other}', expected oracle|conv")),
    }
}

/// Split `--path.to.field=value` overrides out of argv before clap sees it.
fn extract_dotted_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let dotted = arg
            .strip_prefix("--")
            .and_then(|body| body.split_once('='))
            .filter(|(path, _)| path.contains('.'));
        match dotted {
            Some((path, value)) => overrides.push((path.to_string(), value.to_string())),
            None => plain.push(arg),
        }
    }
    (plain, overrides)
}

fn resolve_init_flag(raw: &str) -> Result<InitSpec> {
    let text = if raw.trim_start().starts_with('{') {
        raw.to_string()
    } else {
        std::fs::read_to_string(raw)?
    };
    Ok(serde_json::from_str(&text)?)
}

fn build_config(cli: &Cli, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = cli.p {
        config.params.p = p;
    }
    if let Some(n) = cli.n_modes {
        config.params.n_modes = n;
    }
    if let Some(rhs) = cli.rhs {
        config.params.rhs_method = rhs;
    }
    if let Some(raw) = &cli.init_spec {
        config.init = resolve_init_flag(raw)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let config = apply_overrides(&config, overrides)?;
    Ok(config)
}

fn run(cli: &Cli, config: &RunConfig) -> Result<i32> {
    match &cli.command {
        Command::Simulate => {
            let artifacts = cmd_simulate(config)?;
            println!(
                "{:<14} {:>22}\n{:<14} {:>22.12e}\n{:<14} {:>22.3e}\n{:<14} {:>22}",
                "samples",
                artifacts.trajectory.samples.len(),
                "T",
                artifacts.estimate.t_blowup,
                "uncertainty",
                artifacts.estimate.uncertainty,
                "csv",
                artifacts.csv_path.display(),
            );
            Ok(0)
        }
        Command::Normalized => {
            let artifacts = cmd_normalized(config)?;
            println!(
                "{:<14} {:>22}\n{:<14} {:>22.12e}\n{:<14} {:>22.6e}\n{:<14} {:>22}",
                "samples",
                artifacts.normalized.samples.len(),
                "T",
                artifacts.estimate.t_blowup,
                "tau_max",
                artifacts.normalized.last().time_stamp,
                "csv",
                artifacts.csv_path.display(),
            );
            Ok(0)
        }
        Command::Rates => {
            let artifacts = cmd_rates(config)?;
            print!("{}", artifacts.table);
            Ok(0)
        }
        Command::Verify => {
            let results = cmd_verify(config)?;
            let mut all_pass = true;
            for r in &results {
                println!(
                    "{:<20} {:<4} {}",
                    r.name,
                    if r.pass { "ok" } else { "FAIL" },
                    r.detail
                );
                all_pass &= r.pass;
            }
            Ok(if all_pass { 0 } else { 1 })
        }
        Command::Sweep { p_list, seeds } => {
            let p_list = if p_list.is_empty() {
                vec![config.params.p]
            } else {
                p_list.clone()
            };
            let seeds = if seeds.is_empty() {
                vec![config.seed]
            } else {
                seeds.clone()
            };
            let jobs = cli.jobs.unwrap_or_else(num_cpus);
            let path = cmd_sweep(config, &p_list, &seeds, jobs)?;
            println!(
                "{:<14} {:>22}\n{:<14} {:>22}",
                "cells",
                p_list.len() * seeds.len(),
                "csv",
                path.display(),
            );
            Ok(0)
        }
    }
}

fn num_cpus() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PCSF_LOG")).init();
    let (args, overrides) = extract_dotted_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    let result = build_config(&cli, &overrides).and_then(|mut config| {
        config.experiment = match cli.command {
            Command::Simulate => Experiment::Simulate,
            Command::Normalized => Experiment::Normalized,
            Command::Rates => Experiment::Rates,
            Command::Verify => Experiment::Verify,
            Command::Sweep { .. } => Experiment::Sweep,
        };
        run(&cli, &config)
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.kind(),
                "message": err.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
