//! Run configuration: a single JSON file, every field overridable from the
//! command line with `--dotted.path=value` flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::SupportSpec;
use crate::error::{Error, Result};
use crate::galerkin::{FlowParams, RhsMethod};
use crate::integrator::IntegratorOptions;
use crate::spectral::FourierState;

/// Which pipeline a run drives. The CLI subcommand takes precedence over
/// the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    #[default]
    Simulate,
    Normalized,
    Rates,
    Verify,
    Sweep,
}

/// Initial datum: either a support-function spec or explicit coefficients.
/// The two wire forms are distinguished by the mandatory `N` key of the
/// explicit form; everything else is read as a spec, whose fields all have
/// defaults (so `{}` means the unit circle).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum InitSpec {
    State(FourierState),
    Support(SupportSpec),
}

impl<'de> Deserialize<'de> for InitSpec {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let value = serde_json::Value::deserialize(deserializer)?;
        if value.get("N").is_some() {
            serde_json::from_value(value)
                .map(InitSpec::State)
                .map_err(serde::de::Error::custom)
        } else {
            serde_json::from_value(value)
                .map(InitSpec::Support)
                .map_err(serde::de::Error::custom)
        }
    }
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Support(SupportSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub params: FlowParams,
    pub opts: IntegratorOptions,
    pub init: InitSpec,
    pub experiment: Experiment,
    pub output_dir: PathBuf,
    /// Mode-smallness threshold used by the trapping diagnostics.
    pub delta: f64,
    /// Trapping constant `c_p`.
    pub c_p: f64,
    /// Horizon for normalized runs. `None` selects `10/(3p - 1)`.
    pub tau_max: Option<f64>,
    /// Seed for randomly generated initial data (sweep cells offset it).
    pub seed: u64,
    /// Per-quantity pass tolerances for rate reports.
    pub tolerances: BTreeMap<String, f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: FlowParams {
                p: 1,
                n_modes: 32,
                rhs_method: RhsMethod::Convolution,
            },
            opts: IntegratorOptions::default(),
            init: InitSpec::default(),
            experiment: Experiment::default(),
            output_dir: PathBuf::from("out"),
            delta: 0.1,
            c_p: 4.0,
            tau_max: None,
            seed: 0,
            tolerances: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.opts.validate()?;
        if let InitSpec::Support(spec) = &self.init {
            spec.validate()?;
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter("delta must be positive".into()));
        }
        if !(self.c_p > 0.0) {
            return Err(Error::InvalidParameter("c_p must be positive".into()));
        }
        if let Some(tau_max) = self.tau_max {
            if !(tau_max > 0.0) {
                return Err(Error::InvalidParameter("tau_max must be positive".into()));
            }
        }
        Ok(())
    }

    /// Pass tolerance for a report row, with a per-quantity override.
    pub fn tolerance_for(&self, quantity: &str, default: f64) -> f64 {
        self.tolerances.get(quantity).copied().unwrap_or(default)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: RunConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Apply `path.to.field=value` overrides on top of a config. Values are
/// parsed as JSON first (numbers, booleans, arrays, objects) and fall back
/// to plain strings, so `--opts.rel_tol=1e-8` and `--params.rhs_method=oracle`
/// both work.
pub fn apply_overrides(config: &RunConfig, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut value = serde_json::to_value(config)?;
    for (path, raw) in overrides {
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.clone()));
        let mut slot = &mut value;
        for segment in path.split('.') {
            let map = slot.as_object_mut().ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "override path '{path}': '{segment}' does not address an object field"
                ))
            })?;
            slot = map
                .entry(segment.to_string())
                .or_insert(serde_json::Value::Null);
        }
        *slot = parsed;
    }
    let config: RunConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}
