//! TOML experiment configuration with documented defaults.

use std::path::PathBuf;

use excite::{ActiveConfig, DesignMode, DesignOptions};
use excite::estimate::CovEnvelope;
use serde::{Deserialize, Serialize};

use crate::systems::SystemSpec;
use crate::{CliError, Result};

/// The policies an experiment can compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Adaptive epoch-doubling input design against the running estimate.
    Active,
    /// Input design against the true system from the start.
    Oracle,
    /// Isotropic Gaussian noise at full power.
    IsoNoise,
    /// Best fixed colored Gaussian noise, computed against the true system.
    OptNoise,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Active => "active",
            Policy::Oracle => "oracle",
            Policy::IsoNoise => "iso_noise",
            Policy::OptNoise => "opt_noise",
        }
    }
}

/// Where the experiment writes its artifacts; all optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

/// Solver tuning; each tolerance is a config key with a stable default.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignTuning {
    pub max_iters: usize,
    pub tol: f64,
    pub stall_window: usize,
    pub restarts: usize,
}

impl Default for DesignTuning {
    fn default() -> Self {
        let d = DesignOptions::default();
        Self { max_iters: d.max_iters, tol: d.tol, stall_window: d.stall_window, restarts: d.restarts }
    }
}

impl DesignTuning {
    pub fn to_options(&self, seed: u64) -> DesignOptions {
        DesignOptions {
            max_iters: self.max_iters,
            tol: self.tol,
            stall_window: self.stall_window,
            seed,
            restarts: self.restarts,
        }
    }
}

fn d_trials() -> usize {
    50
}
fn d_epochs() -> usize {
    5
}
fn d_delta() -> f64 {
    0.05
}
fn d_sigma() -> f64 {
    1.0
}
fn d_t0() -> usize {
    100
}
fn d_k0() -> usize {
    20
}
fn d_k_cap() -> usize {
    1280
}

/// One benchmark: a system, a set of policies, and the run protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub policies: Vec<Policy>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// Average-power budget; defaults to the input dimension `p`.
    #[serde(default)]
    pub gamma2: Option<f64>,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_t0")]
    pub t0: usize,
    #[serde(default = "d_k0")]
    pub k0: usize,
    #[serde(default = "d_k_cap")]
    pub k_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
    #[serde(default)]
    pub design: DesignTuning,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if self.policies.is_empty() {
            return Err(CliError::Config("at least one policy is required".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(CliError::Config("delta must be in (0, 1)".into()));
        }
        if let Some(g) = self.gamma2 {
            if g <= 0.0 {
                return Err(CliError::Config("gamma2 must be positive".into()));
            }
        }
        if self.sigma < 0.0 {
            return Err(CliError::Config("sigma must be nonnegative".into()));
        }
        if self.t0 < 2 || self.k0 < 2 {
            return Err(CliError::Config("t0 and k0 must be at least 2".into()));
        }
        if self.k_cap < self.k0 {
            return Err(CliError::Config("k_cap must be at least k0".into()));
        }
        Ok(())
    }

    /// Power budget, defaulting to the input dimension.
    pub fn gamma2_for(&self, p: usize) -> f64 {
        self.gamma2.unwrap_or(p as f64)
    }

    pub fn active_config(&self, p: usize) -> ActiveConfig {
        ActiveConfig {
            t0: self.t0,
            k0: self.k0,
            delta: self.delta,
            gamma2: self.gamma2_for(p),
            mode: DesignMode::Greedy,
            epochs: self.epochs,
            k_cap: self.k_cap,
            envelope: CovEnvelope::Trajectory,
        }
    }

    /// FNV-1a hash of the canonical serialized config, for report metadata.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}
