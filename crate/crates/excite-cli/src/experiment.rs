//! Batch experiment runner: paired-seed trials across policies, CSV rows,
//! and aggregated percentile reports.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use excite::active::{self, NoisePolicy};
use excite::design;
use excite::lds::{self, StableSys};
use excite::rng;
use excite::RunRecord;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Policy};
use crate::systems;
use crate::{CliError, Result};

/// One CSV row: a policy's state at the end of one epoch of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub policy: String,
    pub trial: usize,
    pub epoch: usize,
    pub t_total: usize,
    pub k: usize,
    pub eps: f64,
    pub spectral_error: f64,
    pub objective: f64,
    pub power: f64,
}

/// Error percentiles at one epoch checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub t_total: usize,
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub checkpoints: Vec<Checkpoint>,
    pub failed_trials: usize,
}

/// Aggregated outcome of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config_hash: String,
    pub trials: usize,
    pub policies: Vec<PolicySummary>,
    /// Wall-clock seconds; kept out of the CSV/SVG so those stay
    /// byte-reproducible.
    pub wall_time_secs: f64,
}

pub struct ExperimentOutput {
    pub rows: Vec<TrialRow>,
    pub report: Report,
}

/// Interpolated percentile of an ascending slice (`q` in [0, 1]).
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Run one policy for one trial seed.
pub fn run_policy(
    sys: &StableSys,
    cfg: &ExperimentConfig,
    policy: Policy,
    seed: u64,
    colored: Option<&DMatrix<f64>>,
) -> excite::Result<RunRecord> {
    let p = sys.p();
    let acfg = cfg.active_config(p);
    let opts = cfg.design.to_options(seed);
    match policy {
        Policy::Active => active::run_active(sys, cfg.sigma, &acfg, seed, &opts),
        Policy::Oracle => active::run_oracle(sys, cfg.sigma, &acfg, seed, &opts),
        Policy::IsoNoise => {
            active::run_noise_baseline(sys, cfg.sigma, &acfg, &NoisePolicy::Isotropic, seed)
        }
        Policy::OptNoise => {
            let cov = colored.expect("colored covariance precomputed for opt_noise").clone();
            active::run_noise_baseline(sys, cfg.sigma, &acfg, &NoisePolicy::Colored(cov), seed)
        }
    }
}

fn record_rows(policy: Policy, trial: usize, rec: &RunRecord) -> Vec<TrialRow> {
    rec.epochs
        .iter()
        .map(|e| TrialRow {
            policy: policy.name().to_string(),
            trial,
            epoch: e.epoch,
            t_total: e.t_total,
            k: e.k,
            eps: e.eps,
            spectral_error: e.spectral_error,
            objective: e.objective,
            power: e.power,
        })
        .collect()
}

/// Run every configured policy across all trials with paired seeds; panicking
/// trials are recorded as failed and skipped in the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let sys = systems::gen_system(&cfg.system, cfg.seed)?;
    let gamma2 = cfg.gamma2_for(sys.p());

    // The colored-noise baseline plays a fixed covariance optimized against
    // the true system; compute it once for all trials.
    let colored = if cfg.policies.contains(&Policy::OptNoise) {
        let horizon = lds::gramian_horizon(&sys.a).map_err(CliError::Lib)?.min(cfg.k_cap).max(cfg.k0);
        let res = design::optimal_noise_covariance(sys.sys(), gamma2, cfg.sigma, horizon, 300)
            .map_err(CliError::Lib)?;
        Some(res.cov)
    } else {
        None
    };

    let tasks: Vec<(Policy, usize)> = cfg
        .policies
        .iter()
        .flat_map(|&p| (0..cfg.trials).map(move |t| (p, t)))
        .collect();

    let run_all = || -> Vec<(Policy, usize, std::result::Result<RunRecord, String>)> {
        tasks
            .par_iter()
            .map(|&(policy, trial)| {
                let seed = rng::trial_seed(cfg.seed, trial as u64);
                let out = panic::catch_unwind(AssertUnwindSafe(|| {
                    run_policy(&sys, cfg, policy, seed, colored.as_ref())
                }));
                let res = match out {
                    Ok(Ok(rec)) => Ok(rec),
                    Ok(Err(e)) => Err(e.to_string()),
                    Err(_) => Err("trial panicked".to_string()),
                };
                (policy, trial, res)
            })
            .collect()
    };
    let results = if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(run_all)
    } else {
        run_all()
    };

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &policy in &cfg.policies {
        let mut failed = 0usize;
        let mut per_epoch: Vec<(usize, Vec<f64>)> = Vec::new();
        for (p, trial, res) in &results {
            if *p != policy {
                continue;
            }
            match res {
                Ok(rec) => {
                    for e in &rec.epochs {
                        if per_epoch.len() <= e.epoch {
                            per_epoch.resize(e.epoch + 1, (0, Vec::new()));
                        }
                        per_epoch[e.epoch].0 = e.t_total;
                        per_epoch[e.epoch].1.push(e.spectral_error);
                    }
                    rows.extend(record_rows(policy, *trial, rec));
                }
                Err(msg) => {
                    failed += 1;
                    eprintln!("warning: {} trial {} failed: {}", policy.name(), trial, msg);
                }
            }
        }
        let checkpoints = per_epoch
            .iter()
            .enumerate()
            .map(|(epoch, (t_total, errs))| {
                let mut s = errs.clone();
                s.sort_by(f64::total_cmp);
                Checkpoint {
                    epoch,
                    t_total: *t_total,
                    p10: percentile(&s, 0.10),
                    median: percentile(&s, 0.50),
                    p90: percentile(&s, 0.90),
                }
            })
            .collect();
        summaries.push(PolicySummary { policy: policy.name().to_string(), checkpoints, failed_trials: failed });
    }
    // Aggregation is order-independent: sort rows before any write.
    rows.sort_by(|a, b| {
        (a.policy.as_str(), a.trial, a.epoch).cmp(&(b.policy.as_str(), b.trial, b.epoch))
    });

    let report = Report {
        version: format!("v{}", env!("CARGO_PKG_VERSION")),
        config_hash: cfg.hash(),
        trials: cfg.trials,
        policies: summaries,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutput { rows, report })
}

/// Render rows as versioned CSV. Floats use Rust's shortest-roundtrip
/// formatting so reruns are byte-identical.
pub fn render_csv(rows: &[TrialRow]) -> String {
    let mut out = String::from("# schema=1\n");
    out.push_str("policy,trial,epoch,t_total,k,eps,spectral_error,objective,power\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.policy, r.trial, r.epoch, r.t_total, r.k, r.eps, r.spectral_error, r.objective,
            r.power
        ));
    }
    out
}

/// Parse the CSV format produced by `render_csv`.
pub fn parse_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut rows = Vec::new();
    for line in text.lines().skip(2) {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(CliError::Config(format!("bad CSV row: {line}")));
        }
        let num =
            |s: &str| s.parse::<f64>().map_err(|e| CliError::Config(format!("bad float: {e}")));
        let int =
            |s: &str| s.parse::<usize>().map_err(|e| CliError::Config(format!("bad int: {e}")));
        rows.push(TrialRow {
            policy: f[0].to_string(),
            trial: int(f[1])?,
            epoch: int(f[2])?,
            t_total: int(f[3])?,
            k: int(f[4])?,
            eps: num(f[5])?,
            spectral_error: num(f[6])?,
            objective: num(f[7])?,
            power: num(f[8])?,
        });
    }
    Ok(rows)
}

pub fn write_csv(rows: &[TrialRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, render_csv(rows))?;
    Ok(())
}

pub fn write_report(report: &Report, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
