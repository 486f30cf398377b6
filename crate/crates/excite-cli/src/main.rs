//! `excite` — simulate, design, benchmark, and verify active input design
//! for linear system identification.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use excite::design::{self, DesignProblem};
use excite::lds::{NoiseModel, Simulator, ZeroSignal};
use excite::RunRecord;
use nalgebra::DMatrix;

use excite_cli::config::{ExperimentConfig, Policy};
use excite_cli::experiment::{self, TrialRow};
use excite_cli::plot;
use excite_cli::systems;
use excite_cli::verify::{self, Level};
use excite_cli::{CliError, Result};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Oracle,
    IsoNoise,
    OptNoise,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Oracle => Policy::Oracle,
            PolicyArg::IsoNoise => Policy::IsoNoise,
            PolicyArg::OptNoise => Policy::OptNoise,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Parser)]
#[command(name = "excite", version, about = "Active input design benchmarks for linear system identification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the configured system under isotropic exploration noise and
    /// write the trajectory as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of steps to simulate.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
    /// Solve the power-constrained input-design problem for the configured
    /// system and write the result as JSON.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input period (defaults to the config's k0).
        #[arg(long)]
        k: Option<usize>,
    },
    /// One adaptive identification run; per-epoch rows as CSV.
    RunActive {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One baseline run (oracle or noise); per-epoch rows as CSV.
    RunBaseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "iso-noise")]
        policy: PolicyArg,
    },
    /// Multi-trial experiment across policies: raw CSV, aggregated report,
    /// optional SVG plot.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trial-level parallelism (0 = rayon default).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Run the numerical verification suite; exits 1 if any check fails.
    Verify {
        #[arg(long, value_enum, default_value = "fast")]
        level: LevelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional directory for a machine-readable JSON copy.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an experiment report (JSON, from `experiment`) to SVG.
    Plot {
        /// Path to the report JSON.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_dir(out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from("out"))
}

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn record_to_rows(rec: &RunRecord) -> Vec<TrialRow> {
    rec.epochs
        .iter()
        .map(|e| TrialRow {
            policy: rec.policy.clone(),
            trial: 0,
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

fn cmd_simulate(config: &Path, seed: Option<u64>, out: Option<PathBuf>, steps: usize) -> Result<()> {
    let cfg = load(config, seed)?;
    let sys = systems::gen_system(&cfg.system, cfg.seed)?;
    let p = sys.p();
    let gamma2 = cfg.gamma2_for(p);
    let mut sim = Simulator::new(
        sys.sys().clone(),
        NoiseModel::new(cfg.sigma, (gamma2 / p as f64).sqrt()).map_err(CliError::Lib)?,
        nalgebra::DVector::zeros(sys.d()),
        cfg.seed,
    )
    .map_err(CliError::Lib)?;
    sim.run(&ZeroSignal(p), steps).map_err(CliError::Lib)?;
    let traj = sim.trajectory();
    let mut csv = String::from("# schema=1\n");
    csv.push_str("t");
    for i in 0..sys.d() {
        csv.push_str(&format!(",x{i}"));
    }
    for i in 0..p {
        csv.push_str(&format!(",u{i}"));
    }
    csv.push('\n');
    for t in 0..traj.len() {
        csv.push_str(&format!("{t}"));
        for v in traj.states[t].iter() {
            csv.push_str(&format!(",{v}"));
        }
        for v in traj.inputs[t].iter() {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    let path = out_dir(out).join("trajectory.csv");
    write_text(&path, &csv)?;
    println!("wrote {} ({} steps)", path.display(), steps);
    Ok(())
}

fn cmd_design(config: &Path, seed: Option<u64>, out: Option<PathBuf>, k: Option<usize>) -> Result<()> {
    let cfg = load(config, seed)?;
    let sys = systems::gen_system(&cfg.system, cfg.seed)?;
    let d = sys.d();
    let gamma2 = cfg.gamma2_for(sys.p());
    let k = k.unwrap_or(cfg.k0);
    let prob = DesignProblem::new(sys.sys().clone(), gamma2, k, DMatrix::zeros(d, d), 1.0);
    let res = design::optimize_input(&prob, &cfg.design.to_options(cfg.seed))
        .map_err(CliError::Lib)?;
    let json = serde_json::to_string_pretty(&res).map_err(|e| CliError::Config(e.to_string()))?;
    let path = out_dir(out).join("design.json");
    write_text(&path, &(json + "\n"))?;
    println!(
        "wrote {} (objective {:.6}, {} iterations, truncation loss {:.2e})",
        path.display(),
        res.objective,
        res.iterations,
        res.truncation_loss
    );
    Ok(())
}

fn cmd_single_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    policy: Policy,
    file: &str,
) -> Result<()> {
    let cfg = load(config, seed)?;
    let sys = systems::gen_system(&cfg.system, cfg.seed)?;
    let colored = if policy == Policy::OptNoise {
        let gamma2 = cfg.gamma2_for(sys.p());
        let horizon = excite::lds::gramian_horizon(&sys.a)
            .map_err(CliError::Lib)?
            .min(cfg.k_cap)
            .max(cfg.k0);
        Some(
            design::optimal_noise_covariance(sys.sys(), gamma2, cfg.sigma, horizon, 300)
                .map_err(CliError::Lib)?
                .cov,
        )
    } else {
        None
    };
    let rec = experiment::run_policy(&sys, &cfg, policy, cfg.seed, colored.as_ref())
        .map_err(CliError::Lib)?;
    let rows = record_to_rows(&rec);
    let path = out_dir(out).join(file);
    experiment::write_csv(&rows, &path)?;
    println!("wrote {} (final error {:.6})", path.display(), rec.final_error());
    Ok(())
}

fn cmd_experiment(config: &Path, seed: Option<u64>, out: Option<PathBuf>, threads: usize) -> Result<()> {
    let cfg = load(config, seed)?;
    let dir = out_dir(out);
    let result = experiment::run_experiment(&cfg, threads)?;
    let csv_path = cfg.output.csv.clone().unwrap_or_else(|| dir.join("raw.csv"));
    let report_path = cfg.output.report.clone().unwrap_or_else(|| dir.join("report.json"));
    experiment::write_csv(&result.rows, &csv_path)?;
    experiment::write_report(&result.report, &report_path)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", report_path.display());
    let plot_path = cfg.output.plot.clone().unwrap_or_else(|| dir.join("plot.svg"));
    plot::emit_plot(&result.report, &plot_path)?;
    println!("wrote {}", plot_path.display());
    for p in &result.report.policies {
        if let Some(last) = p.checkpoints.last() {
            println!(
                "{:>10}: final median error {:.6} [{:.6}, {:.6}] ({} failed trials)",
                p.policy, last.median, last.p10, last.p90, p.failed_trials
            );
        }
    }
    Ok(())
}

fn cmd_verify(level: LevelArg, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let level = match level {
        LevelArg::Fast => Level::Fast,
        LevelArg::Full => Level::Full,
    };
    let results = verify::verify_suite(level, seed);
    for r in &results {
        println!("{}", r.line());
    }
    if let Some(dir) = out {
        let json =
            serde_json::to_string_pretty(&results).map_err(|e| CliError::Config(e.to_string()))?;
        write_text(&dir.join("verify.json"), &(json + "\n"))?;
    }
    let failures: Vec<&str> =
        results.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    if failures.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(())
    } else {
        Err(CliError::Verification(failures.join(", ")))
    }
}

fn cmd_plot(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(config)?;
    let report: experiment::Report =
        serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let path = out_dir(out).join("plot.svg");
    plot::emit_plot(&report, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Simulate { config, seed, out, steps } => cmd_simulate(&config, seed, out, steps),
        Cmd::Design { config, seed, out, k } => cmd_design(&config, seed, out, k),
        Cmd::RunActive { config, seed, out } => {
            cmd_single_run(&config, seed, out, Policy::Active, "run_active.csv")
        }
        Cmd::RunBaseline { config, seed, out, policy } => {
            cmd_single_run(&config, seed, out, policy.into(), "run_baseline.csv")
        }
        Cmd::Experiment { config, seed, out, threads } => {
            cmd_experiment(&config, seed, out, threads)
        }
        Cmd::Verify { level, seed, out } => cmd_verify(level, seed, out),
        Cmd::Plot { config, out } => cmd_plot(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
