//! End-to-end acceptance gate: ten numbered criteria, each printing a single
//! PASS/FAIL line (`cargo test --test acceptance -- --nocapture` to see them
//! on success). Criteria run sequentially so the per-criterion runtime
//! budgets are measured on an idle machine.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use excite_cli::config::ExperimentConfig;
use excite_cli::experiment;
use excite_cli::verify::{self, CheckResult};

struct Criterion {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
    budget: f64,
}

impl Criterion {
    fn from_check(id: usize, budget: f64, r: &CheckResult) -> Self {
        Criterion {
            id,
            name: Box::leak(r.name.clone().into_boxed_str()),
            pass: r.pass && r.seconds < budget,
            detail: format!(
                "measured={:.3e} threshold={:.3e} {}",
                r.measured, r.threshold, r.detail
            ),
            seconds: r.seconds,
            budget,
        }
    }

    fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {:<30} ({:.1}s / {:.0}s budget) {}",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.budget,
            self.detail
        )
    }
}

const SEED: u64 = 1;

/// Criterion 7: adaptive runs beat the isotropic-noise baseline by 2x and
/// stay within 2x of the oracle on the d=4 Jordan system.
fn adaptive_vs_baselines() -> Criterion {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_toml(
        r#"
        policies = ["active", "oracle", "iso_noise"]
        trials = 50
        epochs = 6
        gamma2 = 4.0
        sigma = 1.0
        t0 = 100
        k0 = 20
        k_cap = 1280
        seed = 1

        [system]
        kind = "jordan"
        d = 4
        rho = 0.9

        [design]
        max_iters = 600
        "#,
    )
    .expect("criterion 7 config");
    let out = experiment::run_experiment(&cfg, 0).expect("criterion 7 experiment");
    let final_median = |name: &str| -> f64 {
        out.report
            .policies
            .iter()
            .find(|p| p.policy == name)
            .and_then(|p| p.checkpoints.last())
            .map(|c| c.median)
            .unwrap_or(f64::NAN)
    };
    let active = final_median("active");
    let oracle = final_median("oracle");
    let iso = final_median("iso_noise");
    let failed: usize = out.report.policies.iter().map(|p| p.failed_trials).sum();
    let pass = active <= 0.5 * iso && active <= 2.0 * oracle && failed == 0;
    Criterion {
        id: 7,
        name: "adaptive-vs-baselines",
        pass: pass && start.elapsed().as_secs_f64() < 600.0,
        detail: format!(
            "final medians: active={active:.5} oracle={oracle:.5} iso_noise={iso:.5} \
             (need active <= 0.5*iso and <= 2*oracle; {failed} failed trials)"
        ),
        seconds: start.elapsed().as_secs_f64(),
        budget: 600.0,
    }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_excite")
}

fn run_cli(dir: &Path, args: &[&str]) {
    let status = Command::new(bin())
        .current_dir(dir)
        .args(args)
        .status()
        .expect("spawn excite binary");
    assert!(status.success(), "excite {args:?} failed in {}", dir.display());
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("read {rel}: {e}"))
}

/// Criterion 10: every CLI command, run twice with the same config and seed,
/// produces byte-identical CSV/SVG (and JSON design) artifacts.
fn cli_determinism() -> Criterion {
    let start = Instant::now();
    let root = std::env::temp_dir().join(format!("excite-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    let config = r#"
        policies = ["active", "iso_noise", "opt_noise"]
        trials = 3
        epochs = 2
        sigma = 0.5
        t0 = 20
        k0 = 4
        k_cap = 16
        seed = 9

        [system]
        kind = "random_stable"
        d = 2
        p = 2
        rho_target = 0.7
        seed = 9

        [design]
        max_iters = 200
        "#;

    let mut dirs: Vec<PathBuf> = Vec::new();
    for run in 0..2 {
        let dir = root.join(format!("run{run}"));
        std::fs::create_dir_all(&dir).expect("create temp dir");
        std::fs::write(dir.join("config.toml"), config).expect("write config");
        run_cli(&dir, &["simulate", "--config", "config.toml", "--steps", "200"]);
        run_cli(&dir, &["design", "--config", "config.toml", "--k", "8"]);
        run_cli(&dir, &["run-active", "--config", "config.toml"]);
        run_cli(
            &dir,
            &["run-baseline", "--config", "config.toml", "--policy", "opt-noise"],
        );
        run_cli(&dir, &["experiment", "--config", "config.toml", "--threads", "2"]);
        run_cli(&dir, &["plot", "--config", "out/report.json", "--out", "replot"]);
        dirs.push(dir);
    }

    let artifacts = [
        "out/trajectory.csv",
        "out/design.json",
        "out/run_active.csv",
        "out/run_baseline.csv",
        "out/raw.csv",
        "out/plot.svg",
        "replot/plot.svg",
    ];
    let mut mismatched: Vec<&str> = Vec::new();
    for rel in artifacts {
        if read(&dirs[0], rel) != read(&dirs[1], rel) {
            mismatched.push(rel);
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    Criterion {
        id: 10,
        name: "cli-determinism",
        pass: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{} artifacts byte-identical across two runs", artifacts.len())
        } else {
            format!("mismatched artifacts: {}", mismatched.join(", "))
        },
        seconds: start.elapsed().as_secs_f64(),
        budget: 120.0,
    }
}

#[test]
fn acceptance_criteria() {
    let results = vec![
        Criterion::from_check(1, 10.0, &verify::check_covariance_formula(50, SEED)),
        Criterion::from_check(2, 5.0, &verify::check_scalar_design()),
        Criterion::from_check(3, 30.0, &verify::check_colored_noise(10, SEED)),
        Criterion::from_check(4, 60.0, &verify::check_noise_gap(8, 512)),
        Criterion::from_check(5, 180.0, &verify::check_tail_bound(2000, SEED)),
        Criterion::from_check(6, 300.0, &verify::check_rate_scaling(200, 0.2, SEED)),
        adaptive_vs_baselines(),
        Criterion::from_check(8, 120.0, &verify::check_bookkeeping(50, SEED)),
        Criterion::from_check(9, 5.0, &verify::check_derivative(20, SEED)),
        cli_determinism(),
    ];
    let mut all_pass = true;
    let mut lines = String::new();
    for r in &results {
        let line = r.line();
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
        all_pass &= r.pass;
    }
    assert!(all_pass, "acceptance criteria failed:\n{lines}");
}
