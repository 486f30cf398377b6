//! Numerical verification suite: each check pits a closed-form quantity or
//! solver output against an independent oracle and reports a measured value
//! next to its tolerance.

use std::time::Instant;

use excite::active::{self, ActiveConfig};
use excite::design::{self, DesignOptions, DesignProblem};
use excite::estimate;
use excite::freq::{self, PeriodicInput, SampledPeriodic};
use excite::lds::{LinSys, NoiseModel, Simulator, StableSys};
use excite::linalg;
use excite::rng;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment;
use crate::plot;
use crate::systems::{self, BSpec, SystemSpec};

/// Outcome of one verification check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// The quantity the check measures (an error, a frequency, a ratio...).
    pub measured: f64,
    /// The bound `measured` is compared against.
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:<30} measured={:.6e} threshold={:.6e} ({:.2}s) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.seconds,
            self.detail,
        )
    }
}

fn finish(name: &str, start: Instant, measured: f64, threshold: f64, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        pass: measured <= threshold && measured.is_finite(),
        measured,
        threshold,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_stable(d: usize, p: usize, rho: f64, seed: u64) -> StableSys {
    let spec = SystemSpec::RandomStable {
        d,
        p,
        rho_target: rho,
        seed,
        b: if p == d { BSpec::Identity } else { BSpec::Random { p, seed: seed.wrapping_add(1) } },
    };
    systems::gen_system(&spec, seed).expect("seeded stable system")
}

fn random_input(k: usize, p: usize, gamma2: f64, seed: u64) -> PeriodicInput {
    let mut r = rng::substream(seed, "verify-input");
    let samples: Vec<DVector<f64>> =
        (0..k).map(|_| DVector::from_fn(p, |_, _| r.sample(StandardNormal))).collect();
    PeriodicInput::from_time_domain(&samples, gamma2)
        .and_then(|u| u.normalized_to_budget())
        .expect("random input")
}

/// Single conjugate pair at bin `l` with full power in direction `q`.
fn single_frequency_input(k: usize, l: usize, q: &DVector<f64>, gamma2: f64) -> PeriodicInput {
    let p = q.len();
    let mut coeffs = vec![excite::linalg::CVector::zeros(p); k];
    let qc = excite::linalg::CVector::from_iterator(p, q.iter().map(|&x| Complex::new(x, 0.0)));
    let mate = k - l;
    let energy = (k * k) as f64 * gamma2;
    if mate == l || mate == 0 {
        coeffs[l - 1] = &qc * Complex::new(energy.sqrt() / q.norm(), 0.0);
    } else {
        let c = &qc * Complex::new((energy / 2.0).sqrt() / q.norm(), 0.0);
        coeffs[l - 1] = c.clone();
        coeffs[mate - 1] = c.conjugate();
    }
    PeriodicInput::new(k, gamma2, coeffs).expect("single-frequency input")
}

/// Per-period signal power in the frequency domain equals the time-domain
/// power, input by input.
pub fn check_parseval(n: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut r = rng::substream(seed, "parseval");
    let mut worst = 0.0f64;
    for i in 0..n {
        let k = r.gen_range(2..=64);
        let p = r.gen_range(1..=4);
        let u = random_input(k, p, 1.0, rng::trial_seed(seed, i as u64));
        let samples = u.to_time_domain();
        let time: f64 = samples.iter().map(|s| s.norm_squared()).sum();
        let freq = u.coeff_energy() / u.k as f64;
        worst = worst.max((time - freq).abs() / freq.max(1.0));
    }
    finish("parseval", start, worst, 1e-10, format!("{n} random inputs"))
}

/// Frequency-domain steady-state covariance formula against the noiseless
/// time-domain recursion.
pub fn check_covariance_formula(n: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut r = rng::substream(seed, "cov-formula");
    let mut worst = 0.0f64;
    for i in 0..n {
        let d = r.gen_range(1..=6);
        let p = r.gen_range(1..=3);
        let rho = r.gen_range(0.3..0.95);
        let sys = random_stable(d, p, rho, rng::trial_seed(seed, i as u64));
        let k = r.gen_range(4..=64);
        let u = random_input(k, p, 1.0, rng::trial_seed(seed, 1000 + i as u64));
        let formula = freq::steady_state_covariance_raw(&sys, &u).unwrap();
        let settle = 2600 / k + 3;
        let oracle = freq::steady_state_covariance_empirical(&sys, &u, settle).unwrap();
        let rel = linalg::opnorm(&(&formula - &oracle)) / linalg::opnorm(&formula).max(1e-12);
        worst = worst.max(rel);
    }
    finish("covariance-formula", start, worst, 1e-6, format!("{n} random systems"))
}

/// Scalar design: the solver must match the brute-force best single
/// frequency, which is the lowest nonzero bin.
pub fn check_scalar_design() -> CheckResult {
    let start = Instant::now();
    let sys = LinSys::new(DMatrix::from_element(1, 1, 0.9), DMatrix::identity(1, 1)).unwrap();
    let k = 20;
    let prob = DesignProblem::new(sys, 1.0, k, DMatrix::zeros(1, 1), 1.0);
    let one = DVector::from_element(1, 1.0);
    let mut brute = 0.0f64;
    for l in 1..k {
        let u = single_frequency_input(k, l, &one, 1.0);
        brute = brute.max(design::objective(&prob, &u).unwrap());
    }
    let opt = design::optimize_input(&prob, &DesignOptions::default()).unwrap();
    let rel = (opt.objective - brute).abs() / brute;
    finish(
        "scalar-design-optimality",
        start,
        rel,
        1e-6,
        format!("solver={:.6} brute={:.6}", opt.objective, brute),
    )
}

/// Frank-Wolfe colored-noise solver against the diagonal closed form.
pub fn check_colored_noise(n: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut r = rng::substream(seed, "colored-noise");
    let mut worst = 0.0f64;
    for _ in 0..n {
        let d = r.gen_range(1..=5);
        let lams: Vec<f64> = (0..d).map(|_| r.gen_range(0.0..0.9)).collect();
        let a = DMatrix::from_fn(d, d, |i, j| if i == j { lams[i] } else { 0.0 });
        let sys = LinSys::new(a, DMatrix::identity(d, d)).unwrap();
        let horizon = r.gen_range(40..=120);
        let solved = design::optimal_noise_covariance(&sys, 1.0, 0.0, horizon, 400).unwrap();
        let exact = design::optimal_noise_objective_diagonal(&lams, 1.0, horizon);
        worst = worst.max((solved.objective - exact).abs() / exact);
    }
    finish("colored-noise-closed-form", start, worst, 0.01, format!("{n} diagonal spectra"))
}

/// Designed periodic inputs beat the best colored noise by a dimension-sized
/// factor on the repeated-eigenvalue family.
pub fn check_noise_gap(d: usize, k: usize) -> CheckResult {
    let start = Instant::now();
    let lam = 1.0 - 1.0 / d as f64;
    let a = DMatrix::from_diagonal_element(d, d, lam);
    let sys = LinSys::new(a, DMatrix::identity(d, d)).unwrap();
    let horizon = excite::lds::gramian_horizon(&sys.a).unwrap();
    let noise = design::optimal_noise_covariance(&sys, 1.0, 0.0, horizon, 400).unwrap();
    let mut prob = DesignProblem::new(sys, 1.0, k, DMatrix::zeros(d, d), 1.0);
    prob.allow_dc = true;
    let periodic = design::optimize_input(&prob, &DesignOptions::default()).unwrap();
    let ratio = periodic.objective / noise.objective;
    // Passes when the designed input beats the best noise by at least d/2.
    CheckResult {
        name: "noise-vs-periodic-gap".into(),
        pass: ratio.is_finite() && ratio >= d as f64 / 2.0,
        measured: ratio,
        threshold: d as f64 / 2.0,
        detail: format!("periodic={:.4} noise={:.4}", periodic.objective, noise.objective),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// One tail-bound Monte-Carlo configuration.
pub struct TailConfig {
    pub a: DMatrix<f64>,
    pub k: usize,
    /// Number of whole periods in the measurement window.
    pub periods: usize,
}

/// Standard three configurations: scalar and two-dimensional systems with
/// 100- and 200-period windows.
pub fn tail_configs() -> Vec<TailConfig> {
    vec![
        TailConfig { a: DMatrix::from_element(1, 1, 0.5), k: 10, periods: 100 },
        TailConfig { a: DMatrix::from_element(1, 1, 0.5), k: 10, periods: 200 },
        TailConfig {
            a: DMatrix::from_row_slice(2, 2, &[0.6, 0.2, 0.0, 0.4]),
            k: 20,
            periods: 100,
        },
    ]
}

/// Monte-Carlo estimate of the probability that the realized signal energy
/// along a direction falls below `(2/81) k m` times its steady-state
/// prediction; the estimate must respect the `e^{-(2/81) m}` tail.
pub fn check_tail_bound(trials: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut detail = String::new();
    for (ci, cfg) in tail_configs().iter().enumerate() {
        let d = cfg.a.nrows();
        let sys = LinSys::new(cfg.a.clone(), DMatrix::identity(d, d)).unwrap();
        let q = DVector::from_fn(d, |i, _| 1.0 / ((i + 1) as f64));
        let u = single_frequency_input(cfg.k, 1, &q, 1.0);
        let raw = freq::steady_state_covariance_raw(&sys, &u).unwrap();
        let (_, vecs) = linalg::sym_eigen(&raw);
        let w = vecs.column(d - 1).into_owned();
        let predicted = (w.transpose() * &raw * &w)[(0, 0)];
        let m = cfg.periods;
        let t = cfg.k * m;
        let settle = 60 * cfg.k;
        let floor = 2.0 / 81.0 * (cfg.k * m) as f64 * predicted;

        let mut failures = 0usize;
        for trial in 0..trials {
            let mut sim = Simulator::new(
                sys.clone(),
                NoiseModel::new(0.5, 0.0).unwrap(),
                DVector::zeros(d),
                rng::trial_seed(seed, (ci * 1_000_000 + trial) as u64),
            )
            .unwrap();
            sim.run(&SampledPeriodic::new(&u), settle + t).unwrap();
            let traj = sim.trajectory();
            let energy: f64 = traj.states[settle + 1..=settle + t]
                .iter()
                .map(|x| {
                    let v = w.dot(x);
                    v * v
                })
                .sum();
            if energy <= floor {
                failures += 1;
            }
        }
        let p_theory = (-(2.0 / 81.0) * m as f64).exp();
        let margin = 3.0 * (p_theory * (1.0 - p_theory) / trials as f64).sqrt();
        let freq_emp = failures as f64 / trials as f64;
        let excess = freq_emp - (p_theory + margin);
        worst_excess = worst_excess.max(excess);
        detail.push_str(&format!(
            "[d={d} m={m}: emp={freq_emp:.4} bound={:.4}] ",
            p_theory + margin
        ));
    }
    finish("signal-energy-tail-bound", start, worst_excess, 0.0, detail.trim_end().to_string())
}

fn median_error_at(
    sys: &StableSys,
    u: &PeriodicInput,
    sigma: f64,
    t: usize,
    trials: usize,
    seed: u64,
) -> f64 {
    let mut errs: Vec<f64> = (0..trials)
        .map(|i| {
            let mut sim = Simulator::new(
                sys.sys().clone(),
                NoiseModel::new(sigma, 0.0).unwrap(),
                DVector::zeros(sys.d()),
                rng::trial_seed(seed, i as u64),
            )
            .unwrap();
            sim.run(&SampledPeriodic::new(u), t).unwrap();
            let est = estimate::least_squares(sim.trajectory(), &sys.b).unwrap();
            linalg::opnorm(&(&est.a_hat - &sys.a))
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    experiment::percentile(&errs, 0.5)
}

/// Median estimation error under a fixed periodic input decays as `c /
/// sqrt(T)`, and boosting the information floor shrinks the constant.
pub fn check_rate_scaling(trials: usize, tol: f64, seed: u64) -> CheckResult {
    let start = Instant::now();
    let sys = random_stable(2, 2, 0.7, rng::trial_seed(seed, 77));
    let sigma = 1.0;
    let k = 16;
    let prob = DesignProblem::new(sys.sys().clone(), 1.0, k, DMatrix::zeros(2, 2), 1.0);
    let u1 = design::optimize_input(&prob, &DesignOptions::default()).unwrap().input;

    let ts = [1usize << 9, 1 << 11, 1 << 13];
    let consts: Vec<f64> = ts
        .iter()
        .map(|&t| median_error_at(&sys, &u1, sigma, t, trials, rng::trial_seed(seed, t as u64)) * (t as f64).sqrt())
        .collect();
    let spread = consts.iter().cloned().fold(0.0, f64::max)
        / consts.iter().cloned().fold(f64::INFINITY, f64::min)
        - 1.0;

    // Double the per-step information floor by scaling up the input power,
    // then confirm the constant moves down.
    let horizon = excite::lds::gramian_horizon(&sys.a).unwrap();
    let gam = excite::lds::noise_gramian(&sys.a, horizon).unwrap() * (sigma * sigma);
    let raw1 = freq::steady_state_covariance_raw(&sys, &u1).unwrap();
    let v1 = linalg::lambda_min(&(&gam + &raw1));
    let mut scale = 1.0f64;
    while linalg::lambda_min(&(&gam + &raw1 * scale)) < 2.0 * v1 && scale < 1e6 {
        scale *= 1.25;
    }
    let mut u2 = u1.clone();
    for c in &mut u2.coeffs {
        *c *= Complex::new(scale.sqrt(), 0.0);
    }
    u2.gamma2 *= scale;
    let t_big = ts[2];
    let med1 = median_error_at(&sys, &u1, sigma, t_big, trials, rng::trial_seed(seed, 31));
    let med2 = median_error_at(&sys, &u2, sigma, t_big, trials, rng::trial_seed(seed, 31));
    let improved = med2 < med1;

    let measured = if improved { spread } else { f64::INFINITY };
    finish(
        "error-rate-scaling",
        start,
        measured,
        tol,
        format!(
            "consts=[{:.4}, {:.4}, {:.4}] boosted: {:.5} -> {:.5}",
            consts[0], consts[1], consts[2], med1, med2
        ),
    )
}

/// Exact epoch/period schedules, and the realized power budget across
/// adaptive trials.
pub fn check_bookkeeping(trials: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    // Closed-form cumulative epoch sizes for even t0.
    let t0 = 100;
    let lens = active::epoch_lengths(t0, 5);
    let mut cum = 0usize;
    for (i, &len) in lens.iter().enumerate() {
        cum += len;
        let expect = t0 / 2 * (3usize.pow(i as u32 + 1) - 1);
        if cum != expect {
            return finish(
                "schedule-and-power-bookkeeping",
                start,
                cum as f64,
                expect as f64,
                format!("cumulative length mismatch at epoch {i}"),
            );
        }
    }
    let ks = active::period_schedule(4, 1 << 20, 5);
    for (i, &k) in ks.iter().enumerate() {
        if k != 4 << i {
            return finish(
                "schedule-and-power-bookkeeping",
                start,
                k as f64,
                (4 << i) as f64,
                format!("period mismatch at epoch {i}"),
            );
        }
    }

    // Realized input power, averaged over trials, must respect the budget
    // with Monte-Carlo slack.
    let sys = systems::gen_system(
        &SystemSpec::Jordan { d: 2, rho: 0.5, b: BSpec::Identity },
        seed,
    )
    .unwrap();
    let gamma2 = 2.0;
    let cfg = ActiveConfig { t0: 20, k0: 4, gamma2, epochs: 3, k_cap: 64, ..Default::default() };
    let opts = DesignOptions { max_iters: 300, ..Default::default() };
    let mut power_sums = vec![0.0f64; cfg.epochs + 1];
    for trial in 0..trials {
        let rec =
            active::run_active(&sys, 1.0, &cfg, rng::trial_seed(seed, trial as u64), &opts).unwrap();
        for e in &rec.epochs {
            power_sums[e.epoch] += e.power;
        }
    }
    let slack = gamma2 * (1.0 + 3.0 / (trials as f64).sqrt());
    let worst = power_sums.iter().map(|s| s / trials as f64).fold(0.0, f64::max);
    finish(
        "schedule-and-power-bookkeeping",
        start,
        worst,
        slack,
        format!("schedules exact; mean epoch power over {trials} trials (budget {gamma2})"),
    )
}

/// Analytic directional derivative of the steady-state response energy
/// against a central finite difference.
pub fn check_derivative(instances: usize, seed: u64) -> CheckResult {
    let start = Instant::now();
    let mut r = rng::substream(seed, "derivative");
    let mut worst = 0.0f64;
    for i in 0..instances {
        let d = r.gen_range(1..=4);
        let p = r.gen_range(1..=3);
        let sys = random_stable(d, p, 0.7, rng::trial_seed(seed, i as u64));
        let k = r.gen_range(4..=16);
        let u = random_input(k, p, 1.0, rng::trial_seed(seed, 500 + i as u64));
        let mut w = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        w /= w.norm();
        let mut delta = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
        delta /= linalg::opnorm(&delta);
        let analytic = design::response_directional_derivative(&sys, &u, &w, &delta).unwrap();
        let h = 1e-6;
        let at = |eps: f64| {
            let sp = LinSys::new(&sys.a + &delta * eps, sys.b.clone()).unwrap();
            design::response_energy(&sp, &u, &w).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let scale = analytic.abs().max(fd.abs()).max(1e-8);
        worst = worst.max((analytic - fd).abs() / scale);
    }
    finish("response-derivative", start, worst, 1e-4, format!("{instances} random instances"))
}

/// Identical CSV and SVG bytes across two in-process runs of the same
/// experiment.
pub fn check_determinism(seed: u64) -> CheckResult {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_toml(&format!(
        r#"
        policies = ["iso_noise", "oracle"]
        trials = 3
        epochs = 1
        t0 = 20
        k0 = 4
        k_cap = 8
        sigma = 0.5
        seed = {seed}

        [system]
        kind = "jordan"
        d = 2
        rho = 0.5
        "#
    ))
    .unwrap();
    let a = experiment::run_experiment(&cfg, 2).unwrap();
    let b = experiment::run_experiment(&cfg, 1).unwrap();
    let csv_same = experiment::render_csv(&a.rows) == experiment::render_csv(&b.rows);
    let svg_same = plot::render_plot(&a.report).unwrap() == plot::render_plot(&b.report).unwrap();
    let measured = if csv_same && svg_same { 0.0 } else { 1.0 };
    finish(
        "determinism",
        start,
        measured,
        0.0,
        format!("csv_same={csv_same} svg_same={svg_same}"),
    )
}

/// How hard the suite works; `Fast` divides Monte-Carlo trial counts by 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

/// Run every check and return the individual results.
pub fn verify_suite(level: Level, seed: u64) -> Vec<CheckResult> {
    let div = |n: usize| match level {
        Level::Fast => (n / 10).max(2),
        Level::Full => n,
    };
    vec![
        check_parseval(50, seed),
        check_covariance_formula(div(50), seed),
        check_scalar_design(),
        check_colored_noise(div(10).min(10), seed),
        check_noise_gap(8, if level == Level::Fast { 256 } else { 512 }),
        check_tail_bound(div(2000), seed),
        // Medians over 10x fewer trials wobble more; the tolerance scales
        // with the Monte-Carlo noise.
        check_rate_scaling(div(200), if level == Level::Fast { 0.5 } else { 0.2 }, seed),
        check_bookkeeping(div(50), seed),
        check_derivative(20, seed),
        check_determinism(seed),
    ]
}
