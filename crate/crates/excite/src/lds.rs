//! Linear dynamical systems: representation, simulation, and the
//! closed-form covariance (Gramian) matrices the rest of the toolkit
//! consumes.
//!
//! The plant is `x_{t+1} = A x_t + B u_t + eta_t` with isotropic Gaussian
//! process noise and, optionally, isotropic Gaussian exploration noise
//! added on top of a deterministic input signal.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// The pair `(A, B)`: the plant unknown to the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinSys {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinSys {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 || b.ncols() == 0 {
            return Err(Error::Dimension("d and p must be at least 1".into()));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension(format!(
                "B must have {} rows, got {}",
                a.nrows(),
                b.nrows()
            )));
        }
        Ok(Self { a, b })
    }

    /// State dimension.
    pub fn d(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a).expect("eigenvalue computation failed")
    }

    pub fn ensure_stable(&self) -> Result<()> {
        let rho = self.spectral_radius();
        if rho < 1.0 {
            Ok(())
        } else {
            Err(Error::Stability { rho })
        }
    }
}

/// A system checked to satisfy `spectral_radius(A) < 1` at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StableSys(LinSys);

impl StableSys {
    pub fn new(sys: LinSys) -> Result<Self> {
        sys.ensure_stable()?;
        Ok(Self(sys))
    }

    pub fn sys(&self) -> &LinSys {
        &self.0
    }
}

impl std::ops::Deref for StableSys {
    type Target = LinSys;
    fn deref(&self) -> &LinSys {
        &self.0
    }
}

/// Isotropic noise standard deviations: process noise and exploration noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_proc: f64,
    pub sigma_input: f64,
}

impl NoiseModel {
    pub fn new(sigma_proc: f64, sigma_input: f64) -> Result<Self> {
        if sigma_proc < 0.0 || sigma_input < 0.0 {
            return Err(Error::Config("noise std devs must be nonnegative".into()));
        }
        Ok(Self { sigma_proc, sigma_input })
    }

    pub fn noiseless() -> Self {
        Self { sigma_proc: 0.0, sigma_input: 0.0 }
    }
}

/// Aligned state/input/noise sequences from one simulation.
///
/// `states` has one more entry than `inputs`; replaying with the same seed,
/// system, and signal reproduces the trajectory bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// Realized process-noise draws, one per transition.
    pub noise: Vec<DVector<f64>>,
    pub seed: u64,
}

impl Trajectory {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Regressor Gram matrix `sum_t x_t x_t^T` over the states that have a
    /// successor.
    pub fn state_gram(&self) -> DMatrix<f64> {
        let d = self.states[0].len();
        let mut g = DMatrix::zeros(d, d);
        for x in &self.states[..self.len()] {
            g.ger(1.0, x, x, 1.0);
        }
        (&g + g.transpose()) * 0.5
    }

    /// Average per-step input power `(1/T) sum ||u_t||^2`.
    pub fn input_power(&self) -> f64 {
        if self.inputs.is_empty() {
            return 0.0;
        }
        self.inputs.iter().map(|u| u.norm_squared()).sum::<f64>() / self.inputs.len() as f64
    }
}

/// A deterministic time-domain input source.
pub trait InputSignal {
    fn dim(&self) -> usize;
    fn at(&self, t: usize) -> DVector<f64>;
}

pub struct ZeroSignal(pub usize);

impl InputSignal for ZeroSignal {
    fn dim(&self) -> usize {
        self.0
    }
    fn at(&self, _t: usize) -> DVector<f64> {
        DVector::zeros(self.0)
    }
}

/// Cycles through a fixed list of samples.
pub struct FixedSignal(pub Vec<DVector<f64>>);

impl InputSignal for FixedSignal {
    fn dim(&self) -> usize {
        self.0[0].len()
    }
    fn at(&self, t: usize) -> DVector<f64> {
        self.0[t % self.0.len()].clone()
    }
}

/// Stateful simulator; noise streams persist across calls so multi-epoch
/// runs can switch inputs without resetting the plant.
pub struct Simulator {
    sys: LinSys,
    noise: NoiseModel,
    x: DVector<f64>,
    proc_rng: ChaCha8Rng,
    input_rng: ChaCha8Rng,
    traj: Trajectory,
}

impl Simulator {
    pub fn new(sys: LinSys, noise: NoiseModel, x0: DVector<f64>, seed: u64) -> Result<Self> {
        if x0.len() != sys.d() {
            return Err(Error::Dimension(format!(
                "x0 has dimension {}, expected {}",
                x0.len(),
                sys.d()
            )));
        }
        Ok(Self {
            sys,
            noise,
            x: x0.clone(),
            proc_rng: rng::substream(seed, "process-noise"),
            input_rng: rng::substream(seed, "input-noise"),
            traj: Trajectory { states: vec![x0], inputs: vec![], noise: vec![], seed },
        })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn t(&self) -> usize {
        self.traj.len()
    }

    pub fn set_sigma_input(&mut self, sigma_input: f64) {
        self.noise.sigma_input = sigma_input;
    }

    fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
    }

    /// Advance one step with deterministic input `u_det` (exploration noise
    /// is added internally when `sigma_input > 0`).
    pub fn step(&mut self, u_det: &DVector<f64>) -> Result<()> {
        if u_det.len() != self.sys.p() {
            return Err(Error::Dimension(format!(
                "input has dimension {}, expected {}",
                u_det.len(),
                self.sys.p()
            )));
        }
        let mut u = u_det.clone();
        // The input stream is consumed every step so replay alignment does
        // not depend on sigma_input.
        let zu = Self::gaussian(&mut self.input_rng, self.sys.p());
        if self.noise.sigma_input > 0.0 {
            u += zu * self.noise.sigma_input;
        }
        let ze = Self::gaussian(&mut self.proc_rng, self.sys.d());
        let eta = ze * self.noise.sigma_proc;
        self.x = &self.sys.a * &self.x + &self.sys.b * &u + &eta;
        self.traj.states.push(self.x.clone());
        self.traj.inputs.push(u);
        self.traj.noise.push(eta);
        Ok(())
    }

    pub fn run(&mut self, signal: &dyn InputSignal, steps: usize) -> Result<()> {
        let offset = self.t();
        for s in 0..steps {
            let u = signal.at(offset + s);
            self.step(&u)?;
        }
        Ok(())
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn into_trajectory(self) -> Trajectory {
        self.traj
    }
}

/// Simulate `x_{t+1} = A x_t + B u_t + eta_t` for `steps` transitions.
pub fn simulate(
    sys: &LinSys,
    noise: &NoiseModel,
    signal: &dyn InputSignal,
    steps: usize,
    x0: &DVector<f64>,
    seed: u64,
) -> Result<Trajectory> {
    if signal.dim() != sys.p() {
        return Err(Error::Dimension(format!(
            "signal dimension {} does not match p = {}",
            signal.dim(),
            sys.p()
        )));
    }
    let mut sim = Simulator::new(sys.clone(), *noise, x0.clone(), seed)?;
    sim.run(signal, steps)?;
    Ok(sim.into_trajectory())
}

/// Eigenvalues of a square matrix via a bounded Schur iteration.
///
/// The unbounded iteration in `complex_eigenvalues` can spin forever on
/// degenerate inputs (e.g. the zero matrix), so we cap it and fall back to a
/// diagonal shift, which moves every eigenvalue by exactly the shift.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(s) = nalgebra::linalg::Schur::try_new(a.clone(), 1e-13, 10_000) {
        return Ok(s.complex_eigenvalues().iter().copied().collect());
    }
    let d = a.nrows();
    for &shift in &[1.0, 0.37, 2.13] {
        let eps = shift * (1.0 + linalg::opnorm(a));
        let shifted = a + DMatrix::identity(d, d) * eps;
        if let Some(s) = nalgebra::linalg::Schur::try_new(shifted, 1e-13, 10_000) {
            return Ok(s
                .complex_eigenvalues()
                .iter()
                .map(|z| z - Complex::new(eps, 0.0))
                .collect());
        }
    }
    Err(Error::Singular("eigenvalue iteration did not converge".into()))
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Transient envelope `||A^k|| <= amplitude * rate^k` with
/// `rate = (1 + spectral_radius)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub amplitude: f64,
    pub rate: f64,
    pub spectral_radius: f64,
}

/// Compute the transient envelope of a stable matrix.
///
/// The amplitude comes from the resolvent bound
/// `rate * max_theta ||(rate e^{j theta} I - A)^{-1}||`, maximized on a
/// 512-point grid with local golden-section refinement, then clamped so the
/// envelope provably dominates `||A^k||` for `k <= 100`.
pub fn decay_envelope(a: &DMatrix<f64>) -> Result<DecayEnvelope> {
    let rho = spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(Error::Stability { rho });
    }
    let rate = 0.5 + 0.5 * rho;
    let d = a.nrows();
    let ac = linalg::to_complex(a);
    let resolvent_norm = |theta: f64| -> f64 {
        let z = Complex::from_polar(rate, theta);
        let m = linalg::CMatrix::from_diagonal_element(d, d, z) - &ac;
        match m.lu().try_inverse() {
            Some(inv) => linalg::opnorm_c(&inv),
            None => f64::INFINITY,
        }
    };
    let grid = 512usize;
    let mut best_theta = 0.0;
    let mut best = f64::NEG_INFINITY;
    for i in 0..grid {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / grid as f64;
        let v = resolvent_norm(theta);
        if v > best {
            best = v;
            best_theta = theta;
        }
    }
    // Golden-section refinement around the grid maximum.
    let step = 2.0 * std::f64::consts::PI / grid as f64;
    let (mut lo, mut hi) = (best_theta - step, best_theta + step);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let m1 = hi - phi * (hi - lo);
        let m2 = lo + phi * (hi - lo);
        if resolvent_norm(m1) < resolvent_norm(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best = best.max(resolvent_norm(0.5 * (lo + hi)));
    let mut amplitude = (rate * best).max(1.0);
    // Clamp so the envelope holds on the first 100 powers regardless of any
    // slack in the grid maximization.
    let mut pw = DMatrix::identity(d, d);
    let mut scale = 1.0;
    for _ in 0..100 {
        pw = a * &pw;
        scale *= rate;
        amplitude = amplitude.max(linalg::opnorm(&pw) / scale);
    }
    Ok(DecayEnvelope { amplitude, rate, spectral_radius: rho })
}

/// `sum_{s<t} A^s (A^s)^T`, the noise-driven state covariance.
pub fn noise_gramian(a: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    input_gramian(a, &DMatrix::identity(d, d), t)
}

/// `sum_{s<t} (A^s B)(A^s B)^T`, the input-driven analog.
///
/// Powers are accumulated by repeated multiplication so defective matrices
/// (Jordan blocks) stay well behaved.
pub fn input_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Dimension("input_gramian: incompatible A, B".into()));
    }
    if t < 1 {
        return Err(Error::Config("gramian horizon must be at least 1".into()));
    }
    let d = a.nrows();
    let mut g = DMatrix::zeros(d, d);
    let mut m = b.clone(); // A^s B
    for _ in 0..t {
        g += &m * m.transpose();
        m = a * &m;
    }
    Ok((&g + g.transpose()) * 0.5)
}

/// `sigma2 * noise_gramian + sigma_u2 * input_gramian`.
pub fn combined_noise_gramian(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma2: f64,
    sigma_u2: f64,
    t: usize,
) -> Result<DMatrix<f64>> {
    Ok(noise_gramian(a, t)? * sigma2 + input_gramian(a, b, t)? * sigma_u2)
}

/// Horizon after which Gramian tails are below 1e-10, from the geometric
/// envelope `amplitude^2 * rate^{2t}`.
pub fn gramian_horizon(a: &DMatrix<f64>) -> Result<usize> {
    let env = decay_envelope(a)?;
    let t = ((1e-10 / (env.amplitude * env.amplitude)).ln() / (2.0 * env.rate.ln())).ceil();
    Ok((t.max(1.0) as usize).clamp(8, 200_000))
}
