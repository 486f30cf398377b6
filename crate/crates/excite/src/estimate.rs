//! Least-squares identification and data-dependent accuracy certificates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, RankDeficiency, Result};
use crate::freq::{self, PeriodicInput};
use crate::lds::{self, LinSys, Trajectory};
use crate::linalg;

/// Output of a least-squares fit.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub a_hat: DMatrix<f64>,
    /// Present only for joint fits; otherwise `B` was given.
    pub b_hat: Option<DMatrix<f64>>,
    /// Frobenius norm of the one-step residuals.
    pub residual_norm: f64,
    /// Regressor Gram matrix used in the solve.
    pub cov: DMatrix<f64>,
    /// True when the Gram matrix was ill-conditioned and a small ridge was
    /// added for numerical safety.
    pub ridged: bool,
}

fn solve_normal_equations(
    cross: &DMatrix<f64>, // sum target * regressor^T
    gram: &DMatrix<f64>,  // sum regressor * regressor^T
    state_dim: usize,
    input_dim: usize,
) -> Result<(DMatrix<f64>, bool)> {
    let n = gram.nrows();
    let (vals, vecs) = linalg::sym_eigen(gram);
    let lam_max = vals[n - 1].max(0.0);
    let thresh = 1e-13 * lam_max.max(1.0);
    let deficient: Vec<usize> = (0..n).filter(|&i| vals[i] <= thresh).collect();
    if !deficient.is_empty() {
        let mut basis = DMatrix::zeros(n, deficient.len());
        for (j, &i) in deficient.iter().enumerate() {
            basis.set_column(j, &vecs.column(i));
        }
        return Err(Error::Rank(RankDeficiency { subspace: basis, state_dim, input_dim }));
    }
    let cond = lam_max / vals[0];
    let (g, ridged) = if cond > 1e12 {
        let lam = 1e-8 * gram.trace() / n as f64;
        (gram + DMatrix::identity(n, n) * lam, true)
    } else {
        (gram.clone(), false)
    };
    let sol = g
        .cholesky()
        .map(|ch| ch.solve(&cross.transpose()).transpose())
        .ok_or_else(|| Error::Singular("Gram matrix is not positive definite".into()))?;
    Ok((sol, ridged))
}

/// Estimate `A` with `B` known:
/// `A_hat = (sum (x_{t+1} - B u_t) x_t^T)(sum x_t x_t^T)^{-1}`.
pub fn least_squares(traj: &Trajectory, b: &DMatrix<f64>) -> Result<Estimate> {
    let t = traj.len();
    if t == 0 {
        return Err(Error::Dimension("empty trajectory".into()));
    }
    let d = traj.states[0].len();
    if b.nrows() != d || b.ncols() != traj.inputs[0].len() {
        return Err(Error::Dimension("B has wrong shape for this trajectory".into()));
    }
    let mut cross = DMatrix::zeros(d, d);
    let mut gram = DMatrix::zeros(d, d);
    for s in 0..t {
        let x = &traj.states[s];
        let y = &traj.states[s + 1] - b * &traj.inputs[s];
        cross += y * x.transpose();
        gram.ger(1.0, x, x, 1.0);
    }
    let gram = (&gram + gram.transpose()) * 0.5;
    let (a_hat, ridged) = solve_normal_equations(&cross, &gram, d, 0)?;
    let mut res2 = 0.0;
    for s in 0..t {
        let r = &traj.states[s + 1] - &a_hat * &traj.states[s] - b * &traj.inputs[s];
        res2 += r.norm_squared();
    }
    Ok(Estimate { a_hat, b_hat: None, residual_norm: res2.sqrt(), cov: gram, ridged })
}

/// Estimate `A` and `B` jointly from stacked regressors `[x_t; u_t]`.
pub fn least_squares_joint(traj: &Trajectory) -> Result<Estimate> {
    let t = traj.len();
    if t == 0 {
        return Err(Error::Dimension("empty trajectory".into()));
    }
    let d = traj.states[0].len();
    let p = traj.inputs[0].len();
    let n = d + p;
    let mut cross = DMatrix::zeros(d, n);
    let mut gram = DMatrix::zeros(n, n);
    let mut z = DVector::zeros(n);
    for s in 0..t {
        z.rows_mut(0, d).copy_from(&traj.states[s]);
        z.rows_mut(d, p).copy_from(&traj.inputs[s]);
        cross += &traj.states[s + 1] * z.transpose();
        gram.ger(1.0, &z, &z, 1.0);
    }
    let gram = (&gram + gram.transpose()) * 0.5;
    let (theta, ridged) = solve_normal_equations(&cross, &gram, d, p)?;
    let a_hat = theta.columns(0, d).into_owned();
    let b_hat = theta.columns(d, p).into_owned();
    let mut res2 = 0.0;
    for s in 0..t {
        let r = &traj.states[s + 1] - &a_hat * &traj.states[s] - &b_hat * &traj.inputs[s];
        res2 += r.norm_squared();
    }
    Ok(Estimate { a_hat, b_hat: Some(b_hat), residual_norm: res2.sqrt(), cov: gram, ridged })
}

/// Which upper envelope of the regressor covariance enters the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovEnvelope {
    /// Data-dependent: built from the played input's steady-state second
    /// moment plus the noise covariance trace. The sharp default.
    Trajectory,
    /// Distribution-free worst case from the system's decay envelope alone.
    Worstcase,
}

/// Inputs to the accuracy certificate for one epoch.
#[derive(Debug, Clone)]
pub struct CertificateContext<'a> {
    /// Plant estimate the certificate is evaluated at.
    pub sys: &'a LinSys,
    pub sigma: f64,
    pub sigma_u2: f64,
    /// Average-power budget actually in force.
    pub gamma2: f64,
    /// Steps in the epoch.
    pub t: usize,
    /// Failure probability.
    pub delta: f64,
    /// Designed input played during the epoch, if any.
    pub input: Option<&'a PeriodicInput>,
    pub envelope: CovEnvelope,
}

/// High-probability bound on `||A_hat - A||` after an epoch:
///
/// `eps = sigma * ||G^{-1/2}|| * sqrt(16 log(5^d / delta) + 8 log det(E S^{-1} + I))`
///
/// with `G = sum x_t x_t^T` the regressor Gram, `S` the per-step excitation
/// covariance `sigma^2 Gamma + sigma_u^2 Gamma^B + (input steady-state
/// moment)`, and `E` an upper envelope of the trajectory covariance chosen
/// by `CovEnvelope`.
pub fn confidence_radius(ctx: &CertificateContext, state_gram: &DMatrix<f64>) -> Result<f64> {
    let d = ctx.sys.d();
    if state_gram.nrows() != d || state_gram.ncols() != d {
        return Err(Error::Dimension("state_gram must be d x d".into()));
    }
    if !(ctx.delta > 0.0 && ctx.delta < 1.0) {
        return Err(Error::Config("delta must be in (0, 1)".into()));
    }
    let (vals, _) = linalg::sym_eigen(state_gram);
    if vals[0] <= 0.0 {
        return Err(Error::Singular("state Gram is not positive definite".into()));
    }
    let inv_half_norm = vals[0].sqrt().recip();

    let horizon = lds::gramian_horizon(&ctx.sys.a)?.min(ctx.t.max(1));
    let gamma = lds::noise_gramian(&ctx.sys.a, horizon)?;
    let gamma_b = lds::input_gramian(&ctx.sys.a, &ctx.sys.b, horizon)?;
    let mut s = &gamma * (ctx.sigma * ctx.sigma) + &gamma_b * ctx.sigma_u2;
    if let Some(u) = ctx.input {
        s += freq::steady_state_covariance_raw(ctx.sys, u)?;
    }

    let envelope = match ctx.envelope {
        CovEnvelope::Trajectory => {
            let mut e = DMatrix::zeros(d, d);
            if let Some(u) = ctx.input {
                e += freq::steady_state_covariance_raw(ctx.sys, u)?;
            }
            let tr = (&gamma * (ctx.sigma * ctx.sigma) + &gamma_b * ctx.sigma_u2).trace();
            (e + DMatrix::identity(d, d) * (tr * (1.0 + (2.0 / ctx.delta).ln()))) * 4.0
        }
        CovEnvelope::Worstcase => {
            let env = lds::decay_envelope(&ctx.sys.a)?;
            let beta2 = env.amplitude * env.amplitude;
            let scale = 16.0 * beta2 * ctx.gamma2 / ((1.0 - env.rate) * (1.0 - env.rate))
                * (1.0 + ctx.t as f64);
            DMatrix::identity(d, d) * scale
        }
    };

    // log det(E S^{-1} + I) = log det(E + S) - log det(S); regularize S so
    // noiseless or undriven directions do not blow up the certificate.
    let floor = 1e-12 * (1.0 + s.trace() / d as f64).max(linalg::opnorm(&envelope) * 1e-14);
    let s_reg = &s + DMatrix::identity(d, d) * floor;
    let log_det = linalg::log_det_spd(&(&envelope + &s_reg))
        .zip(linalg::log_det_spd(&s_reg))
        .map(|(a, b)| a - b)
        .ok_or_else(|| Error::Singular("covariance envelope is not positive definite".into()))?;

    let conf = 5f64.ln() * d as f64 - ctx.delta.ln();
    Ok(ctx.sigma * inv_half_norm * (16.0 * conf + 8.0 * log_det.max(0.0)).sqrt())
}
