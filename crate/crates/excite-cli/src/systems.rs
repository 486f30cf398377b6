//! Declarative system families and their seeded generators.

use excite::lds::{self, LinSys, StableSys};
use excite::rng;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// How the input matrix `B` is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BSpec {
    /// `d x p` matrix with ones on the diagonal; `p` defaults to `d`.
    Identity,
    /// Seeded standard-Gaussian `d x p` matrix.
    Random { p: usize, seed: u64 },
    /// Rows of an explicit matrix.
    Explicit { b: Vec<Vec<f64>> },
}

impl Default for BSpec {
    fn default() -> Self {
        BSpec::Identity
    }
}

/// A seeded recipe for the dynamics matrix `A` and input matrix `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    /// Single Jordan block: `rho` on the diagonal, ones on the superdiagonal,
    /// rescaled so the spectral radius is exactly `rho`.
    Jordan {
        d: usize,
        rho: f64,
        #[serde(default)]
        b: BSpec,
    },
    /// `A = V diag(eigs) V^T` for a seeded random orthogonal `V`.
    UnitaryDiag {
        eigs: Vec<f64>,
        #[serde(default)]
        b: BSpec,
    },
    /// Standard-Gaussian matrix rescaled to the target spectral radius. The
    /// matrix seed is part of the spec so the family is reproducible
    /// independently of the run seed.
    RandomStable {
        d: usize,
        p: usize,
        rho_target: f64,
        seed: u64,
        #[serde(default)]
        b: BSpec,
    },
    /// Direct sum of the blocks' `A` matrices. The blocks' own `b` fields are
    /// ignored; this node's `b` applies to the assembled system.
    BlockDiag {
        blocks: Vec<SystemSpec>,
        #[serde(default)]
        b: BSpec,
    },
    /// Rows of an explicit square matrix.
    Explicit {
        a: Vec<Vec<f64>>,
        #[serde(default)]
        b: BSpec,
    },
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Config(format!("{what} must be non-empty")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("{what} has ragged rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::substream(seed, "orthogonal-basis");
    let g = DMatrix::from_fn(d, d, |_, _| r.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    // Fix the sign ambiguity so the basis is a pure function of the seed.
    let rm = qr.r();
    for j in 0..d {
        if rm[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    q
}

impl SystemSpec {
    fn b_spec(&self) -> &BSpec {
        match self {
            SystemSpec::Jordan { b, .. }
            | SystemSpec::UnitaryDiag { b, .. }
            | SystemSpec::RandomStable { b, .. }
            | SystemSpec::BlockDiag { b, .. }
            | SystemSpec::Explicit { b, .. } => b,
        }
    }

    /// Generate the dynamics matrix; `seed` feeds the seeded-orthogonal
    /// construction (the `random_stable` family carries its own seed).
    fn gen_a(&self, seed: u64) -> Result<DMatrix<f64>> {
        match self {
            SystemSpec::Jordan { d, rho, .. } => {
                if *d == 0 {
                    return Err(CliError::Config("jordan block needs d >= 1".into()));
                }
                if !(0.0..1.0).contains(rho) {
                    return Err(CliError::Config(format!(
                        "jordan rho must be in [0, 1), got {rho}"
                    )));
                }
                let mut a = DMatrix::from_diagonal_element(*d, *d, *rho);
                for i in 0..d - 1 {
                    a[(i, i + 1)] = 1.0;
                }
                // The eigenvalues of a Jordan block already all equal rho, so
                // the radius-normalizing rescale is the identity except for
                // numerical round-off.
                if *rho > 0.0 {
                    let r = lds::spectral_radius(&a).map_err(CliError::Lib)?;
                    if r > 0.0 {
                        a *= rho / r;
                        for i in 0..d - 1 {
                            a[(i, i + 1)] = 1.0;
                        }
                        a.fill_diagonal(*rho);
                    }
                }
                Ok(a)
            }
            SystemSpec::UnitaryDiag { eigs, .. } => {
                if eigs.is_empty() {
                    return Err(CliError::Config("unitary_diag needs eigenvalues".into()));
                }
                if eigs.iter().any(|l| l.abs() >= 1.0) {
                    return Err(CliError::Config(
                        "unitary_diag eigenvalues must have magnitude < 1".into(),
                    ));
                }
                let d = eigs.len();
                let v = random_orthogonal(d, seed);
                let lam = DMatrix::from_fn(d, d, |i, j| if i == j { eigs[i] } else { 0.0 });
                Ok(&v * lam * v.transpose())
            }
            SystemSpec::RandomStable { d, rho_target, seed: mat_seed, .. } => {
                if *d == 0 {
                    return Err(CliError::Config("random_stable needs d >= 1".into()));
                }
                if *rho_target >= 1.0 {
                    return Err(CliError::Config(format!(
                        "random_stable rho_target must be < 1, got {rho_target}"
                    )));
                }
                if *rho_target <= 0.0 {
                    return Err(CliError::Config("random_stable rho_target must be positive".into()));
                }
                let mut r = rng::substream(*mat_seed, "random-stable");
                let g = DMatrix::from_fn(*d, *d, |_, _| r.sample(StandardNormal));
                let rg = lds::spectral_radius(&g).map_err(CliError::Lib)?;
                if rg <= 0.0 {
                    return Err(CliError::Config("degenerate random draw (zero radius)".into()));
                }
                Ok(g * (*rho_target / rg))
            }
            SystemSpec::BlockDiag { blocks, .. } => {
                if blocks.is_empty() {
                    return Err(CliError::Config("block_diag needs at least one block".into()));
                }
                let mats: Vec<DMatrix<f64>> = blocks
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.gen_a(rng::trial_seed(seed, i as u64)))
                    .collect::<Result<_>>()?;
                let d: usize = mats.iter().map(|m| m.nrows()).sum();
                let mut a = DMatrix::zeros(d, d);
                let mut off = 0;
                for m in &mats {
                    a.view_mut((off, off), (m.nrows(), m.ncols())).copy_from(m);
                    off += m.nrows();
                }
                Ok(a)
            }
            SystemSpec::Explicit { a, .. } => {
                let m = rows_to_matrix(a, "explicit A")?;
                if m.nrows() != m.ncols() {
                    return Err(CliError::Config("explicit A must be square".into()));
                }
                Ok(m)
            }
        }
    }

    /// Target spectral radius declared by the spec, when there is one.
    fn rho_target(&self) -> Option<f64> {
        match self {
            SystemSpec::Jordan { rho, .. } => Some(*rho),
            SystemSpec::UnitaryDiag { eigs, .. } => {
                eigs.iter().map(|l| l.abs()).fold(None, |m: Option<f64>, v| {
                    Some(m.map_or(v, |x| x.max(v)))
                })
            }
            SystemSpec::RandomStable { rho_target, .. } => Some(*rho_target),
            SystemSpec::BlockDiag { blocks, .. } => {
                blocks.iter().filter_map(|b| b.rho_target()).fold(None, |m: Option<f64>, v| {
                    Some(m.map_or(v, |x| x.max(v)))
                })
            }
            SystemSpec::Explicit { .. } => None,
        }
    }

    /// Input width implied by the spec when `B` defaults to identity.
    fn default_p(&self, d: usize) -> usize {
        match self {
            SystemSpec::RandomStable { p, .. } => *p,
            _ => d,
        }
    }
}

/// Instantiate a spec into a validated stable system. `seed` only affects
/// constructions without their own seed field (the orthogonal basis of
/// `unitary_diag` and any `random` B).
pub fn gen_system(spec: &SystemSpec, seed: u64) -> Result<StableSys> {
    let a = spec.gen_a(seed)?;
    let d = a.nrows();
    let b = match spec.b_spec() {
        BSpec::Identity => DMatrix::identity(d, spec.default_p(d)),
        BSpec::Random { p, seed: b_seed } => {
            if *p == 0 {
                return Err(CliError::Config("random B needs p >= 1".into()));
            }
            let mut r = rng::substream(*b_seed, "input-matrix");
            DMatrix::from_fn(d, *p, |_, _| r.sample(StandardNormal))
        }
        BSpec::Explicit { b } => {
            let m = rows_to_matrix(b, "explicit B")?;
            if m.nrows() != d {
                return Err(CliError::Config(format!(
                    "explicit B has {} rows but the system has dimension {d}",
                    m.nrows()
                )));
            }
            m
        }
    };
    let sys = LinSys::new(a, b).map_err(CliError::Lib)?;
    if let Some(target) = spec.rho_target() {
        let r = sys.spectral_radius();
        if r > target + 1e-9 {
            return Err(CliError::Config(format!(
                "generated radius {r} exceeds target {target}"
            )));
        }
    }
    StableSys::new(sys).map_err(CliError::Lib)
}
