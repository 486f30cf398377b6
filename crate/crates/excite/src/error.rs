use nalgebra::DMatrix;
use thiserror::Error;

/// Orthonormal basis of the (near-)null space of a regressor Gram matrix.
///
/// Columns span the directions the data does not excite. For joint
/// state/input regression the first `d` coordinates belong to the state
/// block and the remaining `p` to the input block.
#[derive(Debug, Clone)]
pub struct RankDeficiency {
    pub subspace: DMatrix<f64>,
    pub state_dim: usize,
    pub input_dim: usize,
}

impl RankDeficiency {
    /// Fraction of the deficient subspace's energy in the input block.
    pub fn input_block_energy(&self) -> f64 {
        let total: f64 = self.subspace.iter().map(|v| v * v).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut inp = 0.0;
        for c in 0..self.subspace.ncols() {
            for r in self.state_dim..self.subspace.nrows() {
                inp += self.subspace[(r, c)] * self.subspace[(r, c)];
            }
        }
        inp / total
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("system is unstable: spectral radius {rho}")]
    Stability { rho: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("infeasible input: {0}")]
    Feasibility(String),
    #[error("zero-power input cannot be normalized")]
    Normalization,
    #[error("rank-deficient covariates ({} directions)", .0.subspace.ncols())]
    Rank(RankDeficiency),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
