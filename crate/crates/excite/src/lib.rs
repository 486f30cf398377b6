//! Active input design and identification for linear dynamical systems.
//!
//! The plant is `x_{t+1} = A x_t + B u_t + eta_t` with known `B`, stable
//! unknown `A`, and isotropic Gaussian process noise. The toolkit simulates
//! such systems, designs power-constrained periodic inputs that maximize the
//! smallest eigenvalue of the expected covariate matrix, runs an adaptive
//! epoch-doubling identification loop against noise and oracle baselines,
//! and estimates `A` by least squares.
//!
//! # Quick start
//!
//! Simulate under pure exploration noise and fit `A`:
//!
//! ```
//! use excite::estimate;
//! use excite::lds::{simulate, LinSys, NoiseModel, ZeroSignal};
//! use nalgebra::{DMatrix, DVector};
//!
//! let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.5]);
//! let sys = LinSys::new(a.clone(), DMatrix::identity(2, 2))?;
//! let noise = NoiseModel::new(1.0, 1.0)?; // process noise + exploration noise
//! let traj = simulate(&sys, &noise, &ZeroSignal(2), 2000, &DVector::zeros(2), 7)?;
//! let est = estimate::least_squares(&traj, &sys.b)?;
//! assert!((&est.a_hat - &a).norm() < 0.2);
//! # Ok::<(), excite::Error>(())
//! ```
//!
//! A designed periodic input concentrates the same power budget where the
//! system is hardest to excite; see [`design::optimize_input`] and
//! [`active::run_active`]. The accompanying book (`book/`) walks through
//! each piece with these same examples.

pub mod active;
pub mod design;
pub mod error;
pub mod estimate;
pub mod freq;
pub mod linalg;
pub mod lds;
pub mod rng;

pub use active::{ActiveConfig, EpochRecord, NoisePolicy, RunRecord};
pub use design::{DesignMode, DesignOptions, DesignProblem, DesignResult};
pub use error::{Error, Result};
pub use estimate::{CertificateContext, CovEnvelope, Estimate};
pub use freq::PeriodicInput;
pub use lds::{LinSys, NoiseModel, Simulator, StableSys, Trajectory};
