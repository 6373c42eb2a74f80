//! Optimal control of a weakly-controlled gradient flow.
//!
//! Training is modelled as the gradient flow of a loss `J₀` on a training
//! set, perturbed by a small control term `ε·D(θ)·u(t)` whose gain `D` comes
//! from a dithered copy of the training data. The control is chosen to
//! minimise the validation loss `Φ` at the final time `T`.
//!
//! - [`dataset`]: CSV ingestion, bootstrap resampling, dithering.
//! - [`model`]: loss, gradient and Hessian-vector oracles.
//! - [`basis`]: time basis `Ψ(t)` and the control `u = C·Ψ`.
//! - [`dynamics`]: forward state and backward costate integration.
//! - [`sga`]: the successive Galerkin control iteration.
//! - [`verify`]: finite-difference, convergence-order and value-function checks.
//! - [`config`], [`pipeline`]: the experiment driver behind the `weakctl` binary.

pub mod basis;
pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod sga;
pub mod verify;

pub use basis::{BasisKind, BasisSpec, ControlCoefficients};
pub use dataset::{Dataset, Provenance, RngSeed};
pub use dynamics::{AdjointTrajectory, ControlProblem, ProblemData, TimeGrid, Trajectory};
pub use error::{Error, Result};
pub use model::{DiagMatrix, ModelFamily, ModelOracle};
pub use sga::{GalerkinSolver, SolverConfig, SolverReport, StopReason};
