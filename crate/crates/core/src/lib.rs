//! Hamiltonian nonholonomic mechanics in a single coordinate chart.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: finite-difference Jacobians, kernels of constraint
//!   matrices, exterior derivatives of one-forms and Lie brackets.
//! - [`mechanics`]: kinetic-minus-potential systems, Legendre transform and
//!   Hamiltonian derivatives.
//! - [`nonholo`]: constraint distributions, the constrained momentum space,
//!   multipliers and the nonholonomic Hamiltonian vector field.
//! - [`hj`]: checks for candidate solutions `γ` of the nonholonomic
//!   Hamilton–Jacobi equation `H ∘ γ = E` and the reduced flow they induce.
//! - [`integrate`]: fixed-step RK4 and adaptive Dormand–Prince 5(4).
//! - [`systems`]: the vertical rolling disk, the knife edge on an inclined
//!   plane, the snakeboard and the Chaplygin sleigh.

pub mod error;
pub mod geometry;
pub mod hj;
pub mod integrate;
pub mod mechanics;
pub mod nonholo;
pub mod sampling;
pub mod systems;

pub use error::{Error, Result};
pub use geometry::{ChartPoint, Covector, DiffMode, DifferentiationStrategy, TangentVec, VectorField};
pub use hj::{OneFormCandidate, Tolerances, VerificationReport};
pub use integrate::{IntegratorConfig, Method, Termination, Trajectory};
pub use mechanics::{MechanicalSystem, PhaseState};
pub use nonholo::{ConstraintDistribution, NonholonomicSystem};
