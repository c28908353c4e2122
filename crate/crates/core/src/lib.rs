//! Boundary optimal control of the Cahn-Hilliard equation with dynamic
//! boundary conditions on the unit interval and the unit square.
//!
//! The pipeline is: build a [`Discretization`], pick a [`PotentialPair`],
//! integrate the state with [`StateSolver`], compute gradients through the
//! adjoint in [`sensitivity`], and optimize with [`control::optimize`].

// Index loops mirror the banded storage layout; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod control;
pub mod discretization;
mod error;
pub mod neumann;
pub mod output;
pub mod potentials;
pub mod sensitivity;
pub mod sparse;
pub mod state;

pub use control::{AdmissibleSet, Bound, OptimizationReport, OptimizeOptions, Termination};
pub use discretization::{build_interval_mesh, build_square_mesh, BoundaryField, Dimension, Discretization, Field};
pub use error::{Error, Result};
pub use neumann::{NeumannSolver, ZeroMeanField};
pub use potentials::{regular_double_well, Potential, PotentialPair};
pub use sensitivity::{CostWeights, TrackingData};
pub use state::{solve_state, NewtonOptions, SpaceTimeControl, StateSolver, StateTrajectory, TimeGrid};
